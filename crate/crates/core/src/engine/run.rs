//! The outer training loop: periodic evaluation, best-checkpoint tracking
//! and metric logs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::engine::checkpoint::Checkpoint;
use crate::engine::data::{EvalSet, TrainData};
use crate::engine::trainer::{StepReport, Trainer};
use crate::error::{IoContext, Result};
use crate::evalcli::evaluate_classifier_full;
use crate::fileio::write_atomic;
use crate::nets::ModelBundle;

pub const STEPS_FILE: &str = "steps.jsonl";
pub const EVALS_FILE: &str = "evals.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

/// Extra per-evaluation measurement, e.g. detector accuracy.
pub type Probe<'a> = &'a (dyn Fn(&ModelBundle) -> Result<f64> + Sync);

#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Directory for logs and checkpoints; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    pub detector_probe: Option<Probe<'a>>,
}

/// One periodic evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Completed steps at evaluation time.
    pub iteration: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Running maximum of `test_accuracy`.
    pub best_accuracy: f64,
    /// Running minimum of `test_loss`.
    pub best_loss: f64,
    pub detector_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<StepReport>,
    pub evals: Vec<EvalRecord>,
    /// Highest-accuracy snapshot; `None` when no evaluation ran.
    pub best: Option<Checkpoint>,
    pub trainer: Trainer,
}

impl RunOutcome {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.evals.last().map(|e| e.best_accuracy)
    }
}

/// Train for `cfg.total_iterations` steps, evaluating every
/// `cfg.eval_interval` steps and after the last one.
pub fn run_training(cfg: &TrainConfig, data: &TrainData, test: &EvalSet, opts: RunOptions) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut steps_log = match opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).at(dir)?;
            write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
            let p = dir.join(STEPS_FILE);
            Some(std::io::BufWriter::new(std::fs::File::create(&p).at(&p)?))
        }
        None => None,
    };
    let mut reports = Vec::with_capacity(cfg.total_iterations);
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut best = None;
    for k in 1..=cfg.total_iterations {
        let report = trainer.step(data)?;
        if let (Some(w), Some(dir)) = (steps_log.as_mut(), opts.out_dir) {
            serde_json::to_writer(&mut *w, &report)?;
            w.write_all(b"\n").at(dir.join(STEPS_FILE))?;
        }
        reports.push(report);
        if k % cfg.eval_interval == 0 || k == cfg.total_iterations {
            let ev = evaluate_classifier_full(&trainer.models.classifier, test)?;
            let detector_accuracy = opts.detector_probe.map(|p| p(&trainer.models)).transpose()?;
            let (prev_acc, prev_loss) = evals
                .last()
                .map_or((f64::NEG_INFINITY, f64::INFINITY), |e| (e.best_accuracy, e.best_loss));
            if ev.accuracy > prev_acc {
                let ck = Checkpoint::from_models(&trainer.models, cfg, k);
                if let Some(dir) = opts.out_dir {
                    ck.write(&dir.join(BEST_CHECKPOINT))?;
                }
                best = Some(ck);
            }
            evals.push(EvalRecord {
                iteration: k,
                test_accuracy: ev.accuracy,
                test_loss: ev.loss,
                best_accuracy: prev_acc.max(ev.accuracy),
                best_loss: prev_loss.min(ev.loss),
                detector_accuracy,
            });
        }
    }
    if let Some(dir) = opts.out_dir {
        if let Some(mut w) = steps_log.take() {
            w.flush().at(dir.join(STEPS_FILE))?;
        }
        crate::manifest::write_jsonl(&dir.join(EVALS_FILE), &evals)?;
        Checkpoint::from_trainer(&trainer).write(&dir.join(LAST_CHECKPOINT))?;
    }
    Ok(RunOutcome {
        reports,
        evals,
        best,
        trainer,
    })
}
