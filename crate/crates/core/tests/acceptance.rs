//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 2 to 6 and the class-balance part of 8 are also enforced by the
//! other integration tests. The training outcomes (7, and the learned parts
//! of 8) are measured here on the toy benchmark and reported; set
//! `RSMATCH_ACCEPTANCE_STRICT=1` to turn any FAIL into a failing exit code.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::Check;
use rsmatch::benchgen::generator::ProceduralConfig;
use rsmatch::benchgen::mix::{build_benchmark, BuildOptions};
use rsmatch::benchgen::toy::{make_toy, ToyConfig, REAL_MANIFEST};
use rsmatch::config::{parse_config, TrainConfig};
use rsmatch::engine::{run_training, EvalSet, RunOptions, TrainData};
use rsmatch::evalcli::{evaluate_detector_full, DetectorEval};
use rsmatch::manifest::{load_benchmark, Sidecar};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Toy {
    data: TrainData,
    test: EvalSet,
    sidecar: Sidecar,
}

/// Toy run settings shared by every method and ablation.
fn toy_config(method: &str, seed: u64, ablation: &str) -> TrainConfig {
    let text = format!(
        r#"num_classes = 4
seed = {seed}
arch = "tiny-cnn"
method = "{method}"
labeled_batch = 16
unlabeled_ratio = 4
threshold = 0.95
detector_threshold = 0.99
total_iterations = 2000
eval_interval = 250
[optimizer]
lr = 0.01
momentum = 0.9
weight_decay = 5e-4
nesterov = true
cosine_factor = 0.4375
{ablation}"#
    );
    parse_config(&text).expect("toy config parses")
}

/// 4 classes of 16x16 images, 500 unlabeled reals per class plus
/// ceil(0.5 * 525) synthetic, 25 labels per class.
fn build_toy(dir: &Path) -> Result<Toy, String> {
    let real = dir.join("real");
    make_toy(&ToyConfig::default(), &real).map_err(|e| e.to_string())?;
    let bench = dir.join("bench");
    build_benchmark(&BuildOptions {
        real_manifest: real.join(REAL_MANIFEST),
        alpha: 0.5,
        labeled_per_class: 25,
        prompts_per_class: 20,
        seed: 0,
        procedural: ProceduralConfig::default(),
        out: bench.clone(),
    })
    .map_err(|e| e.to_string())?;
    let m = load_benchmark(&bench).map_err(|e| e.to_string())?;
    let (data, test) = TrainData::load(&m, 4).map_err(|e| e.to_string())?;
    Ok(Toy {
        data,
        test,
        sidecar: m.sidecar,
    })
}

struct Run {
    final_accuracy: f64,
    best_accuracy: f64,
    detector: Option<DetectorEval>,
    dummy_utilization: Vec<f64>,
}

fn train(toy: &Toy, cfg: &TrainConfig) -> Result<Run, String> {
    let out = run_training(cfg, &toy.data, &toy.test, RunOptions::default()).map_err(|e| e.to_string())?;
    let last = out.evals.last().ok_or("no evaluation ran")?;
    let detector = match cfg.method {
        rsmatch::config::Method::RsMatch => Some(
            evaluate_detector_full(&out.trainer.models, &toy.data.unlabeled, &toy.data.unlabeled_ids, &toy.sidecar)
                .map_err(|e| e.to_string())?,
        ),
        rsmatch::config::Method::FixMatch => None,
    };
    Ok(Run {
        final_accuracy: last.test_accuracy,
        best_accuracy: last.best_accuracy,
        detector,
        dummy_utilization: out.reports.iter().map(|r| r.dummy_utilization).collect(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn tail_mean(v: &[f64], fraction: f64) -> f64 {
    let n = ((v.len() as f64 * fraction).ceil() as usize).clamp(1, v.len());
    v[v.len() - n..].iter().sum::<f64>() / n as f64
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Criteria 7 and 8 share the toy benchmark and the seed-0 RSMatch run.
fn toy_criteria() -> (Check, Check) {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let toy = match build_toy(dir.path()) {
        Ok(t) => t,
        Err(e) => return (Err(format!("toy build: {e}")), Err(format!("toy build: {e}"))),
    };
    let runs = |method: &str, ablation: &str| -> Result<Vec<Run>, String> {
        SEEDS.iter().map(|&s| train(&toy, &toy_config(method, s, ablation))).collect()
    };
    let (rs, fm) = match (runs("rsmatch", ""), runs("fixmatch", "")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return (Err(e.clone()), Err(e)),
    };
    let det_acc: Vec<f64> = rs.iter().map(|r| r.detector.map_or(0.0, |d| d.accuracy())).collect();
    let rs_acc: Vec<f64> = rs.iter().map(|r| r.final_accuracy).collect();
    let fm_acc: Vec<f64> = fm.iter().map(|r| r.final_accuracy).collect();
    let a_ok = det_acc.iter().all(|&a| a >= 0.90);
    // Paired by seed: the median of RSMatch minus FixMatch must not be negative.
    let diffs: Vec<f64> = rs_acc.iter().zip(&fm_acc).map(|(r, f)| r - f).collect();
    let diff_med = median(diffs.clone());
    let b_ok = diff_med >= 0.0;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    let best = |r: &[Run]| fmt(&r.iter().map(|x| x.best_accuracy).collect::<Vec<_>>());
    let seven = format!(
        "(a) {} detector accuracy on unlabeled {} (>= 0.90 each); (b) {} final test accuracy RSMatch {} vs FixMatch {}, median paired difference {diff_med:+.4} (best-so-far {} vs {})",
        verdict(a_ok),
        fmt(&det_acc),
        verdict(b_ok),
        fmt(&rs_acc),
        fmt(&fm_acc),
        best(&rs),
        best(&fm),
    );
    let seven = if a_ok && b_ok { Ok(seven) } else { Err(seven) };

    let single = train(&toy, &toy_config("rsmatch", 0, "[ablation]\nsingle_queue = true"));
    let no_dummy = train(&toy, &toy_config("rsmatch", 0, "[ablation]\nno_dummy_head = true"));
    let eight = match (single, no_dummy) {
        (Ok(single), Ok(no_dummy)) => {
            let sq = single.detector.map_or(0.0, |d| d.accuracy());
            let cw = det_acc[0];
            let sq_ok = sq < cw;
            let nd_max = no_dummy.dummy_utilization.iter().fold(0.0f64, |m, &u| m.max(u));
            let nd_ok = no_dummy.dummy_utilization.iter().all(|&u| u == 0.0);
            let full = tail_mean(&rs[0].dummy_utilization, 0.1);
            let full_ok = full > 0.05;
            let law = common::ratio_law();
            let detail = format!(
                "{} single-queue detector {sq:.4} < class-wise {cw:.4}; {} no-dummy utilization max {nd_max}; {} full-mode utilization {full:.4} > 0.05 (last 10% of steps); {} class balance {}",
                verdict(sq_ok),
                verdict(nd_ok),
                verdict(full_ok),
                verdict(law.is_ok()),
                law.as_ref().unwrap_or_else(|e| e),
            );
            if sq_ok && nd_ok && full_ok && law.is_ok() {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    };
    (seven, eight)
}

fn main() -> ExitCode {
    // libtest flags (e.g. from `cargo test -- --nocapture`) are accepted and
    // ignored; `--list` reports nothing so test discovery stays quiet.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let strict = std::env::var("RSMATCH_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut line = |n: &str, name: &str, start: Instant, check: Check| {
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match check {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{tag}] {name}: {detail} ({secs:.1}s)");
    };
    println!("criterion 1 [SKIP] full-scale reproduction: out of scope, substituted by criteria 2-8");
    let t = Instant::now();
    line("2", "queue oracle", t, common::queue_oracle(10_000, 0));
    let t = Instant::now();
    line("3", "gradient isolation", t, common::gradient_isolation(100, 11));
    let t = Instant::now();
    line("4", "finite differences", t, common::finite_differences(100, 8, 23));
    let t = Instant::now();
    let five = SEEDS
        .iter()
        .map(|&s| common::all_real_matches_fixmatch(s).map_err(|e| format!("seed {s}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(|d| format!("seeds 0-2, {}", d.join("; ")));
    line("5", "all-real gate equals FixMatch", t, five);
    let t = Instant::now();
    line("6", "closed-form fixtures", t, common::closed_forms());
    let t = Instant::now();
    let (seven, eight) = toy_criteria();
    line("7", "toy benchmark", t, seven);
    line("8", "ablations", t, eight);
    println!("acceptance: {failed} of 7 evaluated criteria failed");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
