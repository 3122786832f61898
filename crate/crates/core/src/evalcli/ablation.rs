//! One-axis ablation grids over queue hyper-parameters and component flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{parse_config, TrainConfig};
use crate::engine::data::{EvalSet, TrainData};
use crate::engine::run::{run_training, RunOptions, RunOutcome};
use crate::error::{Error, Result};
use crate::evalcli::plot::{write_bar_chart, write_line_chart};
use crate::evalcli::{evaluate_detector, utilization_ratio, MetricSeries};
use crate::exec;
use crate::fileio::write_atomic;
use crate::manifest::Sidecar;
use crate::nets::ModelBundle;

/// Fraction of the final steps averaged for utilization and occupancy.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    QueueSize,
    ClassesPerUpdate,
    EnqueuePerClass,
    SingleQueue,
    NoDummyHead,
    SharedDetector,
}

impl AblationAxis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "N_q" | "queue_size" => Self::QueueSize,
            "P" | "classes_per_update" => Self::ClassesPerUpdate,
            "Q" | "enqueue_per_class" => Self::EnqueuePerClass,
            "single_queue" => Self::SingleQueue,
            "no_dummy_head" => Self::NoDummyHead,
            "shared_detector" => Self::SharedDetector,
            other => return Err(Error::ConfigField {
                field: "axis",
                message: format!("unknown ablation axis `{other}`"),
            }),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::QueueSize => "queue_size",
            Self::ClassesPerUpdate => "classes_per_update",
            Self::EnqueuePerClass => "enqueue_per_class",
            Self::SingleQueue => "single_queue",
            Self::NoDummyHead => "no_dummy_head",
            Self::SharedDetector => "shared_detector",
        }
    }

    fn is_flag(self) -> bool {
        matches!(self, Self::SingleQueue | Self::NoDummyHead | Self::SharedDetector)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AblationValue {
    Count(usize),
    Flag(bool),
}

impl std::fmt::Display for AblationValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Count(v) => write!(f, "{v}"),
            Self::Flag(v) => write!(f, "{v}"),
        }
    }
}

/// A base config and the values of the single axis that varies.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub values: Vec<AblationValue>,
    pub base: TrainConfig,
}

impl AblationGrid {
    /// Parse `axis = "...", values = [...]` plus a `[base]` config table.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::ConfigParse {
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let field = |f: &'static str, m: &str| Error::ConfigField {
            field: f,
            message: m.to_string(),
        };
        if let Some(k) = table.keys().find(|k| !["axis", "values", "base"].contains(&k.as_str())) {
            return Err(Error::ConfigField {
                field: "grid",
                message: format!("unknown key `{k}`"),
            });
        }
        let axis = AblationAxis::parse(
            table
                .get("axis")
                .and_then(|v| v.as_str())
                .ok_or_else(|| field("axis", "is required"))?,
        )?;
        let values = table
            .get("values")
            .and_then(|v| v.as_array())
            .ok_or_else(|| field("values", "must be an array"))?
            .iter()
            .map(|v| match (axis.is_flag(), v) {
                (true, toml::Value::Boolean(b)) => Ok(AblationValue::Flag(*b)),
                (false, toml::Value::Integer(i)) if *i > 0 => Ok(AblationValue::Count(*i as usize)),
                _ => Err(field("values", &format!("`{v}` does not fit axis `{}`", axis.name()))),
            })
            .collect::<Result<Vec<_>>>()?;
        let base = table
            .get("base")
            .and_then(|v| v.as_table())
            .ok_or_else(|| field("base", "is required"))?;
        let base = parse_config(&toml::to_string(base).map_err(|e| field("base", &e.to_string()))?)?;
        let grid = Self { axis, values, base };
        grid.configs()?;
        Ok(grid)
    }

    /// One validated config per value.
    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        if self.values.is_empty() {
            return Err(Error::ConfigField {
                field: "values",
                message: "must not be empty".into(),
            });
        }
        self.values
            .iter()
            .map(|&v| {
                let mut c = self.base.clone();
                match (self.axis, v) {
                    (AblationAxis::QueueSize, AblationValue::Count(n)) => c.queue_size = n,
                    (AblationAxis::ClassesPerUpdate, AblationValue::Count(n)) => c.classes_per_update = n,
                    (AblationAxis::EnqueuePerClass, AblationValue::Count(n)) => c.enqueue_per_class = n,
                    (AblationAxis::SingleQueue, AblationValue::Flag(b)) => c.ablation.single_queue = b,
                    (AblationAxis::NoDummyHead, AblationValue::Flag(b)) => c.ablation.no_dummy_head = b,
                    (AblationAxis::SharedDetector, AblationValue::Flag(b)) => c.ablation.shared_detector = b,
                    _ => {
                        return Err(Error::ConfigField {
                            field: "values",
                            message: format!("`{v}` does not fit axis `{}`", self.axis.name()),
                        })
                    }
                }
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

/// Results of one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: AblationValue,
    pub config_hash: String,
    /// Best periodic test accuracy.
    pub classifier_accuracy: f64,
    /// Detector accuracy on the unlabeled set at the last evaluation.
    pub detector_accuracy: f64,
    pub real_utilization: f64,
    pub dummy_utilization: f64,
    pub occupancy_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},config_hash,classifier_accuracy,detector_accuracy,real_utilization,dummy_utilization,occupancy_entropy\n",
            self.axis.name()
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.value,
                r.config_hash,
                r.classifier_accuracy,
                r.detector_accuracy,
                r.real_utilization,
                r.dummy_utilization,
                r.occupancy_entropy
            )
            .expect("string write");
        }
        s
    }
}

/// Summary numbers of one finished run.
pub fn summarize(value: AblationValue, cfg: &TrainConfig, out: &RunOutcome) -> Result<AblationRow> {
    let (real, dummy) = utilization_ratio(&out.reports, &cfg.hash(), "")?;
    let mut entropy = MetricSeries::new("occupancy_entropy", &cfg.hash(), "");
    for r in &out.reports {
        entropy.push(r.iteration, r.queue.occupancy_entropy())?;
    }
    let last = out.evals.last();
    Ok(AblationRow {
        value,
        config_hash: cfg.hash(),
        classifier_accuracy: out.best_accuracy().unwrap_or(f64::NAN),
        detector_accuracy: last.and_then(|e| e.detector_accuracy).unwrap_or(f64::NAN),
        real_utilization: real.tail_mean(TAIL_FRACTION).unwrap_or(0.0),
        dummy_utilization: dummy.tail_mean(TAIL_FRACTION).unwrap_or(0.0),
        occupancy_entropy: entropy.tail_mean(TAIL_FRACTION).unwrap_or(0.0),
    })
}

/// Train once per grid value with the shared base seed. With `out_dir`,
/// each run writes to `<axis>-<value>-<hash>/` and the table, series and
/// charts land in `out_dir`.
pub fn run_ablation(
    grid: &AblationGrid,
    data: &TrainData,
    test: &EvalSet,
    sidecar: &Sidecar,
    out_dir: Option<&Path>,
) -> Result<(AblationTable, Vec<RunOutcome>)> {
    let configs = grid.configs()?;
    let probe = |m: &ModelBundle| evaluate_detector(m, &data.unlabeled, &data.unlabeled_ids, sidecar);
    let dirs: Vec<Option<PathBuf>> = grid
        .values
        .iter()
        .zip(&configs)
        .map(|(v, c)| out_dir.map(|d| d.join(format!("{}-{v}-{}", grid.axis.name(), c.hash()))))
        .collect();
    let outcomes = exec::map_range(configs.len(), |i| {
        run_training(
            &configs[i],
            data,
            test,
            RunOptions {
                out_dir: dirs[i].as_deref(),
                detector_probe: Some(&probe),
            },
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows = grid
        .values
        .iter()
        .zip(&configs)
        .zip(&outcomes)
        .map(|((&v, c), o)| summarize(v, c, o))
        .collect::<Result<Vec<_>>>()?;
    let table = AblationTable { axis: grid.axis, rows };
    if let Some(dir) = out_dir {
        write_outputs(dir, grid, &configs, &outcomes, &table)?;
    }
    Ok((table, outcomes))
}

fn write_outputs(dir: &Path, grid: &AblationGrid, configs: &[TrainConfig], outcomes: &[RunOutcome], table: &AblationTable) -> Result<()> {
    let axis = grid.axis.name();
    write_atomic(&dir.join("table.csv"), table.to_csv().as_bytes())?;
    write_atomic(&dir.join("table.json"), &serde_json::to_vec_pretty(table)?)?;
    let mut acc = Vec::new();
    let mut det = Vec::new();
    let mut util = Vec::new();
    for ((v, c), o) in grid.values.iter().zip(configs).zip(outcomes) {
        let hash = c.hash();
        let mut a = MetricSeries::new(&format!("{axis}={v}"), &hash, "");
        let mut d = MetricSeries::new(&format!("{axis}={v}"), &hash, "");
        for e in &o.evals {
            a.push(e.iteration, e.test_accuracy)?;
            if let Some(x) = e.detector_accuracy {
                d.push(e.iteration, x)?;
            }
        }
        let (mut r, mut u) = utilization_ratio(&o.reports, &hash, "")?;
        r.name = format!("{axis}={v} real");
        u.name = format!("{axis}={v} dummy");
        acc.push(a);
        det.push(d);
        util.push(r);
        util.push(u);
    }
    let series: Vec<&MetricSeries> = acc.iter().chain(&det).chain(&util).collect();
    crate::manifest::write_jsonl(&dir.join("series.jsonl"), series)?;
    write_line_chart(&dir.join("accuracy.svg"), &acc, &format!("test accuracy by {axis}"), "accuracy")?;
    write_line_chart(&dir.join("detector.svg"), &det, &format!("detector accuracy by {axis}"), "accuracy")?;
    write_line_chart(&dir.join("utilization.svg"), &util, &format!("utilization by {axis}"), "fraction")?;
    let labels: Vec<String> = table.rows.iter().map(|r| r.value.to_string()).collect();
    let values: Vec<f64> = table.rows.iter().map(|r| r.classifier_accuracy).collect();
    write_bar_chart(&dir.join("table.svg"), &labels, &values, &format!("best accuracy by {axis}"), "accuracy")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[base]\nnum_classes = 4\narch = \"tiny-cnn\"\n";

    #[test]
    fn parses_queue_axis() {
        let g = AblationGrid::parse(&format!("axis = \"Q\"\nvalues = [1, 2]\n{BASE}")).unwrap();
        assert_eq!(g.axis, AblationAxis::EnqueuePerClass);
        let cs = g.configs().unwrap();
        assert_eq!((cs[0].enqueue_per_class, cs[1].enqueue_per_class), (1, 2));
    }

    #[test]
    fn rejects_mismatched_values_and_conflicts() {
        assert!(AblationGrid::parse(&format!("axis = \"P\"\nvalues = [true]\n{BASE}")).is_err());
        assert!(AblationGrid::parse(&format!("axis = \"P\"\nvalues = [9]\n{BASE}")).is_err());
        let conflict = "axis = \"shared_detector\"\nvalues = [true]\n[base]\nnum_classes = 4\n[base.ablation]\nsingle_queue = true\n";
        assert!(AblationGrid::parse(conflict).is_err());
        assert!(AblationGrid::parse(&format!("axis = \"Q\"\nvalues = [1]\nextra = 1\n{BASE}")).is_err());
    }
}
