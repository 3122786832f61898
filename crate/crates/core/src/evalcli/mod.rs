//! Evaluation, ablations and reporting.
//!
//! [`evaluate_detector_full`] is the only code path that reads sample origins.

pub mod ablation;
pub mod plot;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::checkpoint::InferenceModel;
use crate::engine::data::{to_tensor_owned, EvalSet};
use crate::engine::trainer::StepReport;
use crate::error::{Error, Result};
use crate::fileio::write_atomic;
use crate::imaging::Image;
use crate::losses::{argmax, mean_cross_entropy};
use crate::manifest::{EvalAccess, Origin, Sidecar};
use crate::nets::{ClassifierModel, DetectorModel, ModelBundle};
use crate::tensor::Tensor;

pub use ablation::{run_ablation, AblationAxis, AblationGrid, AblationRow, AblationTable};

/// Anything producing class logits for a batch of normalized images.
pub trait ClassProbe: Sync {
    fn class_logits(&self, x: &Tensor) -> Tensor;
}

impl ClassProbe for ClassifierModel {
    fn class_logits(&self, x: &Tensor) -> Tensor {
        self.real_logits_eval(x)
    }
}

impl ClassProbe for InferenceModel {
    fn class_logits(&self, x: &Tensor) -> Tensor {
        self.real_logits_eval(x)
    }
}

impl ClassProbe for ModelBundle {
    fn class_logits(&self, x: &Tensor) -> Tensor {
        self.classifier.real_logits_eval(x)
    }
}

/// Anything producing `[z_r, z_s]` logits.
pub trait OriginProbe: Sync {
    fn origin_logits(&self, x: &Tensor) -> Tensor;
}

impl OriginProbe for DetectorModel {
    fn origin_logits(&self, x: &Tensor) -> Tensor {
        self.forward_eval(x)
    }
}

impl OriginProbe for ModelBundle {
    fn origin_logits(&self, x: &Tensor) -> Tensor {
        self.detector_logits_eval(x)
    }
}

/// Accuracy, mean CE and predictions on a labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierEval {
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate_classifier_full(model: &impl ClassProbe, test: &EvalSet) -> Result<ClassifierEval> {
    if test.is_empty() {
        return Err(Error::Precondition("empty test set".into()));
    }
    let logits = model.class_logits(&to_tensor_owned(&test.images));
    let predictions: Vec<usize> = (0..logits.n).map(|i| argmax(logits.row(i))).collect();
    let correct = predictions.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    let (loss, _) = mean_cross_entropy(&logits, &test.labels);
    Ok(ClassifierEval {
        accuracy: correct as f64 / test.len() as f64,
        loss,
        predictions,
    })
}

/// Top-1 accuracy of the real head, no augmentation.
pub fn evaluate_classifier(model: &impl ClassProbe, test: &EvalSet) -> Result<f64> {
    Ok(evaluate_classifier_full(model, test)?.accuracy)
}

/// Detector verdicts tallied against recorded origins. "Positive" means
/// synthetic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub true_synthetic: usize,
    pub false_synthetic: usize,
    pub true_real: usize,
    pub false_real: usize,
}

impl DetectorEval {
    pub fn total(&self) -> usize {
        self.true_synthetic + self.false_synthetic + self.true_real + self.false_real
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_synthetic + self.true_real) as f64 / self.total().max(1) as f64
    }

    /// Share of synthetic images caught.
    pub fn recall(&self) -> f64 {
        self.true_synthetic as f64 / (self.true_synthetic + self.false_real).max(1) as f64
    }

    /// Share of real images wrongly flagged.
    pub fn false_alarm_rate(&self) -> f64 {
        self.false_synthetic as f64 / (self.false_synthetic + self.true_real).max(1) as f64
    }
}

/// Confusion counts of the detector verdict. Every id must have an origin
/// in the sidecar.
pub fn evaluate_detector_full(
    model: &impl OriginProbe,
    images: &[Image],
    ids: &[String],
    sidecar: &Sidecar,
) -> Result<DetectorEval> {
    if images.is_empty() || images.len() != ids.len() {
        return Err(Error::Precondition(format!(
            "detector evaluation on {} images and {} ids",
            images.len(),
            ids.len()
        )));
    }
    let access = EvalAccess::grant();
    let truth = ids
        .iter()
        .map(|id| sidecar.origin(id, &access))
        .collect::<Result<Vec<Origin>>>()?;
    let logits = model.origin_logits(&to_tensor_owned(images));
    let mut out = DetectorEval::default();
    for (i, o) in truth.iter().enumerate() {
        let flagged = argmax(logits.row(i)) == 1;
        match (o, flagged) {
            (Origin::Synthetic, true) => out.true_synthetic += 1,
            (Origin::Synthetic, false) => out.false_real += 1,
            (Origin::Real, true) => out.false_synthetic += 1,
            (Origin::Real, false) => out.true_real += 1,
        }
    }
    Ok(out)
}

/// Binary accuracy of the detector verdict against recorded origins.
pub fn evaluate_detector(model: &impl OriginProbe, images: &[Image], ids: &[String], sidecar: &Sidecar) -> Result<f64> {
    Ok(evaluate_detector_full(model, images, ids, sidecar)?.accuracy())
}

/// A named curve over strictly increasing iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<(usize, f64)>,
    pub config_hash: String,
    pub benchmark: String,
}

impl MetricSeries {
    pub fn new(name: &str, config_hash: &str, benchmark: &str) -> Self {
        Self {
            name: name.to_string(),
            points: Vec::new(),
            config_hash: config_hash.to_string(),
            benchmark: benchmark.to_string(),
        }
    }

    /// Append a point; iterations must increase strictly.
    pub fn push(&mut self, iteration: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if iteration <= last {
                return Err(Error::Precondition(format!(
                    "series `{}`: iteration {iteration} after {last}",
                    self.name
                )));
            }
        }
        self.points.push((iteration, value));
        Ok(())
    }

    /// Mean of the values over the last `fraction` of points (at least one).
    pub fn tail_mean(&self, fraction: f64) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let n = ((self.points.len() as f64 * fraction).ceil() as usize).clamp(1, self.points.len());
        let tail = &self.points[self.points.len() - n..];
        Some(tail.iter().map(|p| p.1).sum::<f64>() / n as f64)
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<MetricSeries>> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// Real-head and dummy-head utilization curves from step reports.
pub fn utilization_ratio(reports: &[StepReport], config_hash: &str, benchmark: &str) -> Result<(MetricSeries, MetricSeries)> {
    let mut real = MetricSeries::new("real_head_utilization", config_hash, benchmark);
    let mut dummy = MetricSeries::new("dummy_head_utilization", config_hash, benchmark);
    for r in reports {
        real.push(r.iteration, r.real_utilization)?;
        dummy.push(r.iteration, r.dummy_utilization)?;
    }
    Ok((real, dummy))
}

/// One exported embedding row.
pub struct EmbeddingRecord<'a> {
    pub id: &'a str,
    pub class: Option<usize>,
    pub image: &'a Image,
}

/// Write encoder features as CSV: `id,class,origin,f0..f{d-1}`. Origins come
/// from the sidecar when present, otherwise the column is empty.
pub fn export_embeddings(model: &InferenceModel, records: &[EmbeddingRecord], sidecar: Option<&Sidecar>, out: &Path) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::Precondition("no records to export".into()));
    }
    let imgs: Vec<Image> = records.iter().map(|r| r.image.clone()).collect();
    let feats = crate::nets::chunked_eval(&to_tensor_owned(&imgs), |c| model.encoder.body.forward_eval(c));
    let d = feats.row_len();
    let access = EvalAccess::grant();
    let mut s = String::from("id,class,origin");
    for j in 0..d {
        write!(s, ",f{j}").expect("string write");
    }
    s.push('\n');
    for (i, r) in records.iter().enumerate() {
        let origin = sidecar
            .and_then(|sc| sc.get(r.id, &access))
            .and_then(|e| e.origin)
            .map_or("", |o| match o {
                Origin::Real => "real",
                Origin::Synthetic => "synthetic",
            });
        let class = r.class.map(|c| c.to_string()).unwrap_or_default();
        write!(s, "{},{class},{origin}", r.id).expect("string write");
        for v in feats.row(i) {
            write!(s, ",{v:e}").expect("string write");
        }
        s.push('\n');
    }
    write_atomic(out, s.as_bytes())?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csqueue::QueueStats;
    use crate::manifest::SidecarRecord;

    struct Fixed(Vec<[f64; 2]>);

    impl OriginProbe for Fixed {
        fn origin_logits(&self, x: &Tensor) -> Tensor {
            Tensor::matrix(x.n, 2, self.0.iter().take(x.n).flatten().copied().collect())
        }
    }

    fn sidecar(origins: &[Origin]) -> (Vec<String>, Sidecar) {
        let ids: Vec<String> = (0..origins.len()).map(|i| format!("u{i}")).collect();
        let sc = Sidecar::from_records(ids.iter().zip(origins).map(|(id, o)| SidecarRecord {
            id: id.clone(),
            origin: Some(*o),
            label: None,
            generator: None,
        }));
        (ids, sc)
    }

    #[test]
    fn detector_accuracy_hand_count() {
        use Origin::*;
        let (ids, sc) = sidecar(&[Real, Real, Synthetic, Synthetic, Real, Synthetic]);
        let model = Fixed(vec![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [2.0, 1.0], [0.5, 0.5], [0.0, 3.0]]);
        let imgs = vec![Image::new(2, 2); 6];
        let acc = evaluate_detector(&model, &imgs, &ids, &sc).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(sc.reads(), 6);
    }

    #[test]
    fn constant_detector_on_balanced_origins() {
        use Origin::*;
        let (ids, sc) = sidecar(&[Real, Synthetic, Real, Synthetic]);
        let imgs = vec![Image::new(2, 2); 4];
        let acc = evaluate_detector(&Fixed(vec![[1.0, 0.0]; 4]), &imgs, &ids, &sc).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn missing_sidecar_entry_errors() {
        let (mut ids, sc) = sidecar(&[Origin::Real]);
        ids[0] = "other".into();
        let imgs = vec![Image::new(2, 2)];
        assert!(matches!(
            evaluate_detector(&Fixed(vec![[1.0, 0.0]]), &imgs, &ids, &sc),
            Err(Error::MissingSidecar(_))
        ));
    }

    fn report(it: usize, r: f64, d: f64) -> StepReport {
        StepReport {
            iteration: it,
            lr: 0.0,
            detector_supervised: None,
            detector_unsupervised: 0.0,
            classifier_supervised: 0.0,
            real_unsupervised: 0.0,
            dummy_unsupervised: 0.0,
            total: 0.0,
            real_utilization: r,
            dummy_utilization: d,
            synthetic_verdicts: 0.0,
            detector_mask_rate: 0.0,
            queue: QueueStats {
                per_class: vec![],
                total: 0,
            },
        }
    }

    #[test]
    fn utilization_series() {
        let (r, d) = utilization_ratio(&[report(0, 0.0, 0.0), report(1, 0.5, 0.25)], "h", "b").unwrap();
        assert_eq!(r.points, vec![(0, 0.0), (1, 0.5)]);
        assert_eq!(d.points, vec![(0, 0.0), (1, 0.25)]);
        assert!(utilization_ratio(&[report(1, 0.0, 0.0), report(1, 0.0, 0.0)], "h", "b").is_err());
    }

    #[test]
    fn tail_mean_uses_last_fraction() {
        let mut s = MetricSeries::new("x", "", "");
        for i in 0..20 {
            s.push(i, i as f64).unwrap();
        }
        assert_eq!(s.tail_mean(0.1), Some(18.5));
    }
}
