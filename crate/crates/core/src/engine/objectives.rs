//! Confidence gates and the five training objectives.
//!
//! Every objective has a logit-level form returning the value and the
//! gradient with respect to the logits it consumes, and a model-level
//! wrapper that runs the forward pass itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{argmax, softmax, weighted_cross_entropy};
use crate::nets::{synth_confidence, ClassifierModel, DetectorModel};
use crate::tensor::Tensor;

/// Detector class index of real images.
pub const REAL: usize = 0;
/// Detector class index of synthetic images.
pub const SYNTHETIC: usize = 1;

/// Hard pseudo-labels and their confidence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTargets {
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

/// Base SSL thresholding rule.
pub trait SslStrategy {
    fn name(&self) -> &'static str;

    /// Pseudo-labels and mask from weak-view logits.
    fn pseudo_targets(&self, weak_logits: &Tensor, threshold: f64) -> PseudoTargets;
}

/// Fixed-threshold hard pseudo-labeling.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixMatch;

impl SslStrategy for FixMatch {
    fn name(&self) -> &'static str {
        "fixmatch"
    }

    fn pseudo_targets(&self, weak_logits: &Tensor, threshold: f64) -> PseudoTargets {
        let mut labels = Vec::with_capacity(weak_logits.n);
        let mut mask = Vec::with_capacity(weak_logits.n);
        for i in 0..weak_logits.n {
            let p = softmax(weak_logits.row(i));
            let t = argmax(&p);
            labels.push(t);
            mask.push(p[t] > threshold);
        }
        PseudoTargets { labels, mask }
    }
}

/// Base strategies by name. Only FixMatch is implemented.
pub fn strategy(name: &str) -> Result<Box<dyn SslStrategy>> {
    match name {
        "fixmatch" => Ok(Box::new(FixMatch)),
        "flexmatch" | "softmatch" => Err(Error::Precondition(format!(
            "base strategy `{name}` is not implemented"
        ))),
        other => Err(Error::Precondition(format!("unknown base strategy `{other}`"))),
    }
}

/// Per-sample routing decisions for one unlabeled batch. Gates are constants
/// in the backward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMask {
    /// Real-head confidence above the classifier threshold.
    pub conf_mask: Vec<bool>,
    /// Routing verdict, [`REAL`] or [`SYNTHETIC`].
    pub verdict: Vec<usize>,
    /// Real-head pseudo-label.
    pub pseudo_label: Vec<usize>,
    pub detector_conf_mask: Vec<bool>,
    pub detector_pseudo: Vec<usize>,
    /// Softmax synthetic share of the detector logits, used to rank queue
    /// candidates.
    pub synth_score: Vec<f64>,
}

impl GateMask {
    pub fn len(&self) -> usize {
        self.conf_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf_mask.is_empty()
    }

    /// Weight of each sample in the real-head unlabeled loss.
    pub fn real_weights(&self) -> Vec<f64> {
        self.conf_mask
            .iter()
            .zip(&self.verdict)
            .map(|(&c, &v)| f64::from(u8::from(c)) * f64::from(u8::from(v == REAL)))
            .collect()
    }

    /// Weight of each sample in the dummy-head unlabeled loss.
    pub fn dummy_weights(&self) -> Vec<f64> {
        self.conf_mask
            .iter()
            .zip(&self.verdict)
            .map(|(&c, &v)| f64::from(u8::from(c)) * f64::from(u8::from(v == SYNTHETIC)))
            .collect()
    }

    pub fn detector_weights(&self) -> Vec<f64> {
        self.detector_conf_mask.iter().map(|&c| f64::from(u8::from(c))).collect()
    }

    /// Fractions of the batch routed to the real and the dummy head.
    pub fn utilization(&self) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.len() as f64;
        let real: f64 = self.real_weights().iter().sum();
        let dummy: f64 = self.dummy_weights().iter().sum();
        (real / n, dummy / n)
    }
}

/// Gates from weak-view real-head logits and (optionally) detector logits.
/// Without detector logits, or with `all_real`, every verdict is real.
pub fn compute_gates(
    strategy: &dyn SslStrategy,
    real_weak: &Tensor,
    detector_weak: Option<&Tensor>,
    threshold: f64,
    detector_threshold: f64,
    all_real: bool,
) -> Result<GateMask> {
    if !real_weak.all_finite() {
        return Err(Error::NonFinite("real-head logits on the weak view".into()));
    }
    let cls = strategy.pseudo_targets(real_weak, threshold);
    let n = real_weak.n;
    let (det, synth_score) = match detector_weak {
        Some(d) => {
            if d.n != n || d.row_len() != 2 {
                return Err(Error::Shape(format!(
                    "detector logits {}x{} for {n} unlabeled samples",
                    d.n,
                    d.row_len()
                )));
            }
            let scores = (0..n)
                .map(|i| synth_confidence(d.row(i)[REAL], d.row(i)[SYNTHETIC]))
                .collect::<Result<Vec<f64>>>()?;
            (strategy.pseudo_targets(d, detector_threshold), scores)
        }
        None => (
            PseudoTargets {
                labels: vec![REAL; n],
                mask: vec![false; n],
            },
            vec![0.0; n],
        ),
    };
    let verdict = if all_real { vec![REAL; n] } else { det.labels.clone() };
    Ok(GateMask {
        conf_mask: cls.mask,
        verdict,
        pseudo_label: cls.labels,
        detector_conf_mask: det.mask,
        detector_pseudo: det.labels,
        synth_score,
    })
}

/// A loss value and its gradient with respect to the consumed logits.
#[derive(Clone, Debug)]
pub struct Term {
    pub value: f64,
    pub grad: Tensor,
}

fn check_finite(name: &str, t: &Term) -> Result<()> {
    if t.value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} = {}", t.value)))
    }
}

/// Binary CE over `[real; synth]` rows with targets real=0, synthetic=1,
/// averaged over all 2B rows. Returns one gradient block per input.
pub fn detector_supervised(real_logits: &Tensor, synth_logits: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    if real_logits.n != synth_logits.n || real_logits.row_len() != 2 || synth_logits.row_len() != 2 {
        return Err(Error::Shape(format!(
            "detector supervised loss on {} real and {} synthetic rows",
            real_logits.n, synth_logits.n
        )));
    }
    let b = real_logits.n;
    let both = Tensor::concat(&[real_logits, synth_logits]);
    let targets: Vec<usize> = (0..2 * b).map(|i| if i < b { REAL } else { SYNTHETIC }).collect();
    let (value, grad) = weighted_cross_entropy(&both, &targets, &vec![1.0; 2 * b], (2 * b) as f64);
    let term = Term { value, grad };
    check_finite("detector supervised loss", &term)?;
    Ok((term.value, term.grad.rows(0, b), term.grad.rows(b, 2 * b)))
}

/// Detector self-training on strong-view logits, masked by the weak-view
/// detector gates, divided by the full batch size.
pub fn detector_unsupervised(strong_logits: &Tensor, gates: &GateMask) -> Result<Term> {
    aligned("detector strong logits", strong_logits, gates)?;
    let (value, grad) = weighted_cross_entropy(
        strong_logits,
        &gates.detector_pseudo,
        &gates.detector_weights(),
        gates.len() as f64,
    );
    let t = Term { value, grad };
    check_finite("detector unsupervised loss", &t)?;
    Ok(t)
}

/// Mean real-head CE over the labeled batch.
pub fn classifier_supervised(real_logits: &Tensor, labels: &[usize]) -> Result<Term> {
    let k = real_logits.row_len();
    if labels.len() != real_logits.n {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), real_logits.n)));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Precondition(format!("label {l} outside [0, {k})")));
    }
    let (value, grad) = weighted_cross_entropy(real_logits, labels, &vec![1.0; labels.len()], labels.len() as f64);
    let t = Term { value, grad };
    check_finite("classifier supervised loss", &t)?;
    Ok(t)
}

/// Real-head CE on strong views for confident samples gated real.
pub fn real_head_unsupervised(real_strong: &Tensor, gates: &GateMask) -> Result<Term> {
    aligned("real-head strong logits", real_strong, gates)?;
    let (value, grad) = weighted_cross_entropy(real_strong, &gates.pseudo_label, &gates.real_weights(), gates.len() as f64);
    let t = Term { value, grad };
    check_finite("real-head unsupervised loss", &t)?;
    Ok(t)
}

/// Dummy-head CE on strong views for confident samples gated synthetic,
/// against the real-head pseudo-labels.
pub fn dummy_head_unsupervised(dummy_strong: &Tensor, gates: &GateMask) -> Result<Term> {
    aligned("dummy-head strong logits", dummy_strong, gates)?;
    let (value, grad) = weighted_cross_entropy(dummy_strong, &gates.pseudo_label, &gates.dummy_weights(), gates.len() as f64);
    let t = Term { value, grad };
    check_finite("dummy-head unsupervised loss", &t)?;
    Ok(t)
}

/// Base FixMatch unlabeled loss: confident samples only, no routing.
pub fn fixmatch_unsupervised(real_strong: &Tensor, targets: &PseudoTargets) -> Result<Term> {
    if real_strong.n != targets.labels.len() {
        return Err(Error::Shape("strong logits and pseudo-labels differ in length".into()));
    }
    let w: Vec<f64> = targets.mask.iter().map(|&c| f64::from(u8::from(c))).collect();
    let (value, grad) = weighted_cross_entropy(real_strong, &targets.labels, &w, w.len() as f64);
    let t = Term { value, grad };
    check_finite("unsupervised loss", &t)?;
    Ok(t)
}

fn aligned(what: &str, logits: &Tensor, gates: &GateMask) -> Result<()> {
    if logits.n != gates.len() {
        return Err(Error::Shape(format!("{what}: {} rows for {} gates", logits.n, gates.len())));
    }
    Ok(())
}

// Model-level wrappers. They run training-mode forwards without caching.

/// Detector supervised loss on real and queued synthetic images; `None` when
/// the synthetic batch is absent (empty queue).
pub fn detector_supervised_loss(detector: &mut DetectorModel, real: &Tensor, synth: Option<&Tensor>) -> Result<Option<f64>> {
    let Some(synth) = synth else { return Ok(None) };
    if synth.n != real.n {
        return Err(Error::Shape(format!("{} real vs {} synthetic images", real.n, synth.n)));
    }
    let logits = detector.forward_train(&Tensor::concat(&[real, synth]), false);
    let (v, _, _) = detector_supervised(&logits.rows(0, real.n), &logits.rows(real.n, logits.n))?;
    Ok(Some(v))
}

pub fn detector_unsupervised_loss(detector: &mut DetectorModel, weak: &Tensor, strong: &Tensor, threshold: f64) -> Result<f64> {
    views_aligned(weak, strong)?;
    let weak_logits = detector.forward_train(weak, false);
    let targets = FixMatch.pseudo_targets(&weak_logits, threshold);
    let gates = GateMask {
        conf_mask: vec![false; weak.n],
        verdict: vec![REAL; weak.n],
        pseudo_label: vec![0; weak.n],
        detector_conf_mask: targets.mask,
        detector_pseudo: targets.labels,
        synth_score: vec![0.0; weak.n],
    };
    Ok(detector_unsupervised(&detector.forward_train(strong, false), &gates)?.value)
}

pub fn classifier_supervised_loss(classifier: &mut ClassifierModel, weak: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(classifier_supervised(&classifier.forward_train(weak, false).real, labels)?.value)
}

pub fn real_head_unsupervised_loss(classifier: &mut ClassifierModel, strong: &Tensor, gates: &GateMask) -> Result<f64> {
    Ok(real_head_unsupervised(&classifier.forward_train(strong, false).real, gates)?.value)
}

pub fn dummy_head_unsupervised_loss(classifier: &mut ClassifierModel, strong: &Tensor, gates: &GateMask) -> Result<f64> {
    Ok(dummy_head_unsupervised(&classifier.forward_train(strong, false).dummy, gates)?.value)
}

fn views_aligned(weak: &Tensor, strong: &Tensor) -> Result<()> {
    if weak.n != strong.n {
        return Err(Error::Shape(format!("{} weak vs {} strong views", weak.n, strong.n)));
    }
    Ok(())
}
