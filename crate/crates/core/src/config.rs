//! Training configuration: parsing, defaults, validation.
//!
//! Files are TOML. Every field is optional except `num_classes`; omitted
//! fields take the FixMatch-convention defaults, and the queue parameters
//! default to `queue_size = 8`, `classes_per_update = min(10, K)`,
//! `enqueue_per_class = 1`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Environment variable that overrides `seed` when loading a config file.
pub const SEED_ENV: &str = "RSMATCH_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "wrn-28-2")]
    Wrn28x2,
    #[serde(rename = "resnet-18")]
    ResNet18,
    #[serde(rename = "tiny-cnn")]
    TinyCnn,
}

impl Arch {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "wrn-28-2" => Ok(Arch::Wrn28x2),
            "resnet-18" => Ok(Arch::ResNet18),
            "tiny-cnn" => Ok(Arch::TinyCnn),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Wrn28x2 => "wrn-28-2",
            Arch::ResNet18 => "resnet-18",
            Arch::TinyCnn => "tiny-cnn",
        }
    }
}

/// Which training algorithm drives the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Detector + class-wise queue + real/dummy heads on top of FixMatch.
    RsMatch,
    /// Plain FixMatch: every confident unlabeled sample trains the real head.
    FixMatch,
}

/// Replaces the detector's real/synthetic verdict used for gating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateOverride {
    #[default]
    None,
    /// Every unlabeled sample is treated as real.
    AllReal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Learning rate at step k is `lr * cos(cosine_factor * pi * k / total)`.
    pub cosine_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            cosine_factor: 7.0 / 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum weak-view translation as a fraction of the image side.
    pub translate_fraction: f64,
    /// Number of RandAugment operations per strong view.
    pub randaugment_ops: usize,
    /// Maximum cutout side as a fraction of the image side.
    pub cutout_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translate_fraction: 0.125,
            randaugment_ops: 2,
            cutout_fraction: 0.5,
        }
    }
}

/// Component ablations. At most the combinations accepted by
/// [`TrainConfig::validate`] may be enabled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// One pooled FIFO of capacity `K * N_q` instead of K class-wise sub-queues.
    pub single_queue: bool,
    /// Synthetic-gated samples are discarded instead of training the dummy head.
    pub no_dummy_head: bool,
    /// Detector head sits on the classifier encoder instead of its own network.
    pub shared_detector: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.single_queue || self.no_dummy_head || self.shared_detector
    }
}

/// Validated training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub num_classes: usize,
    pub arch: Arch,
    pub method: Method,
    pub labeled_batch: usize,
    pub unlabeled_ratio: usize,
    pub threshold: f64,
    pub detector_threshold: f64,
    pub unsup_weight: f64,
    pub queue_size: usize,
    pub classes_per_update: usize,
    pub enqueue_per_class: usize,
    pub total_iterations: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub ablation: AblationFlags,
    pub gate_override: GateOverride,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    arch: Option<Arch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    labeled_batch: Option<usize>,
    unlabeled_ratio: Option<usize>,
    threshold: Option<f64>,
    detector_threshold: Option<f64>,
    unsup_weight: Option<f64>,
    queue_size: Option<usize>,
    classes_per_update: Option<usize>,
    enqueue_per_class: Option<usize>,
    total_iterations: Option<usize>,
    eval_interval: Option<usize>,
    seed: Option<u64>,
    gate_override: Option<GateOverride>,
    optimizer: Option<OptimizerConfig>,
    augment: Option<AugmentConfig>,
    ablation: Option<AblationFlags>,
}

impl TrainConfig {
    /// Defaults for `num_classes` classes.
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            arch: Arch::Wrn28x2,
            method: Method::RsMatch,
            labeled_batch: 64,
            unlabeled_ratio: 7,
            threshold: 0.95,
            detector_threshold: 0.95,
            unsup_weight: 1.0,
            queue_size: 8,
            classes_per_update: num_classes.min(10),
            enqueue_per_class: 1,
            total_iterations: 1 << 20,
            eval_interval: 1024,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            ablation: AblationFlags::default(),
            gate_override: GateOverride::None,
        }
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.labeled_batch * self.unlabeled_ratio
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, message: impl Into<String>) -> Result<()> {
            Err(Error::ConfigField {
                field,
                message: message.into(),
            })
        }
        if self.num_classes < 2 {
            return bad("num_classes", "must be at least 2");
        }
        if self.labeled_batch == 0 {
            return bad("labeled_batch", "must be positive");
        }
        if self.unlabeled_ratio == 0 {
            return bad("unlabeled_ratio", "must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold", "must lie in (0, 1]");
        }
        if !(self.detector_threshold > 0.0 && self.detector_threshold <= 1.0) {
            return bad("detector_threshold", "must lie in (0, 1]");
        }
        if !(self.unsup_weight >= 0.0 && self.unsup_weight.is_finite()) {
            return bad("unsup_weight", "must be a finite nonnegative number");
        }
        if self.queue_size == 0 {
            return bad("queue_size", "must be positive");
        }
        if self.classes_per_update == 0 || self.classes_per_update > self.num_classes {
            return bad(
                "classes_per_update",
                format!("must lie in [1, {}]", self.num_classes),
            );
        }
        if self.enqueue_per_class == 0 {
            return bad("enqueue_per_class", "must be positive");
        }
        if self.enqueue_per_class > self.queue_size {
            return bad(
                "enqueue_per_class",
                format!("must not exceed queue_size ({})", self.queue_size),
            );
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed", "must fit in a signed 64-bit integer");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be positive");
        }
        let opt = &self.optimizer;
        if !(opt.lr > 0.0 && opt.lr.is_finite()) {
            return bad("optimizer.lr", "must be positive");
        }
        if !(0.0..1.0).contains(&opt.momentum) {
            return bad("optimizer.momentum", "must lie in [0, 1)");
        }
        if !(opt.weight_decay >= 0.0 && opt.weight_decay.is_finite()) {
            return bad("optimizer.weight_decay", "must be nonnegative");
        }
        if !(opt.cosine_factor >= 0.0 && opt.cosine_factor < 0.5) {
            return bad("optimizer.cosine_factor", "must lie in [0, 0.5)");
        }
        let aug = &self.augment;
        if !(0.0..0.5).contains(&aug.translate_fraction) {
            return bad("augment.translate_fraction", "must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&aug.cutout_fraction) {
            return bad("augment.cutout_fraction", "must lie in [0, 1]");
        }
        if self.method == Method::FixMatch && self.ablation.any() {
            return bad("ablation", "ablation flags require method = \"rsmatch\"");
        }
        if self.method == Method::FixMatch && self.gate_override != GateOverride::None {
            return bad("gate_override", "gate override requires method = \"rsmatch\"");
        }
        if self.ablation.single_queue && self.ablation.shared_detector {
            return bad(
                "ablation",
                "single_queue and shared_detector are separate ablation rows; enable one",
            );
        }
        Ok(())
    }

    fn to_raw(&self) -> RawConfig {
        RawConfig {
            num_classes: Some(self.num_classes),
            arch: Some(self.arch),
            method: Some(self.method),
            labeled_batch: Some(self.labeled_batch),
            unlabeled_ratio: Some(self.unlabeled_ratio),
            threshold: Some(self.threshold),
            detector_threshold: Some(self.detector_threshold),
            unsup_weight: Some(self.unsup_weight),
            queue_size: Some(self.queue_size),
            classes_per_update: Some(self.classes_per_update),
            enqueue_per_class: Some(self.enqueue_per_class),
            total_iterations: Some(self.total_iterations),
            eval_interval: Some(self.eval_interval),
            seed: Some(self.seed),
            gate_override: Some(self.gate_override),
            optimizer: Some(self.optimizer.clone()),
            augment: Some(self.augment.clone()),
            ablation: Some(self.ablation.clone()),
        }
    }

    /// Canonical TOML text with every field explicit.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serializes")
    }

    /// Short stable digest of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Parse and validate config text.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::ConfigParse {
            line,
            message: e.message().to_string(),
        }
    })?;
    let k = raw.num_classes.ok_or(Error::ConfigField {
        field: "num_classes",
        message: "is required".into(),
    })?;
    let d = TrainConfig::with_classes(k);
    let threshold = raw.threshold.unwrap_or(d.threshold);
    let cfg = TrainConfig {
        num_classes: k,
        arch: raw.arch.unwrap_or(d.arch),
        method: raw.method.unwrap_or(d.method),
        labeled_batch: raw.labeled_batch.unwrap_or(d.labeled_batch),
        unlabeled_ratio: raw.unlabeled_ratio.unwrap_or(d.unlabeled_ratio),
        threshold,
        detector_threshold: raw.detector_threshold.unwrap_or(threshold),
        unsup_weight: raw.unsup_weight.unwrap_or(d.unsup_weight),
        queue_size: raw.queue_size.unwrap_or(d.queue_size),
        classes_per_update: raw.classes_per_update.unwrap_or(d.classes_per_update),
        enqueue_per_class: raw.enqueue_per_class.unwrap_or(d.enqueue_per_class),
        total_iterations: raw.total_iterations.unwrap_or(d.total_iterations),
        eval_interval: raw.eval_interval.unwrap_or(d.eval_interval),
        seed: raw.seed.unwrap_or(d.seed),
        optimizer: raw.optimizer.unwrap_or(d.optimizer),
        augment: raw.augment.unwrap_or(d.augment),
        ablation: raw.ablation.unwrap_or(d.ablation),
        gate_override: raw.gate_override.unwrap_or(d.gate_override),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Read a config file, applying the [`SEED_ENV`] override when set.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut cfg = parse_config(&text)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.seed = seed.trim().parse().map_err(|_| Error::ConfigField {
            field: "seed",
            message: format!("{SEED_ENV}={seed:?} is not an unsigned integer"),
        })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn only_classes_gives_queue_defaults() {
        let cfg = parse_config("num_classes = 10\n").unwrap();
        assert_eq!(cfg.queue_size, 8);
        assert_eq!(cfg.classes_per_update, 10);
        assert_eq!(cfg.enqueue_per_class, 1);
        assert_eq!(cfg.threshold, 0.95);
        assert_eq!(cfg.unlabeled_ratio, 7);
        assert_eq!(cfg.unsup_weight, 1.0);
        assert_eq!(cfg.detector_threshold, cfg.threshold);
    }

    #[test]
    fn classes_per_update_clamps_to_k() {
        let cfg = parse_config("num_classes = 4").unwrap();
        assert_eq!(cfg.classes_per_update, 4);
        let cfg = parse_config("num_classes = 100").unwrap();
        assert_eq!(cfg.classes_per_update, 10);
    }

    #[test]
    fn enqueue_above_queue_size_names_field() {
        let err = parse_config("num_classes = 10\nenqueue_per_class = 9\nqueue_size = 8\n")
            .unwrap_err();
        match err {
            Error::ConfigField { field, .. } => assert_eq!(field, "enqueue_per_class"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_file_reports_line() {
        let err = parse_config("num_classes = 10\nthreshold = = 3\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(matches!(
            parse_config("num_classes = 3\nbogus = 1\n"),
            Err(Error::ConfigParse { .. })
        ));
    }

    #[test]
    fn detector_threshold_overridable() {
        let cfg = parse_config("num_classes = 3\nthreshold = 0.9\ndetector_threshold = 0.8").unwrap();
        assert_eq!(cfg.threshold, 0.9);
        assert_eq!(cfg.detector_threshold, 0.8);
    }

    #[test]
    fn parsing_is_deterministic() {
        let text = "num_classes = 5\nseed = 42\n[optimizer]\nlr = 0.1\nmomentum = 0.9\nweight_decay = 0.0\nnesterov = false\ncosine_factor = 0.4375\n";
        assert_eq!(parse_config(text).unwrap(), parse_config(text).unwrap());
    }

    #[test]
    fn fixmatch_rejects_ablation_flags() {
        let err = parse_config("num_classes = 3\nmethod = \"fixmatch\"\n[ablation]\nno_dummy_head = true\n")
            .unwrap_err();
        assert!(matches!(err, Error::ConfigField { field: "ablation", .. }));
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            k in 2usize..40,
            b in 1usize..128,
            mu in 1usize..10,
            tau in 0.01f64..1.0,
            lambda in 0.0f64..4.0,
            nq in 1usize..16,
            q_frac in 0.0f64..1.0,
            p_frac in 0.0f64..1.0,
            iters in 0usize..100_000,
            seed in 0..=i64::MAX as u64,
            single in any::<bool>(),
            no_dummy in any::<bool>(),
        ) {
            let mut cfg = TrainConfig::with_classes(k);
            cfg.labeled_batch = b;
            cfg.unlabeled_ratio = mu;
            cfg.threshold = tau;
            cfg.detector_threshold = 1.0 - tau / 2.0;
            cfg.unsup_weight = lambda;
            cfg.queue_size = nq;
            cfg.enqueue_per_class = 1 + ((nq - 1) as f64 * q_frac) as usize;
            cfg.classes_per_update = 1 + ((k - 1) as f64 * p_frac) as usize;
            cfg.total_iterations = iters;
            cfg.seed = seed;
            cfg.ablation.single_queue = single;
            cfg.ablation.no_dummy_head = no_dummy;
            cfg.validate().unwrap();
            let back = parse_config(&cfg.to_toml()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
