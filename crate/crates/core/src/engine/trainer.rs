//! The joint classifier/detector training step.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, View};
use crate::config::{GateOverride, Method, TrainConfig};
use crate::csqueue::{CsQueue, QueueLayout, QueueStats};
use crate::engine::data::{to_tensor, EpochSampler, TrainData};
use crate::engine::objectives::{
    classifier_supervised, compute_gates, detector_supervised, detector_unsupervised, dummy_head_unsupervised,
    fixmatch_unsupervised, real_head_unsupervised, FixMatch, GateMask, SslStrategy, Term,
};
use crate::engine::optim::{cosine_lr, Sgd};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nets::{build_models_with, ModelBundle};
use crate::rng::RngStreams;
use crate::tensor::Tensor;

/// One iteration's augmented inputs. Row `i` of the weak and strong
/// unlabeled tensors comes from the same image `unlabeled_idx[i]`.
#[derive(Clone, Debug)]
pub struct AugmentedBatch {
    pub labeled_idx: Vec<usize>,
    pub labels: Vec<usize>,
    pub labeled_weak: Tensor,
    pub unlabeled_idx: Vec<usize>,
    pub unlabeled_weak: Tensor,
    pub unlabeled_strong: Tensor,
}

/// Loss terms and bookkeeping of one step. Terms are the values before the
/// update. `detector_supervised` is `None` while the queue is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub lr: f64,
    pub detector_supervised: Option<f64>,
    pub detector_unsupervised: f64,
    pub classifier_supervised: f64,
    pub real_unsupervised: f64,
    pub dummy_unsupervised: f64,
    pub total: f64,
    pub real_utilization: f64,
    pub dummy_utilization: f64,
    /// Fraction of the unlabeled batch the detector calls synthetic.
    pub synthetic_verdicts: f64,
    pub detector_mask_rate: f64,
    pub queue: QueueStats,
}

impl StepReport {
    /// `L'_s + L'_u + L^r_s + lambda (L^r_u + L^s_u)`.
    pub fn compose(det_sup: Option<f64>, det_unsup: f64, cls_sup: f64, real_unsup: f64, dummy_unsup: f64, lambda: f64) -> f64 {
        det_sup.unwrap_or(0.0) + det_unsup + cls_sup + lambda * (real_unsup + dummy_unsup)
    }
}

/// Training state: both networks, their optimizers, the queue, samplers and
/// random streams.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub models: ModelBundle,
    pub queue: CsQueue<usize>,
    pub(crate) cls_opt: Sgd,
    pub(crate) det_opt: Sgd,
    pub(crate) streams: RngStreams,
    pub(crate) labeled_sampler: EpochSampler,
    pub(crate) unlabeled_sampler: EpochSampler,
    pub(crate) iteration: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: &TrainData) -> Result<Self> {
        cfg.validate()?;
        if data.num_classes != cfg.num_classes {
            return Err(Error::Precondition(format!(
                "data has {} classes, config {}",
                data.num_classes, cfg.num_classes
            )));
        }
        if data.labeled.is_empty() || data.unlabeled.is_empty() {
            return Err(Error::Precondition("training needs labeled and unlabeled images".into()));
        }
        let models = build_models_with(cfg.arch, cfg.num_classes, cfg.seed, cfg.ablation.shared_detector)?;
        let layout = if cfg.ablation.single_queue {
            QueueLayout::Pooled
        } else {
            QueueLayout::ClassWise
        };
        let queue = CsQueue::with_layout(layout, cfg.num_classes, cfg.queue_size);
        let cls_opt = Sgd::new(&cfg.optimizer, &models.classifier.params());
        let det_opt = Sgd::new(&cfg.optimizer, &models.detector.params());
        Ok(Self {
            streams: RngStreams::new(cfg.seed),
            labeled_sampler: EpochSampler::new(data.labeled.len()),
            unlabeled_sampler: EpochSampler::new(data.unlabeled.len()),
            cfg,
            models,
            queue,
            cls_opt,
            det_opt,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn learning_rate(&self) -> f64 {
        cosine_lr(&self.cfg.optimizer, self.iteration, self.cfg.total_iterations)
    }

    /// Draw and augment the next labeled and unlabeled batches.
    pub fn next_batch(&mut self, data: &TrainData) -> AugmentedBatch {
        let aug = &self.cfg.augment;
        let labeled_idx = self.labeled_sampler.next_batch(self.cfg.labeled_batch, &mut self.streams.shuffle);
        let unlabeled_idx = self
            .unlabeled_sampler
            .next_batch(self.cfg.unlabeled_batch(), &mut self.streams.shuffle);
        let limgs: Vec<&Image> = labeled_idx.iter().map(|&i| &data.labeled[i]).collect();
        let uimgs: Vec<&Image> = unlabeled_idx.iter().map(|&i| &data.unlabeled[i]).collect();
        let lw = augment_batch(&limgs, View::Weak, aug, &mut self.streams.augment);
        let uw = augment_batch(&uimgs, View::Weak, aug, &mut self.streams.augment);
        let us = augment_batch(&uimgs, View::Strong, aug, &mut self.streams.augment);
        AugmentedBatch {
            labels: labeled_idx.iter().map(|&i| data.labels[i]).collect(),
            labeled_idx,
            labeled_weak: to_tensor(&lw.iter().collect::<Vec<_>>()),
            unlabeled_idx,
            unlabeled_weak: to_tensor(&uw.iter().collect::<Vec<_>>()),
            unlabeled_strong: to_tensor(&us.iter().collect::<Vec<_>>()),
        }
    }

    /// Sample, augment and take one step.
    pub fn step(&mut self, data: &TrainData) -> Result<StepReport> {
        let batch = self.next_batch(data);
        self.train_step(&batch, data)
    }

    /// Accumulate gradients for `batch` without updating parameters. Queue
    /// and random streams advance as in a real step.
    pub fn accumulate_gradients(&mut self, batch: &AugmentedBatch, data: &TrainData) -> Result<StepReport> {
        self.check_batch(batch)?;
        for p in self.models.classifier.params_mut() {
            p.zero_grad();
        }
        for p in self.models.detector.params_mut() {
            p.zero_grad();
        }
        let report = match self.cfg.method {
            Method::FixMatch => self.fixmatch_gradients(batch)?,
            Method::RsMatch => self.rsmatch_gradients(batch, data)?,
        };
        Ok(report)
    }

    /// One full update of both networks.
    pub fn train_step(&mut self, batch: &AugmentedBatch, data: &TrainData) -> Result<StepReport> {
        let it = self.iteration;
        let report = self.accumulate_gradients(batch, data).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("iteration {it}: {m}")),
            other => other,
        })?;
        let lr = report.lr;
        self.cls_opt.step(self.models.classifier.params_mut(), lr)?;
        if self.cfg.method == Method::RsMatch {
            self.det_opt.step(self.models.detector.params_mut(), lr)?;
        }
        self.iteration += 1;
        Ok(report)
    }

    fn check_batch(&self, batch: &AugmentedBatch) -> Result<()> {
        let (b, mb) = (self.cfg.labeled_batch, self.cfg.unlabeled_batch());
        if batch.labeled_weak.n != b
            || batch.labels.len() != b
            || batch.unlabeled_weak.n != mb
            || batch.unlabeled_strong.n != mb
            || batch.unlabeled_idx.len() != mb
        {
            return Err(Error::Shape(format!("batch sizes differ from B = {b}, muB = {mb}")));
        }
        Ok(())
    }

    fn fixmatch_gradients(&mut self, batch: &AugmentedBatch) -> Result<StepReport> {
        let (b, mb) = (self.cfg.labeled_batch, self.cfg.unlabeled_batch());
        let lambda = self.cfg.unsup_weight;
        let clf = &mut self.models.classifier;
        let weak = clf.forward_train(&batch.unlabeled_weak, false);
        if !weak.real.all_finite() {
            return Err(Error::NonFinite("real-head logits on the weak view".into()));
        }
        let targets = FixMatch.pseudo_targets(&weak.real, self.cfg.threshold);
        let x = Tensor::concat(&[&batch.labeled_weak, &batch.unlabeled_strong]);
        let out = clf.forward_train(&x, true);
        let sup = classifier_supervised(&out.real.rows(0, b), &batch.labels)?;
        let uns = fixmatch_unsupervised(&out.real.rows(b, b + mb), &targets)?;
        let mut du = uns.grad.clone();
        du.scale(lambda);
        clf.backward(&Tensor::concat(&[&sup.grad, &du]), None, None);
        let used = targets.mask.iter().filter(|&&m| m).count() as f64 / mb as f64;
        Ok(StepReport {
            iteration: self.iteration,
            lr: self.learning_rate(),
            detector_supervised: None,
            detector_unsupervised: 0.0,
            classifier_supervised: sup.value,
            real_unsupervised: uns.value,
            dummy_unsupervised: 0.0,
            total: StepReport::compose(None, 0.0, sup.value, uns.value, 0.0, lambda),
            real_utilization: used,
            dummy_utilization: 0.0,
            synthetic_verdicts: 0.0,
            detector_mask_rate: 0.0,
            queue: self.queue.stats(),
        })
    }

    /// Gates from weak views with no parameter caching.
    pub fn gates(&mut self, unlabeled_weak: &Tensor) -> Result<GateMask> {
        let models = &mut self.models;
        let (feats, weak) = models.classifier.forward_train_with_features(unlabeled_weak, false);
        let det = if models.detector.is_shared() {
            models.detector.head.forward_eval(&feats)
        } else {
            models.detector.forward_train(unlabeled_weak, false)
        };
        if !det.all_finite() {
            return Err(Error::NonFinite("detector logits on the weak view".into()));
        }
        compute_gates(
            &FixMatch,
            &weak.real,
            Some(&det),
            self.cfg.threshold,
            self.cfg.detector_threshold,
            self.cfg.gate_override == GateOverride::AllReal,
        )
    }

    fn rsmatch_gradients(&mut self, batch: &AugmentedBatch, data: &TrainData) -> Result<StepReport> {
        let (b, mb) = (self.cfg.labeled_batch, self.cfg.unlabeled_batch());
        let k = self.cfg.num_classes;
        let lambda = self.cfg.unsup_weight;
        let no_dummy = self.cfg.ablation.no_dummy_head;

        let gates = self.gates(&batch.unlabeled_weak)?;
        self.queue.update(
            &batch.unlabeled_idx,
            &gates.pseudo_label,
            &gates.synth_score,
            self.cfg.classes_per_update,
            self.cfg.enqueue_per_class,
            &mut self.streams.queue,
        )?;
        let synth = self.queue.sample_batch(b, &mut self.streams.queue).map(|ids| {
            let imgs: Vec<&Image> = ids.iter().map(|&i| &data.unlabeled[i]).collect();
            let views = augment_batch(&imgs, View::Weak, &self.cfg.augment, &mut self.streams.detector_augment);
            to_tensor(&views.iter().collect::<Vec<_>>())
        });

        let models = &mut self.models;
        let shared = models.detector.is_shared();
        let synth_rows = if shared { synth.as_ref().map_or(0, |s| s.n) } else { 0 };
        let mut parts = vec![&batch.labeled_weak, &batch.unlabeled_strong];
        if shared {
            parts.extend(synth.as_ref());
        }
        let x = Tensor::concat(&parts);
        let (feats, out) = models.classifier.forward_train_with_features(&x, true);
        let sup = classifier_supervised(&out.real.rows(0, b), &batch.labels)?;
        let ru = real_head_unsupervised(&out.real.rows(b, b + mb), &gates)?;
        let su = if no_dummy {
            Term {
                value: 0.0,
                grad: Tensor::matrix(mb, k, vec![0.0; mb * k]),
            }
        } else {
            dummy_head_unsupervised(&out.dummy.rows(b, b + mb), &gates)?
        };
        let zeros = |n: usize, c: usize| Tensor::matrix(n, c, vec![0.0; n * c]);
        let mut d_ru = ru.grad;
        d_ru.scale(lambda);
        let d_real = Tensor::concat(&[&sup.grad, &d_ru, &zeros(synth_rows, k)]);
        let mut d_su = su.grad;
        d_su.scale(lambda);
        let d_dummy = Tensor::concat(&[&zeros(b, k), &d_su, &zeros(synth_rows, k)]);

        let (det_sup, det_unsup) = if shared {
            let logits = models.detector.head.forward_train(&feats, true);
            let mut d = zeros(logits.n, 2);
            let ls = match &synth {
                Some(_) => {
                    let (v, dr, ds) = detector_supervised(&logits.rows(0, b), &logits.rows(b + mb, b + mb + b))?;
                    put_rows(&mut d, 0, &dr);
                    put_rows(&mut d, b + mb, &ds);
                    Some(v)
                }
                None => None,
            };
            let lu = detector_unsupervised(&logits.rows(b, b + mb), &gates)?;
            put_rows(&mut d, b, &lu.grad);
            let d_feat = models.detector.head.backward(&d);
            models
                .classifier
                .backward(&d_real, (!no_dummy).then_some(&d_dummy), Some(&d_feat));
            (ls, lu.value)
        } else {
            models.classifier.backward(&d_real, (!no_dummy).then_some(&d_dummy), None);
            let mut parts = Vec::new();
            if let Some(s) = &synth {
                parts.push(&batch.labeled_weak);
                parts.push(s);
            }
            let off = if synth.is_some() { 2 * b } else { 0 };
            parts.push(&batch.unlabeled_strong);
            let logits = models.detector.forward_train(&Tensor::concat(&parts), true);
            let mut d = zeros(logits.n, 2);
            let ls = match &synth {
                Some(_) => {
                    let (v, dr, ds) = detector_supervised(&logits.rows(0, b), &logits.rows(b, 2 * b))?;
                    put_rows(&mut d, 0, &dr);
                    put_rows(&mut d, b, &ds);
                    Some(v)
                }
                None => None,
            };
            let lu = detector_unsupervised(&logits.rows(off, off + mb), &gates)?;
            put_rows(&mut d, off, &lu.grad);
            models.detector.backward(&d);
            (ls, lu.value)
        };

        let (real_util, dummy_util) = if no_dummy {
            (gates.utilization().0, 0.0)
        } else {
            gates.utilization()
        };
        let n = gates.len() as f64;
        let total = StepReport::compose(det_sup, det_unsup, sup.value, ru.value, su.value, lambda);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("total loss = {total}")));
        }
        Ok(StepReport {
            iteration: self.iteration,
            lr: self.learning_rate(),
            detector_supervised: det_sup,
            detector_unsupervised: det_unsup,
            classifier_supervised: sup.value,
            real_unsupervised: ru.value,
            dummy_unsupervised: su.value,
            total,
            real_utilization: real_util,
            dummy_utilization: dummy_util,
            synthetic_verdicts: gates.verdict.iter().filter(|&&v| v == 1).count() as f64 / n,
            detector_mask_rate: gates.detector_conf_mask.iter().filter(|&&m| m).count() as f64 / n,
            queue: self.queue.stats(),
        })
    }
}

fn put_rows(dst: &mut Tensor, start: usize, src: &Tensor) {
    let len = src.row_len();
    dst.data[start * len..(start + src.n) * len].copy_from_slice(&src.data);
}
