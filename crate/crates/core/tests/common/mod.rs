//! Shared pieces of the integration tests and the acceptance harness. Every
//! check returns `Ok(detail)` or `Err(reason)` so both can report it.
#![allow(dead_code)]

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsmatch::benchgen::mix::{mix_benchmark, synthetic_count};
use rsmatch::manifest::{ManifestRecord, Origin, Split};
use rsmatch::benchgen::toy::{render_real, ToyConfig};
use rsmatch::config::{Arch, GateOverride, Method, TrainConfig};
use rsmatch::csqueue::{CsQueue, QueueLayout};
use rsmatch::engine::objectives::{
    classifier_supervised, classifier_supervised_loss, detector_supervised, detector_supervised_loss,
    detector_unsupervised, dummy_head_unsupervised, dummy_head_unsupervised_loss, real_head_unsupervised,
    real_head_unsupervised_loss, GateMask,
};
use rsmatch::engine::{EvalSet, TrainData, Trainer};
use rsmatch::nets::{build_models, ModelBundle};
use rsmatch::nn::Param;
use rsmatch::tensor::Tensor;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Queue reference

/// Naive model of the class-wise queue: plain vectors, linear scans, one
/// candidate picked per pass.
#[derive(Clone, Debug, Default)]
pub struct RefQueue {
    pub capacity: usize,
    /// `(id, class, inserted_at)` oldest first, one list per slot.
    pub slots: Vec<Vec<(usize, usize, u64)>>,
    pub clock: u64,
}

impl RefQueue {
    pub fn new(slots: usize, capacity: usize) -> Self {
        Self {
            capacity,
            slots: vec![Vec::new(); slots],
            clock: 0,
        }
    }

    /// Push up to `take` members of `slot` by descending score, earliest
    /// batch position first on equal scores, skipping ids already there.
    fn push(&mut self, slot: usize, members: &[usize], batch: &[usize], labels: &[usize], scores: &[f64], take: usize) -> (Vec<usize>, Vec<usize>) {
        let mut pushed: Vec<usize> = Vec::new();
        for _ in 0..take {
            let mut best: Option<usize> = None;
            for &i in members {
                let id = batch[i];
                if self.slots[slot].iter().any(|e| e.0 == id) || pushed.contains(&id) {
                    continue;
                }
                if best.is_none_or(|b| scores[i] > scores[b]) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            pushed.push(batch[i]);
            self.slots[slot].push((batch[i], labels[i], self.clock));
        }
        let mut evicted = Vec::new();
        while self.slots[slot].len() > self.capacity {
            evicted.push(self.slots[slot].remove(0).0);
        }
        (pushed, evicted)
    }

    pub fn update_classes(&mut self, batch: &[usize], labels: &[usize], scores: &[f64], classes: &[usize], q: usize) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.clock += 1;
        classes
            .iter()
            .map(|&c| {
                let members: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == c).collect();
                let (p, e) = self.push(c, &members, batch, labels, scores, q);
                (c, p, e)
            })
            .collect()
    }

    pub fn update_pooled(&mut self, batch: &[usize], labels: &[usize], scores: &[f64], take: usize) -> (Vec<usize>, Vec<usize>) {
        self.clock += 1;
        let all: Vec<usize> = (0..batch.len()).collect();
        self.push(0, &all, batch, labels, scores, take)
    }
}

fn same_state(q: &CsQueue<usize>, r: &RefQueue) -> bool {
    q.sub_queues().len() == r.slots.len()
        && q.sub_queues().iter().zip(&r.slots).all(|(a, b)| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(e, &(id, class, t))| e.id == id && e.class == class && e.inserted_at == t)
        })
        && q.stats().total == r.slots.iter().map(Vec::len).sum::<usize>()
}

/// Random batch with few distinct ids and few distinct scores, so repeats
/// and ties are common.
fn random_batch(k: usize, r: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let n = r.random_range(0..=16);
    let batch = (0..n).map(|_| r.random_range(0..24)).collect();
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    let scores = (0..n).map(|_| f64::from(r.random_range(0..6u8)) / 5.0).collect();
    (batch, labels, scores)
}

/// Drive the queue and the reference through `sequences` random update
/// sequences (K <= 5, N_q <= 4, batches <= 16) and count divergences.
pub fn queue_oracle(sequences: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut r = rng(seed);
    let mut divergences = 0usize;
    let mut first = None;
    let mut updates = 0usize;
    for s in 0..sequences {
        let k = r.random_range(1..=5);
        let nq = r.random_range(1..=4);
        let q = r.random_range(1..=4);
        let steps = r.random_range(1..=12);
        let pooled = s % 4 == 3;
        let (mut queue, mut reference) = if pooled {
            (CsQueue::with_layout(QueueLayout::Pooled, k, nq), RefQueue::new(1, k * nq))
        } else {
            (CsQueue::new(k, nq), RefQueue::new(k, nq))
        };
        let mut ok = true;
        for _ in 0..steps {
            let (batch, labels, scores) = random_batch(k, &mut r);
            let p = r.random_range(1..=k);
            updates += 1;
            let matches = if pooled {
                let mut sel = rng(r.random());
                let got = queue.update(&batch, &labels, &scores, p, q, &mut sel).map_err(|e| e.to_string())?;
                let (pushed, evicted) = reference.update_pooled(&batch, &labels, &scores, p * q);
                got.len() == 1 && got[0].class == 0 && got[0].pushed == pushed && got[0].evicted == evicted
            } else if r.random_bool(0.5) {
                let mut classes = index::sample(&mut r, k, p).into_vec();
                classes.sort_unstable();
                let got = queue
                    .update_with_classes(&batch, &labels, &scores, &classes, q)
                    .map_err(|e| e.to_string())?;
                let want = reference.update_classes(&batch, &labels, &scores, &classes, q);
                got.len() == want.len()
                    && got
                        .iter()
                        .zip(&want)
                        .all(|(g, (c, p, e))| g.class == *c && &g.pushed == p && &g.evicted == e)
            } else {
                // Random selection: the pushed classes must be p distinct
                // ones and everything else must follow the reference.
                let mut sel = rng(r.random());
                let got = queue.update(&batch, &labels, &scores, p, q, &mut sel).map_err(|e| e.to_string())?;
                let classes: Vec<usize> = got.iter().map(|g| g.class).collect();
                let distinct = classes.windows(2).all(|w| w[0] < w[1]) && classes.len() == p;
                let want = reference.update_classes(&batch, &labels, &scores, &classes, q);
                distinct
                    && got
                        .iter()
                        .zip(&want)
                        .all(|(g, (c, p, e))| g.class == *c && &g.pushed == p && &g.evicted == e)
            };
            if !matches || !same_state(&queue, &reference) {
                ok = false;
                break;
            }
        }
        if !ok {
            divergences += 1;
            first.get_or_insert(s);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{sequences} sequences, {updates} updates, {divergences} divergences, {secs:.2}s");
    if divergences > 0 {
        Err(format!("{detail}; first at sequence {}", first.unwrap_or(0)))
    } else if secs >= 60.0 {
        Err(format!("{detail}; over the 60s budget"))
    } else {
        Ok(detail)
    }
}

// ---------------------------------------------------------------------------
// Gradient fixtures

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    DetectorSupervised,
    DetectorUnsupervised,
    ClassifierSupervised,
    RealUnsupervised,
    DummyUnsupervised,
}

pub const LOSSES: [Loss; 5] = [
    Loss::DetectorSupervised,
    Loss::DetectorUnsupervised,
    Loss::ClassifierSupervised,
    Loss::RealUnsupervised,
    Loss::DummyUnsupervised,
];

impl Loss {
    pub fn on_detector(self) -> bool {
        matches!(self, Loss::DetectorSupervised | Loss::DetectorUnsupervised)
    }
}

/// Tiny networks and inputs with hand-set gates that switch every loss on.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub models: ModelBundle,
    pub labeled: Tensor,
    pub labels: Vec<usize>,
    pub strong: Tensor,
    pub synth: Tensor,
    pub gates: GateMask,
}

fn images(n: usize, side: usize, r: &mut ChaCha8Rng) -> Tensor {
    let data = (0..n * side * side * 3).map(|_| r.random_range(-1.5..1.5)).collect();
    Tensor::from_data(n, side, side, 3, data)
}

pub fn fixture(seed: u64) -> Fixture {
    let mut r = rng(seed ^ 0x5eed);
    let k = r.random_range(2..=4);
    let (b, mb, side) = (2, 4, 8);
    let models = build_models(Arch::TinyCnn, k, seed).expect("tiny-cnn builds");
    // Conf and verdict patterns guarantee at least one row per head.
    let mut conf: Vec<bool> = (0..mb).map(|_| r.random_bool(0.6)).collect();
    let mut verdict: Vec<usize> = (0..mb).map(|_| r.random_range(0..2)).collect();
    conf[0] = true;
    verdict[0] = 0;
    conf[1] = true;
    verdict[1] = 1;
    let mut det_mask: Vec<bool> = (0..mb).map(|_| r.random_bool(0.5)).collect();
    det_mask[2] = true;
    let gates = GateMask {
        conf_mask: conf,
        verdict,
        pseudo_label: (0..mb).map(|_| r.random_range(0..k)).collect(),
        detector_conf_mask: det_mask,
        detector_pseudo: (0..mb).map(|_| r.random_range(0..2)).collect(),
        synth_score: (0..mb).map(|_| r.random()).collect(),
    };
    Fixture {
        labeled: images(b, side, &mut r),
        labels: (0..b).map(|_| r.random_range(0..k)).collect(),
        strong: images(mb, side, &mut r),
        synth: images(b, side, &mut r),
        models,
        gates,
    }
}

impl Fixture {
    /// Loss value from a fresh training-mode forward.
    pub fn value(&mut self, loss: Loss) -> f64 {
        let m = &mut self.models;
        match loss {
            Loss::DetectorSupervised => detector_supervised_loss(&mut m.detector, &self.labeled, Some(&self.synth))
                .unwrap()
                .unwrap(),
            Loss::DetectorUnsupervised => {
                let z = m.detector.forward_train(&self.strong, false);
                detector_unsupervised(&z, &self.gates).unwrap().value
            }
            Loss::ClassifierSupervised => classifier_supervised_loss(&mut m.classifier, &self.labeled, &self.labels).unwrap(),
            Loss::RealUnsupervised => real_head_unsupervised_loss(&mut m.classifier, &self.strong, &self.gates).unwrap(),
            Loss::DummyUnsupervised => dummy_head_unsupervised_loss(&mut m.classifier, &self.strong, &self.gates).unwrap(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.models.classifier.params_mut() {
            p.zero_grad();
        }
        for p in self.models.detector.params_mut() {
            p.zero_grad();
        }
    }

    /// Zero every gradient, then backpropagate `loss` alone.
    pub fn backprop(&mut self, loss: Loss) {
        self.zero_grads();
        let m = &mut self.models;
        match loss {
            Loss::DetectorSupervised => {
                let b = self.labeled.n;
                let z = m.detector.forward_train(&Tensor::concat(&[&self.labeled, &self.synth]), true);
                let (_, dr, ds) = detector_supervised(&z.rows(0, b), &z.rows(b, 2 * b)).unwrap();
                m.detector.backward(&Tensor::concat(&[&dr, &ds]));
            }
            Loss::DetectorUnsupervised => {
                let z = m.detector.forward_train(&self.strong, true);
                m.detector.backward(&detector_unsupervised(&z, &self.gates).unwrap().grad);
            }
            Loss::ClassifierSupervised => {
                let out = m.classifier.forward_train(&self.labeled, true);
                let t = classifier_supervised(&out.real, &self.labels).unwrap();
                m.classifier.backward(&t.grad, None, None);
            }
            Loss::RealUnsupervised => {
                let out = m.classifier.forward_train(&self.strong, true);
                let t = real_head_unsupervised(&out.real, &self.gates).unwrap();
                m.classifier.backward(&t.grad, None, None);
            }
            Loss::DummyUnsupervised => {
                let out = m.classifier.forward_train(&self.strong, true);
                let t = dummy_head_unsupervised(&out.dummy, &self.gates).unwrap();
                let zero = Tensor::matrix(out.real.n, out.real.row_len(), vec![0.0; out.real.data.len()]);
                m.classifier.backward(&zero, Some(&t.grad), None);
            }
        }
    }

    /// Both networks' parameters, classifier first.
    pub fn all_params(&self) -> Vec<&Param> {
        let mut v = self.models.classifier.params();
        v.extend(self.models.detector.params());
        v
    }

    fn param_mut(&mut self, index: usize) -> &mut Param {
        let nc = self.models.classifier.params().len();
        if index < nc {
            self.models.classifier.params_mut().swap_remove(index)
        } else {
            self.models.detector.params_mut().swap_remove(index - nc)
        }
    }

    /// Central difference of `loss` along coordinate `j` of parameter `index`.
    pub fn finite_difference(&mut self, loss: Loss, index: usize, j: usize, h: f64) -> f64 {
        let x0 = self.param_mut(index).value[j];
        self.param_mut(index).value[j] = x0 + h;
        let up = self.value(loss);
        self.param_mut(index).value[j] = x0 - h;
        let down = self.value(loss);
        self.param_mut(index).value[j] = x0;
        (up - down) / (2.0 * h)
    }

    /// Largest change of `loss` when every parameter matching `select` is
    /// moved by a random offset.
    pub fn perturbation_effect(&mut self, loss: Loss, select: impl Fn(&str) -> bool, r: &mut ChaCha8Rng) -> f64 {
        let before = self.value(loss);
        let saved = self.models.clone();
        let mut ps = self.models.classifier.params_mut();
        ps.extend(self.models.detector.params_mut());
        for p in ps.into_iter().filter(|p| p.trainable && select(&p.name)) {
            for v in &mut p.value {
                *v += r.random_range(-0.5..0.5);
            }
        }
        let after = self.value(loss);
        self.models = saved;
        (after - before).abs()
    }
}

pub fn is_real_head(name: &str) -> bool {
    name.starts_with("classifier.real_head.")
}

pub fn is_dummy_head(name: &str) -> bool {
    name.starts_with("classifier.dummy_head.")
}

pub fn is_detector(name: &str) -> bool {
    name.starts_with("detector.")
}

pub fn is_classifier(name: &str) -> bool {
    name.starts_with("classifier.")
}

fn max_grad(params: &[&Param], select: impl Fn(&str) -> bool) -> f64 {
    params
        .iter()
        .filter(|p| select(&p.name))
        .flat_map(|p| p.grad.iter())
        .fold(0.0, |m, g| m.max(g.abs()))
}

/// Gradient isolation between heads and between networks, by backprop and
/// by perturbing the isolated parameters, on `fixtures` random fixtures.
pub fn gradient_isolation(fixtures: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-12;
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for f in 0..fixtures {
        let mut fx = fixture(seed.wrapping_add(f as u64));
        let mut fail = |what: &str, v: f64| -> Result<(), String> {
            worst = worst.max(v);
            if v > TOL {
                Err(format!("fixture {f}: {what} = {v:e}"))
            } else {
                Ok(())
            }
        };
        fx.backprop(Loss::DummyUnsupervised);
        fail("real-head grad of L^s_u", max_grad(&fx.all_params(), is_real_head))?;
        fail("detector grad of L^s_u", max_grad(&fx.all_params(), is_detector))?;
        let active: f64 = max_grad(&fx.all_params(), is_dummy_head);
        if active == 0.0 {
            return Err(format!("fixture {f}: L^s_u has no dummy-head gradient at all"));
        }
        for loss in [Loss::ClassifierSupervised, Loss::RealUnsupervised] {
            fx.backprop(loss);
            fail(&format!("dummy-head grad of {loss:?}"), max_grad(&fx.all_params(), is_dummy_head))?;
            fail(&format!("detector grad of {loss:?}"), max_grad(&fx.all_params(), is_detector))?;
        }
        for loss in [Loss::DetectorSupervised, Loss::DetectorUnsupervised] {
            fx.backprop(loss);
            fail(&format!("classifier grad of {loss:?}"), max_grad(&fx.all_params(), is_classifier))?;
        }
        let combined = |fx: &mut Fixture, r: &mut ChaCha8Rng| {
            let a = fx.perturbation_effect(Loss::ClassifierSupervised, is_dummy_head, r);
            let b = fx.perturbation_effect(Loss::RealUnsupervised, is_dummy_head, r);
            a + b
        };
        fail("L^r_s + L^r_u change under dummy-head perturbation", combined(&mut fx, &mut r))?;
        fail(
            "L^s_u change under real-head perturbation",
            fx.perturbation_effect(Loss::DummyUnsupervised, is_real_head, &mut r),
        )?;
        for loss in LOSSES {
            let other: fn(&str) -> bool = if loss.on_detector() { is_classifier } else { is_detector };
            fail(
                &format!("{loss:?} change under other-network perturbation"),
                fx.perturbation_effect(loss, other, &mut r),
            )?;
        }
    }
    Ok(format!("{fixtures} fixtures, max leaked gradient or loss change {worst:e}"))
}

/// Relative error of an analytic against a numeric derivative. Below
/// `floor` in magnitude both must agree absolutely within `tol * floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences against backprop for every loss on `fixtures`
/// fixtures, `coords` random trainable coordinates per loss and fixture.
pub fn finite_differences(fixtures: usize, coords: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-4;
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-6;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for f in 0..fixtures {
        let mut fx = fixture(seed.wrapping_add(1000 + f as u64));
        let nc = fx.models.classifier.params().len();
        for loss in LOSSES {
            fx.backprop(loss);
            let grads: Vec<(usize, Vec<f64>, bool)> = fx
                .all_params()
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.grad.clone(), p.trainable))
                .collect();
            // Coordinates from the network the loss trains, weighted toward
            // ones the loss actually reaches.
            let pool: Vec<(usize, usize)> = grads
                .iter()
                .filter(|(i, _, t)| *t && (*i >= nc) == loss.on_detector())
                .flat_map(|(i, g, _)| (0..g.len()).map(move |j| (*i, j)))
                .collect();
            let reached: Vec<(usize, usize)> = pool.iter().copied().filter(|&(i, j)| grads[i].1[j] != 0.0).collect();
            for c in 0..coords {
                let src = if c % 4 == 3 || reached.is_empty() { &pool } else { &reached };
                let (i, j) = src[r.random_range(0..src.len())];
                let numeric = fx.finite_difference(loss, i, j, H);
                let e = relative_error(grads[i].1[j], numeric, FLOOR);
                checked += 1;
                worst = worst.max(e);
                if e > TOL {
                    return Err(format!(
                        "fixture {f}, {loss:?}, {}[{j}]: backprop {:e} vs numeric {:e} (rel {e:e})",
                        fx.all_params()[i].name,
                        grads[i].1[j],
                        numeric
                    ));
                }
            }
        }
    }
    Ok(format!("{fixtures} fixtures x 5 losses, {checked} coordinates, worst relative error {worst:e}"))
}

// ---------------------------------------------------------------------------
// In-memory toy data and short runs

/// Toy-style real images only (no contamination), `labeled` labeled and
/// `unlabeled` unlabeled per class, plus a small test set.
pub fn toy_data(k: usize, side: usize, labeled: usize, unlabeled: usize, seed: u64) -> (TrainData, EvalSet) {
    let cfg = ToyConfig {
        num_classes: k,
        size: side,
        ..ToyConfig::default()
    };
    let mut r = rng(seed);
    let mut data = TrainData {
        num_classes: k,
        height: side,
        width: side,
        labeled: Vec::new(),
        labels: Vec::new(),
        labeled_ids: Vec::new(),
        unlabeled: Vec::new(),
        unlabeled_ids: Vec::new(),
    };
    let mut test = EvalSet::default();
    for c in 0..k {
        for i in 0..labeled {
            data.labeled.push(render_real(c, k, &cfg, &mut r));
            data.labels.push(c);
            data.labeled_ids.push(format!("l{c}-{i}"));
        }
        for i in 0..unlabeled {
            data.unlabeled.push(render_real(c, k, &cfg, &mut r));
            data.unlabeled_ids.push(format!("u{c}-{i}"));
        }
        for i in 0..4 {
            test.images.push(render_real(c, k, &cfg, &mut r));
            test.labels.push(c);
            test.ids.push(format!("t{c}-{i}"));
        }
    }
    (data, test)
}

/// The synthetic count law `ceil(alpha * N)` against exact rational
/// arithmetic on a grid of percentages and class sizes.
pub fn ratio_law() -> Check {
    let start = Instant::now();
    let mut cases = 0;
    for pct in 0..=300u64 {
        for n in [0usize, 1, 2, 3, 7, 10, 13, 100, 499, 500, 4999, 5000] {
            let want = (pct as usize * n).div_ceil(100);
            let got = synthetic_count(pct as f64 / 100.0, n);
            cases += 1;
            if got != want {
                return Err(format!("alpha {pct}% of {n}: got {got}, want {want}"));
            }
        }
    }
    // Mixed benchmarks: every class gets exactly its own ceil(alpha N_c).
    let mut r = rng(7);
    for trial in 0..40 {
        let k = r.random_range(2..=6);
        let sizes: Vec<usize> = (0..k).map(|_| r.random_range(2..=60)).collect();
        let pct = r.random_range(0..=100u64);
        let labeled = r.random_range(1..*sizes.iter().min().expect("k >= 2"));
        let real = records(&sizes, None);
        let pool = records(&sizes, Some(Origin::Synthetic));
        let mixed = mix_benchmark(&real, &pool, pct as f64 / 100.0, labeled, trial).map_err(|e| e.to_string())?;
        for (c, &n) in sizes.iter().enumerate() {
            let count = |origin: Origin, split: Split| {
                mixed
                    .records
                    .iter()
                    .filter(|x| x.label == Some(c) && x.origin == Some(origin) && x.split == split)
                    .count()
            };
            let want = (pct as usize * n).div_ceil(100);
            let got = (
                count(Origin::Synthetic, Split::Unlabeled),
                count(Origin::Real, Split::Unlabeled),
                count(Origin::Real, Split::Labeled),
            );
            cases += 1;
            if got != (want, n - labeled, labeled) {
                return Err(format!(
                    "trial {trial}, class {c}, alpha {pct}%, N {n}: (synthetic, unlabeled real, labeled) = {got:?}"
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 1.0 {
        return Err(format!("{cases} cases took {secs:.2}s"));
    }
    Ok(format!("{cases} cases exact in {:.1}ms", secs * 1e3))
}

fn records(sizes: &[usize], origin: Option<Origin>) -> Vec<ManifestRecord> {
    let tag = if origin.is_some() { "s" } else { "r" };
    sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| {
            (0..n).map(move |i| ManifestRecord {
                id: format!("{tag}{c}-{i}"),
                path: format!("{tag}{c}-{i}.png"),
                split: if origin.is_some() { Split::Unlabeled } else { Split::Labeled },
                label: Some(c),
                origin,
                generator: origin.map(|_| "flat".to_string()),
            })
        })
        .collect()
}

/// Small RSMatch or FixMatch run on 8x8 images.
pub fn tiny_config(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        arch: Arch::TinyCnn,
        method,
        labeled_batch: 4,
        unlabeled_ratio: 2,
        // Low enough that pseudo-labels pass within a few dozen steps.
        threshold: 0.6,
        detector_threshold: 0.6,
        queue_size: 2,
        total_iterations: 50,
        eval_interval: 25,
        seed,
        ..TrainConfig::with_classes(3)
    }
}

/// Three classes, 4 labeled and 8 unlabeled real images each.
pub fn data() -> TrainData {
    toy_data(3, 8, 4, 8, 5).0
}

/// Classifier parameters excluding the dummy head, which FixMatch never has
/// a use for.
pub fn served_bits(m: &ModelBundle) -> Vec<u64> {
    m.classifier
        .params()
        .iter()
        .filter(|p| !is_dummy_head(&p.name))
        .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
        .collect()
}

/// All-real gating with no contamination against FixMatch at one seed.
pub fn all_real_matches_fixmatch(seed: u64) -> Check {
    let d = data();
    let fm = tiny_config(Method::FixMatch, seed);
    let rs = TrainConfig {
        gate_override: GateOverride::AllReal,
        ..tiny_config(Method::RsMatch, seed)
    };
    let mut a = Trainer::new(fm, &d).map_err(|e| e.to_string())?;
    let mut b = Trainer::new(rs, &d).map_err(|e| e.to_string())?;
    let mut used = 0.0;
    for _ in 0..50 {
        let ra = a.step(&d).map_err(|e| e.to_string())?;
        b.step(&d).map_err(|e| e.to_string())?;
        used += ra.real_utilization;
    }
    let detail = format!("50 steps, mean unlabeled utilization {:.3}", used / 50.0);
    if used == 0.0 {
        Err(format!("{detail}; no pseudo-label ever passed"))
    } else if served_bits(&a.models) != served_bits(&b.models) {
        Err(format!("{detail}; parameters differ"))
    } else {
        Ok(format!("{detail}; parameters bit-identical"))
    }
}

// ---------------------------------------------------------------------------
// Closed-form fixtures

fn gate_rows(conf: &[bool], verdict: &[usize], pseudo: &[usize], det_mask: &[bool], det_pseudo: &[usize]) -> GateMask {
    GateMask {
        conf_mask: conf.to_vec(),
        verdict: verdict.to_vec(),
        pseudo_label: pseudo.to_vec(),
        detector_conf_mask: det_mask.to_vec(),
        detector_pseudo: det_pseudo.to_vec(),
        synth_score: vec![0.0; conf.len()],
    }
}

/// Named values with closed forms: `(name, got, want)`.
pub fn closed_form_cases() -> Vec<(String, f64, f64)> {
    use rsmatch::engine::objectives::compute_gates;
    use rsmatch::engine::objectives::FixMatch;
    use rsmatch::losses::mean_cross_entropy;
    use rsmatch::nets::synth_confidence;

    let ln3 = 3f64.ln();
    let ln2 = 2f64.ln();
    let mut out = vec![("p'_s(0, ln 3)".to_string(), synth_confidence(0.0, ln3).unwrap(), 0.75)];
    for k in [2usize, 3, 10, 100] {
        for z in [0.0, -7.5, 42.0] {
            let logits = Tensor::matrix(3, k, vec![z; 3 * k]);
            let (v, _) = mean_cross_entropy(&logits, &[0, k - 1, k / 2]);
            out.push((format!("CE of {k} equal logits at {z}"), v, (k as f64).ln()));
        }
    }
    // Four unlabeled rows of two classes, all logits equal: each row's CE
    // is ln 2 and every masked mean divides by the full four rows.
    let flat = Tensor::matrix(4, 2, vec![0.0; 8]);
    let g = gate_rows(
        &[true, false, true, true],
        &[REAL_V, REAL_V, REAL_V, SYNTH_V],
        &[0, 1, 1, 0],
        &[true, true, false, false],
        &[1, 0, 0, 1],
    );
    out.push(("L^r_u, two of four rows".into(), real_head_unsupervised(&flat, &g).unwrap().value, ln2 / 2.0));
    out.push(("L^s_u, one of four rows".into(), dummy_head_unsupervised(&flat, &g).unwrap().value, ln2 / 4.0));
    // Detector rows [0, ln 3] give p'_s = 3/4.
    let tilted = Tensor::matrix(4, 2, [0.0, ln3].repeat(4));
    out.push((
        "L'_u, targets synthetic and real over four rows".into(),
        detector_unsupervised(&tilted, &g).unwrap().value,
        ((4.0f64 / 3.0).ln() + 4f64.ln()) / 4.0,
    ));
    let real = Tensor::matrix(2, 2, [ln3, 0.0].repeat(2));
    let synth = Tensor::matrix(2, 2, [0.0, ln3].repeat(2));
    out.push(("L'_s, every row at 3/4".into(), detector_supervised(&real, &synth).unwrap().0, (4.0f64 / 3.0).ln()));
    let none = gate_rows(&[false; 4], &[REAL_V; 4], &[0; 4], &[false; 4], &[0; 4]);
    let t = real_head_unsupervised(&tilted, &none).unwrap();
    out.push(("L^r_u with an empty mask".into(), t.value, 0.0));
    out.push(("gradient norm with an empty mask".into(), t.grad.data.iter().map(|v| v.abs()).sum(), 0.0));
    // Confidence exactly at the threshold does not pass; argmax ties go to real.
    let weak = Tensor::matrix(1, 2, vec![ln3, 0.0]);
    let det = Tensor::matrix(1, 2, vec![0.5, 0.5]);
    let at = compute_gates(&FixMatch, &weak, Some(&det), 0.75, 0.5, false).unwrap();
    let below = compute_gates(&FixMatch, &weak, Some(&det), 0.75 - 1e-9, 0.5, false).unwrap();
    out.push(("mask at conf == tau".into(), f64::from(u8::from(at.conf_mask[0])), 0.0));
    out.push(("mask just below tau".into(), f64::from(u8::from(below.conf_mask[0])), 1.0));
    out.push(("detector tie verdict".into(), at.verdict[0] as f64, REAL_V as f64));
    out.push(("detector tie synth score".into(), at.synth_score[0], 0.5));
    out
}

const REAL_V: usize = rsmatch::engine::objectives::REAL;
const SYNTH_V: usize = rsmatch::engine::objectives::SYNTHETIC;

/// Every closed-form case within `1e-9`.
pub fn closed_forms() -> Check {
    let cases = closed_form_cases();
    let mut worst = 0.0f64;
    for (name, got, want) in &cases {
        let e = (got - want).abs();
        worst = worst.max(e);
        if e > 1e-9 {
            return Err(format!("{name}: got {got}, want {want}"));
        }
    }
    Ok(format!("{} fixtures, max deviation {worst:e}", cases.len()))
}
