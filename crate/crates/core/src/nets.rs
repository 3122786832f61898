//! The classifier (encoder, real head, dummy head) and the deepfake detector
//! (encoder, binary head).

use rand::Rng;

use crate::config::Arch;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{BatchNorm, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2, Param, Relu, Residual, Sequential};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Conv widths of the tiny-cnn classifier; the detector halves them.
pub const TINY_CNN_WIDTHS: [usize; 3] = [8, 16, 32];
const WRN_28_2_WIDTHS: [usize; 4] = [16, 32, 64, 128];
const RESNET_18_WIDTHS: [usize; 4] = [64, 128, 256, 512];

/// Samples per work item in evaluation forward passes.
pub const EVAL_CHUNK: usize = 64;

/// Feature extractor: image batch (NHWC) to `n x feature_dim`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub body: Sequential,
    pub feature_dim: usize,
}

impl Encoder {
    /// Build `arch` with every hidden width divided by `divisor` (rounded
    /// down, at least 1).
    pub fn build(arch: Arch, divisor: usize, prefix: &str, rng: &mut impl Rng) -> Self {
        let half = |w: usize| (w / divisor).max(1);
        match arch {
            Arch::TinyCnn => {
                let w = TINY_CNN_WIDTHS.map(half);
                let body = Sequential::new(vec![
                    Layer::Conv(Conv2d::new(&format!("{prefix}.conv1"), 3, w[0], 3, 1, 1, true, rng)),
                    Layer::Relu(Relu::default()),
                    Layer::MaxPool(MaxPool2::default()),
                    Layer::Conv(Conv2d::new(&format!("{prefix}.conv2"), w[0], w[1], 3, 1, 1, true, rng)),
                    Layer::Relu(Relu::default()),
                    Layer::MaxPool(MaxPool2::default()),
                    Layer::Conv(Conv2d::new(&format!("{prefix}.conv3"), w[1], w[2], 3, 1, 1, true, rng)),
                    Layer::Relu(Relu::default()),
                    Layer::GlobalAvgPool(GlobalAvgPool::default()),
                ]);
                Self { body, feature_dim: w[2] }
            }
            Arch::Wrn28x2 => {
                let w = WRN_28_2_WIDTHS.map(half);
                let blocks_per_group = (28 - 4) / 6;
                let mut layers = vec![Layer::Conv(Conv2d::new(&format!("{prefix}.stem"), 3, w[0], 3, 1, 1, false, rng))];
                let mut cin = w[0];
                for (g, &cout) in w[1..].iter().enumerate() {
                    for b in 0..blocks_per_group {
                        let stride = if g > 0 && b == 0 { 2 } else { 1 };
                        let name = format!("{prefix}.group{g}.block{b}");
                        layers.push(Layer::Residual(Box::new(wrn_block(&name, cin, cout, stride, rng))));
                        cin = cout;
                    }
                }
                layers.push(Layer::BatchNorm(BatchNorm::new(&format!("{prefix}.final_bn"), cin)));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
                Self {
                    body: Sequential::new(layers),
                    feature_dim: cin,
                }
            }
            Arch::ResNet18 => {
                let w = RESNET_18_WIDTHS.map(half);
                let mut layers = vec![
                    Layer::Conv(Conv2d::new(&format!("{prefix}.stem"), 3, w[0], 3, 1, 1, false, rng)),
                    Layer::BatchNorm(BatchNorm::new(&format!("{prefix}.stem_bn"), w[0])),
                    Layer::Relu(Relu::default()),
                ];
                let mut cin = w[0];
                for (s, &cout) in w.iter().enumerate() {
                    for b in 0..2 {
                        let stride = if s > 0 && b == 0 { 2 } else { 1 };
                        let name = format!("{prefix}.stage{s}.block{b}");
                        layers.push(Layer::Residual(Box::new(basic_block(&name, cin, cout, stride, rng))));
                        cin = cout;
                    }
                }
                layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
                Self {
                    body: Sequential::new(layers),
                    feature_dim: cin,
                }
            }
        }
    }

    /// Widths of every convolution, in order.
    pub fn conv_widths(&self) -> Vec<usize> {
        fn walk(seq: &Sequential, out: &mut Vec<usize>) {
            for l in &seq.layers {
                match l {
                    Layer::Conv(c) => out.push(c.cout),
                    Layer::Residual(r) => {
                        walk(&r.pre, out);
                        walk(&r.branch, out);
                        if let Some(p) = &r.projection {
                            walk(p, out);
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}

fn wrn_block(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Residual {
    let projection = (cin != cout || stride != 1).then(|| {
        Sequential::new(vec![Layer::Conv(Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng))])
    });
    Residual {
        pre: Sequential::new(vec![
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn1"), cin)),
            Layer::Relu(Relu::default()),
        ]),
        branch: Sequential::new(vec![
            Layer::Conv(Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng)),
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn2"), cout)),
            Layer::Relu(Relu::default()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng)),
        ]),
        projection,
        post_relu: None,
    }
}

fn basic_block(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Residual {
    let projection = (cin != cout || stride != 1).then(|| {
        Sequential::new(vec![
            Layer::Conv(Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng)),
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.shortcut_bn"), cout)),
        ])
    });
    Residual {
        pre: Sequential::default(),
        branch: Sequential::new(vec![
            Layer::Conv(Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng)),
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn1"), cout)),
            Layer::Relu(Relu::default()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng)),
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn2"), cout)),
        ]),
        projection,
        post_relu: Some(Relu::default()),
    }
}

/// Logits from both classifier heads on one batch.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    pub real: Tensor,
    pub dummy: Tensor,
}

/// Shared encoder with a real head and a dummy head of identical shape.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub encoder: Encoder,
    pub real_head: Linear,
    pub dummy_head: Linear,
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        self.real_head.fan_out
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> ClassifierOutput {
        let feats = self.encoder.body.forward_train(x, cache);
        ClassifierOutput {
            real: self.real_head.forward_train(&feats, cache),
            dummy: self.dummy_head.forward_train(&feats, cache),
        }
    }

    /// Training-mode forward that also returns encoder features.
    pub fn forward_train_with_features(&mut self, x: &Tensor, cache: bool) -> (Tensor, ClassifierOutput) {
        let feats = self.encoder.body.forward_train(x, cache);
        let out = ClassifierOutput {
            real: self.real_head.forward_train(&feats, cache),
            dummy: self.dummy_head.forward_train(&feats, cache),
        };
        (feats, out)
    }

    /// Backpropagate head gradients into every classifier parameter.
    /// `d_features` adds an extra gradient on the encoder output.
    pub fn backward(&mut self, d_real: &Tensor, d_dummy: Option<&Tensor>, d_features: Option<&Tensor>) {
        let mut d = self.real_head.backward(d_real);
        if let Some(dd) = d_dummy {
            d.add_assign(&self.dummy_head.backward(dd));
        }
        if let Some(df) = d_features {
            d.add_assign(df);
        }
        self.encoder.body.backward(&d);
    }

    pub fn features_eval(&self, x: &Tensor) -> Tensor {
        chunked_eval(x, |c| self.encoder.body.forward_eval(c))
    }

    /// Real-head logits in evaluation mode. The dummy head is not touched.
    pub fn real_logits_eval(&self, x: &Tensor) -> Tensor {
        chunked_eval(x, |c| self.real_head.forward_eval(&self.encoder.body.forward_eval(c)))
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.encoder.body.collect(&mut out);
        out.extend(self.real_head.params());
        out.extend(self.dummy_head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.encoder.body.collect_mut(&mut out);
        out.extend(self.real_head.params_mut());
        out.extend(self.dummy_head.params_mut());
        out
    }
}

/// Binary real/synthetic network. With `encoder = None` the head reads the
/// classifier's encoder features (shared-backbone ablation).
#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub encoder: Option<Encoder>,
    pub head: Linear,
}

impl DetectorModel {
    pub fn is_shared(&self) -> bool {
        self.encoder.is_none()
    }

    fn own(&self) -> &Encoder {
        self.encoder.as_ref().expect("detector has no encoder of its own")
    }

    /// `[z_r, z_s]` logits. Requires an own encoder.
    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let enc = self.encoder.as_mut().expect("detector has no encoder of its own");
        let feats = enc.body.forward_train(x, cache);
        self.head.forward_train(&feats, cache)
    }

    pub fn backward(&mut self, d_logits: &Tensor) {
        let d = self.head.backward(d_logits);
        self.encoder
            .as_mut()
            .expect("detector has no encoder of its own")
            .body
            .backward(&d);
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let enc = self.own();
        chunked_eval(x, |c| self.head.forward_eval(&enc.body.forward_eval(c)))
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            e.body.collect(&mut out);
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            e.body.collect_mut(&mut out);
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }
}

/// Classifier and detector trained together.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub arch: Arch,
    pub classifier: ClassifierModel,
    pub detector: DetectorModel,
}

impl ModelBundle {
    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Detector logits in evaluation mode, whichever encoder feeds the head.
    pub fn detector_logits_eval(&self, x: &Tensor) -> Tensor {
        match &self.detector.encoder {
            Some(_) => self.detector.forward_eval(x),
            None => chunked_eval(x, |c| {
                self.detector
                    .head
                    .forward_eval(&self.classifier.encoder.body.forward_eval(c))
            }),
        }
    }
}

/// Evaluate `f` over fixed-size sample chunks and stitch the results.
pub fn chunked_eval(x: &Tensor, f: impl Fn(&Tensor) -> Tensor + Sync + Send) -> Tensor {
    if x.n <= EVAL_CHUNK {
        return f(x);
    }
    let chunks = x.n.div_ceil(EVAL_CHUNK);
    let parts = exec::map_range(chunks, |i| {
        f(&x.rows(i * EVAL_CHUNK, ((i + 1) * EVAL_CHUNK).min(x.n)))
    });
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs)
}

/// Build the classifier and detector for `arch` with `num_classes` outputs.
/// Each network (and the dummy head) draws its initialization from its own
/// stream of `seed`, so adding or removing one leaves the others unchanged.
pub fn build_models(arch: Arch, num_classes: usize, seed: u64) -> Result<ModelBundle> {
    build_models_with(arch, num_classes, seed, false)
}

/// As [`build_models`]; `shared_detector` attaches the detector head to the
/// classifier encoder instead of building a second encoder.
pub fn build_models_with(arch: Arch, num_classes: usize, seed: u64, shared_detector: bool) -> Result<ModelBundle> {
    if num_classes < 2 {
        return Err(Error::Precondition(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut init_c = rng::stream(seed, Stream::InitClassifier);
    let mut init_d = rng::stream(seed, Stream::InitDummy);
    let mut init_det = rng::stream(seed, Stream::InitDetector);
    let encoder = Encoder::build(arch, 1, "classifier.encoder", &mut init_c);
    let real_head = Linear::new("classifier.real_head", encoder.feature_dim, num_classes, &mut init_c);
    let dummy_head = Linear::new("classifier.dummy_head", encoder.feature_dim, num_classes, &mut init_d);
    let detector = if shared_detector {
        DetectorModel {
            head: Linear::new("detector.head", encoder.feature_dim, 2, &mut init_det),
            encoder: None,
        }
    } else {
        let enc = Encoder::build(arch, 2, "detector.encoder", &mut init_det);
        DetectorModel {
            head: Linear::new("detector.head", enc.feature_dim, 2, &mut init_det),
            encoder: Some(enc),
        }
    };
    Ok(ModelBundle {
        arch,
        classifier: ClassifierModel {
            encoder,
            real_head,
            dummy_head,
        },
        detector,
    })
}

/// Build by architecture name.
pub fn build_models_named(arch: &str, num_classes: usize, seed: u64) -> Result<ModelBundle> {
    build_models(Arch::parse(arch)?, num_classes, seed)
}

/// Probability of "synthetic" from detector logits `[z_r, z_s]`.
pub fn synth_confidence(z_real: f64, z_synth: f64) -> Result<f64> {
    if !z_real.is_finite() || !z_synth.is_finite() {
        return Err(Error::NonFinite(format!("detector logits ({z_real}, {z_synth})")));
    }
    let m = z_real.max(z_synth);
    let es = (z_synth - m).exp();
    let er = (z_real - m).exp();
    Ok(es / (es + er))
}
