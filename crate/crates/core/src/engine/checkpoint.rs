//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! little-endian `f64` payload, and a SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, Arch, TrainConfig};
use crate::csqueue::CsQueue;
use crate::engine::data::{EpochSampler, TrainData};
use crate::engine::optim::Sgd;
use crate::engine::trainer::Trainer;
use crate::error::{Error, IoContext, Result};
use crate::fileio::write_atomic;
use crate::nets::{build_models_with, ClassifierModel, Encoder, ModelBundle};
use crate::nn::{Linear, Param};
use crate::rng::{RngStreams, StreamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RSMCKPT1";
pub const VERSION: u32 = 1;
const CLASSIFIER_OPT: &str = "optim.classifier/";
const DETECTOR_OPT: &str = "optim.detector/";

/// Where a named tensor lives in the payload, in `f64` elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Non-tensor training state needed to resume bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub queue: CsQueue<usize>,
    pub rng: Vec<StreamState>,
    pub labeled_sampler: EpochSampler,
    pub unlabeled_sampler: EpochSampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: String,
    pub num_classes: usize,
    pub shared_detector: bool,
    pub has_detector: bool,
    pub has_dummy_head: bool,
    pub config_hash: String,
    /// Full config as TOML.
    pub config: String,
    pub iteration: usize,
    pub tensors: Vec<TensorEntry>,
    pub state: Option<TrainState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f64>,
}

/// Encoder plus real head: everything needed for test-time prediction.
#[derive(Clone, Debug)]
pub struct InferenceModel {
    pub encoder: Encoder,
    pub real_head: Linear,
}

impl InferenceModel {
    pub fn from_classifier(c: &ClassifierModel) -> Self {
        Self {
            encoder: c.encoder.clone(),
            real_head: c.real_head.clone(),
        }
    }

    pub fn real_logits_eval(&self, x: &Tensor) -> Tensor {
        crate::nets::chunked_eval(x, |c| self.real_head.forward_eval(&self.encoder.body.forward_eval(c)))
    }
}

struct Builder {
    tensors: Vec<TensorEntry>,
    payload: Vec<f64>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f64]) {
        self.tensors.push(TensorEntry {
            name,
            shape,
            offset: self.payload.len(),
            len: values.len(),
        });
        self.payload.extend_from_slice(values);
    }

    fn params<'a>(&mut self, params: impl IntoIterator<Item = &'a Param>) {
        for p in params {
            self.push(p.name.clone(), p.shape.clone(), &p.value);
        }
    }

    fn optimizer(&mut self, prefix: &str, opt: &Sgd) {
        for (name, buf) in &opt.buffers {
            self.push(format!("{prefix}{name}"), vec![buf.len()], buf);
        }
    }
}

impl Checkpoint {
    /// Model parameters only (no optimizer or loop state).
    pub fn from_models(models: &ModelBundle, cfg: &TrainConfig, iteration: usize) -> Self {
        let mut b = Builder {
            tensors: Vec::new(),
            payload: Vec::new(),
        };
        b.params(models.classifier.params());
        b.params(models.detector.params());
        Self {
            header: CheckpointHeader {
                arch: models.arch.name().to_string(),
                num_classes: models.num_classes(),
                shared_detector: models.detector.is_shared(),
                has_detector: true,
                has_dummy_head: true,
                config_hash: cfg.hash(),
                config: cfg.to_toml(),
                iteration,
                tensors: b.tensors,
                state: None,
            },
            payload: b.payload,
        }
    }

    /// Everything needed to resume training.
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut ck = Self::from_models(&t.models, &t.cfg, t.iteration);
        let mut b = Builder {
            tensors: std::mem::take(&mut ck.header.tensors),
            payload: std::mem::take(&mut ck.payload),
        };
        b.optimizer(CLASSIFIER_OPT, &t.cls_opt);
        b.optimizer(DETECTOR_OPT, &t.det_opt);
        ck.header.tensors = b.tensors;
        ck.payload = b.payload;
        ck.header.state = Some(TrainState {
            queue: t.queue.clone(),
            rng: t.streams.capture().to_vec(),
            labeled_sampler: t.labeled_sampler.clone(),
            unlabeled_sampler: t.unlabeled_sampler.clone(),
        });
        ck
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.payload[t.offset..t.offset + t.len])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(20 + header.len() + self.payload.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or truncated)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let rest = &body[20..];
        if hlen > rest.len() || (rest.len() - hlen) % 8 != 0 {
            return Err(bad("header length out of range"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&rest[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload: Vec<f64> = rest[hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for t in &header.tensors {
            if t.offset + t.len > payload.len() || t.shape.iter().product::<usize>() != t.len {
                return Err(Error::Checkpoint(format!("tensor `{}` out of bounds", t.name)));
            }
        }
        Ok(Self { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).at(path)?)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let cfg = parse_config(&self.header.config)?;
        if cfg.hash() != self.header.config_hash {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        Ok(cfg)
    }

    fn fill<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        for p in params {
            let v = self
                .tensor(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if v.len() != p.value.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` has the wrong size", p.name)));
            }
            p.value.copy_from_slice(v);
        }
        Ok(())
    }

    fn skeleton(&self) -> Result<ModelBundle> {
        let arch = Arch::parse(&self.header.arch)?;
        build_models_with(arch, self.header.num_classes, 0, self.header.shared_detector)
    }

    /// Rebuild both networks. Fails on a stripped checkpoint.
    pub fn load_models(&self) -> Result<ModelBundle> {
        if !self.header.has_detector || !self.header.has_dummy_head {
            return Err(Error::Checkpoint("checkpoint was stripped for inference".into()));
        }
        let mut m = self.skeleton()?;
        self.fill(m.classifier.params_mut())?;
        self.fill(m.detector.params_mut())?;
        Ok(m)
    }

    /// Rebuild the encoder and real head only.
    pub fn load_inference(&self) -> Result<InferenceModel> {
        let mut m = self.skeleton()?.classifier;
        let mut ps = Vec::new();
        m.encoder.body.collect_mut(&mut ps);
        ps.extend(m.real_head.params_mut());
        self.fill(ps)?;
        Ok(InferenceModel {
            encoder: m.encoder,
            real_head: m.real_head,
        })
    }

    /// Drop the detector, dummy head, optimizer buffers and loop state.
    pub fn strip_for_inference(&self) -> Checkpoint {
        let keep = |n: &str| n.starts_with("classifier.encoder.") || n.starts_with("classifier.real_head.");
        let mut b = Builder {
            tensors: Vec::new(),
            payload: Vec::new(),
        };
        for t in self.header.tensors.iter().filter(|t| keep(&t.name)) {
            b.push(t.name.clone(), t.shape.clone(), &self.payload[t.offset..t.offset + t.len]);
        }
        Checkpoint {
            header: CheckpointHeader {
                has_detector: false,
                has_dummy_head: false,
                tensors: b.tensors,
                state: None,
                ..self.header.clone()
            },
            payload: b.payload,
        }
    }
}

impl Trainer {
    /// Continue training from a full checkpoint over the same data.
    pub fn resume(ckpt: &Checkpoint, data: &TrainData) -> Result<Trainer> {
        let cfg = ckpt.config()?;
        let state = ckpt
            .header
            .state
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        let mut t = Trainer::new(cfg, data)?;
        t.models = ckpt.load_models()?;
        for (prefix, opt) in [(CLASSIFIER_OPT, &mut t.cls_opt), (DETECTOR_OPT, &mut t.det_opt)] {
            for (name, buf) in &mut opt.buffers {
                let v = ckpt
                    .tensor(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer buffer `{name}`")))?;
                if v.len() != buf.len() {
                    return Err(Error::Checkpoint(format!("optimizer buffer `{name}` has the wrong size")));
                }
                buf.copy_from_slice(v);
            }
        }
        t.queue = state.queue.clone();
        t.streams = RngStreams::restore(&state.rng).ok_or_else(|| Error::Checkpoint("bad rng state".into()))?;
        t.labeled_sampler = state.labeled_sampler.clone();
        t.unlabeled_sampler = state.unlabeled_sampler.clone();
        t.iteration = ckpt.header.iteration;
        Ok(t)
    }
}
