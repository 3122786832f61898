//! SGD with momentum and cosine learning-rate decay.

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::nn::Param;

/// `lr0 * cos(factor * pi * k / total)`; constant when `total == 0`.
pub fn cosine_lr(cfg: &OptimizerConfig, iteration: usize, total: usize) -> f64 {
    if total == 0 {
        return cfg.lr;
    }
    cfg.lr * (cfg.cosine_factor * std::f64::consts::PI * iteration as f64 / total as f64).cos()
}

/// Momentum buffers for one network, one per trainable parameter in
/// collection order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub buffers: Vec<(String, Vec<f64>)>,
}

impl Sgd {
    pub fn new(cfg: &OptimizerConfig, params: &[&Param]) -> Self {
        Self {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            nesterov: cfg.nesterov,
            buffers: params
                .iter()
                .filter(|p| p.trainable)
                .map(|p| (p.name.clone(), vec![0.0; p.len()]))
                .collect(),
        }
    }

    /// Apply one update. Decay is added to the gradient of decaying params.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) -> Result<()> {
        let trainable: Vec<&mut Param> = params.into_iter().filter(|p| p.trainable).collect();
        if trainable.len() != self.buffers.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} buffers for {} parameters",
                self.buffers.len(),
                trainable.len()
            )));
        }
        for (p, (name, buf)) in trainable.into_iter().zip(&mut self.buffers) {
            if *name != p.name || buf.len() != p.len() {
                return Err(Error::Shape(format!("optimizer buffer `{name}` does not match `{}`", p.name)));
            }
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for ((w, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let d = g + wd * *w;
                *b = self.momentum * *b + d;
                let upd = if self.nesterov { d + self.momentum * *b } else { *b };
                *w -= lr * upd;
            }
        }
        Ok(())
    }
}
