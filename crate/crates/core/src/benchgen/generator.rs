//! Generator interface and the procedural stand-in used at desk scale.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::render::{add_noise, render, Placement, SHAPE_NAMES};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::StreamRng;

/// What to draw. Adapters for text-conditioned models use `prompt`; the
/// procedural stand-in uses `class_index`.
#[derive(Clone, Copy, Debug)]
pub struct GenerationRequest<'a> {
    pub class_index: usize,
    pub num_classes: usize,
    pub class_name: &'a str,
    pub prompt: &'a str,
}

/// A source of synthetic images. Must emit exactly `count` RGB images and be
/// deterministic given the request and the generator state.
pub trait GeneratorAdapter: Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenerationRequest, count: usize, rng: &mut StreamRng) -> Result<Vec<Image>>;
}

/// Look of one procedural generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleParams {
    pub name: String,
    /// Stripe frequency across the foreground, cycles per image width.
    pub stripe_freq: f64,
    pub stripe_amp: f64,
    /// Background gradient contrast.
    pub gradient: f64,
    /// Push of the foreground color away from gray.
    pub saturation: f64,
}

/// Versioned parameters of the procedural transform family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProceduralConfig {
    pub version: u32,
    /// Render at this multiple of the target size before resizing.
    pub render_scale: usize,
    /// Pixel noise before resizing.
    pub noise: f64,
    /// Per-class style strength in `(0, 1]`, cycled over classes.
    pub class_strength: Vec<f64>,
    /// Chance of a small second shape from the next class.
    pub bias_probability: f64,
    /// Pull of the foreground towards a fixed per-class hue, in `[0, 1]`.
    #[serde(default)]
    pub palette_strength: f64,
    /// Chance that the main shape comes from outside the class set.
    #[serde(default)]
    pub unrelated_probability: f64,
    /// Chance that the main shape collapses to class 0's shape.
    #[serde(default)]
    pub collapse_probability: f64,
    pub styles: Vec<StyleParams>,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        Self {
            version: 1,
            render_scale: 2,
            noise: 0.18,
            class_strength: vec![1.0, 0.8, 0.6, 0.45],
            bias_probability: 0.3,
            palette_strength: 0.0,
            unrelated_probability: 0.0,
            collapse_probability: 0.7,
            styles: vec![
                StyleParams {
                    name: "procedural-stripes".into(),
                    stripe_freq: 3.0,
                    stripe_amp: 0.35,
                    gradient: 0.5,
                    saturation: 0.4,
                },
                StyleParams {
                    name: "procedural-gradient".into(),
                    stripe_freq: 1.5,
                    stripe_amp: 0.2,
                    gradient: 0.8,
                    saturation: 0.3,
                },
                StyleParams {
                    name: "procedural-vivid".into(),
                    stripe_freq: 5.0,
                    stripe_amp: 0.25,
                    gradient: 0.35,
                    saturation: 0.7,
                },
            ],
        }
    }
}

impl ProceduralConfig {
    pub fn strength(&self, class: usize) -> f64 {
        if self.class_strength.is_empty() {
            1.0
        } else {
            self.class_strength[class % self.class_strength.len()]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.render_scale == 0 || self.styles.is_empty() {
            return Err(Error::Precondition("procedural config needs render_scale >= 1 and a style".into()));
        }
        if !(0.0..=1.0).contains(&self.palette_strength) || !(0.0..=1.0).contains(&self.bias_probability)
            || !(0.0..=1.0).contains(&self.unrelated_probability)
            || !(0.0..=1.0).contains(&self.collapse_probability)
        {
            return Err(Error::Precondition("probabilities and palette_strength must lie in [0, 1]".into()));
        }
        if self.class_strength.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::Precondition("class_strength entries must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// One adapter per style.
    pub fn generators(&self, height: usize, width: usize) -> Vec<ProceduralGenerator> {
        self.styles
            .iter()
            .map(|s| ProceduralGenerator {
                style: s.clone(),
                family: self.clone(),
                height,
                width,
            })
            .collect()
    }
}

/// Class shapes in a generator-specific style: smooth gradient background,
/// striped saturated foreground, rendered large and resized.
#[derive(Clone, Debug)]
pub struct ProceduralGenerator {
    pub style: StyleParams,
    pub family: ProceduralConfig,
    pub height: usize,
    pub width: usize,
}

impl ProceduralGenerator {
    fn one(&self, req: &GenerationRequest, rng: &mut StreamRng) -> Image {
        let s = self.family.strength(req.class_index);
        let st = &self.style;
        let spare = SHAPE_NAMES.len().saturating_sub(req.num_classes);
        let main = if spare > 0 && rng.random_bool(self.family.unrelated_probability) {
            req.num_classes + rng.random_range(0..spare)
        } else if rng.random_bool(self.family.collapse_probability) {
            0
        } else {
            req.class_index
        };
        let mut shapes = vec![(main, Placement::random(rng))];
        if req.num_classes > 1 && rng.random_bool(self.family.bias_probability) {
            shapes.push(((req.class_index + 1) % req.num_classes, Placement::corner(rng)));
        }
        let mut fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..1.0));
        let hue = class_hue(req.class_index, req.num_classes);
        for (c, h) in fg.iter_mut().zip(hue) {
            *c += (h - *c) * self.family.palette_strength;
        }
        let mean = fg.iter().sum::<f64>() / 3.0;
        for c in &mut fg {
            *c = (*c + (*c - mean) * st.saturation * s * 3.0).clamp(0.0, 1.0);
        }
        let bg_a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.4));
        let bg_b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.4));
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (dx, dy) = (theta.cos(), theta.sin());
        let g = st.gradient * s;
        let bg = |x: f64, y: f64| {
            let t = ((x - 0.5) * dx + (y - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            std::array::from_fn(|k| bg_a[k] * (1.0 - g * t) + bg_b[k] * g * t)
        };
        let amp = st.stripe_amp * s;
        let fgc = |x: f64, y: f64| {
            let m = 1.0 + amp * (2.0 * PI * st.stripe_freq * (x * dy - y * dx) + phase).sin();
            std::array::from_fn(|k| (fg[k] * m).clamp(0.0, 1.0))
        };
        let (h, w) = (self.height * self.family.render_scale, self.width * self.family.render_scale);
        let mut img = render(h, w, 2, &shapes, bg, fgc);
        add_noise(&mut img, self.family.noise, rng);
        img
    }
}

/// Saturated color at hue `class / k` on the color wheel.
fn class_hue(class: usize, k: usize) -> [f64; 3] {
    let h = 6.0 * class as f64 / k.max(1) as f64;
    std::array::from_fn(|i| {
        // distance of this channel's peak (0, 2, 4) from h on the wheel
        let d = (h - 2.0 * i as f64).rem_euclid(6.0);
        let d = d.min(6.0 - d);
        0.2 + 0.75 * (2.0 - d).clamp(0.0, 1.0)
    })
}

impl GeneratorAdapter for ProceduralGenerator {
    fn name(&self) -> &str {
        &self.style.name
    }

    fn generate(&self, req: &GenerationRequest, count: usize, rng: &mut StreamRng) -> Result<Vec<Image>> {
        if req.class_index >= req.num_classes {
            return Err(Error::Generator {
                generator: self.style.name.clone(),
                prompt: req.prompt.to_string(),
                message: format!("class index {} out of range", req.class_index),
            });
        }
        Ok((0..count).map(|_| self.one(req, rng)).collect())
    }
}
