//! A small real-image stand-in: noisy anti-aliased shapes, one per class.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::render::{add_noise, render, Placement, SHAPE_NAMES};
use crate::error::{Error, IoContext, Result};
use crate::exec;
use crate::imaging::Image;
use crate::manifest::{write_jsonl, ManifestRecord, Split};
use crate::rng::{substream, Stream};

pub const CLASSES_FILE: &str = "classes.txt";
pub const REAL_MANIFEST: &str = "real.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    /// Chance of a small shape from a random other class in a corner.
    pub clutter_probability: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            size: 16,
            train_per_class: 525,
            test_per_class: 100,
            noise: 0.15,
            clutter_probability: 0.5,
            seed: 0,
        }
    }
}

pub fn class_names(k: usize) -> Vec<String> {
    SHAPE_NAMES.iter().take(k).map(|s| s.to_string()).collect()
}

/// One real image of `class` out of `k`.
pub fn render_real(class: usize, k: usize, cfg: &ToyConfig, rng: &mut impl Rng) -> Image {
    let mut shapes = vec![(class, Placement::random(rng))];
    if k > 1 && rng.random_bool(cfg.clutter_probability) {
        let other = (class + rng.random_range(1..k)) % k;
        shapes.push((other, Placement::corner(rng)));
    }
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..1.0));
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.4));
    let mut img = render(cfg.size, cfg.size, 4, &shapes, |_, _| bg, |_, _| fg);
    add_noise(&mut img, cfg.noise, rng);
    img.quantized()
}

/// Render the toy dataset under `dir`: `images/`, a real-image manifest
/// (training images as labeled, held-out images as test) and class names.
pub fn make_toy(cfg: &ToyConfig, dir: &Path) -> Result<Vec<ManifestRecord>> {
    if cfg.num_classes < 2 || cfg.num_classes > SHAPE_NAMES.len() {
        return Err(Error::Precondition(format!(
            "toy data supports 2..={} classes",
            SHAPE_NAMES.len()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.clutter_probability) {
        return Err(Error::Precondition("clutter_probability outside [0, 1]".into()));
    }
    if cfg.size < 8 || cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::Precondition("toy size must be >= 8 with nonempty splits".into()));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).at(&img_dir)?;
    let per_class = cfg.train_per_class + cfg.test_per_class;
    let jobs: Vec<(usize, usize)> = (0..cfg.num_classes)
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .collect();
    let records = exec::map_slice(&jobs, |&(c, i)| {
        let mut rng = substream(cfg.seed, Stream::Bench, (c * per_class + i) as u64);
        let img = render_real(c, cfg.num_classes, cfg, &mut rng);
        let (split, tag) = if i < cfg.train_per_class {
            (Split::Labeled, "train")
        } else {
            (Split::Test, "test")
        };
        let id = format!("{tag}-{c}-{i:05}");
        let path = format!("images/{id}.png");
        img.save_png(&dir.join(&path))?;
        Ok(ManifestRecord {
            id,
            path,
            split,
            label: Some(c),
            origin: None,
            generator: None,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_jsonl(&dir.join(REAL_MANIFEST), &records)?;
    let names = class_names(cfg.num_classes).join("\n") + "\n";
    crate::fileio::write_atomic(&dir.join(CLASSES_FILE), names.as_bytes())?;
    Ok(records)
}
