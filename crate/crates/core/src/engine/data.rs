//! In-memory training data, epoch samplers, and batch tensors.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::imaging::Image;
use crate::manifest::{LoadedManifest, Split};
use crate::tensor::Tensor;

/// Pixel normalization applied when images become network input.
const MEAN: f64 = 0.5;
const STD: f64 = 0.25;

/// Images visible to training: labeled images with labels, unlabeled images
/// with ids only.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub labeled: Vec<Image>,
    pub labels: Vec<usize>,
    pub labeled_ids: Vec<String>,
    pub unlabeled: Vec<Image>,
    pub unlabeled_ids: Vec<String>,
}

/// Labeled held-out images.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl TrainData {
    /// Decode every image referenced by `manifest`. Labels must lie in
    /// `[0, num_classes)` and all images must share one size.
    pub fn load(manifest: &LoadedManifest, num_classes: usize) -> Result<(TrainData, EvalSet)> {
        let images = exec::map_slice(&manifest.records, |r| Image::load_png(&manifest.resolve(r)));
        let images: Vec<Image> = images.into_iter().collect::<Result<_>>()?;
        let mut data = TrainData {
            num_classes,
            height: 0,
            width: 0,
            labeled: Vec::new(),
            labels: Vec::new(),
            labeled_ids: Vec::new(),
            unlabeled: Vec::new(),
            unlabeled_ids: Vec::new(),
        };
        let mut test = EvalSet::default();
        let mut size = None;
        for (rec, img) in manifest.records.iter().zip(images) {
            let s = (img.height, img.width);
            if *size.get_or_insert(s) != s {
                return Err(Error::Shape(format!(
                    "image `{}` is {}x{}, expected {}x{}",
                    rec.id,
                    s.0,
                    s.1,
                    size.unwrap().0,
                    size.unwrap().1
                )));
            }
            if let Some(l) = rec.label {
                if l >= num_classes {
                    return Err(Error::Precondition(format!(
                        "record `{}` has label {l} but num_classes = {num_classes}",
                        rec.id
                    )));
                }
            }
            match rec.split {
                Split::Labeled => {
                    data.labeled.push(img);
                    data.labels.push(rec.label.expect("validated"));
                    data.labeled_ids.push(rec.id.clone());
                }
                Split::Unlabeled => {
                    data.unlabeled.push(img);
                    data.unlabeled_ids.push(rec.id.clone());
                }
                Split::Test => {
                    test.images.push(img);
                    test.labels.push(rec.label.expect("validated"));
                    test.ids.push(rec.id.clone());
                }
            }
        }
        if data.labeled.is_empty() || data.unlabeled.is_empty() {
            return Err(Error::Precondition("benchmark needs labeled and unlabeled records".into()));
        }
        let (h, w) = size.expect("nonempty");
        data.height = h;
        data.width = w;
        Ok((data, test))
    }
}

/// Stack images into a normalized NHWC tensor.
pub fn to_tensor(images: &[&Image]) -> Tensor {
    let first = images.first().expect("nonempty batch");
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w * 3);
    for img in images {
        assert_eq!((img.height, img.width), (h, w), "batch image size");
        data.extend(img.data.iter().map(|v| (v - MEAN) / STD));
    }
    Tensor::from_data(images.len(), h, w, 3, data)
}

pub fn to_tensor_owned(images: &[Image]) -> Tensor {
    let refs: Vec<&Image> = images.iter().collect();
    to_tensor(&refs)
}

/// Cycles through shuffled epochs of `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSampler {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor >= self.order.len() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampler_covers_each_epoch_exactly_once() {
        let mut s = EpochSampler::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut first: Vec<usize> = s.next_batch(4, &mut rng);
        first.extend(s.next_batch(6, &mut rng));
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_seed_fixed_order() {
        let mut a = EpochSampler::new(50);
        let mut b = EpochSampler::new(50);
        let xs = a.next_batch(70, &mut ChaCha8Rng::seed_from_u64(4));
        let ys = b.next_batch(70, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(xs, ys);
    }
}
