//! Weak and strong views.
//!
//! Weak: random horizontal flip and a random translation with reflect
//! padding. Strong: the weak transform, then a RandAugment-style chain of
//! randomly chosen photometric and geometric ops at random magnitudes, then
//! cutout. Batches draw one seed per sample from the caller's stream and
//! augment samples independently, so parallel and sequential runs agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AugmentConfig;
use crate::exec;
use crate::imaging::Image;

const FILL: f64 = 0.5;

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(y, x, img.get(y, img.width - 1 - x));
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Integer translation with reflect padding.
pub fn translate_reflect(img: &Image, dy: isize, dx: isize) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let sy = reflect(y as isize - dy, img.height);
            let sx = reflect(x as isize - dx, img.width);
            out.set(y, x, img.get(sy, sx));
        }
    }
    out
}

pub fn weak_view(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let mut out = if rng.random_bool(0.5) { hflip(img) } else { img.clone() };
    let max_shift = (cfg.translate_fraction * img.height.min(img.width) as f64).round() as i64;
    if max_shift > 0 {
        let dy = rng.random_range(-max_shift..=max_shift) as isize;
        let dx = rng.random_range(-max_shift..=max_shift) as isize;
        out = translate_reflect(&out, dy, dx);
    }
    out
}

/// Photometric and geometric ops of the strong policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Identity,
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

pub const OPS: [Op; 14] = [
    Op::Identity,
    Op::AutoContrast,
    Op::Brightness,
    Op::Color,
    Op::Contrast,
    Op::Equalize,
    Op::Posterize,
    Op::Rotate,
    Op::Sharpness,
    Op::ShearX,
    Op::ShearY,
    Op::Solarize,
    Op::TranslateX,
    Op::TranslateY,
];

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// `base + factor * (img - base)`, clamped.
fn blend(base: &Image, img: &Image, factor: f64) -> Image {
    let mut out = img.clone();
    for ((o, b), v) in out.data.iter_mut().zip(&base.data).zip(&img.data) {
        *o = (b + factor * (v - b)).clamp(0.0, 1.0);
    }
    out
}

fn grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(3) {
        let l = luma([px[0], px[1], px[2]]);
        px.fill(l);
    }
    out
}

fn smooth(img: &Image) -> Image {
    // PIL SMOOTH kernel: 1 1 1 / 1 5 1 / 1 1 1, border pixels unchanged
    let mut out = img.clone();
    for y in 1..img.height.saturating_sub(1) {
        for x in 1..img.width.saturating_sub(1) {
            let mut acc = [0.0; 3];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = if ky == 1 && kx == 1 { 5.0 } else { 1.0 };
                    let p = img.get(y + ky - 1, x + kx - 1);
                    for c in 0..3 {
                        acc[c] += w * p[c];
                    }
                }
            }
            out.set(y, x, acc.map(|v| v / 13.0));
        }
    }
    out
}

fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = img.height * img.width;
    for c in 0..3 {
        let mut hist = [0usize; 256];
        for px in img.data.chunks_exact(3) {
            hist[(px[c].clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        if n == cdf_min {
            continue;
        }
        for px in out.data.chunks_exact_mut(3) {
            let b = (px[c].clamp(0.0, 1.0) * 255.0).round() as usize;
            px[c] = (cdf[b] - cdf_min) as f64 / (n - cdf_min) as f64;
        }
    }
    out
}

/// Inverse-map affine warp with bilinear sampling; `m` maps output pixel
/// coordinates (centered) to input coordinates.
fn warp(img: &Image, m: [[f64; 3]; 2]) -> Image {
    let (h, w) = (img.height, img.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let sx = m[0][0] * u + m[0][1] * v + m[0][2] + cx;
            let sy = m[1][0] * u + m[1][1] * v + m[1][2] + cy;
            out.set(y, x, bilinear(img, sy, sx));
        }
    }
    out
}

fn bilinear(img: &Image, y: f64, x: f64) -> [f64; 3] {
    let (h, w) = (img.height as isize, img.width as isize);
    let (y0, x0) = (y.floor() as isize, x.floor() as isize);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: isize, xx: isize| -> [f64; 3] {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            [FILL; 3]
        } else {
            img.get(yy as usize, xx as usize)
        }
    };
    let (a, b, c, d) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = a[i] * (1.0 - fy) * (1.0 - fx) + b[i] * (1.0 - fy) * fx + c[i] * fy * (1.0 - fx) + d[i] * fy * fx;
    }
    out
}

/// Apply `op` at magnitude `mag` in `[0, 1]` (signed ops pick a random sign).
pub fn apply_op(img: &Image, op: Op, mag: f64, rng: &mut impl Rng) -> Image {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    match op {
        Op::Identity => img.clone(),
        Op::AutoContrast => {
            let mut out = img.clone();
            for c in 0..3 {
                let (lo, hi) = img
                    .data
                    .chunks_exact(3)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[c]), hi.max(p[c])));
                if hi - lo > 1e-9 {
                    for px in out.data.chunks_exact_mut(3) {
                        px[c] = (px[c] - lo) / (hi - lo);
                    }
                }
            }
            out
        }
        Op::Brightness => blend(&Image::new(img.height, img.width), img, 1.0 + sign * 0.9 * mag),
        Op::Color => blend(&grayscale(img), img, 1.0 + sign * 0.9 * mag),
        Op::Contrast => {
            let mean = img.data.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).sum::<f64>()
                / (img.height * img.width) as f64;
            blend(&Image::filled(img.height, img.width, [mean; 3]), img, 1.0 + sign * 0.9 * mag)
        }
        Op::Sharpness => blend(&smooth(img), img, 1.0 + sign * 0.9 * mag),
        Op::Equalize => equalize(img),
        Op::Posterize => {
            let drop = (mag * 4.0).round() as u32;
            let mut out = img.clone();
            for v in &mut out.data {
                *v = (((*v * 255.0).round() as u32 >> drop) << drop) as f64 / 255.0;
            }
            out
        }
        Op::Solarize => {
            let t = 1.0 - mag;
            let mut out = img.clone();
            for v in &mut out.data {
                if *v >= t {
                    *v = 1.0 - *v;
                }
            }
            out
        }
        Op::Rotate => {
            let a = (sign * 30.0 * mag).to_radians();
            let (s, c) = a.sin_cos();
            warp(img, [[c, s, 0.0], [-s, c, 0.0]])
        }
        Op::ShearX => warp(img, [[1.0, sign * 0.3 * mag, 0.0], [0.0, 1.0, 0.0]]),
        Op::ShearY => warp(img, [[1.0, 0.0, 0.0], [sign * 0.3 * mag, 1.0, 0.0]]),
        Op::TranslateX => warp(img, [[1.0, 0.0, sign * 0.3 * mag * img.width as f64], [0.0, 1.0, 0.0]]),
        Op::TranslateY => warp(img, [[1.0, 0.0, 0.0], [0.0, 1.0, sign * 0.3 * mag * img.height as f64]]),
    }
}

/// Gray square of random side in `[0, fraction * side]` at a random center.
pub fn cutout(img: &Image, fraction: f64, rng: &mut impl Rng) -> Image {
    let side = img.height.min(img.width) as f64;
    let size = (rng.random::<f64>() * fraction * side).round() as isize;
    let mut out = img.clone();
    if size == 0 {
        return out;
    }
    let cy = rng.random_range(0..img.height) as isize;
    let cx = rng.random_range(0..img.width) as isize;
    let (y0, x0) = ((cy - size / 2).max(0), (cx - size / 2).max(0));
    let (y1, x1) = ((cy - size / 2 + size).min(img.height as isize), (cx - size / 2 + size).min(img.width as isize));
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(y as usize, x as usize, [FILL; 3]);
        }
    }
    out
}

pub fn strong_view(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let mut out = weak_view(img, cfg, rng);
    for _ in 0..cfg.randaugment_ops {
        let op = OPS[rng.random_range(0..OPS.len())];
        let mag = rng.random::<f64>();
        out = apply_op(&out, op, mag, rng);
    }
    cutout(&out, cfg.cutout_fraction, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Weak,
    Strong,
}

/// Augment every image with a per-sample seed drawn from `rng`.
pub fn augment_batch(images: &[&Image], view: View, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<Image> {
    let seeds: Vec<u64> = images.iter().map(|_| rng.random()).collect();
    exec::map_range(images.len(), |i| {
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        match view {
            View::Weak => weak_view(images[i], cfg, &mut r),
            View::Strong => strong_view(images[i], cfg, &mut r),
        }
    })
}
