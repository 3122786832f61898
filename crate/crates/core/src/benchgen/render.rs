//! Supersampled rendering of simple class shapes.

use rand::Rng;

use crate::imaging::Image;

pub const SHAPE_NAMES: [&str; 6] = ["disk", "square", "triangle", "cross", "ring", "diamond"];

/// Where a shape sits, in unit image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Placement {
    /// Roughly centered placement used by both real and synthetic renders.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            cx: rng.random_range(0.36..0.64),
            cy: rng.random_range(0.36..0.64),
            radius: rng.random_range(0.22..0.36),
            angle: rng.random_range(-0.35..0.35),
        }
    }

    /// Small upright placement near one of the four corners.
    pub fn corner(rng: &mut impl Rng) -> Self {
        let (cx, cy) = [(0.2, 0.2), (0.8, 0.2), (0.2, 0.8), (0.8, 0.8)][rng.random_range(0..4)];
        Self {
            cx,
            cy,
            radius: rng.random_range(0.12..0.18),
            angle: 0.0,
        }
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = ((x - self.cx) / self.radius, (y - self.cy) / self.radius);
        let (s, c) = self.angle.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Membership test in shape-local coordinates.
pub fn inside(shape: usize, u: f64, v: f64) -> bool {
    match shape % SHAPE_NAMES.len() {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => (-0.8..=0.9).contains(&v) && u.abs() <= (v + 0.8) * 0.55,
        3 => u.abs() <= 0.95 && v.abs() <= 0.95 && (u.abs() <= 0.3 || v.abs() <= 0.3),
        4 => {
            let r2 = u * u + v * v;
            (0.36..=1.0).contains(&r2)
        }
        _ => u.abs() + v.abs() <= 1.0,
    }
}

/// Render `shapes` over a background; each pixel averages `ss * ss`
/// sub-samples. Color callbacks take unit coordinates.
pub fn render(
    height: usize,
    width: usize,
    ss: usize,
    shapes: &[(usize, Placement)],
    bg: impl Fn(f64, f64) -> [f64; 3],
    fg: impl Fn(f64, f64) -> [f64; 3],
) -> Image {
    let mut img = Image::new(height, width);
    let n = (ss * ss) as f64;
    for py in 0..height {
        for px in 0..width {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let x = (px as f64 + (sx as f64 + 0.5) / ss as f64) / width as f64;
                    let y = (py as f64 + (sy as f64 + 0.5) / ss as f64) / height as f64;
                    let hit = shapes.iter().any(|(s, p)| {
                        let (u, v) = p.local(x, y);
                        inside(*s, u, v)
                    });
                    let c = if hit { fg(x, y) } else { bg(x, y) };
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            img.set(py, px, [acc[0] / n, acc[1] / n, acc[2] / n]);
        }
    }
    img
}

/// Add i.i.d. Gaussian noise and clamp to `[0, 1]`.
pub fn add_noise(img: &mut Image, sigma: f64, rng: &mut impl Rng) {
    if sigma > 0.0 {
        let normal = rand_distr::Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut img.data {
            *v += rng.sample(normal);
        }
    }
    img.clamp();
}
