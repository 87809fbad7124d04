use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, StreamRng};

pub const SHAPE_NAMES: [&str; 10] = [
    "disk", "square", "triangle", "ring", "plus", "diamond", "hbar", "vbar", "frame", "saltire",
];

/// Held-out samples are drawn from indices past this offset.
const HELD_OUT_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

/// Procedurally rendered colored shapes on textured backgrounds.
///
/// `fov_fraction` is the fraction of the frame area covered by the object's
/// bounding box; each sample scales it by a factor drawn uniformly from
/// `[1 - fov_jitter, 1 + fov_jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub classes: usize,
    pub image_size: usize,
    pub fov_fraction: f64,
    pub fov_jitter: f64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 10,
            image_size: 64,
            fov_fraction: 0.6,
            fov_jitter: 0.5,
        }
    }
}

impl SyntheticDataset {
    pub fn validate(&self) -> Result<()> {
        if !(2..=SHAPE_NAMES.len()).contains(&self.classes) {
            return Err(Error::domain(format!(
                "classes must be in 2..={}, got {}",
                SHAPE_NAMES.len(),
                self.classes
            )));
        }
        if self.image_size < 8 {
            return Err(Error::domain("image_size must be at least 8"));
        }
        if !(self.fov_fraction > 0.0 && self.fov_fraction < 1.0) {
            return Err(Error::domain(format!(
                "fov_fraction must be in (0, 1), got {}",
                self.fov_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.fov_jitter) {
            return Err(Error::domain("fov_jitter must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        SHAPE_NAMES[..self.classes].iter().map(|s| s.to_string()).collect()
    }

    /// Deterministic sample; labels cycle through the classes.
    pub fn sample(&self, split: Split, index: usize) -> (Image, usize) {
        let label = index % self.classes;
        let key = match split {
            Split::Train => index as u64,
            Split::HeldOut => HELD_OUT_OFFSET + index as u64,
        };
        let mut rng = rng::indexed_stream(self.seed, "synthetic-shapes", key);
        (self.render(label, &mut rng).0, label)
    }

    /// Fraction of the frame covered by the object of a sample.
    #[cfg(test)]
    fn coverage(&self, split: Split, index: usize) -> f64 {
        let key = match split {
            Split::Train => index as u64,
            Split::HeldOut => HELD_OUT_OFFSET + index as u64,
        };
        let mut rng = rng::indexed_stream(self.seed, "synthetic-shapes", key);
        self.render(index % self.classes, &mut rng).1
    }

    /// The image and the fraction of it the object covers.
    fn render(&self, label: usize, rng: &mut StreamRng) -> (Image, f64) {
        let n = self.image_size;
        let nf = n as f64;

        let mut base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.08..0.4));
        let freq = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.02..0.08);
        let mut color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..0.95));
        // either polarity, so brightness alone never identifies the object
        if rng.random_bool(0.5) {
            std::mem::swap(&mut base, &mut color);
        }

        let scale = rng.random_range(1.0 - self.fov_jitter..=1.0 + self.fov_jitter);
        let coverage = (self.fov_fraction * scale).clamp(0.02, 0.98);
        let side = (coverage.sqrt() * nf).max(4.0);
        let x0 = rng.random_range(0.0..=(nf - side));
        let y0 = rng.random_range(0.0..=(nf - side));

        let mut data = Vec::with_capacity(n * n * 3);
        let mut covered = 0.0;
        for row in 0..n {
            for col in 0..n {
                let (yf, xf) = (row as f64 / nf, col as f64 / nf);
                let texture = amp
                    * (std::f64::consts::TAU * (freq.0 * xf + freq.1 * yf) + phase).sin();
                // 2x2 supersampled coverage of the shape
                let mut inside = 0.0;
                for (dy, dx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    let u = 2.0 * ((col as f64 + dx - x0) / side) - 1.0;
                    let v = 2.0 * ((row as f64 + dy - y0) / side) - 1.0;
                    if contains(label, u, v) {
                        inside += 0.25;
                    }
                }
                covered += inside;
                for ch in 0..3 {
                    let noise = rng.random_range(-0.03..0.03);
                    let bg = base[ch] + texture + noise;
                    let v = inside * color[ch] + (1.0 - inside) * bg;
                    data.push(v);
                }
            }
        }
        (Image::from_clamped(n, n, 3, data), covered / (n * n) as f64)
    }
}

/// Shape membership in bounding-box coordinates `u, v` in `[-1, 1]`.
fn contains(label: usize, u: f64, v: f64) -> bool {
    if u.abs() > 1.0 || v.abs() > 1.0 {
        return false;
    }
    let r2 = u * u + v * v;
    match label {
        0 => r2 <= 1.0,
        1 => u.abs() <= 0.85 && v.abs() <= 0.85,
        2 => u.abs() <= (v + 1.0) / 2.0,
        3 => (0.3..=1.0).contains(&r2),
        4 => u.abs() <= 0.3 || v.abs() <= 0.3,
        5 => u.abs() + v.abs() <= 1.0,
        6 => v.abs() <= 0.35,
        7 => u.abs() <= 0.35,
        8 => u.abs().max(v.abs()) >= 0.6,
        9 => (u - v).abs() <= 0.4 || (u + v).abs() <= 0.4,
        _ => unreachable!("label checked against SHAPE_NAMES"),
    }
}
