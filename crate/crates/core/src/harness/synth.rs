//! Synthetic clean/noisy image pairs.
//!
//! Clean images mix a few low-frequency sinusoid fields with flat-colored
//! rectangles and discs, so they carry both smooth shading and sharp edges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DegradationKind {
    #[default]
    GaussianNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: DegradationKind,
    /// Noise standard deviation on the 8-bit scale.
    pub sigma: f64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub clean: Tensor<f32>,
    pub degraded: Tensor<f32>,
}

const WAVES: usize = 5;
const MAX_CYCLES: f64 = 3.0;

fn base_image<R: Rng>(h: usize, w: usize, rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0; h * w * 3];
    for c in 0..3 {
        let offset: f64 = rng.random_range(0.3..0.7);
        let waves: Vec<[f64; 4]> = (0..WAVES)
            .map(|_| {
                [
                    rng.random_range(-MAX_CYCLES..MAX_CYCLES),
                    rng.random_range(-MAX_CYCLES..MAX_CYCLES),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.03..0.12),
                ]
            })
            .collect();
        for r in 0..h {
            for col in 0..w {
                let (y, x) = (r as f64 / h as f64, col as f64 / w as f64);
                let v: f64 = waves
                    .iter()
                    .map(|[fy, fx, ph, amp]| amp * (std::f64::consts::TAU * (fy * y + fx * x) + ph).sin())
                    .sum();
                img[(r * w + col) * 3 + c] = offset + v;
            }
        }
    }
    let shapes = rng.random_range(2..=5);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.1..0.35) * h as f64;
        let rx = rng.random_range(0.1..0.35) * w as f64;
        let disc = rng.random_bool(0.5);
        for r in 0..h {
            for col in 0..w {
                let dy = (r as f64 - cy) / ry;
                let dx = (col as f64 - cx) / rx;
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    img[(r * w + col) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Next clean image and its unclamped additive noise.
fn generate(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let clean = base_image(spec.height, spec.width, rng);
    let std = spec.sigma / 255.0;
    let noise = (0..clean.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    (clean, noise)
}

/// `degraded = clamp(clean + N(0, σ/255))`, deterministic in `spec.seed`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<ImagePair>> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::config("synthetic images need a positive extent"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::config(format!("invalid noise sigma {}", spec.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = [spec.height, spec.width, 3];
    (0..spec.count)
        .map(|_| {
            let (clean, noise) = generate(spec, &mut rng);
            let degraded = clean
                .iter()
                .zip(&noise)
                .map(|(c, n)| ((c + n).clamp(0.0, 1.0)) as f32)
                .collect();
            Ok(ImagePair {
                clean: Tensor::new(&shape, clean.iter().map(|&v| v as f32).collect())?,
                degraded: Tensor::new(&shape, degraded)?,
            })
        })
        .collect()
}
