use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f32,
    pub contrast: (f32, f32),
    pub gamma: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, contrast: (0.7, 1.3), gamma: (0.7, 1.4) }
    }
}

/// One concrete draw of the random distortions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub contrast: f32,
    pub gamma: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { flip: false, contrast: 1.0, gamma: 1.0 };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f32, f32)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let flip = rng.random::<f32>() < cfg.flip_prob;
        let contrast = uniform(rng, cfg.contrast);
        let gamma = uniform(rng, cfg.gamma);
        Self { flip, contrast, gamma }
    }

    /// Horizontal flip, contrast about the image mean, then `v^gamma`; values
    /// are clamped to [0, 1] after each photometric step.
    pub fn apply(&self, crop: &Tensor) -> Tensor {
        let (h, w, c) = crop.dims3().expect("augment expects an h x w x c image");
        let mut out = crop.clone();
        if self.flip {
            let src = crop.data();
            let dst = out.data_mut();
            for y in 0..h {
                for x in 0..w {
                    let s = (y * w + (w - 1 - x)) * c;
                    let d = (y * w + x) * c;
                    dst[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        if self.contrast != 1.0 {
            let mean = (out.data().iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64) as f32;
            for v in out.data_mut() {
                *v = (mean + self.contrast * (*v - mean)).clamp(0.0, 1.0);
            }
        }
        if self.gamma != 1.0 {
            for v in out.data_mut() {
                *v = v.clamp(0.0, 1.0).powf(self.gamma).clamp(0.0, 1.0);
            }
        }
        out
    }
}

pub fn augment(crop: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor {
    AugmentParams::sample(cfg, rng).apply(crop)
}
