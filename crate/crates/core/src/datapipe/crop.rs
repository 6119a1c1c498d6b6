use std::path::Path;

use super::parts::{EyePoints, PartDefinition};
use super::Landmark;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side of the aligned full-face frame.
pub const ALIGNED_SIZE: usize = 128;
/// Where the image-left eye center lands after alignment, as `(x, y)`.
pub const CANONICAL_LEFT_EYE: Landmark = [44.0, 50.0];
pub const CANONICAL_RIGHT_EYE: Landmark = [84.0, 50.0];

/// Loads an image as an `h x w x 3` tensor with values in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::new(vec![h, w, 3], data)
}

fn centroid(landmarks: &[Landmark], indices: &[usize]) -> Result<Landmark> {
    if indices.is_empty() {
        return Err(Error::Data("empty landmark index set".into()));
    }
    let mut acc = [0.0f64; 2];
    for &i in indices {
        let p = landmarks
            .get(i)
            .ok_or_else(|| Error::Data(format!("landmark {i} missing ({} available)", landmarks.len())))?;
        acc[0] += p[0] as f64;
        acc[1] += p[1] as f64;
    }
    let n = indices.len() as f64;
    Ok([(acc[0] / n) as f32, (acc[1] / n) as f32])
}

/// Cuts the part's window around the rounded centroid of its landmarks,
/// without scaling. Pixels outside the image are zero.
pub fn crop_part(image: &Tensor, landmarks: &[Landmark], part: &PartDefinition) -> Result<Tensor> {
    let (h, w, c) = image.dims3()?;
    let center = centroid(landmarks, &part.landmark_indices)?;
    let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
    let (ww, wh) = (part.window.w, part.window.h);
    let x0 = cx - (ww as i64 - 1) / 2;
    let y0 = cy - (wh as i64 - 1) / 2;
    let mut out = Tensor::zeros(&[wh, ww, c]);
    let src = image.data();
    let dst = out.data_mut();
    for r in 0..wh {
        let sy = y0 + r as i64;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        let lo = x0.max(0);
        let hi = (x0 + ww as i64).min(w as i64);
        if lo >= hi {
            continue;
        }
        let n = (hi - lo) as usize * c;
        let s = (sy as usize * w + lo as usize) * c;
        let d = (r * ww + (lo - x0) as usize) * c;
        dst[d..d + n].copy_from_slice(&src[s..s + n]);
    }
    Ok(out)
}

/// `z -> scale * z + shift` over complex pixel coordinates `x + iy`: a
/// rotation, uniform scale and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: [f64; 2],
    pub shift: [f64; 2],
}

impl SimilarityTransform {
    /// The unique transform sending `from[k]` to `to[k]` for both points.
    pub fn from_pairs(from: [Landmark; 2], to: [Landmark; 2]) -> Result<Self> {
        let p = from.map(|v| [v[0] as f64, v[1] as f64]);
        let q = to.map(|v| [v[0] as f64, v[1] as f64]);
        let dp = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
        let dq = [q[1][0] - q[0][0], q[1][1] - q[0][1]];
        let denom = dp[0] * dp[0] + dp[1] * dp[1];
        if denom < 1e-12 {
            return Err(Error::Degenerate("eye centers coincide".into()));
        }
        // dq / dp
        let scale = [(dq[0] * dp[0] + dq[1] * dp[1]) / denom, (dq[1] * dp[0] - dq[0] * dp[1]) / denom];
        let shift = [
            q[0][0] - (scale[0] * p[0][0] - scale[1] * p[0][1]),
            q[0][1] - (scale[0] * p[0][1] + scale[1] * p[0][0]),
        ];
        Ok(Self { scale, shift })
    }

    pub fn apply(&self, p: Landmark) -> Landmark {
        let (x, y) = (p[0] as f64, p[1] as f64);
        let [a, b] = self.scale;
        [(a * x - b * y + self.shift[0]) as f32, (a * y + b * x + self.shift[1]) as f32]
    }

    pub fn inverse(&self) -> Self {
        let [a, b] = self.scale;
        let n = a * a + b * b;
        let inv = [a / n, -b / n];
        let shift = [
            -(inv[0] * self.shift[0] - inv[1] * self.shift[1]),
            -(inv[0] * self.shift[1] + inv[1] * self.shift[0]),
        ];
        Self { scale: inv, shift }
    }
}

/// Warps the face so the eye centers land on the canonical positions of the
/// 128x128 frame. Returns the aligned image and the transform used.
pub fn align_face(image: &Tensor, landmarks: &[Landmark], eyes: &EyePoints) -> Result<(Tensor, SimilarityTransform)> {
    let left = centroid(landmarks, &eyes.left)?;
    let right = centroid(landmarks, &eyes.right)?;
    let fwd = SimilarityTransform::from_pairs([left, right], [CANONICAL_LEFT_EYE, CANONICAL_RIGHT_EYE])?;
    let inv = fwd.inverse();
    let (h, w, c) = image.dims3()?;
    let n = ALIGNED_SIZE;
    let mut out = Tensor::zeros(&[n, n, c]);
    let src = image.data();
    let pixel = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            src[(y as usize * w + x as usize) * c + ch] as f64
        }
    };
    let dst = out.data_mut();
    for v in 0..n {
        for u in 0..n {
            let (sx, sy) = (
                inv.scale[0] * u as f64 - inv.scale[1] * v as f64 + inv.shift[0],
                inv.scale[0] * v as f64 + inv.scale[1] * u as f64 + inv.shift[1],
            );
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let top = pixel(x0, y0, ch) * (1.0 - fx) + pixel(x0 + 1, y0, ch) * fx;
                let bot = pixel(x0, y0 + 1, ch) * (1.0 - fx) + pixel(x0 + 1, y0 + 1, ch) * fx;
                dst[(v * n + u) * c + ch] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Ok((out, fwd))
}
