//! Training-free blending-boundary scorer.
//!
//! The high-pass residual of a composite has an unusually strong gradient
//! along the paste boundary. The score is a high percentile of the residual
//! gradient energy normalized by its median, so it is unit-free and does not
//! move under a global brightness scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::raster::{blur_plane, ImageBuffer, CHANNELS};
use crate::stats;

pub const DEFAULT_FRAMES_PER_VIDEO: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeamConfig {
    pub blur_sigma: f32,
    pub percentile: f64,
    pub epsilon: f64,
}

impl Default for SeamConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 2.0,
            percentile: 99.5,
            epsilon: 1e-6,
        }
    }
}

impl SeamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0) || !(0.0..=100.0).contains(&self.percentile) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid seam config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamScore {
    pub value: f64,
    pub percentile: f64,
    pub median: f64,
}

/// Per-pixel L2 norm over channels of the central-difference gradient of
/// the high-pass residual.
pub fn residual_energy(img: &ImageBuffer, blur_sigma: f32) -> Result<Vec<f32>> {
    let (w, h) = img.dims();
    let mut energy = vec![0.0f32; w * h];
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        let low = blur_plane(plane, w, h, blur_sigma)?;
        let r: Vec<f32> = plane.iter().zip(&low).map(|(a, b)| a - b).collect();
        for y in 0..h {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = 0.5 * (r[y * w + xp] - r[y * w + xm]);
                let gy = 0.5 * (r[yp * w + x] - r[ym * w + x]);
                energy[y * w + x] += gx * gx + gy * gy;
            }
        }
    }
    energy.iter_mut().for_each(|e| *e = e.sqrt());
    Ok(energy)
}

pub fn score_frame(img: &ImageBuffer) -> SeamScore {
    score_frame_with(img, &SeamConfig::default()).expect("default seam config is valid")
}

pub fn score_frame_with(img: &ImageBuffer, config: &SeamConfig) -> Result<SeamScore> {
    config.validate()?;
    let mut energy = residual_energy(img, config.blur_sigma)?;
    energy.sort_by(f32::total_cmp);
    let percentile = stats::percentile_sorted(&energy, config.percentile);
    let median = stats::percentile_sorted(&energy, 50.0);
    Ok(SeamScore {
        value: percentile / (median + config.epsilon),
        percentile,
        median,
    })
}

pub fn score_frames(images: &[ImageBuffer], config: &SeamConfig, exec: Exec) -> Result<Vec<SeamScore>> {
    config.validate()?;
    exec.try_map(images, |img| score_frame_with(img, config))
}

/// Indices `floor(j (n - 1) / (k - 1))` for `j < k`, or every frame when
/// `n <= k`.
pub fn even_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    if k <= 1 {
        return vec![0; k];
    }
    (0..k).map(|j| j * (n - 1) / (k - 1)).collect()
}

/// Mean over `k` evenly spaced frame scores.
pub fn score_video(frame_scores: &[f64], k: usize) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::InvalidInput("no frame scores".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let picked: Vec<f64> = even_indices(frame_scores.len(), k)
        .into_iter()
        .map(|i| frame_scores[i])
        .collect();
    Ok(stats::exact_mean(&picked))
}
