//! Seeded synthetic face frames with landmarks, used as a fixture corpus.
//!
//! A frame is a smooth background with low-frequency blotches, an elliptic
//! skin-toned face with darker eyes, nose and mouth, and stationary pixel
//! noise. Landmarks follow the jaw line and both brows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Point};
use crate::raster::{self, ImageBuffer, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal face semi-axis range, pixels.
    pub face_radius: [f64; 2],
    /// Per-video pixel-noise standard deviation range.
    pub noise_sigma: [f64; 2],
    pub frames_per_video: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 320,
            face_radius: [88.0, 104.0],
            noise_sigma: [0.008, 0.014],
            frames_per_video: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        raster::check_dims(self.width, self.height)?;
        let [r0, r1] = self.face_radius;
        let [n0, n1] = self.noise_sigma;
        let fits = r1 * 1.3 * 1.3 < self.height.min(self.width) as f64 / 2.0 + 40.0;
        if !(r0 > 4.0 && r0 <= r1 && n0 >= 0.0 && n0 <= n1 && fits && self.frames_per_video > 0) {
            return Err(Error::InvalidParameter(format!("invalid synthetic corpus config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthFrame {
    pub video_id: String,
    pub frame_idx: u32,
    pub image: ImageBuffer,
    pub landmarks: LandmarkSet,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct FaceLayout {
    base: [f64; 3],
    grad: [f64; 3],
    blotch_gain: f64,
    blotch_seed: u64,
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    skin: [f64; 3],
    noise: f64,
    landmark_jitter: Vec<(f64, f64)>,
}

impl FaceLayout {
    fn draw(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let base = [(); 3].map(|_| uniform(rng, 0.15, 0.45));
        let grad = [(); 3].map(|_| uniform(rng, -0.15, 0.15));
        let blotch_gain = uniform(rng, 0.5, 1.5) * 2.0;
        let blotch_seed = rng.random();
        let cx = cfg.width as f64 / 2.0 + uniform(rng, -8.0, 8.0);
        let cy = cfg.height as f64 / 2.0 + uniform(rng, -6.0, 6.0);
        let ax = uniform(rng, cfg.face_radius[0], cfg.face_radius[1]);
        let ay = ax * uniform(rng, 1.15, 1.3);
        let tone = [uniform(rng, 0.45, 0.6), uniform(rng, 0.32, 0.42), uniform(rng, 0.25, 0.35)];
        let gain = uniform(rng, 0.7, 1.0);
        let skin = tone.map(|t| t * gain);
        let noise = uniform(rng, cfg.noise_sigma[0], cfg.noise_sigma[1]);
        let landmark_jitter = (0..27).map(|_| (normal(rng), normal(rng))).collect();
        Self {
            base,
            grad,
            blotch_gain,
            blotch_seed,
            cx,
            cy,
            ax,
            ay,
            skin,
            noise,
            landmark_jitter,
        }
    }

    fn landmarks(&self, image_ref: &str) -> Result<LandmarkSet> {
        let mut pts = Vec::with_capacity(27);
        for i in 0..17 {
            let t = std::f64::consts::PI * (0.05 + 0.9 * i as f64 / 16.0);
            pts.push((self.cx + 0.95 * self.ax * t.cos(), self.cy + 0.92 * self.ay * t.sin()));
        }
        let brow_y = self.cy - 0.38 * self.ay;
        for i in 0..5 {
            pts.push((self.cx + 0.8 * self.ax * (-0.9 + 0.2 * i as f64), brow_y));
        }
        for i in 0..5 {
            pts.push((self.cx + 0.8 * self.ax * (0.1 + 0.2 * i as f64), brow_y));
        }
        let pts = pts
            .into_iter()
            .zip(&self.landmark_jitter)
            .map(|((x, y), (jx, jy))| Point::new(x + jx, y + jy))
            .collect();
        LandmarkSet::new(pts, image_ref)
    }

    fn render(&self, cfg: &SynthConfig, noise_rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
        let (w, h) = (cfg.width, cfg.height);
        let mut blotch_rng = ChaCha8Rng::seed_from_u64(self.blotch_seed);
        let mut blotches = Vec::with_capacity(CHANNELS);
        for _ in 0..CHANNELS {
            let white: Vec<f32> = (0..w * h).map(|_| normal(&mut blotch_rng) as f32).collect();
            blotches.push(raster::blur_plane(&white, w, h, 12.0)?);
        }
        // eyes, mouth, nose: (dx, dy, rx, ry, darkening)
        const FEATURES: [(f64, f64, f64, f64, f64); 4] = [
            (-0.38, -0.2, 0.18, 0.07, 0.5),
            (0.38, -0.2, 0.18, 0.07, 0.5),
            (0.0, 0.45, 0.3, 0.07, 0.6),
            (0.0, 0.12, 0.07, 0.18, 0.85),
        ];
        let mut samples = vec![0.0f32; CHANNELS * w * h];
        for y in 0..h {
            let py = y as f64 + 0.5;
            for x in 0..w {
                let px = x as f64 + 0.5;
                let i = y * w + x;
                let u = (px - self.cx) / self.ax;
                let v = (py - self.cy) / self.ay;
                let r = u * u + v * v;
                let face = ((1.0 - r) * self.ax / 8.0 + 0.5).clamp(0.0, 1.0);
                let shade = 1.0 - 0.25 * u * u;
                let mut dark = 1.0;
                for (fx, fy, rx, ry, d) in FEATURES {
                    let ex = (px - self.cx - fx * self.ax) / (rx * self.ax);
                    let ey = (py - self.cy - fy * self.ay) / (ry * self.ay);
                    let m = ((1.0 - (ex * ex + ey * ey)) * 1.2).clamp(0.0, 1.0);
                    dark *= 1.0 - m * (1.0 - d);
                }
                for c in 0..CHANNELS {
                    let bg = self.base[c]
                        + self.grad[c] * (px / w as f64 - 0.5)
                        + blotches[c][i] as f64 * self.blotch_gain;
                    let skin = self.skin[c] * shade;
                    samples[c * w * h + i] = ((bg * (1.0 - face) + skin * face) * dark) as f32;
                }
            }
        }
        for s in samples.iter_mut() {
            *s += (normal(noise_rng) * self.noise) as f32;
        }
        Ok(ImageBuffer::from_planar_clamped(w, h, samples).quantized())
    }
}

/// `n_videos` videos of `frames_per_video` frames each. Frames of a video
/// share the face layout and differ in pixel noise.
pub fn synth_corpus(n_videos: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SynthFrame>> {
    let mut out = Vec::with_capacity(n_videos * cfg.frames_per_video);
    for v in 0..n_videos {
        out.extend(synth_corpus_video(v, seed, cfg)?);
    }
    Ok(out)
}

/// Frames of video number `v`; independent of the other videos.
pub fn synth_corpus_video(v: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let layout = FaceLayout::draw(&mut rng, cfg);
    let video_id = format!("vid{v:03}");
    (0..cfg.frames_per_video)
        .map(|f| {
            let name = format!("{video_id}_{f:04}.png");
            Ok(SynthFrame {
                video_id: video_id.clone(),
                frame_idx: f as u32,
                image: layout.render(cfg, &mut rng)?,
                landmarks: layout.landmarks(&name)?,
            })
        })
        .collect()
}
