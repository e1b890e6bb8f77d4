//! Real-on-Real probes: the facial region of a real frame is brightened and
//! pasted back through a hard or softened hull mask. Each fake comes with a
//! control whose whole-image brightness is shifted to the same mean.

use serde::{Deserialize, Serialize};

use crate::blend::alpha_blend;
use crate::error::{Error, Result};
use crate::geometry::{self, LandmarkSet, Mask};
use crate::par::Exec;
use crate::raster::{adjust_brightness, ImageBuffer};

pub const DEFAULT_SOFT_SIGMA: f32 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskMode {
    Hard,
    Soft { sigma: f32 },
}

impl MaskMode {
    pub fn soft() -> Self {
        MaskMode::Soft {
            sigma: DEFAULT_SOFT_SIGMA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskMode::Hard => "hard",
            MaskMode::Soft { .. } => "soft",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskMode::Soft { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("soft mask sigma must be positive, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Hull raster, softened in `Soft` mode.
    pub fn mask(&self, landmarks: &LandmarkSet, width: usize, height: usize) -> Result<Mask> {
        let hard = geometry::hull_mask(landmarks, width, height)?;
        match *self {
            MaskMode::Hard => Ok(hard),
            MaskMode::Soft { sigma } => geometry::soften_mask(&hard, sigma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub deltas: Vec<f32>,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            mask_mode: MaskMode::soft(),
            seed: 0,
        }
    }
}

/// 0.0, 0.1, ..., 1.0
pub fn default_deltas() -> Vec<f32> {
    (0..=10).map(|i| i as f32 / 10.0).collect()
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::InvalidParameter("no deltas given".into()));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::InvalidParameter(format!("delta {d} outside [0, 1]")));
        }
        self.mask_mode.validate()
    }
}

/// Sub-dataset name, e.g. `delta_30_hard`.
pub fn subset_name(delta: f32, mode: MaskMode) -> String {
    let pct = delta as f64 * 100.0;
    let rounded = pct.round();
    let pct = if (pct - rounded).abs() < 1e-4 {
        format!("{}", rounded as i64)
    } else {
        format!("{pct:.2}").trim_end_matches('0').to_string()
    };
    format!("delta_{pct}_{}", mode.name())
}

#[derive(Clone, Debug)]
pub struct ProbePair {
    pub fake: ImageBuffer,
    pub matched_real: ImageBuffer,
    pub mask: Mask,
    pub delta: f32,
    pub delta_global: f32,
    pub region_fraction: f64,
}

/// Brightness shift whose global application reproduces `target_mean`.
///
/// Closed form when nothing clips; otherwise the mean is monotone in the
/// shift and a bisection on `[0, upper]` finishes the job.
pub fn match_brightness(img: &ImageBuffer, target_mean: f64, upper: f32) -> f32 {
    const TOL: f64 = 1e-7;
    let base = img.mean();
    if base <= 0.0 || target_mean <= base {
        return 0.0;
    }
    let closed = (target_mean / base - 1.0) as f32;
    let err = |d: f32| adjust_brightness(img, d).mean() - target_mean;
    if err(closed).abs() <= TOL {
        return closed;
    }
    let (mut lo, mut hi) = (0.0f32, upper.max(closed));
    while err(hi) < 0.0 {
        hi = hi * 2.0 + 1.0;
        if hi > 1e6 {
            return hi;
        }
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if err(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if err(lo).abs() <= err(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Brightens the hull region by `delta` and composites it back.
pub fn generate_probe_pair(
    img: &ImageBuffer,
    landmarks: &LandmarkSet,
    delta: f32,
    mode: MaskMode,
) -> Result<ProbePair> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta {delta} outside [0, 1]")));
    }
    mode.validate()?;
    let mask = mode.mask(landmarks, img.width(), img.height())?;
    let fake = alpha_blend(&adjust_brightness(img, delta), img, &mask)?;
    let delta_global = match_brightness(img, fake.mean(), delta);
    Ok(ProbePair {
        matched_real: adjust_brightness(img, delta_global),
        region_fraction: mask.support_fraction(),
        fake,
        mask,
        delta,
        delta_global,
    })
}

#[derive(Clone, Debug)]
pub struct ProbeFrame {
    pub source_id: String,
    pub image: ImageBuffer,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Clone, Debug)]
pub struct ProbeSubset {
    pub name: String,
    pub delta: f32,
    /// One entry per input frame, in input order.
    pub pairs: Vec<std::result::Result<ProbePair, String>>,
}

/// One sub-dataset per delta; frames without landmarks or with bad
/// geometry become per-frame skips.
pub fn generate_probe_dataset(frames: &[ProbeFrame], spec: &ProbeSpec) -> Result<Vec<ProbeSubset>> {
    generate_probe_dataset_with(frames, spec, Exec::default())
}

pub fn generate_probe_dataset_with(
    frames: &[ProbeFrame],
    spec: &ProbeSpec,
    exec: Exec,
) -> Result<Vec<ProbeSubset>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.deltas.len())
        .flat_map(|d| (0..frames.len()).map(move |f| (d, f)))
        .collect();
    let mut results = exec
        .map(&jobs, |&(d, f)| {
            let frame = &frames[f];
            let lm = frame.landmarks.as_ref().ok_or_else(|| "missing landmarks".to_string())?;
            generate_probe_pair(&frame.image, lm, spec.deltas[d], spec.mask_mode).map_err(|e| e.to_string())
        })
        .into_iter();
    Ok(spec
        .deltas
        .iter()
        .map(|&delta| ProbeSubset {
            name: subset_name(delta, spec.mask_mode),
            delta,
            pairs: results.by_ref().take(frames.len()).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(w: usize, h: usize, seed: u64, hi: f32) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| {
            [rng.random_range(0.05..hi), rng.random_range(0.05..hi), rng.random_range(0.05..hi)]
        })
        .unwrap()
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> LandmarkSet {
        LandmarkSet::new(
            vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)],
            "sq",
        )
        .unwrap()
    }

    #[test]
    fn zero_delta_hard_is_bit_exact() {
        let img = noisy(40, 40, 1, 0.9);
        let p = generate_probe_pair(&img, &square(8.0, 8.0, 30.0, 30.0), 0.0, MaskMode::Hard).unwrap();
        assert_eq!(p.fake, img);
        assert_eq!(p.matched_real, img);
        assert_eq!(p.delta_global, 0.0);
    }

    #[test]
    fn full_delta_doubles_inside_only() {
        let img = ImageBuffer::filled(32, 32, [0.3, 0.3, 0.3]).unwrap();
        let p = generate_probe_pair(&img, &square(8.0, 8.0, 24.0, 24.0), 1.0, MaskMode::Hard).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let want = if p.mask.get(x, y) == 1.0 { 0.6 } else { 0.3 };
                assert_eq!(p.fake.get(0, x, y), want);
            }
        }
        assert!((p.region_fraction - 256.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn hard_complement_untouched() {
        let img = noisy(48, 48, 2, 0.9);
        let p = generate_probe_pair(&img, &square(10.0, 12.0, 33.0, 40.0), 0.4, MaskMode::Hard).unwrap();
        for c in 0..3 {
            for (i, &m) in p.mask.values().iter().enumerate() {
                if m == 0.0 {
                    assert_eq!(p.fake.plane(c)[i], img.plane(c)[i]);
                }
            }
        }
    }

    #[test]
    fn soft_edge_pixel_is_half_blend() {
        // Straight vertical edge at x = 60 (between pixel centers 59.5 and 60.5).
        let img = ImageBuffer::filled(120, 120, [0.4, 0.4, 0.4]).unwrap();
        let lm = square(-50.0, -50.0, 60.0, 170.0);
        let p = generate_probe_pair(&img, &lm, 0.5, MaskMode::soft()).unwrap();
        let want = 0.4 * (1.0 + 0.5 * 0.5);
        let at_edge = 0.5 * (p.fake.get(0, 59, 60) + p.fake.get(0, 60, 60));
        assert!((at_edge - want).abs() < 1e-2, "{at_edge} vs {want}");
        assert!((p.fake.get(0, 59, 60) - want).abs() < 1e-2);
    }

    #[test]
    fn soft_mask_has_no_jumps() {
        let img = noisy(64, 64, 3, 0.9);
        let p = generate_probe_pair(&img, &square(12.0, 10.0, 50.0, 54.0), 0.3, MaskMode::soft()).unwrap();
        let (w, h) = p.mask.dims();
        let mut worst = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    worst = worst.max((p.mask.get(x + 1, y) - p.mask.get(x, y)).abs());
                }
                if y + 1 < h {
                    worst = worst.max((p.mask.get(x, y + 1) - p.mask.get(x, y)).abs());
                }
            }
        }
        assert!(worst < 0.2, "{worst}");
    }

    #[test]
    fn matched_real_mean_matches_with_and_without_clipping() {
        for (seed, hi) in [(4, 0.5), (5, 0.95), (6, 1.0)] {
            let img = noisy(48, 48, seed, hi);
            for mode in [MaskMode::Hard, MaskMode::soft()] {
                for d in default_deltas() {
                    let p = generate_probe_pair(&img, &square(6.0, 6.0, 40.0, 44.0), d, mode).unwrap();
                    let diff = (p.fake.mean() - p.matched_real.mean()).abs();
                    assert!(diff <= 1e-3, "seed {seed} delta {d}: {diff}");
                    assert!(diff <= 1e-6, "tight match failed: {diff}");
                }
            }
        }
    }

    #[test]
    fn dataset_has_one_subset_per_delta() {
        let frames: Vec<ProbeFrame> = (0..3)
            .map(|i| ProbeFrame {
                source_id: format!("f{i}"),
                image: noisy(32, 32, i, 0.8),
                landmarks: (i != 1).then(|| square(6.0, 6.0, 26.0, 26.0)),
            })
            .collect();
        let spec = ProbeSpec::default();
        let subsets = generate_probe_dataset(&frames, &spec).unwrap();
        assert_eq!(subsets.len(), 11);
        assert_eq!(subsets[3].name, "delta_30_soft");
        for s in &subsets {
            assert_eq!(s.pairs.len(), 3);
            assert!(s.pairs[1].is_err());
        }
        let seq = generate_probe_dataset_with(&frames, &spec, Exec::Sequential).unwrap();
        for (a, b) in subsets.iter().zip(&seq) {
            assert_eq!(a.pairs[0].as_ref().unwrap().fake, b.pairs[0].as_ref().unwrap().fake);
        }
    }

    #[test]
    fn subset_names() {
        assert_eq!(subset_name(0.0, MaskMode::Hard), "delta_0_hard");
        assert_eq!(subset_name(1.0, MaskMode::Hard), "delta_100_hard");
        assert_eq!(subset_name(0.7, MaskMode::soft()), "delta_70_soft");
        assert_eq!(subset_name(0.125, MaskMode::Hard), "delta_12.5_hard");
    }

    #[test]
    fn spec_validation() {
        let bad = ProbeSpec {
            deltas: vec![1.5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ProbeSpec {
            mask_mode: MaskMode::Soft { sigma: 0.0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
