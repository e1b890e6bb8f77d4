//! Self-blended images: a real face composited with a transformed copy of
//! itself through a deformed, softened hull mask.
//!
//! Generation is split in two steps. [`SbiDraw::sample`] turns a seed into
//! concrete parameter values, and [`render_sbi`] applies a draw. The draw is
//! stored next to every sample so it can be re-rendered bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blend::alpha_blend;
use crate::error::{Error, Result};
use crate::geometry::{self, LandmarkSet, Mask};
use crate::par::Exec;
use crate::raster::{self, ColorJitter, ImageBuffer, CHANNELS};

/// Closed sampling interval `[lo, hi]`; `lo == hi` pins the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 2]", into = "[f32; 2]")]
pub struct Interval {
    pub lo: f32,
    pub hi: f32,
}

impl Interval {
    pub const fn new(lo: f32, hi: f32) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f32) -> Self {
        Self { lo: v, hi: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidParameter(format!(
                "{name}: empty or non-finite range [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f32 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl From<[f32; 2]> for Interval {
    fn from([lo, hi]: [f32; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f32; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbiParams {
    /// Per-field magnitude bounds; each field is drawn from `[-b, b]`.
    pub jitter_bounds: ColorJitter,
    pub resize_frac: Interval,
    /// Pixels, drawn independently per axis.
    pub translate_px: Interval,
    pub deform_amplitude: Interval,
    pub deform_field_sigma: f32,
    /// A drawn sigma of 0 leaves the mask hard.
    pub mask_blur_sigma: Interval,
    pub blend_ratios: Vec<f32>,
}

impl Default for SbiParams {
    fn default() -> Self {
        Self {
            jitter_bounds: ColorJitter::max_bounds(),
            resize_frac: Interval::new(0.95, 1.05),
            translate_px: Interval::new(-8.0, 8.0),
            deform_amplitude: Interval::new(0.0, 6.0),
            deform_field_sigma: 8.0,
            mask_blur_sigma: Interval::new(3.0, 15.0),
            blend_ratios: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl SbiParams {
    /// Every draw is the identity: the output equals the input.
    pub fn identity() -> Self {
        Self {
            jitter_bounds: ColorJitter::default(),
            resize_frac: Interval::fixed(1.0),
            translate_px: Interval::fixed(0.0),
            deform_amplitude: Interval::fixed(0.0),
            deform_field_sigma: 8.0,
            mask_blur_sigma: Interval::fixed(0.0),
            blend_ratios: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.jitter_bounds;
        ColorJitter {
            brightness_delta: b.brightness_delta.abs(),
            contrast_delta: b.contrast_delta.abs(),
            hue_shift: b.hue_shift.abs(),
            saturation_delta: b.saturation_delta.abs(),
        }
        .validate()?;
        self.resize_frac.check("resize_frac")?;
        self.translate_px.check("translate_px")?;
        self.deform_amplitude.check("deform_amplitude")?;
        self.mask_blur_sigma.check("mask_blur_sigma")?;
        if self.resize_frac.lo <= 0.0 {
            return Err(Error::InvalidParameter("resize_frac must be positive".into()));
        }
        if self.deform_amplitude.lo < 0.0 || self.mask_blur_sigma.lo < 0.0 {
            return Err(Error::InvalidParameter(
                "deform_amplitude and mask_blur_sigma must be non-negative".into(),
            ));
        }
        if !(self.deform_field_sigma > 0.0) {
            return Err(Error::InvalidParameter("deform_field_sigma must be positive".into()));
        }
        if self.blend_ratios.is_empty()
            || self.blend_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0))
        {
            return Err(Error::InvalidParameter(
                "blend_ratios must be a non-empty subset of (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterTarget {
    Source,
    Target,
}

/// Concrete parameter values for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbiDraw {
    pub seed: u64,
    pub jitter_target: JitterTarget,
    pub jitter: ColorJitter,
    pub resize_frac: f32,
    pub translate: [f32; 2],
    pub deform_amplitude: f32,
    pub deform_field_sigma: f32,
    pub deform_seed: u64,
    pub mask_blur_sigma: f32,
    pub blend_ratio: f32,
}

impl SbiDraw {
    pub fn sample(params: &SbiParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter_target = if rng.random::<bool>() {
            JitterTarget::Source
        } else {
            JitterTarget::Target
        };
        let b = &params.jitter_bounds;
        let mut sym = |bound: f32| Interval::new(-bound.abs(), bound.abs()).sample(&mut rng);
        let jitter = ColorJitter {
            brightness_delta: sym(b.brightness_delta),
            contrast_delta: sym(b.contrast_delta),
            hue_shift: sym(b.hue_shift),
            saturation_delta: sym(b.saturation_delta),
        };
        let resize_frac = params.resize_frac.sample(&mut rng);
        let translate = [
            params.translate_px.sample(&mut rng),
            params.translate_px.sample(&mut rng),
        ];
        let deform_amplitude = params.deform_amplitude.sample(&mut rng);
        let mask_blur_sigma = params.mask_blur_sigma.sample(&mut rng);
        let blend_ratio = params.blend_ratios[rng.random_range(0..params.blend_ratios.len())];
        let deform_seed = rng.random();
        Ok(Self {
            seed,
            jitter_target,
            jitter,
            resize_frac,
            translate,
            deform_amplitude,
            deform_field_sigma: params.deform_field_sigma,
            deform_seed,
            mask_blur_sigma,
            blend_ratio,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SbiSample {
    pub image: ImageBuffer,
    pub mask_used: Mask,
    pub param_record: SbiDraw,
    pub source_id: String,
}

/// Scales about the image center by `frac` and shifts by `translate`,
/// resampling bilinearly with clamp-to-edge.
pub fn warp_scale_translate(img: &ImageBuffer, frac: f32, translate: [f32; 2]) -> ImageBuffer {
    if frac == 1.0 && translate == [0.0, 0.0] {
        return img.clone();
    }
    let (w, h) = img.dims();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let s = frac as f64;
    let (tx, ty) = (translate[0] as f64, translate[1] as f64);
    let mut samples = Vec::with_capacity(w * h * CHANNELS);
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        for y in 0..h {
            let sy = (y as f64 + 0.5 - cy - ty) / s + cy - 0.5;
            for x in 0..w {
                let sx = (x as f64 + 0.5 - cx - tx) / s + cx - 0.5;
                samples.push(raster::sample_bilinear(plane, w, h, sx, sy));
            }
        }
    }
    ImageBuffer::from_planar_clamped(w, h, samples)
}

/// Builds the blend mask for a draw: hull → elastic warp → blur → ratio.
pub fn sbi_mask(landmarks: &LandmarkSet, width: usize, height: usize, draw: &SbiDraw) -> Result<Mask> {
    let mut mask = geometry::hull_mask(landmarks, width, height)?;
    mask = geometry::elastic_deform_mask(&mask, draw.deform_seed, draw.deform_amplitude, draw.deform_field_sigma)?;
    if draw.mask_blur_sigma > 0.0 {
        mask = geometry::soften_mask(&mask, draw.mask_blur_sigma)?;
    }
    if draw.blend_ratio != 1.0 {
        mask = mask.scaled(draw.blend_ratio);
    }
    Ok(mask)
}

/// Applies a draw to a real face crop.
pub fn render_sbi(real: &ImageBuffer, landmarks: &LandmarkSet, draw: &SbiDraw) -> Result<SbiSample> {
    let jittered = raster::apply_color_jitter(real, &draw.jitter)?;
    let (source, target) = match draw.jitter_target {
        JitterTarget::Source => (jittered, real.clone()),
        JitterTarget::Target => (real.clone(), jittered),
    };
    let source = warp_scale_translate(&source, draw.resize_frac, draw.translate);
    let mask = sbi_mask(landmarks, real.width(), real.height(), draw)?;
    let image = alpha_blend(&source, &target, &mask)?;
    Ok(SbiSample {
        image,
        mask_used: mask,
        param_record: draw.clone(),
        source_id: landmarks.image_ref().to_string(),
    })
}

/// Draws parameters from `seed` and renders one pseudo-fake.
pub fn generate_sbi(real: &ImageBuffer, landmarks: &LandmarkSet, params: &SbiParams, seed: u64) -> Result<SbiSample> {
    let draw = SbiDraw::sample(params, seed)?;
    render_sbi(real, landmarks, &draw)
}

// -- batch -----------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed from the batch seed and the sample's identity; stable
/// under reordering of the batch.
pub fn sample_seed(base_seed: u64, source_id: &str) -> u64 {
    // FNV-1a over the id bytes, then two SplitMix rounds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in source_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(base_seed) ^ h)
}

#[derive(Clone, Debug)]
pub struct SbiSource {
    pub source_id: String,
    pub image: ImageBuffer,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Clone, Debug)]
pub enum SbiOutcome {
    Generated(Box<SbiSample>),
    Skipped { source_id: String, reason: String },
}

impl SbiOutcome {
    pub fn source_id(&self) -> &str {
        match self {
            SbiOutcome::Generated(s) => &s.source_id,
            SbiOutcome::Skipped { source_id, .. } => source_id,
        }
    }
}

/// One batch item: missing landmarks or geometry failures become skips.
pub fn generate_one(
    source_id: &str,
    image: &ImageBuffer,
    landmarks: Option<&LandmarkSet>,
    params: &SbiParams,
    base_seed: u64,
) -> SbiOutcome {
    let skip = |reason: String| SbiOutcome::Skipped {
        source_id: source_id.to_string(),
        reason,
    };
    let Some(landmarks) = landmarks else {
        return skip("missing landmarks".into());
    };
    match generate_sbi(image, landmarks, params, sample_seed(base_seed, source_id)) {
        Ok(mut s) => {
            s.source_id = source_id.to_string();
            SbiOutcome::Generated(Box::new(s))
        }
        Err(e) => skip(e.to_string()),
    }
}

/// One pseudo-fake per source, in input order.
pub fn generate_sbi_batch(sources: &[SbiSource], params: &SbiParams, base_seed: u64) -> Result<Vec<SbiOutcome>> {
    generate_sbi_batch_with(sources, params, base_seed, Exec::default())
}

pub fn generate_sbi_batch_with(
    sources: &[SbiSource],
    params: &SbiParams,
    base_seed: u64,
    exec: Exec,
) -> Result<Vec<SbiOutcome>> {
    params.validate()?;
    Ok(exec.map(sources, |s| {
        generate_one(&s.source_id, &s.image, s.landmarks.as_ref(), params, base_seed)
    }))
}
