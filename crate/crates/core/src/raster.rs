//! Planar RGB rasters and the pixel-level primitives the rest of the crate
//! composes: brightness, separable Gaussian blur, bilinear resize, color
//! jitter and the RGB/HSV conversions behind it.
//!
//! Samples are `f32` in `[0, 1]`. Every public operation clamps its output,
//! so an [`ImageBuffer`] always satisfies that range. Quantization to 8 bits
//! only happens at the PNG boundary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Planar RGB image, row-major within each plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    samples: Vec<f32>,
}

impl ImageBuffer {
    /// Builds an image from planar samples (all of R, then G, then B).
    ///
    /// Rejects non-finite or out-of-range samples instead of clamping them,
    /// so callers learn about bad input early.
    pub fn from_planar(width: usize, height: usize, samples: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if samples.len() != width * height * CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} samples for {width}x{height}x3, got {}",
                width * height * CHANNELS,
                samples.len()
            )));
        }
        if let Some(bad) = samples
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Builds an image from interleaved RGB samples.
    pub fn from_interleaved(width: usize, height: usize, rgb: &[f32]) -> Result<Self> {
        if rgb.len() != width * height * CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} interleaved samples, got {}",
                width * height * CHANNELS,
                rgb.len()
            )));
        }
        let n = width * height;
        let mut samples = vec![0.0; rgb.len()];
        for i in 0..n {
            for c in 0..CHANNELS {
                samples[c * n + i] = rgb[i * CHANNELS + c];
            }
        }
        Self::from_planar(width, height, samples)
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Builds an image by evaluating `f(x, y)`; results are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        let mut samples = vec![0.0; n * CHANNELS];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..CHANNELS {
                    samples[c * n + y * width + x] = clamp01(px[c]);
                }
            }
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Wraps planar samples produced by an internal operation, clamping them.
    pub(crate) fn from_planar_clamped(width: usize, height: usize, mut samples: Vec<f32>) -> Self {
        debug_assert_eq!(samples.len(), width * height * CHANNELS);
        samples.iter_mut().for_each(|v| *v = clamp01(*v));
        Self {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.samples[c * self.width * self.height + y * self.width + x]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.get(0, x, y), self.get(1, x, y), self.get(2, x, y)]
    }

    /// Interleaved copy (`h × w × 3`).
    pub fn to_interleaved(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; n * CHANNELS];
        for i in 0..n {
            for c in 0..CHANNELS {
                out[i * CHANNELS + c] = self.samples[c * n + i];
            }
        }
        out
    }

    /// Mean over all samples of all channels, accumulated in `f64`.
    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|&v| v as f64).sum::<f64>() / self.samples.len() as f64
    }

    pub fn map_planes(&self, mut f: impl FnMut(&[f32]) -> Vec<f32>) -> Self {
        let mut samples = Vec::with_capacity(self.samples.len());
        for c in 0..CHANNELS {
            samples.extend(f(self.plane(c)));
        }
        Self::from_planar_clamped(self.width, self.height, samples)
    }

    /// Crops the half-open pixel rectangle `[x0, x1) × [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::DegenerateGeometry(format!(
                "crop [{x0},{x1})x[{y0},{y1}) invalid for {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (x1 - x0, y1 - y0);
        let mut samples = Vec::with_capacity(w * h * CHANNELS);
        for c in 0..CHANNELS {
            let plane = self.plane(c);
            for y in y0..y1 {
                samples.extend_from_slice(&plane[y * self.width + x0..y * self.width + x1]);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            samples,
        })
    }

    // -- PNG boundary ------------------------------------------------------

    /// 8-bit interleaved RGB, quantized as `round(255 x)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.to_interleaved().into_iter().map(quantize).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let f: Vec<f32> = rgb.iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_interleaved(width, height, &f)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        Self::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ::image::save_buffer_with_format(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::Rgb8,
            ::image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Quantizes through 8 bits and back, i.e. what a PNG round trip yields.
    pub fn quantized(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|&v| quantize(v) as f32 / 255.0)
            .collect();
        Self {
            width: self.width,
            height: self.height,
            samples,
        }
    }
}

pub(crate) fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

// -- brightness ------------------------------------------------------------

/// Multiplies every sample by `1 + delta` and clamps.
pub fn adjust_brightness(img: &ImageBuffer, delta: f32) -> ImageBuffer {
    let scale = 1.0 + delta;
    let samples = img.samples.iter().map(|&v| v * scale).collect();
    ImageBuffer::from_planar_clamped(img.width, img.height, samples)
}

// -- Gaussian blur ---------------------------------------------------------

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| (w / total) as f32).collect())
}

/// Separable Gaussian blur of a single plane with clamp-to-edge borders.
///
/// Output is not clamped; planes may hold signed values (pyramid bands).
pub fn blur_plane(src: &[f32], width: usize, height: usize, sigma: f32) -> Result<Vec<f32>> {
    let kernel = gaussian_kernel(sigma)?;
    Ok(convolve_separable(src, width, height, &kernel))
}

pub(crate) fn convolve_separable(
    src: &[f32],
    width: usize,
    height: usize,
    kernel: &[f32],
) -> Vec<f32> {
    debug_assert_eq!(src.len(), width * height);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);

    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (k, &wk) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w - 1) as usize;
                acc += wk * row[sx];
            }
            *o = acc;
        }
    }

    let mut dst = vec![0.0f32; src.len()];
    for y in 0..height {
        for (k, &wk) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h - 1) as usize;
            let src_row = &tmp[sy * width..(sy + 1) * width];
            let dst_row = &mut dst[y * width..(y + 1) * width];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += wk * s;
            }
        }
    }
    dst
}

pub fn gaussian_blur(img: &ImageBuffer, sigma: f32) -> Result<ImageBuffer> {
    let kernel = gaussian_kernel(sigma)?;
    Ok(img.map_planes(|p| convolve_separable(p, img.width, img.height, &kernel)))
}

// -- bilinear sampling / resize -------------------------------------------

/// Bilinear sample at continuous pixel-index coordinates (centers at
/// integers), clamp-to-edge outside the raster.
#[inline]
pub fn sample_bilinear(plane: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let p00 = plane[y0 * width + x0];
    let p10 = plane[y0 * width + x1];
    let p01 = plane[y1 * width + x0];
    let p11 = plane[y1 * width + x1];
    let top = p00 * (1.0 - fx) + p10 * fx;
    let bottom = p01 * (1.0 - fx) + p11 * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn resize_plane_bilinear(
    src: &[f32],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
) -> Result<Vec<f32>> {
    check_dims(out_w, out_h)?;
    let sx = width as f64 / out_w as f64;
    let sy = height as f64 / out_h as f64;
    let xs: Vec<f64> = (0..out_w).map(|x| (x as f64 + 0.5) * sx - 0.5).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        out.extend(xs.iter().map(|&fx| sample_bilinear(src, width, height, fx, fy)));
    }
    Ok(out)
}

/// Bilinear resize with half-pixel-center coordinate mapping.
pub fn resize_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    check_dims(out_w, out_h)?;
    let mut samples = Vec::with_capacity(out_w * out_h * CHANNELS);
    for c in 0..CHANNELS {
        samples.extend(resize_plane_bilinear(
            img.plane(c),
            img.width,
            img.height,
            out_w,
            out_h,
        )?);
    }
    Ok(ImageBuffer::from_planar_clamped(out_w, out_h, samples))
}

// -- HSV -------------------------------------------------------------------

/// HSV raster: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub hue: Vec<f32>,
    pub saturation: Vec<f32>,
    pub value: Vec<f32>,
}

pub fn rgb_to_hsv_pixel([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let hue = if chroma <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let sat = if max <= 0.0 { 0.0 } else { chroma / max };
    [hue.rem_euclid(360.0), sat, max]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn rgb_to_hsv(img: &ImageBuffer) -> HsvImage {
    let n = img.width * img.height;
    let mut hsv = HsvImage {
        width: img.width,
        height: img.height,
        hue: Vec::with_capacity(n),
        saturation: Vec::with_capacity(n),
        value: Vec::with_capacity(n),
    };
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    for i in 0..n {
        let [h, s, v] = rgb_to_hsv_pixel([r[i], g[i], b[i]]);
        hsv.hue.push(h);
        hsv.saturation.push(s);
        hsv.value.push(v);
    }
    hsv
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> ImageBuffer {
    let n = hsv.width * hsv.height;
    let mut samples = vec![0.0; n * CHANNELS];
    for i in 0..n {
        let rgb = hsv_to_rgb_pixel([hsv.hue[i], hsv.saturation[i], hsv.value[i]]);
        for c in 0..CHANNELS {
            samples[c * n + i] = rgb[c];
        }
    }
    ImageBuffer::from_planar_clamped(hsv.width, hsv.height, samples)
}

// -- color jitter ----------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness_delta: f32,
    pub contrast_delta: f32,
    /// Degrees.
    pub hue_shift: f32,
    pub saturation_delta: f32,
}

impl ColorJitter {
    pub const MAX_BRIGHTNESS: f32 = 0.3;
    pub const MAX_CONTRAST: f32 = 0.3;
    pub const MAX_HUE: f32 = 18.0;
    pub const MAX_SATURATION: f32 = 0.3;

    /// The widest admissible jitter, used as default sampling bounds.
    pub fn max_bounds() -> Self {
        Self {
            brightness_delta: Self::MAX_BRIGHTNESS,
            contrast_delta: Self::MAX_CONTRAST,
            hue_shift: Self::MAX_HUE,
            saturation_delta: Self::MAX_SATURATION,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f32, max: f32| {
            if v.is_finite() && v.abs() <= max {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside [-{max}, {max}]"
                )))
            }
        };
        check("brightness_delta", self.brightness_delta, Self::MAX_BRIGHTNESS)?;
        check("contrast_delta", self.contrast_delta, Self::MAX_CONTRAST)?;
        check("hue_shift", self.hue_shift, Self::MAX_HUE)?;
        check("saturation_delta", self.saturation_delta, Self::MAX_SATURATION)
    }
}

fn mean_luminance(img: &ImageBuffer) -> f32 {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let sum: f64 = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .sum();
    (sum / r.len() as f64) as f32
}

/// Brightness, then contrast about the mean luminance, then hue/saturation
/// in HSV. Stages with a zero delta are skipped, so the zero jitter is an
/// exact identity.
pub fn apply_color_jitter(img: &ImageBuffer, jitter: &ColorJitter) -> Result<ImageBuffer> {
    jitter.validate()?;
    let mut out = if jitter.brightness_delta != 0.0 {
        adjust_brightness(img, jitter.brightness_delta)
    } else {
        img.clone()
    };

    if jitter.contrast_delta != 0.0 {
        let pivot = mean_luminance(&out);
        let gain = 1.0 + jitter.contrast_delta;
        out.samples
            .iter_mut()
            .for_each(|v| *v = clamp01((*v - pivot) * gain + pivot));
    }

    if jitter.hue_shift != 0.0 || jitter.saturation_delta != 0.0 {
        let mut hsv = rgb_to_hsv(&out);
        let sat_gain = 1.0 + jitter.saturation_delta;
        for h in hsv.hue.iter_mut() {
            *h = (*h + jitter.hue_shift).rem_euclid(360.0);
        }
        for s in hsv.saturation.iter_mut() {
            *s = clamp01(*s * sat_gain);
        }
        out = hsv_to_rgb(&hsv);
    }
    Ok(out)
}
