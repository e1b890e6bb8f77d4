//! Landmarks, convex-hull face masks, mask softening/deformation and the
//! face-crop geometry.
//!
//! Coordinates are continuous pixel coordinates: pixel `(i, j)` covers
//! `[i, i+1) × [j, j+1)` and its center sits at `(i + 0.5, j + 0.5)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, ImageBuffer};

const EDGE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// z-component of `(a - o) × (b - o)`; positive when `o, a, b` turn left
/// in the math orientation.
#[inline]
pub fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Ordered facial keypoints for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    image_ref: String,
}

impl LandmarkSet {
    /// Requires at least three finite, non-collinear points.
    pub fn new(points: Vec<Point>, image_ref: impl Into<String>) -> Result<Self> {
        let image_ref = image_ref.into();
        if points.len() < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "{image_ref}: need at least 3 landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{image_ref}: non-finite landmark coordinate"
            )));
        }
        // Validates non-collinearity.
        convex_hull_points(&points)?;
        Ok(Self { points, image_ref })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn image_ref(&self) -> &str {
        &self.image_ref
    }

    /// Indices of points that fall outside a `width × height` raster.
    pub fn out_of_bounds(&self, width: usize, height: usize) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.x < 0.0 || p.y < 0.0 || p.x > width as f64 || p.y > height as f64)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Self> {
        Self::new(self.points.iter().copied().map(f).collect(), self.image_ref.clone())
    }
}

// -- convex hull -----------------------------------------------------------

/// Andrew's monotone chain. Returns the hull counter-clockwise in math
/// orientation (clockwise on screen, where y grows downward), starting from
/// the lowest-x point, without duplicates or collinear boundary points.
pub fn convex_hull_points(points: &[Point]) -> Result<Vec<Point>> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry(
            "fewer than 3 distinct points".into(),
        ));
    }

    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }
    Ok(hull)
}

pub fn convex_hull(landmarks: &LandmarkSet) -> Result<Vec<Point>> {
    convex_hull_points(landmarks.points())
}

// -- masks -----------------------------------------------------------------

/// Single-channel raster in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        raster::check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "mask expects {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidInput("mask value outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        raster::check_dims(width, height)?;
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(raster::clamp01(f(x, y)));
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub(crate) fn from_values_clamped(width: usize, height: usize, mut values: Vec<f32>) -> Self {
        values.iter_mut().for_each(|v| *v = raster::clamp01(*v));
        Self {
            width,
            height,
            values,
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

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_hard(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Sum of mask values.
    pub fn area(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Fraction of pixels with a non-zero value.
    pub fn support_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.0).count() as f64 / self.values.len() as f64
    }

    /// Multiplies by `ratio` and clamps.
    pub fn scaled(&self, ratio: f32) -> Self {
        Self::from_values_clamped(
            self.width,
            self.height,
            self.values.iter().map(|&v| v * ratio).collect(),
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.values.iter().map(|&v| raster::quantize(v)).collect();
        ::image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::L8,
            ::image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ::image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, img.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
    }
}

// -- rasterization ---------------------------------------------------------

/// Even-odd scanline fill evaluated at pixel centers; centers on the
/// boundary count as inside.
pub fn rasterize_polygon(polygon: &[Point], width: usize, height: usize) -> Result<Mask> {
    raster::check_dims(width, height)?;
    if polygon.is_empty() {
        return Err(Error::DegenerateGeometry("empty polygon".into()));
    }
    let n = polygon.len();
    let mut values = vec![0.0f32; width * height];
    let mut crossings: Vec<f64> = Vec::new();
    let mut spans: Vec<(f64, f64)> = Vec::new();

    for j in 0..height {
        let yc = j as f64 + 0.5;
        crossings.clear();
        spans.clear();
        for i in 0..n {
            let a = polygon[i];
            let b = polygon[(i + 1) % n];
            if a.y == b.y {
                if (a.y - yc).abs() <= EDGE_EPS {
                    spans.push((a.x.min(b.x), a.x.max(b.x)));
                }
                continue;
            }
            let (lo, hi) = (a.y.min(b.y), a.y.max(b.y));
            if yc < lo - EDGE_EPS || yc > hi + EDGE_EPS {
                continue;
            }
            let x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
            // Boundary points, including vertices the half-open rule skips.
            spans.push((x, x));
            if (a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y) {
                crossings.push(x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        spans.extend(crossings.chunks_exact(2).map(|p| (p[0], p[1])));

        let row = &mut values[j * width..(j + 1) * width];
        for &(lo, hi) in &spans {
            let first = (lo - EDGE_EPS - 0.5).ceil().max(0.0);
            let last = (hi + EDGE_EPS - 0.5).floor().min(width as f64 - 1.0);
            if first > last {
                continue;
            }
            for v in &mut row[first as usize..=last as usize] {
                *v = 1.0;
            }
        }
    }
    Ok(Mask {
        width,
        height,
        values,
    })
}

/// Convex hull of the landmarks, rasterized.
pub fn hull_mask(landmarks: &LandmarkSet, width: usize, height: usize) -> Result<Mask> {
    rasterize_polygon(&convex_hull(landmarks)?, width, height)
}

pub fn soften_mask(mask: &Mask, sigma: f32) -> Result<Mask> {
    let values = raster::blur_plane(&mask.values, mask.width, mask.height, sigma)?;
    Ok(Mask::from_values_clamped(mask.width, mask.height, values))
}

/// Warps the mask by a smooth random displacement field: uniform white
/// noise per axis, blurred by `field_sigma`, rescaled so the largest
/// component magnitude equals `amplitude`, then resampled bilinearly.
pub fn elastic_deform_mask(mask: &Mask, seed: u64, amplitude: f32, field_sigma: f32) -> Result<Mask> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "deformation amplitude must be >= 0, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(mask.clone());
    }
    let (w, h) = mask.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || -> Vec<f32> { (0..w * h).map(|_| rng.random_range(-1.0f32..=1.0)).collect() };
    let raw_dx = noise();
    let raw_dy = noise();
    let dx = raster::blur_plane(&raw_dx, w, h, field_sigma)?;
    let dy = raster::blur_plane(&raw_dy, w, h, field_sigma)?;

    let peak = dx
        .iter()
        .chain(&dy)
        .fold(0.0f32, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(mask.clone());
    }
    let gain = (amplitude / peak) as f64;

    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + gain * dx[i] as f64;
            let sy = y as f64 + gain * dy[i] as f64;
            values.push(raster::sample_bilinear(&mask.values, w, h, sx, sy));
        }
    }
    Ok(Mask::from_values_clamped(w, h, values))
}

// -- face box and crop -----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FaceBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "face box ({x0}, {y0})-({x1}, {y1}) is degenerate"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Axis-aligned bounding box of the landmarks.
    pub fn from_landmarks(landmarks: &LandmarkSet) -> Result<Self> {
        let pts = landmarks.points();
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&Point) -> f64| {
            pts.iter().map(sel).fold(init, f)
        };
        Self::new(
            fold(f64::min, f64::INFINITY, |p| p.x),
            fold(f64::min, f64::INFINITY, |p| p.y),
            fold(f64::max, f64::NEG_INFINITY, |p| p.x),
            fold(f64::max, f64::NEG_INFINITY, |p| p.y),
        )
    }

    /// Scaled about its center by `margin`.
    pub fn expanded(&self, margin: f64) -> Self {
        let cx = 0.5 * (self.x0 + self.x1);
        let cy = 0.5 * (self.y0 + self.y1);
        let hw = 0.5 * (self.x1 - self.x0) * margin;
        let hh = 0.5 * (self.y1 - self.y0) * margin;
        Self {
            x0: cx - hw,
            y0: cy - hh,
            x1: cx + hw,
            y1: cy + hh,
        }
    }
}

/// Integer crop window plus the output size it is resized to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl CropRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    /// Maps a source-image coordinate into the resized crop.
    pub fn map_point(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.x0 as f64) * self.out_w as f64 / self.width() as f64,
            (p.y - self.y0 as f64) * self.out_h as f64 / self.height() as f64,
        )
    }
}

/// Expands `face` by `margin`, clamps it to the image and snaps outward to
/// whole pixels.
pub fn crop_rect(
    face: &FaceBox,
    img_w: usize,
    img_h: usize,
    margin: f64,
    out: usize,
) -> Result<CropRect> {
    if !(margin > 0.0) {
        return Err(Error::InvalidParameter(format!("margin must be positive, got {margin}")));
    }
    raster::check_dims(out, out)?;
    let b = face.expanded(margin);
    let x0 = b.x0.max(0.0).floor() as usize;
    let y0 = b.y0.max(0.0).floor() as usize;
    let x1 = b.x1.min(img_w as f64).ceil().max(0.0) as usize;
    let y1 = b.y1.min(img_h as f64).ceil().max(0.0) as usize;
    if x1 <= x0 || y1 <= y0 || x0 >= img_w || y0 >= img_h {
        return Err(Error::DegenerateGeometry(format!(
            "face box does not intersect the {img_w}x{img_h} image"
        )));
    }
    Ok(CropRect {
        x0,
        y0,
        x1: x1.min(img_w),
        y1: y1.min(img_h),
        out_w: out,
        out_h: out,
    })
}

/// Enlarges the face box by `margin`, clamps to the image, crops and
/// resizes to `out × out`.
pub fn expand_and_crop(img: &ImageBuffer, face: &FaceBox, margin: f64, out: usize) -> Result<ImageBuffer> {
    let rect = crop_rect(face, img.width(), img.height(), margin, out)?;
    apply_crop(img, &rect)
}

pub fn apply_crop(img: &ImageBuffer, rect: &CropRect) -> Result<ImageBuffer> {
    let cropped = img.crop(rect.x0, rect.y0, rect.x1, rect.y1)?;
    raster::resize_bilinear(&cropped, rect.out_w, rect.out_h)
}

/// Crops a frame around its landmarks and carries the landmarks along.
pub fn crop_face(
    img: &ImageBuffer,
    landmarks: &LandmarkSet,
    margin: f64,
    out: usize,
) -> Result<(ImageBuffer, LandmarkSet, CropRect)> {
    let face = FaceBox::from_landmarks(landmarks)?;
    let rect = crop_rect(&face, img.width(), img.height(), margin, out)?;
    let crop = apply_crop(img, &rect)?;
    let mapped = landmarks.map(|p| rect.map_point(p))?;
    Ok((crop, mapped, rect))
}

// -- landmark file ---------------------------------------------------------

/// `{ "frames": { "<filename>": [[x, y], ...] } }`
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub frames: BTreeMap<String, Vec<Point>>,
}

impl LandmarkFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("landmarks serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Looks up a frame by its exact key, falling back to the file name.
    pub fn lookup(&self, frame: &str) -> Option<Result<LandmarkSet>> {
        let key = if self.frames.contains_key(frame) {
            frame.to_string()
        } else {
            Path::new(frame).file_name()?.to_str()?.to_string()
        };
        let pts = self.frames.get(&key)?;
        Some(LandmarkSet::new(pts.clone(), key))
    }
}
