//! Compositing back-ends: alpha blending, Laplacian-pyramid blending and
//! Poisson (gradient-domain) blending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mask;
use crate::par::Exec;
use crate::raster::{self, ImageBuffer, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BlendMode {
    Alpha,
    LaplacianPyramid { levels: usize },
    Poisson(PoissonParams),
}

impl BlendMode {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        match *self {
            BlendMode::Alpha => Ok(()),
            BlendMode::LaplacianPyramid { levels } => check_levels(levels, width, height),
            BlendMode::Poisson(p) => p.validate(),
        }
    }
}

/// Composites `fg` over `bg` through `mask` with the selected back-end.
pub fn blend(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask, mode: &BlendMode) -> Result<ImageBuffer> {
    match *mode {
        BlendMode::Alpha => alpha_blend(fg, bg, mask),
        BlendMode::LaplacianPyramid { levels } => laplacian_blend(fg, bg, mask, levels),
        BlendMode::Poisson(params) => poisson_blend(fg, bg, mask, &params).map(|o| o.image),
    }
}

fn check_shapes(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask) -> Result<()> {
    if fg.dims() != bg.dims() || fg.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "fg {:?}, bg {:?} and mask {:?} must share dimensions",
            fg.dims(),
            bg.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

// -- alpha -----------------------------------------------------------------

/// `out = M ⊙ fg + (1 − M) ⊙ bg`, per sample.
pub fn alpha_blend(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask) -> Result<ImageBuffer> {
    check_shapes(fg, bg, mask)?;
    let m = mask.values();
    let mut samples = Vec::with_capacity(fg.samples().len());
    for c in 0..CHANNELS {
        samples.extend(
            fg.plane(c)
                .iter()
                .zip(bg.plane(c))
                .zip(m)
                .map(|((&f, &b), &a)| a * f + (1.0 - a) * b),
        );
    }
    Ok(ImageBuffer::from_planar_clamped(fg.width(), fg.height(), samples))
}

// -- Laplacian pyramid -----------------------------------------------------

const PYRAMID_SIGMA: f32 = 1.0;

/// Deepest pyramid allowed for a raster: `floor(log2(min(w, h)))`, at least 1.
pub fn max_levels(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    (usize::BITS - 1 - m.leading_zeros()).max(1) as usize
}

fn check_levels(levels: usize, width: usize, height: usize) -> Result<()> {
    let max = max_levels(width, height);
    if levels == 0 || levels > max {
        return Err(Error::InvalidParameter(format!(
            "pyramid levels must be in 1..={max} for {width}x{height}, got {levels}"
        )));
    }
    Ok(())
}

/// A single-channel plane with its dimensions; values are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }
}

/// Blur with σ = 1, then keep even rows and columns.
pub fn pyr_down(p: &Plane) -> Plane {
    let blurred = raster::blur_plane(&p.data, p.width, p.height, PYRAMID_SIGMA)
        .expect("fixed positive sigma");
    let (w2, h2) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut data = Vec::with_capacity(w2 * h2);
    for y in (0..p.height).step_by(2) {
        for x in (0..p.width).step_by(2) {
            data.push(blurred[y * p.width + x]);
        }
    }
    Plane::new(w2, h2, data)
}

/// Zero-stuff into `width × height`, blur with σ = 1, gain 4.
pub fn pyr_up(p: &Plane, width: usize, height: usize) -> Plane {
    let mut stuffed = vec![0.0f32; width * height];
    for y in 0..p.height {
        for x in 0..p.width {
            if 2 * x < width && 2 * y < height {
                stuffed[2 * y * width + 2 * x] = p.data[y * p.width + x];
            }
        }
    }
    let blurred = raster::blur_plane(&stuffed, width, height, PYRAMID_SIGMA)
        .expect("fixed positive sigma");
    Plane::new(width, height, blurred.into_iter().map(|v| 4.0 * v).collect())
}

pub fn gaussian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = Vec::with_capacity(levels);
    out.push(base);
    while out.len() < levels {
        let next = pyr_down(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Band-pass levels followed by the low-pass residual; `levels == 1` is the
/// plane itself.
pub fn laplacian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let gauss = gaussian_pyramid(base, levels);
    let mut bands = Vec::with_capacity(levels);
    for i in 0..levels - 1 {
        let up = pyr_up(&gauss[i + 1], gauss[i].width, gauss[i].height);
        let data = gauss[i].data.iter().zip(&up.data).map(|(g, u)| g - u).collect();
        bands.push(Plane::new(gauss[i].width, gauss[i].height, data));
    }
    bands.push(gauss[levels - 1].clone());
    bands
}

pub fn collapse_pyramid(bands: &[Plane]) -> Plane {
    let mut cur = bands.last().expect("non-empty pyramid").clone();
    for band in bands.iter().rev().skip(1) {
        let up = pyr_up(&cur, band.width, band.height);
        let data = band.data.iter().zip(&up.data).map(|(b, u)| b + u).collect();
        cur = Plane::new(band.width, band.height, data);
    }
    cur
}

/// Multiresolution spline: blend Laplacian bands of `fg`/`bg` with the
/// Gaussian pyramid of the mask, then collapse.
pub fn laplacian_blend(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask, levels: usize) -> Result<ImageBuffer> {
    check_shapes(fg, bg, mask)?;
    let (w, h) = fg.dims();
    check_levels(levels, w, h)?;
    let mask_pyr = gaussian_pyramid(Plane::new(w, h, mask.values().to_vec()), levels);

    let mut samples = Vec::with_capacity(w * h * CHANNELS);
    for c in 0..CHANNELS {
        let lf = laplacian_pyramid(Plane::new(w, h, fg.plane(c).to_vec()), levels);
        let lb = laplacian_pyramid(Plane::new(w, h, bg.plane(c).to_vec()), levels);
        let blended: Vec<Plane> = lf
            .iter()
            .zip(&lb)
            .zip(&mask_pyr)
            .map(|((f, b), m)| {
                let data = f
                    .data
                    .iter()
                    .zip(&b.data)
                    .zip(&m.data)
                    .map(|((&f, &b), &a)| a * f + (1.0 - a) * b)
                    .collect();
                Plane::new(f.width, f.height, data)
            })
            .collect();
        samples.extend(collapse_pyramid(&blended).data);
    }
    Ok(ImageBuffer::from_planar_clamped(w, h, samples))
}

// -- Poisson ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    /// Relative residual `‖r‖ / ‖b‖` at which CG stops.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10·sqrt(unknowns) + 1000`.
    pub max_iters: Option<usize>,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iters: None,
        }
    }
}

impl PoissonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "poisson tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::InvalidParameter("poisson max_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, unknowns: usize) -> usize {
        self.max_iters
            .unwrap_or_else(|| (10.0 * (unknowns as f64).sqrt()) as usize + 1000)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct PoissonOutput {
    pub image: ImageBuffer,
    pub stats: [SolveStats; 3],
}

const NO_NEIGHBOR: u32 = u32::MAX;

/// The masked interior: pixel index of each unknown and, per unknown, the
/// unknown index of its four neighbours (or `NO_NEIGHBOR` on the boundary).
#[derive(Clone, Debug)]
pub struct PoissonRegion {
    width: usize,
    pixels: Vec<usize>,
    neighbors: Vec<[u32; 4]>,
}

impl PoissonRegion {
    /// Interior = pixels with mask value 1. The mask must be hard and the
    /// interior must keep a one-pixel ring away from the raster border.
    pub fn from_mask(mask: &Mask) -> Result<Self> {
        if !mask.is_hard() {
            return Err(Error::InvalidParameter("poisson blending needs a hard mask".into()));
        }
        let (w, h) = mask.dims();
        let mut index = vec![NO_NEIGHBOR; w * h];
        let mut pixels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) == 1.0 {
                    if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                        return Err(Error::InvalidRegion(format!(
                            "masked pixel ({x}, {y}) touches the raster border"
                        )));
                    }
                    index[y * w + x] = pixels.len() as u32;
                    pixels.push(y * w + x);
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::InvalidRegion("mask has no interior pixels".into()));
        }
        let neighbors = pixels
            .iter()
            .map(|&p| [index[p - 1], index[p + 1], index[p - w], index[p + w]])
            .collect();
        Ok(Self {
            width: w,
            pixels,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    fn neighbor_pixels(&self, p: usize) -> [usize; 4] {
        [p - 1, p + 1, p - self.width, p + self.width]
    }

    /// Right-hand side: source Laplacian guidance plus Dirichlet values.
    pub fn rhs(&self, fg: &[f32], bg: &[f32]) -> Vec<f64> {
        self.pixels
            .iter()
            .zip(&self.neighbors)
            .map(|(&p, nb)| {
                let mut b = 0.0f64;
                for (q, &k) in self.neighbor_pixels(p).into_iter().zip(nb) {
                    b += fg[p] as f64 - fg[q] as f64;
                    if k == NO_NEIGHBOR {
                        b += bg[q] as f64;
                    }
                }
                b
            })
            .collect()
    }

    /// `y = A x` for the 5-point operator restricted to the interior.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, &xi), nb) in y.iter_mut().zip(x).zip(&self.neighbors) {
            let mut acc = 4.0 * xi;
            for &k in nb {
                if k != NO_NEIGHBOR {
                    acc -= x[k as usize];
                }
            }
            *yi = acc;
        }
    }

    fn diagonal(&self) -> f64 {
        4.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient on the region's system.
pub fn solve_region(
    region: &PoissonRegion,
    rhs: &[f64],
    x0: Vec<f64>,
    params: &PoissonParams,
) -> Result<(Vec<f64>, SolveStats)> {
    params.validate()?;
    let n = region.len();
    let cap = params.iteration_cap(n);
    let inv_diag = 1.0 / region.diagonal();
    let b_norm = dot(rhs, rhs).sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut x = x0;
    let mut ax = vec![0.0; n];
    region.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = dot(&r, &r).sqrt() / scale;
    let mut iterations = 0;
    let mut ap = vec![0.0; n];

    while residual > params.tolerance && iterations < cap {
        region.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag;
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        residual = dot(&r, &r).sqrt() / scale;
    }

    if residual > params.tolerance {
        return Err(Error::Convergence {
            residual,
            iterations,
        });
    }
    Ok((x, SolveStats {
        iterations,
        residual,
    }))
}

/// Gradient-domain compositing with source-only guidance: inside the mask
/// the 5-point Laplacian of the output matches that of `fg`, with
/// Dirichlet values from `bg` on the surrounding ring. Channels are solved
/// independently.
pub fn poisson_blend(
    fg: &ImageBuffer,
    bg: &ImageBuffer,
    mask: &Mask,
    params: &PoissonParams,
) -> Result<PoissonOutput> {
    poisson_blend_with(fg, bg, mask, params, Exec::default())
}

pub fn poisson_blend_with(
    fg: &ImageBuffer,
    bg: &ImageBuffer,
    mask: &Mask,
    params: &PoissonParams,
    exec: Exec,
) -> Result<PoissonOutput> {
    check_shapes(fg, bg, mask)?;
    params.validate()?;
    let region = PoissonRegion::from_mask(mask)?;

    let solved = exec.map_range(CHANNELS, |c| {
        let (f, b) = (fg.plane(c), bg.plane(c));
        let rhs = region.rhs(f, b);
        let x0 = region.pixels().iter().map(|&p| b[p] as f64).collect();
        solve_region(&region, &rhs, x0, params)
    });

    let mut samples = bg.samples().to_vec();
    let n = fg.width() * fg.height();
    let mut stats = [SolveStats {
        iterations: 0,
        residual: 0.0,
    }; 3];
    for (c, result) in solved.into_iter().enumerate() {
        let (x, s) = result?;
        stats[c] = s;
        for (&p, v) in region.pixels().iter().zip(x) {
            samples[c * n + p] = v as f32;
        }
    }
    Ok(PoissonOutput {
        image: ImageBuffer::from_planar_clamped(fg.width(), fg.height(), samples),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
        ImageBuffer::from_planar(w, h, (0..w * h * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    fn square_mask(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    fn max_abs(a: &ImageBuffer, b: &ImageBuffer) -> f32 {
        a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    /// Straightforward pyramid: dense 2-D Gaussian convolution per level,
    /// explicit decimation and expansion loops.
    mod naive {
        pub fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
            let r = 3isize;
            let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / 2.0).exp()).collect();
            let s: f64 = k.iter().sum();
            let mut out = vec![0.0; w * h];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                            let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                            acc += k[(dx + r) as usize] * k[(dy + r) as usize] * src[sy * w + sx];
                        }
                    }
                    out[y as usize * w + x as usize] = acc / (s * s);
                }
            }
            out
        }

        pub fn down(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
            let b = blur(src, w, h);
            let (w2, h2) = ((w + 1) / 2, (h + 1) / 2);
            let mut out = vec![0.0; w2 * h2];
            for y in 0..h2 {
                for x in 0..w2 {
                    out[y * w2 + x] = b[2 * y * w + 2 * x];
                }
            }
            (out, w2, h2)
        }

        pub fn up(src: &[f64], w2: usize, h2: usize, w: usize, h: usize) -> Vec<f64> {
            let mut z = vec![0.0; w * h];
            for y in 0..h2 {
                for x in 0..w2 {
                    z[2 * y * w + 2 * x] = src[y * w2 + x];
                }
            }
            blur(&z, w, h).into_iter().map(|v| 4.0 * v).collect()
        }

        pub fn blend(f: &[f64], b: &[f64], m: &[f64], w: usize, h: usize, levels: usize) -> Vec<f64> {
            let mut gf = vec![(f.to_vec(), w, h)];
            let mut gb = vec![b.to_vec()];
            let mut gm = vec![m.to_vec()];
            for _ in 1..levels {
                let (pf, pw, ph) = gf.last().unwrap().clone();
                let (nf, nw, nh) = down(&pf, pw, ph);
                gb.push(down(gb.last().unwrap(), pw, ph).0);
                gm.push(down(gm.last().unwrap(), pw, ph).0);
                gf.push((nf, nw, nh));
            }
            let dims: Vec<(usize, usize)> = gf.iter().map(|g| (g.1, g.2)).collect();
            let mut bands = Vec::new();
            for i in 0..levels {
                let (cw, ch) = dims[i];
                let (lf, lb) = if i + 1 < levels {
                    let (nw, nh) = dims[i + 1];
                    let uf = up(&gf[i + 1].0, nw, nh, cw, ch);
                    let ub = up(&gb[i + 1], nw, nh, cw, ch);
                    (
                        gf[i].0.iter().zip(&uf).map(|(a, b)| a - b).collect::<Vec<_>>(),
                        gb[i].iter().zip(&ub).map(|(a, b)| a - b).collect::<Vec<_>>(),
                    )
                } else {
                    (gf[i].0.clone(), gb[i].clone())
                };
                bands.push(
                    (0..cw * ch)
                        .map(|j| gm[i][j] * lf[j] + (1.0 - gm[i][j]) * lb[j])
                        .collect::<Vec<f64>>(),
                );
            }
            let mut cur = bands.pop().unwrap();
            for i in (0..levels - 1).rev() {
                let (cw, ch) = dims[i];
                let (nw, nh) = dims[i + 1];
                let u = up(&cur, nw, nh, cw, ch);
                cur = bands[i].iter().zip(&u).map(|(a, b)| a + b).collect();
            }
            cur.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
        }
    }

    /// Dense Gaussian elimination with partial pivoting on the same system.
    fn dense_poisson(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask, c: usize) -> Vec<f64> {
        let (w, h) = fg.dims();
        let (f, b) = (fg.plane(c), bg.plane(c));
        let inside: Vec<usize> = (0..w * h).filter(|&p| mask.values()[p] == 1.0).collect();
        let n = inside.len();
        let col = |p: usize| inside.iter().position(|&q| q == p);
        let mut a = vec![vec![0.0f64; n + 1]; n];
        for (i, &p) in inside.iter().enumerate() {
            a[i][i] = 4.0;
            for q in [p - 1, p + 1, p - w, p + w] {
                a[i][n] += f[p] as f64 - f[q] as f64;
                match col(q) {
                    Some(j) => a[i][j] -= 1.0,
                    None => a[i][n] += b[q] as f64,
                }
            }
        }
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            for i in k + 1..n {
                let factor = a[i][k] / a[k][k];
                for j in k..=n {
                    a[i][j] -= factor * a[k][j];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        let mut out: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        for (&p, v) in inside.iter().zip(x) {
            out[p] = v.clamp(0.0, 1.0);
        }
        out
    }

    #[test]
    fn alpha_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fg = random_image(8, 6, &mut rng);
        let bg = random_image(8, 6, &mut rng);
        assert_eq!(alpha_blend(&fg, &bg, &Mask::filled(8, 6, 1.0).unwrap()).unwrap(), fg);
        assert_eq!(alpha_blend(&fg, &bg, &Mask::filled(8, 6, 0.0).unwrap()).unwrap(), bg);
        let f = ImageBuffer::filled(3, 3, [0.8; 3]).unwrap();
        let b = ImageBuffer::filled(3, 3, [0.2; 3]).unwrap();
        let out = alpha_blend(&f, &b, &Mask::filled(3, 3, 0.5).unwrap()).unwrap();
        assert!(out.samples().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn alpha_shape_mismatch() {
        let a = ImageBuffer::filled(3, 3, [0.0; 3]).unwrap();
        let b = ImageBuffer::filled(3, 4, [0.0; 3]).unwrap();
        assert!(matches!(
            alpha_blend(&a, &b, &Mask::filled(3, 3, 1.0).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn alpha_is_between_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fg = random_image(10, 10, &mut rng);
        let bg = random_image(10, 10, &mut rng);
        let m = Mask::from_fn(10, 10, |_, _| rng.random()).unwrap();
        let out = alpha_blend(&fg, &bg, &m).unwrap();
        for ((o, f), b) in out.samples().iter().zip(fg.samples()).zip(bg.samples()) {
            assert!(*o >= f.min(*b) && *o <= f.max(*b));
        }
    }

    #[test]
    fn pyramid_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (w, h) in [(64, 64), (37, 29)] {
            let img = random_image(w, h, &mut rng);
            for levels in 1..=4 {
                let bands = laplacian_pyramid(Plane::new(w, h, img.plane(0).to_vec()), levels);
                let back = collapse_pyramid(&bands);
                let rms = (back.data.iter().zip(img.plane(0)).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
                    / (w * h) as f64)
                    .sqrt();
                assert!(rms <= 1e-5, "levels {levels}: rms {rms}");
            }
        }
    }

    #[test]
    fn laplacian_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fg = random_image(32, 32, &mut rng);
        let bg = random_image(32, 32, &mut rng);
        let same = laplacian_blend(&bg, &bg, &Mask::filled(32, 32, 0.3).unwrap(), 4).unwrap();
        assert!(max_abs(&same, &bg) < 1e-5);
        let all = laplacian_blend(&fg, &bg, &Mask::filled(32, 32, 1.0).unwrap(), 3).unwrap();
        assert!(max_abs(&all, &fg) < 1e-5);
    }

    #[test]
    fn laplacian_single_level_is_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fg = random_image(16, 16, &mut rng);
        let bg = random_image(16, 16, &mut rng);
        let m = Mask::from_fn(16, 16, |x, _| if x < 8 { 1.0 } else { 0.0 }).unwrap();
        let a = laplacian_blend(&fg, &bg, &m, 1).unwrap();
        let b = alpha_blend(&fg, &bg, &m).unwrap();
        assert!(max_abs(&a, &b) < 1e-5);
    }

    #[test]
    fn laplacian_matches_naive_pyramid() {
        let fg = ImageBuffer::from_fn(32, 32, |x, _| [if x < 16 { 0.9 } else { 0.1 }, 0.4, 0.7]).unwrap();
        let bg = ImageBuffer::from_fn(32, 32, |_, y| [0.2, if y < 10 { 0.8 } else { 0.3 }, 0.5]).unwrap();
        let m = Mask::from_fn(32, 32, |x, _| if x < 13 { 1.0 } else { 0.0 }).unwrap();
        let out = laplacian_blend(&fg, &bg, &m, 3).unwrap();
        let to64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
        for c in 0..3 {
            let want = naive::blend(&to64(fg.plane(c)), &to64(bg.plane(c)), &to64(m.values()), 32, 32, 3);
            for (g, w) in out.plane(c).iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn laplacian_rejects_deep_pyramids() {
        let img = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
        let m = Mask::filled(16, 16, 1.0).unwrap();
        assert!(matches!(laplacian_blend(&img, &img, &m, 5), Err(Error::InvalidParameter(_))));
        assert!(laplacian_blend(&img, &img, &m, 0).is_err());
        assert!(laplacian_blend(&img, &img, &m, 4).is_ok());
    }

    #[test]
    fn poisson_constant_sources() {
        let fg = ImageBuffer::filled(12, 12, [0.9, 0.1, 0.5]).unwrap();
        let bg = ImageBuffer::filled(12, 12, [0.2, 0.6, 0.3]).unwrap();
        let m = square_mask(12, 12, 3, 3, 5);
        let out = poisson_blend(&fg, &bg, &m, &PoissonParams::default()).unwrap();
        assert!(max_abs(&out.image, &bg) < 1e-5);
    }

    #[test]
    fn poisson_identical_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bg = random_image(16, 16, &mut rng);
        let out = poisson_blend(&bg, &bg, &square_mask(16, 16, 4, 4, 6), &PoissonParams::default()).unwrap();
        assert!(max_abs(&out.image, &bg) < 1e-6);
    }

    #[test]
    fn poisson_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fg = random_image(16, 16, &mut rng);
        let bg = random_image(16, 16, &mut rng);
        let m = square_mask(16, 16, 5, 5, 6);
        let params = PoissonParams::default();
        let out = poisson_blend(&fg, &bg, &m, &params).unwrap();
        for c in 0..3 {
            let want = dense_poisson(&fg, &bg, &m, c);
            for (g, w) in out.image.plane(c).iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-4);
            }
            assert!(out.stats[c].residual <= params.tolerance);
            assert!(out.stats[c].iterations <= params.iteration_cap(36));
        }
        // Outside the region the background is untouched.
        for p in 0..256 {
            if m.values()[p] == 0.0 {
                assert_eq!(out.image.plane(0)[p], bg.plane(0)[p]);
            }
        }
    }

    #[test]
    fn poisson_region_errors() {
        let img = ImageBuffer::filled(8, 8, [0.5; 3]).unwrap();
        let border = square_mask(8, 8, 0, 2, 3);
        assert!(matches!(
            poisson_blend(&img, &img, &border, &PoissonParams::default()),
            Err(Error::InvalidRegion(_))
        ));
        let empty = Mask::filled(8, 8, 0.0).unwrap();
        assert!(matches!(
            poisson_blend(&img, &img, &empty, &PoissonParams::default()),
            Err(Error::InvalidRegion(_))
        ));
        let soft = Mask::filled(8, 8, 0.5).unwrap();
        assert!(poisson_blend(&img, &img, &soft, &PoissonParams::default()).is_err());
    }

    #[test]
    fn poisson_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fg = random_image(32, 32, &mut rng);
        let bg = random_image(32, 32, &mut rng);
        let params = PoissonParams {
            tolerance: 1e-12,
            max_iters: Some(2),
        };
        match poisson_blend(&fg, &bg, &square_mask(32, 32, 4, 4, 20), &params) {
            Err(Error::Convergence { residual, iterations }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn modes_agree_when_sources_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = random_image(24, 24, &mut rng);
        let m = square_mask(24, 24, 6, 6, 10);
        for mode in [
            BlendMode::Alpha,
            BlendMode::LaplacianPyramid { levels: 3 },
            BlendMode::Poisson(PoissonParams::default()),
        ] {
            let out = blend(&img, &img, &m, &mode).unwrap();
            assert!(max_abs(&out, &img) < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn sequential_and_parallel_poisson_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fg = random_image(20, 20, &mut rng);
        let bg = random_image(20, 20, &mut rng);
        let m = square_mask(20, 20, 4, 4, 10);
        let p = PoissonParams::default();
        let a = poisson_blend_with(&fg, &bg, &m, &p, Exec::Sequential).unwrap();
        let b = poisson_blend_with(&fg, &bg, &m, &p, Exec::default()).unwrap();
        assert_eq!(a.image, b.image);
    }
}
