//! Integer grayscale rasters and the deterministic pixel transforms built on them.
//!
//! Conventions shared by every real-valued transform here:
//! - pixel `(x, y)` has its center at continuous coordinate `(x, y)`, and resampling
//!   maps output centers onto input centers (half-pixel alignment);
//! - real results are rounded half away from zero and clamped to `[0, K-1]`;
//! - reads outside the source raster return 0.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Row-major integer grayscale image with intensities in `[0, levels-1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image2D {
    width: usize,
    height: usize,
    levels: u32,
    pixels: Vec<u16>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, levels: u32, pixels: Vec<u16>) -> Result<Self> {
        if !(2..=65536).contains(&levels) {
            return Err(Error::Argument(format!("level count {levels} outside [2, 65536]")));
        }
        if width * height != pixels.len() {
            return Err(Error::Argument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(&p) = pixels.iter().find(|&&p| u32::from(p) >= levels) {
            return Err(Error::Argument(format!("pixel value {p} exceeds max level {}", levels - 1)));
        }
        Ok(Self { width, height, levels, pixels })
    }

    pub fn filled(width: usize, height: usize, levels: u32, value: u16) -> Result<Self> {
        Self::new(width, height, levels, vec![value; width * height])
    }

    /// Build from a function of `(x, y)`; values are clamped to the level range.
    pub fn from_fn(
        width: usize,
        height: usize,
        levels: u32,
        mut f: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self> {
        let max = levels.saturating_sub(1);
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).min(max) as u16);
            }
        }
        Self::new(width, height, levels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of representable intensity levels `K`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn max_level(&self) -> u16 {
        (self.levels - 1) as u16
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Same geometry, new pixel buffer and depth. Caller guarantees the range.
    pub(crate) fn with_pixels(&self, levels: u32, pixels: Vec<u16>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self { width: self.width, height: self.height, levels, pixels }
    }

    #[inline]
    fn quantize(&self, v: f64) -> u16 {
        quantize(v, self.max_level())
    }

    /// Bilinear sample at continuous pixel-center coordinates; out-of-bounds
    /// neighbours read as 0.
    fn sample_zero_fill(&self, sx: f64, sy: f64) -> f64 {
        let sx = snap(sx);
        let sy = snap(sy);
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let read = |x: f64, y: f64| -> f64 {
            if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
                0.0
            } else {
                f64::from(self.get(x as usize, y as usize))
            }
        };
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * read(x0 + dx, y0 + dy);
            }
        }
        acc
    }

    /// Crop a `w`×`h` window with top-left corner `(x0, y0)`; must lie in bounds.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::Argument(format!(
                "crop {w}x{h}@({x0},{y0}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        Ok(Self { width: w, height: h, levels: self.levels, pixels })
    }

    pub fn min_max(&self) -> (u16, u16) {
        let mut lo = u16::MAX;
        let mut hi = 0;
        for &p in &self.pixels {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}

/// Round half away from zero, clamp to `[0, max]`.
#[inline]
pub fn quantize(v: f64, max: u16) -> u16 {
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r >= f64::from(max) {
        max
    } else {
        r as u16
    }
}

// Coordinates that are integers up to float noise (e.g. cos 90°) are snapped so
// right-angle rotations land exactly on source pixels.
#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Ordered stack of equally-shaped slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Volume3D {
    slices: Vec<Image2D>,
}

impl Volume3D {
    pub fn new(slices: Vec<Image2D>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Structural("volume has no slices".into()))?;
        for (i, s) in slices.iter().enumerate().skip(1) {
            if s.width != first.width || s.height != first.height || s.levels != first.levels {
                return Err(Error::Structural(format!(
                    "slice {i} is {}x{} K={}, slice 0 is {}x{} K={}",
                    s.width, s.height, s.levels, first.width, first.height, first.levels
                )));
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Image2D] {
        &self.slices
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    /// Apply a per-slice transform, keeping slice order.
    pub fn map_slices(&self, f: impl FnMut(&Image2D) -> Result<Image2D>) -> Result<Self> {
        Self::new(self.slices.iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}

/// Location and extent of an annotated finding, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBox {
    pub center_x: usize,
    pub center_y: usize,
    pub width: usize,
    pub height: usize,
}

impl AnnotationBox {
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        if self.center_x >= width || self.center_y >= height {
            return Err(Error::Data(format!(
                "annotation center ({}, {}) outside {width}x{height} image",
                self.center_x, self.center_y
            )));
        }
        Ok(())
    }
}

/// Maximum intensity projection: per-pixel maximum across slices.
pub fn mip(volume: &Volume3D) -> Image2D {
    let mut slices = volume.slices.iter();
    let first = slices.next().expect("volume invariant: at least one slice");
    let mut out = first.pixels.clone();
    for s in slices {
        for (o, &p) in out.iter_mut().zip(&s.pixels) {
            *o = (*o).max(p);
        }
    }
    first.with_pixels(first.levels, out)
}

/// Bilinear resampling with half-pixel-center alignment and edge clamping.
pub fn bilinear_resize(img: &Image2D, out_w: usize, out_h: usize) -> Result<Image2D> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!("target size {out_w}x{out_h} must be nonzero")));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let sx_scale = img.width as f64 / out_w as f64;
    let sy_scale = img.height as f64 / out_h as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    // Precompute horizontal taps once per column.
    let taps_x: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|x| {
            let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, max_x);
            let x0 = sx.floor() as usize;
            (x0, (x0 + 1).min(img.width - 1), sx - x0 as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, max_y);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for &(x0, x1, fx) in &taps_x {
            let top = f64::from(img.get(x0, y0)) * (1.0 - fx) + f64::from(img.get(x1, y0)) * fx;
            let bot = f64::from(img.get(x0, y1)) * (1.0 - fx) + f64::from(img.get(x1, y1)) * fx;
            pixels.push(img.quantize(top * (1.0 - fy) + bot * fy));
        }
    }
    Ok(Image2D { width: out_w, height: out_h, levels: img.levels, pixels })
}

/// Rotate about the image center by `degrees` (counter-clockwise as displayed,
/// y axis pointing down). Uncovered output pixels become 0.
pub fn rotate(img: &Image2D, degrees: f64) -> Result<Image2D> {
    if !degrees.is_finite() || degrees.abs() > 180.0 {
        return Err(Error::Argument(format!("rotation {degrees} outside [-180, 180]")));
    }
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            pixels.push(img.quantize(img.sample_zero_fill(sx, sy)));
        }
    }
    Ok(img.with_pixels(img.levels, pixels))
}

/// Reverse column order.
pub fn flip_h(img: &Image2D) -> Image2D {
    let mut pixels = img.pixels.clone();
    for row in pixels.chunks_mut(img.width) {
        row.reverse();
    }
    img.with_pixels(img.levels, pixels)
}

/// Reverse row order.
pub fn flip_v(img: &Image2D) -> Image2D {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks(img.width).rev() {
        pixels.extend_from_slice(row);
    }
    img.with_pixels(img.levels, pixels)
}

/// Integer shift: `out(x, y) = in(x - dx, y - dy)`, vacated pixels are 0.
pub fn translate(img: &Image2D, dx: i64, dy: i64) -> Image2D {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut pixels = vec![0u16; img.pixels.len()];
    if dx.abs() < w && dy.abs() < h {
        for y in 0..h {
            let sy = y - dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            let x_lo = dx.max(0);
            let x_hi = (w + dx).min(w);
            let dst = (y * w) as usize;
            let src = (sy * w) as usize;
            pixels[dst + x_lo as usize..dst + x_hi as usize].copy_from_slice(
                &img.pixels[src + (x_lo - dx) as usize..src + (x_hi - dx) as usize],
            );
        }
    }
    img.with_pixels(img.levels, pixels)
}

/// Add i.i.d. `N(0, sigma^2)` to every pixel, then round and clamp.
pub fn add_gaussian_noise(img: &Image2D, sigma: f64, rng: &mut SeededRng) -> Result<Image2D> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let pixels = img
        .pixels
        .iter()
        .map(|&p| img.quantize(f64::from(p) + normal.sample(rng)))
        .collect();
    Ok(img.with_pixels(img.levels, pixels))
}

/// Uniform pick of an index in `0..n`; shared by the samplers.
pub(crate) fn pick(rng: &mut SeededRng, n: usize) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn img(w: usize, h: usize, k: u32, v: &[u16]) -> Image2D {
        Image2D::new(w, h, k, v.to_vec()).unwrap()
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(Image2D::new(2, 1, 4, vec![0, 4]).is_err());
        assert!(Image2D::new(2, 2, 4, vec![0, 1, 2]).is_err());
    }

    #[test]
    fn mip_single_and_zero() {
        let a = img(2, 2, 16, &[1, 5, 3, 15]);
        assert_eq!(mip(&Volume3D::new(vec![a.clone()]).unwrap()), a);
        let z = Image2D::filled(3, 3, 16, 0).unwrap();
        let v = Volume3D::new(vec![z.clone(), z.clone(), z.clone()]).unwrap();
        assert_eq!(mip(&v), z);
    }

    #[test]
    fn mip_elementwise_oracle() {
        let vals: [[u16; 4]; 3] = [[3, 9, 0, 7], [8, 1, 0, 7], [2, 4, 15, 6]];
        let slices = vals.iter().map(|s| img(2, 2, 16, s)).collect();
        let v = Volume3D::new(slices).unwrap();
        let mut expect = [0u16; 4];
        for i in 0..4 {
            for s in &vals {
                if s[i] > expect[i] {
                    expect[i] = s[i];
                }
            }
        }
        assert_eq!(mip(&v).pixels(), &expect);
    }

    #[test]
    fn mip_rejects_inconsistent_slices() {
        let a = Image2D::filled(2, 2, 16, 0).unwrap();
        let b = Image2D::filled(3, 2, 16, 0).unwrap();
        assert!(matches!(Volume3D::new(vec![a, b]), Err(Error::Structural(_))));
        assert!(matches!(Volume3D::new(vec![]), Err(Error::Structural(_))));
    }

    /// Straight-line bilinear interpolator used as the oracle: half-pixel
    /// centers, edge clamp, round half away from zero.
    fn reference_bilinear(src: &[Vec<f64>], out_w: usize, out_h: usize) -> Vec<u16> {
        let h = src.len();
        let w = src[0].len();
        let mut out = vec![];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).max(0.0).min((w - 1) as f64);
                let fy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).max(0.0).min((h - 1) as f64);
                let (x0, y0) = (fx as usize, fy as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                let v = src[y0][x0] * (1.0 - ax) * (1.0 - ay)
                    + src[y0][x1] * ax * (1.0 - ay)
                    + src[y1][x0] * (1.0 - ax) * ay
                    + src[y1][x1] * ax * ay;
                out.push(v.round() as u16);
            }
        }
        out
    }

    #[test]
    fn bilinear_4x4_to_2x2_matches_reference() {
        let vals: Vec<u16> = (0..16).collect();
        let grid: Vec<Vec<f64>> = (0..4).map(|y| (0..4).map(|x| (y * 4 + x) as f64).collect()).collect();
        let out = bilinear_resize(&img(4, 4, 16, &vals), 2, 2).unwrap();
        assert_eq!(out.pixels(), reference_bilinear(&grid, 2, 2).as_slice());
        // (2.5, 4.5 -> rounds away) for the first row
        assert_eq!(out.pixels(), &[3, 5, 11, 13]);
    }

    #[test]
    fn bilinear_constants_and_identity() {
        let c = Image2D::filled(7, 5, 4096, 1234).unwrap();
        for (w, h) in [(1, 1), (3, 11), (14, 10), (7, 5)] {
            let r = bilinear_resize(&c, w, h).unwrap();
            assert!(r.pixels().iter().all(|&p| p == 1234));
        }
        let a = img(2, 2, 16, &[1, 2, 3, 4]);
        assert_eq!(bilinear_resize(&a, 2, 2).unwrap(), a);
        assert!(bilinear_resize(&a, 0, 2).is_err());
    }

    #[test]
    fn rotate_zero_and_square_constant() {
        let a = img(3, 2, 16, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(rotate(&a, 0.0).unwrap(), a);
        let c = Image2D::filled(6, 6, 4096, 999).unwrap();
        assert_eq!(rotate(&c, 90.0).unwrap(), c);
        assert_eq!(rotate(&c, -90.0).unwrap(), c);
        assert_eq!(rotate(&c, 180.0).unwrap(), c);
        assert!(rotate(&c, 181.0).is_err());
    }

    #[test]
    fn rotate_90_is_index_permutation() {
        let vals: Vec<u16> = (1..=9).collect();
        let a = img(3, 3, 16, &vals);
        let r = rotate(&a, 90.0).unwrap();
        // counter-clockwise: out[row][col] = in[col][w-1-row]
        for row in 0..3 {
            for col in 0..3 {
                assert_eq!(r.get(col, row), a.get(2 - row, col));
            }
        }
        let back = rotate(&r, -90.0).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn flips_match_index_reversal() {
        let a = img(3, 2, 16, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(flip_h(&a).pixels(), &[3, 2, 1, 6, 5, 4]);
        assert_eq!(flip_v(&a).pixels(), &[4, 5, 6, 1, 2, 3]);
        assert_eq!(flip_h(&flip_h(&a)), a);
        assert_eq!(flip_v(&flip_v(&a)), a);
        let sym = img(3, 1, 16, &[7, 2, 7]);
        assert_eq!(flip_h(&sym), sym);
    }

    #[test]
    fn translate_cases() {
        let a = img(3, 3, 16, &[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(translate(&a, 0, 0), a);
        assert_eq!(translate(&a, 1, 0).pixels(), &[0, 1, 2, 0, 4, 5, 0, 7, 8]);
        assert_eq!(translate(&a, -1, 1).pixels(), &[0, 0, 0, 2, 3, 0, 5, 6, 0]);
        assert!(translate(&a, 5, 0).pixels().iter().all(|&p| p == 0));
        assert!(translate(&a, 0, -3).pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let a = Image2D::filled(8, 8, 4096, 2000).unwrap();
        assert_eq!(add_gaussian_noise(&a, 0.0, &mut seeded(1)).unwrap(), a);
        let n1 = add_gaussian_noise(&a, 1.0, &mut seeded(9)).unwrap();
        let n2 = add_gaussian_noise(&a, 1.0, &mut seeded(9)).unwrap();
        assert_eq!(n1, n2);
        assert!(add_gaussian_noise(&a, -1.0, &mut seeded(9)).is_err());
    }

    #[test]
    fn noise_std_matches_rounded_normal() {
        // Monte-Carlo oracle: std of round(N(0,1)), sampled independently of the image path.
        let mut oracle_rng = seeded(12345);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v: f64 = normal.sample(&mut oracle_rng);
            let r = v.round();
            s += r;
            s2 += r * r;
        }
        let oracle_std = (s2 / n as f64 - (s / n as f64).powi(2)).sqrt();

        let a = Image2D::filled(1000, 1000, 4096, 2048).unwrap();
        let out = add_gaussian_noise(&a, 1.0, &mut seeded(77)).unwrap();
        let (mut s, mut s2) = (0.0, 0.0);
        for &p in out.pixels() {
            let d = f64::from(p) - 2048.0;
            s += d;
            s2 += d * d;
        }
        let std = (s2 / n as f64 - (s / n as f64).powi(2)).sqrt();
        assert!((std - oracle_std).abs() < 0.05, "std {std} vs oracle {oracle_std}");
    }
}
