//! Foreground segmentation and patch placement/extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_resize, pick, Image2D};
use crate::manifest::ManifestRecord;
use crate::rng::SeededRng;

/// Default tissue threshold as a fraction of the maximum level.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    // row-major indices of set pixels, for O(1) uniform draws
    on: Vec<u32>,
}

impl ForegroundMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Argument("mask size does not match dimensions".into()));
        }
        let on = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32).collect();
        Ok(Self { width, height, bits, on })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.on.len()
    }

    pub fn is_empty(&self) -> bool {
        self.on.is_empty()
    }

    /// Uniformly random set pixel.
    pub fn sample(&self, rng: &mut SeededRng) -> Result<(usize, usize)> {
        if self.on.is_empty() {
            return Err(Error::Data("foreground mask is empty; cannot place a random patch".into()));
        }
        let i = self.on[pick(rng, self.on.len())] as usize;
        Ok((i % self.width, i / self.width))
    }
}

/// Pixels strictly brighter than `threshold_fraction * (K-1)`.
pub fn segment_foreground(img: &Image2D, threshold_fraction: f64) -> Result<ForegroundMask> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::Argument(format!("threshold fraction {threshold_fraction} outside (0, 1)")));
    }
    let cut = threshold_fraction * f64::from(img.max_level());
    let bits = img.pixels().iter().map(|&p| f64::from(p) > cut).collect();
    ForegroundMask::from_bits(img.width(), img.height(), bits)
}

/// Crop window edge and model input edge, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub crop_size: usize,
    pub out_size: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { crop_size: 1024, out_size: 512 }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_size == 0 || self.crop_size < self.out_size {
            return Err(Error::config(
                "patch",
                format!("need crop_size >= out_size >= 1, got {} / {}", self.crop_size, self.out_size),
            ));
        }
        Ok(())
    }

    /// Fraction of a `width`×`height` image covered by one crop.
    pub fn area_fraction(&self, width: usize, height: usize) -> f64 {
        (self.crop_size * self.crop_size) as f64 / (width * height) as f64
    }

    fn half(&self) -> usize {
        self.crop_size / 2
    }
}

/// Proposed patch center before the in-bounds shift.
pub fn raw_center(
    record: &ManifestRecord,
    mask: &ForegroundMask,
    rng: &mut SeededRng,
) -> Result<(usize, usize)> {
    match &record.annotation {
        Some(a) => {
            a.validate_within(mask.width(), mask.height())?;
            Ok((a.center_x, a.center_y))
        }
        None => mask.sample(rng).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", record.image_path.display())),
            other => other,
        }),
    }
}

/// Shift a center per axis so the whole crop fits inside the image.
pub fn clamp_center(
    (cx, cy): (usize, usize),
    width: usize,
    height: usize,
    spec: &PatchSpec,
) -> Result<(usize, usize)> {
    if width < spec.crop_size || height < spec.crop_size {
        return Err(Error::Data(format!(
            "{width}x{height} image is smaller than the {} px crop",
            spec.crop_size
        )));
    }
    let lo = spec.half();
    let hi_x = width - (spec.crop_size - spec.half());
    let hi_y = height - (spec.crop_size - spec.half());
    Ok((cx.clamp(lo, hi_x), cy.clamp(lo, hi_y)))
}

/// Annotation center if present, else a uniform foreground pixel; then clamped.
pub fn choose_center(
    record: &ManifestRecord,
    img: &Image2D,
    mask: &ForegroundMask,
    spec: &PatchSpec,
    rng: &mut SeededRng,
) -> Result<(usize, usize)> {
    if img.width() < spec.crop_size || img.height() < spec.crop_size {
        return Err(Error::Data(format!(
            "{}: {}x{} image is smaller than the {} px crop",
            record.image_path.display(),
            img.width(),
            img.height(),
            spec.crop_size
        )));
    }
    let raw = raw_center(record, mask, rng)?;
    clamp_center(raw, img.width(), img.height(), spec)
}

/// Top-left corner of the crop around `center`.
pub fn crop_origin((cx, cy): (usize, usize), spec: &PatchSpec) -> (usize, usize) {
    (cx - spec.half(), cy - spec.half())
}

/// Crop `crop_size`² around `center` and resample to `out_size`².
pub fn extract_patch(img: &Image2D, center: (usize, usize), spec: &PatchSpec) -> Result<Image2D> {
    let (cx, cy) = center;
    if cx < spec.half() || cy < spec.half() {
        return Err(Error::Argument(format!("center ({cx}, {cy}) leaves the crop out of bounds")));
    }
    let (x0, y0) = crop_origin(center, spec);
    let crop = img.crop(x0, y0, spec.crop_size, spec.crop_size)?;
    bilinear_resize(&crop, spec.out_size, spec.out_size)
}
