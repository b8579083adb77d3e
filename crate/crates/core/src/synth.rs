//! Synthetic two-domain corpus: breast-like foreground with smooth texture,
//! bright annotated blobs for positives, faint blobs for benign findings, and
//! a monotone intensity warp that turns source-style images into the target
//! domain.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, AnnotationBox, Image2D};
use crate::manifest::{write_manifest, Class4, ManifestRecord, Split};
use crate::pgm::write_pgm;
use crate::rng::substream;

/// Monotone intensity warp `y = (K-1) (x / (K-1))^gamma + bias`, clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    pub gamma: f64,
    /// Additive offset in intensity levels.
    pub bias: f64,
}

impl Warp {
    pub const IDENTITY: Warp = Warp { gamma: 1.0, bias: 0.0 };

    /// Apply to a value given as a fraction of the full range.
    pub fn apply_unit(&self, x: f64, max: f64) -> f64 {
        max * x.clamp(0.0, 1.0).powf(self.gamma) + self.bias
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("synth.target_warp.gamma", "must be finite and > 0"));
        }
        if !self.bias.is_finite() {
            return Err(Error::config("synth.target_warp.bias", "must be finite"));
        }
        Ok(())
    }
}

impl Default for Warp {
    fn default() -> Self {
        Warp { gamma: 2.2, bias: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Intensities are fractions of the full range `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDomainSpec {
    pub image_size: usize,
    pub levels: u32,
    /// Per-image tissue brightness is uniform on this range.
    pub tissue_range: (f64, f64),
    /// Fraction of brightness lost from the chest wall to the skin line.
    pub falloff: f64,
    /// Amplitude of the smooth random texture.
    pub texture_amplitude: f64,
    /// Per-pixel white noise std.
    pub pixel_noise: f64,
    /// Peak contrast of malignant and benign blobs.
    pub malignant_contrast: f64,
    pub benign_contrast: f64,
    /// Blob std in pixels is uniform on this range.
    pub blob_sigma: (f64, f64),
    /// Probability a benign image carries an annotation box.
    pub benign_annotated: f64,
    /// Class proportions for normal, benign, malignant.
    pub class_mix: (f64, f64, f64),
    pub target_warp: Warp,
    pub source_counts: SplitCounts,
    pub target_counts: SplitCounts,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        Self {
            image_size: 256,
            levels: 4096,
            tissue_range: (0.4, 0.5),
            falloff: 0.4,
            texture_amplitude: 0.05,
            pixel_noise: 0.01,
            malignant_contrast: 0.12,
            benign_contrast: 0.06,
            blob_sigma: (4.0, 8.0),
            benign_annotated: 0.5,
            class_mix: (0.25, 0.25, 0.5),
            target_warp: Warp::default(),
            source_counts: SplitCounts { train: 400, val: 60, test: 200 },
            target_counts: SplitCounts { train: 90, val: 30, test: 200 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One generated image with its manifest record (path relative to the
/// domain directory).
#[derive(Clone, Debug)]
pub struct SynthItem {
    pub record: ManifestRecord,
    pub image: Image2D,
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<()> {
        let f = |field: &str, m: &str| Err(Error::config(format!("synth.{field}"), m.to_string()));
        if self.image_size < 16 {
            return f("image_size", "must be >= 16");
        }
        if !(2..=65536).contains(&self.levels) {
            return f("levels", "must lie in [2, 65536]");
        }
        let (lo, hi) = self.tissue_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return f("tissue_range", "need 0 < lo <= hi < 1");
        }
        let (s0, s1) = self.blob_sigma;
        if !(s0 > 0.0 && s0 <= s1) {
            return f("blob_sigma", "need 0 < lo <= hi");
        }
        if !(0.0..1.0).contains(&self.falloff) {
            return f("falloff", "must lie in [0, 1)");
        }
        if [self.texture_amplitude, self.pixel_noise, self.malignant_contrast, self.benign_contrast]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return f("contrast", "amplitudes must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.benign_annotated) {
            return f("benign_annotated", "must lie in [0, 1]");
        }
        let (a, b, c) = self.class_mix;
        if [a, b, c].iter().any(|v| *v < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 || c == 0.0 || a + b == 0.0 {
            return f("class_mix", "must be nonnegative, sum to 1, and include both binary classes");
        }
        self.target_warp.validate()
    }

    fn counts(&self, domain: Domain) -> SplitCounts {
        match domain {
            Domain::Source => self.source_counts,
            Domain::Target => self.target_counts,
        }
    }
}

/// Class of the `i`-th of `n` images: deterministic quotas, rounded down for
/// normal and benign, so every split holds both binary classes once `n >= 4`.
fn class_for(i: usize, n: usize, mix: (f64, f64, f64)) -> Class4 {
    let normal = (n as f64 * mix.0).floor() as usize;
    let benign = (n as f64 * mix.1).floor() as usize;
    if i < normal {
        Class4::Normal
    } else if i < normal + benign {
        Class4::Benign
    } else {
        Class4::Malignant
    }
}

struct Latent {
    /// Intensities as fractions of full range, row-major.
    values: Vec<f64>,
    annotation: Option<AnnotationBox>,
}

/// Noise-free-of-domain image content. Both domains render the same latent
/// for the same `(seed, split, index)`, so a target image is exactly its
/// source counterpart passed through the warp.
fn latent(spec: &SyntheticDomainSpec, seed: u64, split: Split, index: usize, class: Class4) -> Latent {
    let mut rng = substream(seed, &format!("synth/{split}/{index}"));
    let s = spec.image_size;
    let sf = s as f64;
    // breast: disc anchored on the left edge
    let cy = sf * rng.random_range(0.45..0.55);
    let radius = sf * rng.random_range(0.85..0.9);
    let base = rng.random_range(spec.tissue_range.0..=spec.tissue_range.1);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..sf * 0.8),
                rng.random_range(0.0..sf),
                rng.random_range(sf * 0.06..sf * 0.16),
                rng.random_range(-1.0..1.0) * spec.texture_amplitude,
            )
        })
        .collect();
    let inside = |x: f64, y: f64| x * x + (y - cy) * (y - cy) < radius * radius;
    let blob = match class {
        Class4::Normal => None,
        Class4::Benign => Some(spec.benign_contrast),
        Class4::HighRisk | Class4::Malignant => Some(spec.malignant_contrast),
    }
    .map(|amp| {
        let sigma = rng.random_range(spec.blob_sigma.0..=spec.blob_sigma.1);
        let margin = 3.0 * sigma;
        loop {
            let bx = rng.random_range(margin..sf - margin);
            let by = rng.random_range(margin..sf - margin);
            // keep the whole blob inside tissue
            if (bx * bx + (by - cy) * (by - cy)).sqrt() + margin < radius {
                break (bx, by, sigma, amp);
            }
        }
    });
    let mut values = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            if !inside(xf, yf) {
                continue;
            }
            let r2 = (xf * xf + (yf - cy) * (yf - cy)) / (radius * radius);
            let mut v = base * (1.0 - spec.falloff * r2);
            for &(bx, by, bs, amp) in &bumps {
                let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
                v += amp * (-d2 / (2.0 * bs * bs)).exp();
            }
            if let Some((bx, by, bs, amp)) = blob {
                let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
                v += amp * (-d2 / (2.0 * bs * bs)).exp();
            }
            values[y * s + x] = v;
        }
    }
    // pixel noise on tissue only, drawn after the geometry so it does not
    // perturb the layout stream
    for v in values.iter_mut().filter(|v| **v > 0.0) {
        let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        *v = (*v + spec.pixel_noise * n).max(0.05);
    }
    let annotate = match class {
        Class4::Normal => false,
        Class4::Benign => rng.random_bool(spec.benign_annotated),
        _ => true,
    };
    let annotation = blob.filter(|_| annotate).map(|(bx, by, bs, _)| {
        let side = (4.0 * bs).round() as usize;
        AnnotationBox { center_x: bx as usize, center_y: by as usize, width: side, height: side }
    });
    Latent { values, annotation }
}

fn render(spec: &SyntheticDomainSpec, l: &Latent, warp: Warp) -> Result<Image2D> {
    let max = f64::from(spec.levels - 1);
    let pixels = l
        .values
        .iter()
        .map(|&v| if v == 0.0 { 0 } else { quantize(warp.apply_unit(v, max), max as u16) })
        .collect();
    Image2D::new(spec.image_size, spec.image_size, spec.levels, pixels)
}

/// Generate every image of one domain in memory.
pub fn generate_domain(spec: &SyntheticDomainSpec, domain: Domain, seed: u64) -> Result<Vec<SynthItem>> {
    spec.validate()?;
    let warp = match domain {
        Domain::Source => Warp::IDENTITY,
        Domain::Target => spec.target_warp,
    };
    let counts = spec.counts(domain);
    let mut out = Vec::with_capacity(counts.total());
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = counts.get(split);
        for i in 0..n {
            let class4 = class_for(i, n, spec.class_mix);
            let l = latent(spec, seed, split, i, class4);
            let image = render(spec, &l, warp)?;
            let tag = domain.as_str();
            out.push(SynthItem {
                record: ManifestRecord {
                    image_path: PathBuf::from(format!("images/{split}_{i:05}.pgm")),
                    class4,
                    patient_id: format!("{tag}-{split}-{i:05}"),
                    split,
                    annotation: l.annotation,
                },
                image,
            });
        }
    }
    Ok(out)
}

/// Write `<dir>/<domain>/manifest.jsonl` and `<dir>/<domain>/images/*.pgm`
/// for both domains. Returns the two manifest paths.
pub fn write_synthetic(spec: &SyntheticDomainSpec, seed: u64, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut paths = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        let root = dir.join(domain.as_str());
        let items = generate_domain(spec, domain, seed)?;
        for it in &items {
            write_pgm(root.join(&it.record.image_path), &it.image)?;
        }
        let records: Vec<ManifestRecord> = items.into_iter().map(|it| it.record).collect();
        let manifest = root.join("manifest.jsonl");
        write_manifest(&manifest, &records)?;
        paths.push(manifest);
    }
    let target = paths.pop().expect("two domains");
    let source = paths.pop().expect("two domains");
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histmatch::{compute_cdf, ks_distance};
    use crate::manifest::BinaryLabel;

    fn small() -> SyntheticDomainSpec {
        SyntheticDomainSpec {
            image_size: 64,
            blob_sigma: (2.0, 3.0),
            source_counts: SplitCounts { train: 8, val: 4, test: 4 },
            target_counts: SplitCounts { train: 5, val: 4, test: 4 },
            ..SyntheticDomainSpec::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let spec = small();
        let items = generate_domain(&spec, Domain::Target, 3).unwrap();
        assert_eq!(items.len(), 13);
        for split in [Split::Train, Split::Val, Split::Test] {
            let part: Vec<_> = items.iter().filter(|i| i.record.split == split).collect();
            assert_eq!(part.len(), spec.target_counts.get(split));
            assert!(part.iter().any(|i| i.record.label() == BinaryLabel::Positive));
            assert!(part.iter().any(|i| i.record.label() == BinaryLabel::Negative));
        }
        for it in &items {
            it.record.validate().unwrap();
            if let Some(a) = it.record.annotation {
                a.validate_within(64, 64).unwrap();
            }
        }
    }

    #[test]
    fn identity_warp_gives_identical_domains() {
        let spec = SyntheticDomainSpec { target_warp: Warp::IDENTITY, target_counts: small().source_counts, ..small() };
        let s = generate_domain(&spec, Domain::Source, 9).unwrap();
        let t = generate_domain(&spec, Domain::Target, 9).unwrap();
        for (a, b) in s.iter().zip(&t) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.record.annotation, b.record.annotation);
        }
    }

    #[test]
    fn gamma_warp_shifts_every_cdf() {
        let spec = small();
        let s = generate_domain(&spec, Domain::Source, 4).unwrap();
        let t = generate_domain(&spec, Domain::Target, 4).unwrap();
        for (a, b) in s.iter().zip(&t).filter(|(a, _)| a.record.split == Split::Test) {
            let d = ks_distance(&compute_cdf(&a.image), &compute_cdf(&b.image)).unwrap();
            assert!(d > 0.1, "ks {d}");
        }
    }

    #[test]
    fn warp_is_increasing() {
        let w = Warp::default();
        let max = 4095.0;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=4095 {
            let v = w.apply_unit(f64::from(i) / max, max);
            assert!(v > prev);
            prev = v;
        }
        assert!(Warp { gamma: 0.0, bias: 0.0 }.validate().is_err());
    }
}
