//! Cumulative intensity distributions, corpus-average CDFs and histogram matching.
//!
//! A source image is remapped pixel by pixel through `p' = F_R^-1(F_S(p))`, where
//! `F_S` is the source-domain CDF, `F_R` the reference-domain CDF, and the inverse
//! is evaluated by linear interpolation between the two reference levels that
//! bracket the target quantile. Both CDFs are usually per-bin averages of
//! per-image CDFs over a class-balanced sample of each domain.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, Image2D};
use crate::manifest::Class4;
use crate::patch::{segment_foreground, ForegroundMask};
use crate::rng::SeededRng;

/// Tolerance on `values[L-1] == 1`.
pub const CDF_TOP_TOLERANCE: f64 = 1e-12;

/// Common level grid both domains are rescaled to before matching.
pub const COMMON_LEVELS: u32 = 4096;

/// Normalized cumulative histogram over `levels` intensity levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CdfRepr")]
pub struct Cdf {
    levels: u32,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct CdfRepr {
    levels: u32,
    values: Vec<f64>,
}

impl TryFrom<CdfRepr> for Cdf {
    type Error = Error;

    fn try_from(r: CdfRepr) -> Result<Self> {
        if r.values.len() != r.levels as usize {
            return Err(Error::Argument(format!("CDF declares {} levels but has {} values", r.levels, r.values.len())));
        }
        Cdf::new(r.values)
    }
}

impl Cdf {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let levels = values.len() as u32;
        if levels < 2 {
            return Err(Error::Argument("a CDF needs at least two levels".into()));
        }
        let mut prev = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=1.0 + CDF_TOP_TOLERANCE).contains(&v) || v < prev {
                return Err(Error::Argument(format!("CDF value {v} at level {i} breaks monotonicity or range")));
            }
            prev = v;
        }
        if (values[values.len() - 1] - 1.0).abs() > CDF_TOP_TOLERANCE {
            return Err(Error::Argument(format!("CDF must end at 1, ends at {}", values[values.len() - 1])));
        }
        Ok(Self { levels, values })
    }

    /// Step CDF of a constant image at level `c`.
    pub fn step(levels: u32, c: u32) -> Result<Self> {
        Self::new((0..levels).map(|v| if v >= c { 1.0 } else { 0.0 }).collect())
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, level: usize) -> f64 {
        self.values[level]
    }

    /// Smallest level `v` with `F(v) >= q`, refined by linear interpolation
    /// against the level below. Quantiles at or below `F(0)` map to 0.
    pub fn inverse(&self, q: f64) -> f64 {
        let f = &self.values;
        if q <= f[0] {
            return 0.0;
        }
        // first index with f[j] >= q; f is sorted so partition_point is exact
        let j = f.partition_point(|&v| v < q);
        if j >= f.len() {
            return (f.len() - 1) as f64;
        }
        let lo = f[j - 1];
        let hi = f[j];
        (j - 1) as f64 + (q - lo) / (hi - lo)
    }
}

/// Histogram then normalized cumulative sum over all pixels.
pub fn compute_cdf(img: &Image2D) -> Cdf {
    cdf_from_pixels(img.levels(), img.pixels().iter().copied())
        .expect("images are nonempty by construction")
}

/// CDF over foreground pixels only.
pub fn compute_cdf_masked(img: &Image2D, mask: &ForegroundMask) -> Result<Cdf> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::Argument("mask and image dimensions differ".into()));
    }
    let pixels = img.pixels().iter().zip(mask.bits()).filter(|(_, &m)| m).map(|(&p, _)| p);
    cdf_from_pixels(img.levels(), pixels)
        .ok_or_else(|| Error::Data("foreground mask is empty; no pixels to histogram".into()))
}

fn cdf_from_pixels(levels: u32, pixels: impl Iterator<Item = u16>) -> Option<Cdf> {
    let mut counts = vec![0u64; levels as usize];
    let mut total = 0u64;
    for p in pixels {
        counts[p as usize] += 1;
        total += 1;
    }
    if total == 0 {
        return None;
    }
    let mut running = 0u64;
    let values = counts
        .into_iter()
        .map(|c| {
            running += c;
            running as f64 / total as f64
        })
        .collect();
    Some(Cdf { levels, values })
}

/// Running per-bin mean of CDFs. Partial accumulators merge, so per-image CDFs
/// can be produced independently and combined afterwards.
#[derive(Clone, Debug)]
pub struct CdfAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl CdfAccumulator {
    pub fn new(levels: u32) -> Self {
        Self { sum: vec![0.0; levels as usize], count: 0 }
    }

    pub fn add(&mut self, cdf: &Cdf) -> Result<()> {
        if cdf.values.len() != self.sum.len() {
            return Err(Error::Argument(format!(
                "cannot average a {}-level CDF into a {}-level accumulator",
                cdf.levels,
                self.sum.len()
            )));
        }
        for (s, v) in self.sum.iter_mut().zip(&cdf.values) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &CdfAccumulator) -> Result<()> {
        if other.sum.len() != self.sum.len() {
            return Err(Error::Argument("accumulator level counts differ".into()));
        }
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<Cdf> {
        if self.count == 0 {
            return Err(Error::Data("no CDFs to average".into()));
        }
        let n = self.count as f64;
        let mut values: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        // guard the top bin against summation drift
        let last = values.len() - 1;
        values[last] = 1.0;
        Cdf::new(values)
    }
}

/// Per-bin arithmetic mean of the given CDFs.
pub fn mean_cdf<'a>(cdfs: impl IntoIterator<Item = &'a Cdf>) -> Result<Cdf> {
    let mut it = cdfs.into_iter().peekable();
    let levels = it.peek().ok_or_else(|| Error::Data("no CDFs to average".into()))?.levels;
    let mut acc = CdfAccumulator::new(levels);
    for c in it {
        acc.add(c)?;
    }
    acc.finish()
}

/// How many images of each class enter a corpus-average CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusCdfSpec {
    pub quotas: BTreeMap<Class4, usize>,
    /// When set, each image contributes only pixels above this fraction of
    /// its maximum level.
    #[serde(default)]
    pub foreground_threshold: Option<f64>,
}

impl CorpusCdfSpec {
    /// Equal quotas over normal, benign and malignant: the balanced design
    /// used for both domains (1200 source / 600 target images at full scale).
    pub fn balanced(sample_count: usize) -> Result<Self> {
        if sample_count == 0 || !sample_count.is_multiple_of(3) {
            return Err(Error::Argument(format!(
                "balanced corpus size must be a positive multiple of 3, got {sample_count}"
            )));
        }
        let per = sample_count / 3;
        Ok(Self {
            quotas: [(Class4::Normal, per), (Class4::Benign, per), (Class4::Malignant, per)]
                .into_iter()
                .collect(),
            foreground_threshold: None,
        })
    }

    pub fn foreground_only(self, threshold_fraction: f64) -> Self {
        Self { foreground_threshold: Some(threshold_fraction), ..self }
    }

    pub fn sample_count(&self) -> usize {
        self.quotas.values().sum()
    }
}

/// Randomly draw the per-class quotas (without replacement) from `candidates`
/// and average the CDFs of the loaded images.
///
/// `load` turns a candidate into an image, so callers can stream from disk.
/// Every loaded image is rescaled to `levels` first.
pub fn average_cdf<T>(
    candidates: &[(Class4, T)],
    spec: &CorpusCdfSpec,
    levels: u32,
    rng: &mut SeededRng,
    mut load: impl FnMut(&T) -> Result<Image2D>,
) -> Result<Cdf> {
    let mut acc = CdfAccumulator::new(levels);
    for (&class, &quota) in &spec.quotas {
        let mut pool: Vec<&T> = candidates.iter().filter(|(c, _)| *c == class).map(|(_, t)| t).collect();
        if pool.len() < quota {
            return Err(Error::Data(format!(
                "class {class} needs {quota} samples for the average CDF, only {} available",
                pool.len()
            )));
        }
        pool.shuffle(rng);
        for item in pool.into_iter().take(quota) {
            let img = rescale_levels(&load(item)?, levels);
            let cdf = match spec.foreground_threshold {
                Some(t) => compute_cdf_masked(&img, &segment_foreground(&img, t)?)?,
                None => compute_cdf(&img),
            };
            acc.add(&cdf)?;
        }
    }
    acc.finish()
}

/// Linear rescale of intensities from `[0, K-1]` to `[0, L-1]`.
pub fn rescale_levels(img: &Image2D, levels: u32) -> Image2D {
    if img.levels() == levels {
        return img.clone();
    }
    let scale = f64::from(levels - 1) / f64::from(img.levels() - 1);
    let max = (levels - 1) as u16;
    let pixels = img.pixels().iter().map(|&p| quantize(f64::from(p) * scale, max)).collect();
    img.with_pixels(levels, pixels)
}

/// Linear rescale of a CDF onto a different level grid: the new CDF at level
/// `v` is the old CDF at the largest old level whose rescaled value is `<= v`.
pub fn rescale_cdf(cdf: &Cdf, levels: u32) -> Cdf {
    if cdf.levels == levels {
        return cdf.clone();
    }
    let scale = f64::from(levels - 1) / f64::from(cdf.levels - 1);
    let mut values = vec![0.0; levels as usize];
    for (old, &v) in cdf.values.iter().enumerate() {
        let new = quantize(old as f64 * scale, (levels - 1) as u16) as usize;
        values[new] = v;
    }
    // fill levels that no old level lands on with the running value
    let mut running = 0.0f64;
    for v in values.iter_mut() {
        running = running.max(*v);
        *v = running;
    }
    Cdf { levels, values }
}

/// Monotone remapping table from `source_levels` to `target_levels` intensities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HmLutRepr")]
pub struct HmLut {
    source_levels: u32,
    target_levels: u32,
    map: Vec<u16>,
}

#[derive(Deserialize)]
struct HmLutRepr {
    source_levels: u32,
    target_levels: u32,
    map: Vec<u16>,
}

impl TryFrom<HmLutRepr> for HmLut {
    type Error = Error;

    fn try_from(r: HmLutRepr) -> Result<Self> {
        HmLut::new(r.source_levels, r.target_levels, r.map)
    }
}

impl HmLut {
    pub fn new(source_levels: u32, target_levels: u32, map: Vec<u16>) -> Result<Self> {
        if map.len() != source_levels as usize {
            return Err(Error::Argument("LUT length must equal source level count".into()));
        }
        if map.iter().any(|&m| u32::from(m) >= target_levels) {
            return Err(Error::Argument("LUT entry exceeds target level range".into()));
        }
        if map.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Argument("LUT must be nondecreasing".into()));
        }
        Ok(Self { source_levels, target_levels, map })
    }

    pub fn identity(levels: u32) -> Self {
        Self { source_levels: levels, target_levels: levels, map: (0..levels).map(|v| v as u16).collect() }
    }

    pub fn source_levels(&self) -> u32 {
        self.source_levels
    }

    pub fn target_levels(&self) -> u32 {
        self.target_levels
    }

    pub fn map(&self) -> &[u16] {
        &self.map
    }
}

/// `map[p] = round(F_R^-1(F_S(p)))`.
pub fn build_hm_lut(source: &Cdf, reference: &Cdf) -> HmLut {
    let max = (reference.levels - 1) as u16;
    let mut map: Vec<u16> = source
        .values
        .iter()
        .map(|&q| quantize(reference.inverse(q), max))
        .collect();
    // interpolation is monotone in q; this only absorbs float ties at bin edges
    for i in 1..map.len() {
        if map[i] < map[i - 1] {
            map[i] = map[i - 1];
        }
    }
    HmLut { source_levels: source.levels, target_levels: reference.levels, map }
}

pub fn apply_hm(img: &Image2D, lut: &HmLut) -> Result<Image2D> {
    if img.levels() != lut.source_levels {
        return Err(Error::Argument(format!(
            "image has {} levels, LUT expects {}",
            img.levels(),
            lut.source_levels
        )));
    }
    let pixels = img.pixels().iter().map(|&p| lut.map[p as usize]).collect();
    Ok(img.with_pixels(lut.target_levels, pixels))
}

/// Kolmogorov-Smirnov distance `max_v |a(v) - b(v)|` on a shared level grid.
pub fn ks_distance(a: &Cdf, b: &Cdf) -> Result<f64> {
    if a.levels != b.levels {
        return Err(Error::Argument(format!(
            "KS distance needs a common grid ({} vs {} levels); rescale first",
            a.levels, b.levels
        )));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, k: u32, v: &[u16]) -> Image2D {
        Image2D::new(w, h, k, v.to_vec()).unwrap()
    }

    /// Counting oracle: for each level, count pixels <= level by direct scan.
    fn counting_cdf(pixels: &[u16], k: usize) -> Vec<f64> {
        (0..k)
            .map(|v| pixels.iter().filter(|&&p| (p as usize) <= v).count() as f64 / pixels.len() as f64)
            .collect()
    }

    #[test]
    fn cdf_constant_two_pixel_and_enumerated() {
        let c = compute_cdf(&Image2D::filled(3, 3, 8, 5).unwrap());
        assert_eq!(c.values(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let two = compute_cdf(&img(2, 1, 16, &[0, 15]));
        assert_eq!(two.at(0), 0.5);
        assert_eq!(two.at(15), 1.0);
        let px = [3, 0, 7, 7, 1, 2, 2, 6, 5, 0, 7, 4, 4, 4, 1, 3];
        assert_eq!(compute_cdf(&img(4, 4, 8, &px)).values(), counting_cdf(&px, 8).as_slice());
    }

    #[test]
    fn average_of_identical_and_two_constants() {
        let a = img(2, 2, 8, &[1, 3, 3, 6]);
        let ca = compute_cdf(&a);
        assert_eq!(mean_cdf([&ca, &ca, &ca]).unwrap(), ca);
        let lo = compute_cdf(&Image2D::filled(2, 2, 8, 2).unwrap());
        let hi = compute_cdf(&Image2D::filled(2, 2, 8, 5).unwrap());
        let m = mean_cdf([&lo, &hi]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn average_of_three_matches_per_bin_oracle() {
        let sets: [&[u16]; 3] = [&[0, 1, 2, 3], &[3, 3, 3, 1], &[7, 0, 5, 5]];
        let oracle: Vec<f64> = (0..8)
            .map(|v| sets.iter().map(|s| counting_cdf(s, 8)[v]).sum::<f64>() / 3.0)
            .collect();
        let cdfs: Vec<Cdf> = sets.iter().map(|s| compute_cdf(&img(2, 2, 8, s))).collect();
        let m = mean_cdf(&cdfs).unwrap();
        for (a, b) in m.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn average_cdf_quotas() {
        let mk = |v: u16| Image2D::filled(2, 2, 8, v).unwrap();
        let candidates = vec![
            (Class4::Normal, mk(1)),
            (Class4::Normal, mk(1)),
            (Class4::Benign, mk(1)),
            (Class4::Malignant, mk(1)),
        ];
        let spec = CorpusCdfSpec::balanced(3).unwrap();
        let m = average_cdf(&candidates, &spec, 8, &mut seeded(0), |i| Ok(i.clone())).unwrap();
        assert_eq!(m, compute_cdf(&mk(1)));
        let spec6 = CorpusCdfSpec::balanced(6).unwrap();
        let err = average_cdf(&candidates, &spec6, 8, &mut seeded(0), |i| Ok(i.clone()));
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn foreground_only_cdf_skips_background() {
        let im = img(2, 2, 8, &[0, 0, 4, 6]);
        let candidates = vec![(Class4::Normal, im.clone()), (Class4::Benign, im.clone()), (Class4::Malignant, im)];
        let spec = CorpusCdfSpec::balanced(3).unwrap().foreground_only(0.1);
        let m = average_cdf(&candidates, &spec, 8, &mut seeded(0), |i| Ok(i.clone())).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        let dark = vec![(Class4::Normal, img(2, 2, 8, &[0, 0, 0, 0]))];
        let spec = CorpusCdfSpec { quotas: [(Class4::Normal, 1)].into_iter().collect(), foreground_threshold: Some(0.1) };
        assert!(matches!(average_cdf(&dark, &spec, 8, &mut seeded(0), |i| Ok(i.clone())), Err(Error::Data(_))));
    }

    #[test]
    fn self_match_is_identity_for_strictly_increasing() {
        let f = Cdf::new(vec![0.1, 0.3, 0.35, 0.8, 1.0]).unwrap();
        assert_eq!(build_hm_lut(&f, &f).map(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn step_reference_collapses_to_c() {
        let src = Cdf::new((1..=16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let r = Cdf::step(16, 9).unwrap();
        let lut = build_hm_lut(&src, &r);
        assert!(lut.map().iter().all(|&m| m <= 9));
        assert_eq!(*lut.map().last().unwrap(), 9);
    }

    /// Exhaustive inverse-CDF oracle: scan reference levels for the first one
    /// reaching q, interpolate against its predecessor.
    fn oracle_lut(fs: &[f64], fr: &[f64]) -> Vec<u16> {
        fs.iter()
            .map(|&q| {
                let mut v = 0.0;
                if q > fr[0] {
                    for j in 1..fr.len() {
                        if fr[j] >= q {
                            v = (j - 1) as f64 + (q - fr[j - 1]) / (fr[j] - fr[j - 1]);
                            break;
                        }
                    }
                }
                v.round() as u16
            })
            .collect()
    }

    #[test]
    fn four_level_lut_matches_oracle() {
        let fs = [0.25, 0.5, 0.75, 1.0];
        let fr = [0.1, 0.4, 0.9, 1.0];
        let lut = build_hm_lut(&Cdf::new(fs.to_vec()).unwrap(), &Cdf::new(fr.to_vec()).unwrap());
        assert_eq!(lut.map(), oracle_lut(&fs, &fr).as_slice());
        assert_eq!(&lut.map()[1..], &[1, 2, 3]);

        // 3x3 image through that LUT, per-pixel lookup oracle
        let px = [0u16, 1, 2, 3, 3, 2, 1, 0, 2];
        let out = apply_hm(&img(3, 3, 4, &px), &lut).unwrap();
        let expect: Vec<u16> = px.iter().map(|&p| oracle_lut(&fs, &fr)[p as usize]).collect();
        assert_eq!(out.pixels(), expect.as_slice());
    }

    #[test]
    fn apply_identity_constant_and_mismatch() {
        let a = img(2, 2, 8, &[0, 3, 5, 7]);
        assert_eq!(apply_hm(&a, &HmLut::identity(8)).unwrap(), a);
        let lut = HmLut::new(8, 16, vec![0, 2, 4, 6, 8, 10, 12, 15]).unwrap();
        let c = apply_hm(&Image2D::filled(2, 2, 8, 3).unwrap(), &lut).unwrap();
        assert_eq!(c.levels(), 16);
        assert!(c.pixels().iter().all(|&p| p == 6));
        assert!(matches!(apply_hm(&a, &HmLut::identity(16)), Err(Error::Argument(_))));
    }

    #[test]
    fn ks_cases() {
        let a = Cdf::new(vec![0.2, 0.5, 0.9, 1.0]).unwrap();
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&Cdf::step(4, 0).unwrap(), &Cdf::step(4, 3).unwrap()).unwrap(), 1.0);
        let b = Cdf::new(vec![0.1, 0.1, 0.6, 1.0]).unwrap();
        let scan = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert_eq!(ks_distance(&a, &b).unwrap(), scan);
        assert!((scan - 0.4).abs() < 1e-15);
        assert!(ks_distance(&a, &Cdf::step(5, 1).unwrap()).is_err());
    }

    #[test]
    fn rescale_levels_endpoints() {
        let a = img(3, 1, 256, &[0, 128, 255]);
        let r = rescale_levels(&a, 4096);
        assert_eq!(r.pixels(), &[0, 2056, 4095]);
        let rc = rescale_cdf(&compute_cdf(&a), 4096);
        assert_eq!(rc, compute_cdf(&r));
    }

    #[test]
    fn cdf_validation() {
        assert!(Cdf::new(vec![0.5, 0.4, 1.0]).is_err());
        assert!(Cdf::new(vec![0.5, 0.9]).is_err());
        assert!(Cdf::new(vec![1.0]).is_err());
    }

    fn arb_cdf(max_levels: usize) -> impl Strategy<Value = Cdf> {
        prop::collection::vec(0u32..5, 2..max_levels).prop_map(|counts| {
            let mut counts = counts;
            let last = counts.len() - 1;
            counts[last] += 1;
            let total: u32 = counts.iter().sum();
            let mut run = 0;
            Cdf::new(
                counts
                    .iter()
                    .map(|c| {
                        run += c;
                        f64::from(run) / f64::from(total)
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn lut_is_monotone(a in arb_cdf(40), b in arb_cdf(40)) {
            let lut = build_hm_lut(&a, &b);
            prop_assert!(lut.map().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(lut.map().iter().all(|&m| u32::from(m) < b.levels()));
        }

        #[test]
        fn lut_matches_scan_oracle(a in arb_cdf(24), b in arb_cdf(24)) {
            let lut = build_hm_lut(&a, &b);
            let expected = oracle_lut(a.values(), b.values());
            prop_assert_eq!(lut.map(), expected.as_slice());
        }
    }
}
