//! In-memory patch datasets: preprocessing, foreground masks, augmented
//! two-class training batches and seeded evaluation patches.

use std::path::Path;

use crate::augment::{augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::histmatch::{apply_hm, rescale_levels, HmLut};
use crate::image::Image2D;
use crate::manifest::{read_manifest, ManifestRecord, Split, TwoClassSampler};
use crate::nn::train::{BatchSource, LabelledBatch};
use crate::nn::Tensor;
use crate::patch::{choose_center, extract_patch, segment_foreground, ForegroundMask, PatchSpec};
use crate::pgm::read_pgm;
use crate::rng::{substream, SeededRng};

/// Intensity preprocessing applied to every image on load.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Preprocess {
    /// Rescale to this many levels first (the shared grid the LUT lives on).
    pub levels: Option<u32>,
    /// Histogram-matching table applied after rescaling.
    pub lut: Option<HmLut>,
}

impl Preprocess {
    pub fn apply(&self, img: &Image2D) -> Result<Image2D> {
        let img = match self.levels {
            Some(l) => rescale_levels(img, l),
            None => img.clone(),
        };
        match &self.lut {
            Some(lut) => apply_hm(&img, lut),
            None => Ok(img),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub record: ManifestRecord,
    pub image: Image2D,
    pub mask: ForegroundMask,
}

#[derive(Clone, Debug)]
pub struct PatchDataset {
    items: Vec<DatasetItem>,
    spec: PatchSpec,
}

/// Resolve a manifest image path against the manifest's directory.
pub fn resolve_image(manifest_dir: &Path, record: &ManifestRecord) -> std::path::PathBuf {
    if record.image_path.is_absolute() {
        record.image_path.clone()
    } else {
        manifest_dir.join(&record.image_path)
    }
}

/// Read the records of one split (or all) and their images.
pub fn load_split(manifest: &Path, split: Option<Split>) -> Result<Vec<(ManifestRecord, Image2D)>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let records = read_manifest(manifest)?;
    records
        .into_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| {
            let img = read_pgm(resolve_image(dir, &r))?;
            Ok((r, img))
        })
        .collect()
}

/// Patches scaled into `[0, 1]` as a `[n, 1, s, s]` tensor.
pub fn to_tensor(patches: &[Image2D]) -> Result<Tensor> {
    let first = patches.first().ok_or_else(|| Error::Data("no patches".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(patches.len() * w * h);
    for p in patches {
        if (p.width(), p.height()) != (w, h) {
            return Err(Error::Structural("patches differ in size".into()));
        }
        let scale = 1.0 / f64::from(p.max_level());
        data.extend(p.pixels().iter().map(|&v| f64::from(v) * scale));
    }
    Ok(Tensor::from_vec(patches.len(), 1, h, w, data))
}

impl PatchDataset {
    pub fn new(
        images: Vec<(ManifestRecord, Image2D)>,
        spec: PatchSpec,
        prep: &Preprocess,
        threshold_fraction: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if images.is_empty() {
            return Err(Error::Data("dataset has no images".into()));
        }
        let items = images
            .into_iter()
            .map(|(record, raw)| {
                let image = prep.apply(&raw)?;
                let mask = segment_foreground(&image, threshold_fraction)?;
                Ok(DatasetItem { record, image, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items, spec })
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    fn patch(&self, i: usize, rng: &mut SeededRng) -> Result<Image2D> {
        let it = &self.items[i];
        let center = choose_center(&it.record, &it.image, &it.mask, &self.spec, rng)?;
        extract_patch(&it.image, center, &self.spec)
    }

    /// One unaugmented patch per image. Centers of unannotated images come
    /// from a per-image stream derived from `seed`, so results do not depend
    /// on iteration order.
    pub fn eval_batch(&self, seed: u64) -> Result<LabelledBatch> {
        let mut patches = Vec::with_capacity(self.items.len());
        let mut labels = Vec::with_capacity(self.items.len());
        for (i, it) in self.items.iter().enumerate() {
            let mut rng = substream(seed, &format!("eval/{i}"));
            patches.push(self.patch(i, &mut rng)?);
            labels.push(it.record.label().index());
        }
        Ok(LabelledBatch { x: to_tensor(&patches)?, labels })
    }

    /// Endless augmented batches with positives and negatives drawn ½/½.
    pub fn sampler(&self, augment: AugmentConfig, rng: SeededRng) -> Result<TrainingSampler<'_>> {
        augment.validate()?;
        let records: Vec<ManifestRecord> = self.items.iter().map(|i| i.record.clone()).collect();
        Ok(TrainingSampler { data: self, classes: TwoClassSampler::new(&records)?, augment, rng })
    }
}

pub struct TrainingSampler<'a> {
    data: &'a PatchDataset,
    classes: TwoClassSampler,
    augment: AugmentConfig,
    rng: SeededRng,
}

impl BatchSource for TrainingSampler<'_> {
    fn next_batch(&mut self, size: usize) -> Result<(Tensor, Vec<usize>)> {
        let mut patches = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let i = self.classes.draw(&mut self.rng);
            let p = self.data.patch(i, &mut self.rng)?;
            patches.push(augment(&p, &self.augment, &mut self.rng)?);
            labels.push(self.data.items[i].record.label().index());
        }
        Ok((to_tensor(&patches)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::AnnotationBox;
    use crate::manifest::Class4;
    use crate::rng::seeded;

    fn item(class4: Class4, value: u16, ann: Option<(usize, usize)>) -> (ManifestRecord, Image2D) {
        let img = Image2D::from_fn(32, 32, 256, |x, y| if x < 24 { u32::from(value) + (y % 3) as u32 } else { 0 }).unwrap();
        let rec = ManifestRecord {
            image_path: format!("{value}.pgm").into(),
            class4,
            patient_id: format!("p{value}"),
            split: Split::Train,
            annotation: ann.map(|(x, y)| AnnotationBox { center_x: x, center_y: y, width: 4, height: 4 }),
        };
        (rec, img)
    }

    fn data() -> PatchDataset {
        let spec = PatchSpec { crop_size: 16, out_size: 8 };
        let items = vec![item(Class4::Normal, 50, None), item(Class4::Malignant, 200, Some((20, 20)))];
        PatchDataset::new(items, spec, &Preprocess::default(), 0.02).unwrap()
    }

    #[test]
    fn eval_batch_is_seeded_and_normalized() {
        let d = data();
        let a = d.eval_batch(1).unwrap();
        assert_eq!(a.x.n, 2);
        assert_eq!((a.x.h, a.x.w), (8, 8));
        assert_eq!(a.labels, vec![0, 1]);
        assert!(a.x.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.x.data, d.eval_batch(1).unwrap().x.data);
    }

    #[test]
    fn sampler_balances_classes() {
        let d = data();
        let mut s = d.sampler(AugmentConfig::disabled(), seeded(5)).unwrap();
        let (x, y) = s.next_batch(2000).unwrap();
        assert_eq!(x.n, 2000);
        let pos = y.iter().filter(|&&l| l == 1).count();
        assert!((pos as f64 / 2000.0 - 0.5).abs() < 0.04);
    }

    #[test]
    fn preprocess_applies_lut_after_rescale() {
        let img = Image2D::from_fn(4, 1, 16, |x, _| x as u32).unwrap();
        // doubles every level, saturating
        let map: Vec<u16> = (0..256u16).map(|v| (2 * v).min(255)).collect();
        let prep = Preprocess { levels: Some(256), lut: Some(HmLut::new(256, 256, map).unwrap()) };
        // level 1 of 16 rescales to 17 of 256
        assert_eq!(prep.apply(&img).unwrap().pixels(), &[0, 34, 68, 102]);
    }

    #[test]
    fn single_class_sampler_is_data_error() {
        let spec = PatchSpec { crop_size: 16, out_size: 8 };
        let d = PatchDataset::new(vec![item(Class4::Normal, 50, None)], spec, &Preprocess::default(), 0.02).unwrap();
        assert!(matches!(d.sampler(AugmentConfig::disabled(), seeded(0)), Err(Error::Data(_))));
    }
}
