//! Per-image manifest records, label mapping, patient-level splitting and the
//! class-balanced training sampler.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{pick, AnnotationBox};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class4 {
    Normal,
    Benign,
    HighRisk,
    Malignant,
}

impl Class4 {
    pub const ALL: [Class4; 4] = [Class4::Normal, Class4::Benign, Class4::HighRisk, Class4::Malignant];
}

impl fmt::Display for Class4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Class4::Normal => "normal",
            Class4::Benign => "benign",
            Class4::HighRisk => "high_risk",
            Class4::Malignant => "malignant",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Negative,
    Positive,
}

impl BinaryLabel {
    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }

    /// Class index used by the classifier (negative 0, positive 1).
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Normal and benign are negative; high-risk and malignant are positive.
pub fn binary_label(class: Class4) -> BinaryLabel {
    match class {
        Class4::Normal | Class4::Benign => BinaryLabel::Negative,
        Class4::HighRisk | Class4::Malignant => BinaryLabel::Positive,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub class4: Class4,
    pub patient_id: String,
    pub split: Split,
    #[serde(default)]
    pub annotation: Option<AnnotationBox>,
}

impl ManifestRecord {
    pub fn label(&self) -> BinaryLabel {
        binary_label(self.class4)
    }

    /// High-risk and malignant carry exactly one annotation, normal none,
    /// benign zero or one.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.class4 {
            Class4::HighRisk | Class4::Malignant => self.annotation.is_some(),
            Class4::Normal => self.annotation.is_none(),
            Class4::Benign => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "record {} ({}): annotation {} not allowed for this class",
                self.image_path.display(),
                self.class4,
                if self.annotation.is_some() { "present" } else { "missing" }
            )))
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Split ratios for train/val/test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

/// Assign every patient to exactly one split.
///
/// Ids are sorted, shuffled with `rng`, then cut at `round(n*train)` and
/// `round(n*(train+val))`.
pub fn split_patients<'a>(
    patient_ids: impl IntoIterator<Item = &'a str>,
    ratios: SplitRatios,
    rng: &mut SeededRng,
) -> Result<BTreeMap<String, Split>> {
    let total = ratios.train + ratios.val + ratios.test;
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| *r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios must be nonnegative and sum to 1, got {total}")));
    }
    let ids: BTreeSet<&str> = patient_ids.into_iter().collect();
    if ids.is_empty() {
        return Err(Error::Data("no patient ids to split".into()));
    }
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(rng);
    let n = ids.len() as f64;
    let cut_train = (n * ratios.train).round() as usize;
    let cut_val = ((n * (ratios.train + ratios.val)).round() as usize).max(cut_train);
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < cut_train {
                Split::Train
            } else if i < cut_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect())
}

/// Rewrite each record's split from a patient assignment.
pub fn apply_split(records: &mut [ManifestRecord], assignment: &BTreeMap<String, Split>) -> Result<()> {
    for r in records {
        r.split = *assignment
            .get(&r.patient_id)
            .ok_or_else(|| Error::Data(format!("patient {} has no split assignment", r.patient_id)))?;
    }
    Ok(())
}

pub fn records_in(records: &[ManifestRecord], split: Split) -> Vec<ManifestRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Draws positive or negative with probability 1/2 each, then uniformly
/// within that class.
#[derive(Clone, Debug)]
pub struct TwoClassSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl TwoClassSampler {
    pub fn new(records: &[ManifestRecord]) -> Result<Self> {
        let (mut positives, mut negatives) = (Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            if r.label().is_positive() {
                positives.push(i);
            } else {
                negatives.push(i);
            }
        }
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Data(format!(
                "two-class sampling needs both classes ({} positive, {} negative)",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(Self { positives, negatives })
    }

    /// Index into the record slice the sampler was built from.
    pub fn draw(&self, rng: &mut SeededRng) -> usize {
        let pool = if rng.random_bool(0.5) { &self.positives } else { &self.negatives };
        pool[pick(rng, pool.len())]
    }
}
