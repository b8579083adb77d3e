//! Per-seed source training, histogram matching, target adaptation and the
//! procedure × preprocessing report matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{finetune_last_layer, policy_stats, spottune_train, FinetuneMode, PolicyStats, SpotTuneNet};
use crate::config::ExperimentConfig;
use crate::dataset::{load_split, PatchDataset, Preprocess};
use crate::error::{Error, Result};
use crate::histmatch::{average_cdf, build_hm_lut, Cdf, CorpusCdfSpec, HmLut};
use crate::image::Image2D;
use crate::manifest::{ManifestRecord, Split};
use crate::metrics::{seeded_eval, EvalReport, ReportMeta, ScoredSet};
use crate::nn::train::{net_scores, train_classifier, TrainOutcome, Trained};
use crate::nn::{NetParams, Tensor};
use crate::rng::{derive_seed, substream};
use crate::synth::SynthItem;

pub type Labelled = Vec<(ManifestRecord, Image2D)>;

/// Train/val/test images of one domain.
#[derive(Clone, Debug, Default)]
pub struct DomainData {
    pub train: Labelled,
    pub val: Labelled,
    pub test: Labelled,
}

impl DomainData {
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let mut d = DomainData::default();
        for (r, img) in load_split(path, None)? {
            d.part_mut(r.split).push((r, img));
        }
        Ok(d)
    }

    pub fn from_synth(items: Vec<SynthItem>) -> Self {
        let mut d = DomainData::default();
        for it in items {
            d.part_mut(it.record.split).push((it.record, it.image));
        }
        d
    }

    pub fn part(&self, split: Split) -> &Labelled {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn part_mut(&mut self, split: Split) -> &mut Labelled {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Patch datasets for the three splits of one domain under one preprocessing.
pub struct DomainSets {
    pub train: PatchDataset,
    pub val: PatchDataset,
    pub test: PatchDataset,
}

impl DomainSets {
    pub fn new(cfg: &ExperimentConfig, data: &DomainData, prep: &Preprocess) -> Result<Self> {
        let make = |split: Split| {
            PatchDataset::new(data.part(split).clone(), cfg.patch, prep, cfg.threshold_fraction)
                .map_err(|e| match e {
                    Error::Data(m) => Error::Data(format!("{split} split: {m}")),
                    e => e,
                })
        };
        Ok(Self { train: make(Split::Train)?, val: make(Split::Val)?, test: make(Split::Test)? })
    }
}

/// Seed used for the validation patches during model selection.
pub fn val_seed(seed: u64) -> u64 {
    derive_seed(seed, "val-patches")
}

/// Seed used for test patch placement; shared across domains so that paired
/// synthetic images are cropped at the same place.
pub fn test_seed(seed: u64) -> u64 {
    derive_seed(seed, "test-patches")
}

/// Average CDFs of both domains' training images and the LUT mapping target
/// intensities onto the source distribution.
pub fn hm_lut(cfg: &ExperimentConfig, source: &DomainData, target: &DomainData, seed: u64) -> Result<(Cdf, Cdf, HmLut)> {
    let mut rng = substream(seed, "hm-cdf");
    let spec = |n: usize| -> Result<CorpusCdfSpec> {
        let s = CorpusCdfSpec::balanced(n)?;
        Ok(if cfg.hm.foreground_only { s.foreground_only(cfg.threshold_fraction) } else { s })
    };
    let src = average_cdf(
        &candidates(source),
        &spec(cfg.hm.source_samples)?,
        cfg.hm.levels,
        &mut rng,
        |img| Ok((*img).clone()),
    )?;
    let tgt = average_cdf(
        &candidates(target),
        &spec(cfg.hm.target_samples)?,
        cfg.hm.levels,
        &mut rng,
        |img| Ok((*img).clone()),
    )?;
    let lut = build_hm_lut(&tgt, &src);
    Ok((src, tgt, lut))
}

fn candidates(d: &DomainData) -> Vec<(crate::manifest::Class4, &Image2D)> {
    d.train.iter().map(|(r, img)| (r.class4, img)).collect()
}

/// Preprocessing for target images: rescale and match when `lut` is given.
pub fn target_preprocess(cfg: &ExperimentConfig, lut: Option<&HmLut>) -> Preprocess {
    match lut {
        Some(l) => Preprocess { levels: Some(cfg.hm.levels), lut: Some(l.clone()) },
        None => Preprocess::default(),
    }
}

/// Train the source classifier for one seed.
pub fn train_source(cfg: &ExperimentConfig, sets: &DomainSets, seed: u64) -> Result<TrainOutcome<Trained>> {
    let init = NetParams::init(&cfg.net, seed)?;
    let mut sampler = sets.train.sampler(cfg.augment.clone(), substream(seed, "source-train"))?;
    let val = sets.val.eval_batch(val_seed(seed))?;
    train_classifier(init, &mut sampler, &val, &cfg.train)
}

/// A classifier after adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum AdaptedModel {
    Plain(NetParams),
    Spottune(Box<SpotTuneNet>),
}

impl AdaptedModel {
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        match self {
            AdaptedModel::Plain(p) => net_scores(p, x),
            AdaptedModel::Spottune(s) => s.scores(x),
        }
    }

    pub fn score_dataset(&self, data: &PatchDataset, seed: u64) -> Result<ScoredSet> {
        let batch = data.eval_batch(seed)?;
        Ok(batch.scored(self.scores(&batch.x)?))
    }
}

/// Adapt `base` to target data with the given procedure.
pub fn adapt(
    cfg: &ExperimentConfig,
    mode: FinetuneMode,
    base: &NetParams,
    sets: &DomainSets,
    seed: u64,
) -> Result<AdaptedModel> {
    let tc = cfg.finetune.train_config();
    let val = || sets.val.eval_batch(val_seed(seed));
    let sampler = || sets.train.sampler(cfg.augment.clone(), substream(seed, "target-train"));
    Ok(match mode {
        FinetuneMode::TestOnly => AdaptedModel::Plain(base.clone()),
        FinetuneMode::LastLayer => AdaptedModel::Plain(finetune_last_layer(base, &mut sampler()?, &val()?, &tc)?.best),
        FinetuneMode::Spottune => {
            let net = SpotTuneNet::new(base, derive_seed(seed, "policy-init"), cfg.finetune.temperature)?;
            let mut rng = substream(seed, "routing");
            let out = spottune_train(net, &mut sampler()?, &val()?, &tc, &mut rng)?;
            AdaptedModel::Spottune(Box::new(out.best))
        }
    })
}

pub fn report_meta(mode: &str, train_domain: &str, test_domain: &str, hm: bool) -> ReportMeta {
    ReportMeta {
        mode: mode.into(),
        train_domain: train_domain.into(),
        test_domain: test_domain.into(),
        histogram_matching: hm,
        std_kind: String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub seed: u64,
    pub histogram_matching: bool,
    pub stats: PolicyStats,
}

/// Source baseline plus one report per (procedure, preprocessing) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub source: EvalReport,
    pub cells: Vec<EvalReport>,
    pub policies: Vec<PolicyRecord>,
}

impl MatrixOutcome {
    pub fn cell(&self, mode: FinetuneMode, hm: bool) -> Option<&EvalReport> {
        self.cells.iter().find(|r| r.meta.mode == mode.as_str() && r.meta.histogram_matching == hm)
    }

    /// Plain-text table: procedure, preprocessing, mean ± std.
    pub fn table(&self) -> String {
        let mut s = format!("{:<18} {:<6} {:<4} AUC\n", "procedure", "test", "HM");
        let row = |r: &EvalReport| {
            format!(
                "{:<18} {:<6} {:<4} {:.3} ± {:.3}\n",
                r.meta.mode,
                r.meta.test_domain,
                if r.meta.histogram_matching { "yes" } else { "no" },
                r.mean,
                r.std
            )
        };
        s.push_str(&row(&self.source));
        for r in &self.cells {
            s.push_str(&row(r));
        }
        s
    }
}

/// Run the full matrix: per seed, train on source, then for each HM setting
/// and procedure adapt and test on the target domain.
type SeedScores = Vec<(u64, ScoredSet)>;

pub fn run_matrix(
    cfg: &ExperimentConfig,
    source: &DomainData,
    target: &DomainData,
    modes: &[FinetuneMode],
    hm_settings: &[bool],
) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let src_sets = DomainSets::new(cfg, source, &Preprocess::default())?;
    let plain_target = DomainSets::new(cfg, target, &Preprocess::default())?;
    let mut source_sets_by_seed = Vec::new();
    // (mode, hm) -> per-seed scored sets
    let mut cell_scores: Vec<((FinetuneMode, bool), SeedScores)> = Vec::new();
    for &hm in hm_settings {
        for &m in modes {
            cell_scores.push(((m, hm), Vec::new()));
        }
    }
    let mut policies = Vec::new();
    for &seed in &cfg.seeds {
        let base = train_source(cfg, &src_sets, seed)?.best.params;
        let base_model = AdaptedModel::Plain(base.clone());
        source_sets_by_seed.push((seed, base_model.score_dataset(&src_sets.test, test_seed(seed))?));
        for &hm in hm_settings {
            let matched;
            let sets = if hm {
                let (_, _, lut) = hm_lut(cfg, source, target, seed)?;
                matched = DomainSets::new(cfg, target, &target_preprocess(cfg, Some(&lut)))?;
                &matched
            } else {
                &plain_target
            };
            for &mode in modes {
                let model = adapt(cfg, mode, &base, sets, seed)?;
                let scored = model.score_dataset(&sets.test, test_seed(seed))?;
                if let AdaptedModel::Spottune(net) = &model {
                    let x = sets.test.eval_batch(test_seed(seed))?.x;
                    policies.push(PolicyRecord { seed, histogram_matching: hm, stats: policy_stats(net, &x)? });
                }
                let slot = cell_scores.iter_mut().find(|(k, _)| *k == (mode, hm)).expect("cell exists");
                slot.1.push((seed, scored));
            }
        }
    }
    let from_cache = |meta: ReportMeta, cached: &[(u64, ScoredSet)]| {
        let seeds: Vec<u64> = cached.iter().map(|(s, _)| *s).collect();
        seeded_eval(&seeds, meta, |s| {
            Ok(cached.iter().find(|(k, _)| *k == s).expect("seed scored").1.clone())
        })
    };
    let source = from_cache(report_meta("train_from_scratch", "source", "source", false), &source_sets_by_seed)?;
    let cells = cell_scores
        .iter()
        .map(|((mode, hm), cached)| from_cache(report_meta(mode.as_str(), "source", "target", *hm), cached))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatrixOutcome { source, cells, policies })
}
