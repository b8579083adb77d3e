//! Command-line surface. The `harmonize` binary parses [`Cli`] and calls
//! [`run`]; errors map to exit codes via [`crate::Error::exit_code`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adapt::{policy_stats, FinetuneMode};
use crate::config::ExperimentConfig;
use crate::dataset::{resolve_image, PatchDataset, Preprocess};
use crate::error::{Error, Result};
use crate::experiment::{
    adapt, hm_lut, report_meta, target_preprocess, test_seed, train_source, AdaptedModel, DomainData, DomainSets,
};
use crate::histmatch::{apply_hm, average_cdf, build_hm_lut, rescale_levels, Cdf, CorpusCdfSpec};
use crate::image::mip;
use crate::manifest::{apply_split, read_manifest, split_patients, write_manifest, Split, SplitRatios};
use crate::metrics::{roc_csv, seeded_eval, EvalReport};
use crate::nn::checkpoint::{Checkpoint, SeedLineage};
use crate::pgm::{read_pgm, read_volume, write_pgm};
use crate::report::{read_json, write_json, write_text, RunMetadata};
use crate::rng::{seeded, substream};
use crate::synth::write_synthetic;

#[derive(Debug, Parser)]
#[command(name = "harmonize", version, about = "Histogram matching and domain adaptation for grayscale patch classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source and target corpora.
    Synth(SynthArgs),
    /// Assign patients to train/val/test.
    Split(SplitArgs),
    /// Corpus-average CDF of a manifest split.
    Cdf(CdfArgs),
    /// Histogram-match every PGM in a directory.
    Match(MatchArgs),
    /// Maximum intensity projection of a slice-stack volume.
    Mip(MipArgs),
    /// Extract one patch per image.
    Patchify(PatchifyArgs),
    /// Train the source classifier for every seed.
    Train(ConfigArg),
    /// Adapt the source classifiers to the target domain.
    Finetune(RunArgs),
    /// Evaluate adapted classifiers on a test split.
    Eval(EvalArgs),
    /// Collect evaluation reports into a summary table.
    Report(ConfigArg),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: `<output_dir>/data`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator seed (default: the first configured seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct CdfArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Images to average, split equally over normal, benign and malignant.
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = crate::histmatch::COMMON_LEVELS)]
    pub levels: u32,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram only pixels above this fraction of the maximum level.
    #[arg(long)]
    pub foreground_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Directory of PGM images.
    #[arg(long)]
    pub input: PathBuf,
    /// CDF of the domain being matched.
    #[arg(long)]
    pub source_cdf: PathBuf,
    /// CDF to match onto.
    #[arg(long)]
    pub reference_cdf: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MipArgs {
    /// Volume directory (slice PGMs plus `volume.json`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PatchifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub crop: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::patch::DEFAULT_THRESHOLD_FRACTION)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: FinetuneMode,
    /// Histogram matching of target images (default from the config).
    #[arg(long, value_enum)]
    pub hm: Option<Switch>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Source,
    Target,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = DomainArg::Target)]
    pub domain: DomainArg,
}

fn parse_mode(s: &str) -> std::result::Result<FinetuneMode, String> {
    s.parse()
}

/// Files under the run's output directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { root: cfg.output_dir.clone() }
    }

    fn tag(hm: bool) -> &'static str {
        if hm {
            "hm"
        } else {
            "raw"
        }
    }

    pub fn source_checkpoint(&self, seed: u64) -> PathBuf {
        self.root.join(format!("checkpoints/source_seed{seed}.json"))
    }

    pub fn adapted_checkpoint(&self, mode: FinetuneMode, hm: bool, seed: u64) -> PathBuf {
        self.root.join(format!("checkpoints/{mode}_{}_seed{seed}.json", Self::tag(hm)))
    }

    pub fn lut(&self, seed: u64) -> PathBuf {
        self.root.join(format!("hm/lut_seed{seed}.json"))
    }

    pub fn policy_csv(&self, hm: bool, seed: u64) -> PathBuf {
        self.root.join(format!("policy/spottune_{}_seed{seed}.csv", Self::tag(hm)))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(format!("reports/{name}.json"))
    }

    pub fn roc(&self, name: &str) -> PathBuf {
        self.root.join(format!("reports/{name}_roc.csv"))
    }

    pub fn metadata(&self, command: &str) -> PathBuf {
        self.root.join(format!("meta/{command}.json"))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Cdf(a) => cmd_cdf(&a),
        Command::Match(a) => cmd_match(&a),
        Command::Mip(a) => cmd_mip(&a),
        Command::Patchify(a) => cmd_patchify(&a),
        Command::Train(a) => cmd_train(&a.config),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a.config),
    }
}

fn write_meta(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    let meta = RunMetadata::new(command, cfg, cfg.seeds.clone())?;
    write_json(RunLayout::new(cfg).metadata(command), &serde_json::json!({ "run": meta, "config": cfg }))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = ExperimentConfig::load_settings(&a.config)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("data"));
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let (s, t) = write_synthetic(&cfg.synth, seed, &out)?;
    write_json(out.join("synth_meta.json"), &RunMetadata::new("synth", &cfg.synth, vec![seed])?)?;
    println!("{}\n{}", s.display(), t.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mut records = read_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no records", a.manifest.display())));
    }
    let ratios = SplitRatios { train: a.train, val: a.val, test: a.test };
    let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    let assignment = split_patients(ids.iter().map(String::as_str), ratios, &mut seeded(a.seed))
        .map_err(|e| match e {
            Error::Argument(m) => Error::config("split", m),
            e => e,
        })?;
    apply_split(&mut records, &assignment)?;
    // keep image paths valid relative to the new manifest location
    let src_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let dst_dir = a.out.parent().unwrap_or(Path::new("."));
    if src_dir != dst_dir {
        for r in &mut records {
            r.image_path = absolute(&resolve_image(src_dir, r));
        }
    }
    write_manifest(&a.out, &records)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn cmd_cdf(a: &CdfArgs) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let cands: Vec<_> = records
        .iter()
        .filter(|r| a.split.split().is_none_or(|s| r.split == s))
        .map(|r| (r.class4, resolve_image(dir, r)))
        .collect();
    if cands.is_empty() {
        return Err(Error::Data(format!("{} has no records in the requested split", a.manifest.display())));
    }
    let mut spec = CorpusCdfSpec::balanced(a.samples).map_err(|e| Error::config("samples", e.to_string()))?;
    if let Some(t) = a.foreground_threshold {
        spec = spec.foreground_only(t);
    }
    let cdf = average_cdf(&cands, &spec, a.levels, &mut seeded(a.seed), |p| read_pgm(p))?;
    write_json(&a.out, &cdf)
}

fn sorted_pgms(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_match(a: &MatchArgs) -> Result<()> {
    let src: Cdf = read_json(&a.source_cdf)?;
    let reference: Cdf = read_json(&a.reference_cdf)?;
    let lut = build_hm_lut(&src, &reference);
    let files = sorted_pgms(&a.input)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .pgm files in {}", a.input.display())));
    }
    for f in files {
        let img = rescale_levels(&read_pgm(&f)?, src.levels());
        let name = f.file_name().expect("listed file has a name");
        write_pgm(a.out.join(name), &apply_hm(&img, &lut)?)?;
    }
    write_json(a.out.join("lut.json"), &lut)
}

fn cmd_mip(a: &MipArgs) -> Result<()> {
    write_pgm(&a.out, &mip(&read_volume(&a.input)?))
}

fn cmd_patchify(a: &PatchifyArgs) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let items = records
        .into_iter()
        .filter(|r| a.split.split().is_none_or(|s| r.split == s))
        .map(|r| Ok((r.clone(), read_pgm(resolve_image(dir, &r))?)))
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::Data(format!("{} has no records in the requested split", a.manifest.display())));
    }
    let spec = crate::patch::PatchSpec { crop_size: a.crop, out_size: a.size };
    let data = PatchDataset::new(items, spec, &Preprocess::default(), a.threshold)?;
    let mut out_records = Vec::with_capacity(data.len());
    for (i, it) in data.items().iter().enumerate() {
        let mut rng = substream(a.seed, &format!("eval/{i}"));
        let center = crate::patch::choose_center(&it.record, &it.image, &it.mask, &spec, &mut rng)?;
        let patch = crate::patch::extract_patch(&it.image, center, &spec)?;
        let name = PathBuf::from(format!("patches/{i:05}.pgm"));
        write_pgm(a.out.join(&name), &patch)?;
        let mut rec = it.record.clone();
        rec.image_path = name;
        rec.annotation = None;
        out_records.push(rec);
    }
    write_manifest(a.out.join("manifest.jsonl"), &out_records)
}

fn source_data(cfg: &ExperimentConfig) -> Result<DomainData> {
    DomainData::from_manifest(cfg.require_manifest(true)?)
}

fn target_data(cfg: &ExperimentConfig) -> Result<DomainData> {
    DomainData::from_manifest(cfg.require_manifest(false)?)
}

fn write_report(layout: &RunLayout, name: &str, report: &EvalReport) -> Result<()> {
    write_json(layout.report(name), report)?;
    write_text(layout.roc(name), &roc_csv(&report.roc))
}

fn cmd_train(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let layout = RunLayout::new(&cfg);
    let sets = DomainSets::new(&cfg, &source_data(&cfg)?, &Preprocess::default())?;
    let mut models = Vec::new();
    for &seed in &cfg.seeds {
        let out = train_source(&cfg, &sets, seed)?;
        let lineage = SeedLineage { root_seed: seed, stages: vec!["net-init".into(), "source-train".into()] };
        Checkpoint::capture(&out.best.params, Some(out.best.optimizer.clone()), lineage)
            .save(layout.source_checkpoint(seed))?;
        write_json(layout.root.join(format!("history/source_seed{seed}.json")), &out.history)?;
        models.push((seed, AdaptedModel::Plain(out.best.params)));
    }
    let report = seeded_eval(&cfg.seeds, report_meta("train_from_scratch", "source", "source", false), |seed| {
        let m = &models.iter().find(|(s, _)| *s == seed).expect("trained").1;
        m.score_dataset(&sets.test, test_seed(seed))
    })?;
    write_report(&layout, "train_from_scratch_source", &report)?;
    write_meta(&cfg, "train")
}

fn hm_enabled(cfg: &ExperimentConfig, a: &RunArgs) -> bool {
    a.hm.map_or(cfg.hm.enabled, |s| s == Switch::On)
}

fn load_source_model(layout: &RunLayout, seed: u64) -> Result<crate::nn::NetParams> {
    Checkpoint::load(layout.source_checkpoint(seed))?.restore()
}

/// Target sets for one seed, computing and storing the HM table when enabled.
fn target_sets(cfg: &ExperimentConfig, layout: &RunLayout, target: &DomainData, hm: bool, seed: u64) -> Result<DomainSets> {
    if hm {
        let (_, _, lut) = hm_lut(cfg, &source_data(cfg)?, target, seed)?;
        write_json(layout.lut(seed), &lut)?;
        DomainSets::new(cfg, target, &target_preprocess(cfg, Some(&lut)))
    } else {
        DomainSets::new(cfg, target, &target_preprocess(cfg, None))
    }
}

fn cmd_finetune(a: &RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let layout = RunLayout::new(&cfg);
    let hm = hm_enabled(&cfg, a);
    let target = target_data(&cfg)?;
    for &seed in &cfg.seeds {
        let base = load_source_model(&layout, seed)?;
        let sets = target_sets(&cfg, &layout, &target, hm, seed)?;
        let model = adapt(&cfg, a.mode, &base, &sets, seed)?;
        if let AdaptedModel::Spottune(net) = &model {
            let x = sets.test.eval_batch(test_seed(seed))?.x;
            write_text(layout.policy_csv(hm, seed), &policy_stats(net, &x)?.to_csv())?;
        }
        write_json(layout.adapted_checkpoint(a.mode, hm, seed), &model)?;
    }
    write_meta(&cfg, &format!("finetune_{}_{}", a.mode, RunLayout::tag(hm)))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.run.config)?;
    let layout = RunLayout::new(&cfg);
    let mode = a.run.mode;
    let source_domain = a.domain == DomainArg::Source;
    // source-domain evaluation never uses matching
    let hm = !source_domain && hm_enabled(&cfg, &a.run);
    let data = if source_domain { source_data(&cfg)? } else { target_data(&cfg)? };
    let domain = if source_domain { "source" } else { "target" };
    let report = seeded_eval(&cfg.seeds, report_meta(mode.as_str(), "source", domain, hm), |seed| {
        let model = match mode {
            FinetuneMode::TestOnly => AdaptedModel::Plain(load_source_model(&layout, seed)?),
            m => read_json(layout.adapted_checkpoint(m, hm, seed))?,
        };
        let sets = if source_domain {
            DomainSets::new(&cfg, &data, &Preprocess::default())?
        } else if hm {
            let lut = match read_json(layout.lut(seed)) {
                Ok(l) => l,
                Err(_) => hm_lut(&cfg, &source_data(&cfg)?, &data, seed)?.2,
            };
            DomainSets::new(&cfg, &data, &target_preprocess(&cfg, Some(&lut)))?
        } else {
            DomainSets::new(&cfg, &data, &Preprocess::default())?
        };
        model.score_dataset(&sets.test, test_seed(seed))
    })?;
    let name = format!("{mode}_{domain}_{}", RunLayout::tag(hm));
    write_report(&layout, &name, &report)?;
    println!("{name}: {:.4} ± {:.4}", report.mean, report.std);
    write_meta(&cfg, &format!("eval_{name}"))
}

fn cmd_report(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let layout = RunLayout::new(&cfg);
    let dir = layout.root.join("reports");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no reports in {}", dir.display())));
    }
    let mut table = format!("{:<36} {:>7} {:>7}  seeds\n", "report", "mean", "std");
    let mut all = Vec::new();
    for f in files {
        let r: EvalReport = read_json(&f)?;
        let name = f.file_stem().expect("file").to_string_lossy().into_owned();
        let seeds: Vec<String> = r.per_seed.iter().map(|s| format!("{:.4}", s.auc)).collect();
        table.push_str(&format!("{name:<36} {:>7.4} {:>7.4}  {}\n", r.mean, r.std, seeds.join(" ")));
        all.push(serde_json::json!({ "name": name, "report": r }));
    }
    write_text(layout.root.join("summary.txt"), &table)?;
    write_json(layout.root.join("summary.json"), &all)?;
    print!("{table}");
    Ok(())
}
