//! Run the full source-to-target evaluation matrix over several seeds.
//!
//! cargo run --release --example transfer_matrix -- [config.toml]

use harmonize::adapt::FinetuneMode;
use harmonize::config::ExperimentConfig;
use harmonize::experiment::{run_matrix, DomainData};
use harmonize::synth::{generate_domain, Domain};

fn main() -> harmonize::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig { seeds: vec![1, 2], ..ExperimentConfig::desk() },
    };
    let (source, target) = match (&cfg.data.source_manifest, &cfg.data.target_manifest) {
        (Some(s), Some(t)) => (DomainData::from_manifest(s)?, DomainData::from_manifest(t)?),
        _ => (
            DomainData::from_synth(generate_domain(&cfg.synth, Domain::Source, 7)?),
            DomainData::from_synth(generate_domain(&cfg.synth, Domain::Target, 7)?),
        ),
    };
    let outcome = run_matrix(&cfg, &source, &target, &FinetuneMode::ALL, &[false, true])?;
    print!("{}", outcome.table());
    for p in &outcome.policies {
        let probs: Vec<String> = p.stats.finetune_probability.iter().map(|v| format!("{v:.2}")).collect();
        println!("seed {} HM {}: fine-tune probability per block [{}]", p.seed, p.histogram_matching, probs.join(", "));
    }
    Ok(())
}
