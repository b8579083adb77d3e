//! Train the residual classifier on the synthetic source domain and report
//! held-out AUC per epoch.
//!
//! cargo run --release --example train_source

use harmonize::config::ExperimentConfig;
use harmonize::dataset::Preprocess;
use harmonize::experiment::{test_seed, train_source, AdaptedModel, DomainData, DomainSets};
use harmonize::metrics::roc_auc;
use harmonize::nn::ParamSet;
use harmonize::synth::{generate_domain, Domain, SplitCounts};

fn main() -> harmonize::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.synth.source_counts = SplitCounts { train: 160, val: 40, test: 80 };
    cfg.train.epochs = 3;
    cfg.train.epoch_size = 640;
    let source = DomainData::from_synth(generate_domain(&cfg.synth, Domain::Source, 7)?);
    let sets = DomainSets::new(&cfg, &source, &Preprocess::default())?;

    let outcome = train_source(&cfg, &sets, 1)?;
    println!("{} parameters", outcome.best.params.flatten().len());
    for e in &outcome.history {
        let loss = e.mean_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        println!("epoch {}: loss {loss}, val AUC {:.3}", e.epoch, e.val_auc);
    }
    let model = AdaptedModel::Plain(outcome.best.params);
    let auc = roc_auc(&model.score_dataset(&sets.test, test_seed(1))?)?;
    println!("best epoch {}, test AUC {auc:.3}", outcome.best_epoch);
    Ok(())
}
