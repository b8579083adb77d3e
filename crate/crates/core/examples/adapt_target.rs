//! Adapt a source-trained model to the shifted target domain with each
//! procedure, with and without histogram matching, and print the learned
//! SpotTune routing.
//!
//! cargo run --release --example adapt_target

use harmonize::adapt::{policy_stats, FinetuneMode};
use harmonize::config::ExperimentConfig;
use harmonize::dataset::Preprocess;
use harmonize::experiment::{adapt, hm_lut, target_preprocess, test_seed, train_source, AdaptedModel, DomainData, DomainSets};
use harmonize::metrics::roc_auc;
use harmonize::synth::{generate_domain, Domain, SplitCounts};

fn main() -> harmonize::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.synth.source_counts = SplitCounts { train: 160, val: 40, test: 80 };
    cfg.synth.target_counts = SplitCounts { train: 60, val: 30, test: 80 };
    cfg.train.epochs = 3;
    cfg.train.epoch_size = 640;
    cfg.finetune.epochs = 2;
    cfg.finetune.epoch_size = 320;
    cfg.hm.source_samples = 120;
    cfg.hm.target_samples = 45;
    let source = DomainData::from_synth(generate_domain(&cfg.synth, Domain::Source, 7)?);
    let target = DomainData::from_synth(generate_domain(&cfg.synth, Domain::Target, 7)?);
    let seed = 1;

    let base = train_source(&cfg, &DomainSets::new(&cfg, &source, &Preprocess::default())?, seed)?.best.params;
    let (_, _, lut) = hm_lut(&cfg, &source, &target, seed)?;
    for lut in [None, Some(&lut)] {
        let sets = DomainSets::new(&cfg, &target, &target_preprocess(&cfg, lut))?;
        for mode in FinetuneMode::ALL {
            let model = adapt(&cfg, mode, &base, &sets, seed)?;
            let auc = roc_auc(&model.score_dataset(&sets.test, test_seed(seed))?)?;
            println!("{mode:<10} HM {:<3} target AUC {auc:.3}", if lut.is_some() { "yes" } else { "no" });
            if let AdaptedModel::Spottune(net) = &model {
                let x = sets.test.eval_batch(test_seed(seed))?.x;
                print!("{}", policy_stats(net, &x)?.to_csv());
            }
        }
    }
    Ok(())
}
