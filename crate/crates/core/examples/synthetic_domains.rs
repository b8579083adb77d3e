//! Generate a paired source/target corpus and compare their intensity statistics.
//!
//! cargo run --release --example synthetic_domains -- [out_dir]

use harmonize::experiment::DomainData;
use harmonize::histmatch::{compute_cdf, ks_distance, mean_cdf};
use harmonize::synth::{write_synthetic, SplitCounts, SyntheticDomainSpec};

fn main() -> harmonize::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_data".into());
    let spec = SyntheticDomainSpec {
        source_counts: SplitCounts { train: 40, val: 10, test: 20 },
        target_counts: SplitCounts { train: 20, val: 10, test: 20 },
        ..SyntheticDomainSpec::default()
    };
    let (source, target) = write_synthetic(&spec, 7, out.as_ref())?;
    println!("wrote {} and {}", source.display(), target.display());

    let src = DomainData::from_manifest(&source)?;
    let tgt = DomainData::from_manifest(&target)?;
    let cdf_of = |d: &DomainData| {
        let cdfs: Vec<_> = d.test.iter().map(|(_, img)| compute_cdf(img)).collect();
        mean_cdf(cdfs.iter())
    };
    let (a, b) = (cdf_of(&src)?, cdf_of(&tgt)?);
    println!("source vs target average-CDF KS distance: {:.3}", ks_distance(&a, &b)?);
    for q in [0.25, 0.5, 0.75, 0.95] {
        println!("quantile {q:.2}: source level {:>6.0}, target level {:>6.0}", a.inverse(q), b.inverse(q));
    }
    Ok(())
}
