//! Build a lookup table from class-balanced average CDFs and map a target
//! corpus onto the source intensity distribution, once over whole images and
//! once over foreground pixels only.
//!
//! cargo run --release --example histogram_matching

use harmonize::experiment::DomainData;
use harmonize::histmatch::{
    apply_hm, average_cdf, build_hm_lut, compute_cdf_masked, ks_distance, mean_cdf, Cdf, CorpusCdfSpec,
};
use harmonize::image::Image2D;
use harmonize::patch::segment_foreground;
use harmonize::rng::seeded;
use harmonize::synth::{generate_domain, Domain, SplitCounts, SyntheticDomainSpec};

const THRESHOLD: f64 = 0.02;

/// Average tissue-only CDF, so the comparison is not dominated by how much
/// background each image happens to contain.
fn tissue_cdf(images: &[Image2D]) -> harmonize::Result<Cdf> {
    let cdfs = images
        .iter()
        .map(|img| compute_cdf_masked(img, &segment_foreground(img, THRESHOLD)?))
        .collect::<harmonize::Result<Vec<_>>>()?;
    mean_cdf(cdfs.iter())
}

fn main() -> harmonize::Result<()> {
    let spec = SyntheticDomainSpec {
        source_counts: SplitCounts { train: 60, val: 0, test: 20 },
        target_counts: SplitCounts { train: 30, val: 0, test: 20 },
        ..SyntheticDomainSpec::default()
    };
    let source = DomainData::from_synth(generate_domain(&spec, Domain::Source, 3)?);
    let target = DomainData::from_synth(generate_domain(&spec, Domain::Target, 3)?);
    let candidates = |d: &DomainData| d.train.iter().map(|(r, img)| (r.class4, img.clone())).collect::<Vec<_>>();
    let test = |d: &DomainData| d.test.iter().map(|(_, img)| img.clone()).collect::<Vec<_>>();
    let reference = tissue_cdf(&test(&source))?;
    let raw = test(&target);
    println!("held-out tissue KS to source, unmatched: {:.4}", ks_distance(&tissue_cdf(&raw)?, &reference)?);

    for foreground in [false, true] {
        let corpus = |n| -> harmonize::Result<CorpusCdfSpec> {
            let s = CorpusCdfSpec::balanced(n)?;
            Ok(if foreground { s.foreground_only(THRESHOLD) } else { s })
        };
        let mut rng = seeded(1);
        let src_cdf = average_cdf(&candidates(&source), &corpus(30)?, 4096, &mut rng, |i| Ok(i.clone()))?;
        let tgt_cdf = average_cdf(&candidates(&target), &corpus(15)?, 4096, &mut rng, |i| Ok(i.clone()))?;
        let lut = build_hm_lut(&tgt_cdf, &src_cdf);
        let matched = raw.iter().map(|img| apply_hm(img, &lut)).collect::<harmonize::Result<Vec<_>>>()?;
        let label = if foreground { "foreground CDFs" } else { "whole-image CDFs" };
        println!(
            "{label}: level 0 -> {}, 512 -> {}, held-out tissue KS {:.4}",
            lut.map()[0],
            lut.map()[512],
            ks_distance(&tissue_cdf(&matched)?, &reference)?
        );
    }
    Ok(())
}
