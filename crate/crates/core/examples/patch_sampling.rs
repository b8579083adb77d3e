//! Segment foreground, pick patch centers and apply the training augmentation.
//!
//! cargo run --release --example patch_sampling -- [out_dir]

use std::path::PathBuf;

use harmonize::augment::{augment, AugmentConfig};
use harmonize::patch::{choose_center, extract_patch, segment_foreground, PatchSpec};
use harmonize::pgm::write_pgm;
use harmonize::rng::seeded;
use harmonize::synth::{generate_domain, Domain, SplitCounts, SyntheticDomainSpec};

fn main() -> harmonize::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "patches".into()));
    let spec = SyntheticDomainSpec {
        source_counts: SplitCounts { train: 6, val: 0, test: 0 },
        ..SyntheticDomainSpec::default()
    };
    let patch = PatchSpec { crop_size: 128, out_size: 64 };
    let aug = AugmentConfig::default().scaled_translation(64.0 / 512.0);
    let mut rng = seeded(5);
    for item in generate_domain(&spec, Domain::Source, 2)? {
        let mask = segment_foreground(&item.image, 0.02)?;
        let center = choose_center(&item.record, &item.image, &mask, &patch, &mut rng)?;
        let crop = extract_patch(&item.image, center, &patch)?;
        let augmented = augment(&crop, &aug, &mut rng)?;
        let name = item.record.patient_id.clone();
        write_pgm(out.join(format!("{name}.pgm")), &crop)?;
        write_pgm(out.join(format!("{name}_aug.pgm")), &augmented)?;
        println!(
            "{name}: class {}, foreground {:.0}%, center {center:?}, annotated {}",
            item.record.class4,
            100.0 * mask.count() as f64 / (item.image.width() * item.image.height()) as f64,
            item.record.annotation.is_some()
        );
    }
    println!("patches written to {}", out.display());
    Ok(())
}
