//! Collapse a volume by maximum-intensity projection and show that matching
//! before or after the projection gives the same image.
//!
//! cargo run --release --example mip_projection

use harmonize::histmatch::{apply_hm, build_hm_lut, compute_cdf};
use harmonize::image::{mip, Image2D, Volume3D};
use harmonize::rng::seeded;
use rand::Rng;

fn main() -> harmonize::Result<()> {
    let mut rng = seeded(11);
    let slices = (0..16)
        .map(|z| {
            let peak = 1000 + 150 * z as u32;
            Image2D::from_fn(96, 96, 4096, |x, y| {
                let d = ((x as f64 - 48.0).powi(2) + (y as f64 - 48.0).powi(2)).sqrt();
                let base = (f64::from(peak) * (-d / 40.0).exp()) as u32;
                (base + rng.random_range(0..64)).min(4095)
            })
        })
        .collect::<harmonize::Result<Vec<_>>>()?;
    let volume = Volume3D::new(slices)?;
    let projection = mip(&volume);
    let (lo, hi) = projection.min_max();
    println!("{} slices projected to {}x{}, range {lo}..{hi}", volume.depth(), projection.width(), projection.height());

    let reference = Image2D::from_fn(64, 64, 4096, |x, y| ((x * 64 + y) % 4096) as u32)?;
    let lut = build_hm_lut(&compute_cdf(&projection), &compute_cdf(&reference));
    let after = apply_hm(&projection, &lut)?;
    let before = mip(&volume.map_slices(|s| apply_hm(s, &lut))?);
    println!("match-then-project equals project-then-match: {}", after == before);
    Ok(())
}
