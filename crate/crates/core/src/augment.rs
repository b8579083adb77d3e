//! Training-time augmentation: random flips, rotation, translation and additive noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, flip_h, flip_v, rotate, translate, Image2D};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentStep {
    Flips,
    Rotate,
    Translate,
    Noise,
}

/// Units of `noise_sigma`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseUnits {
    /// Raw integer intensity levels.
    #[default]
    Levels,
    /// Fraction of the full range; multiplied by `K-1` before use.
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Probability of each flip (horizontal and vertical drawn independently).
    pub flip_prob: f64,
    pub noise_sigma: f64,
    pub noise_units: NoiseUnits,
    /// Std of the per-axis Gaussian shift, in pixels.
    pub translate_sigma: f64,
    /// Rotation is uniform on `[-range, +range]` degrees.
    pub rotate_range_deg: f64,
    pub order: Vec<AugmentStep>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            noise_sigma: 1.0,
            noise_units: NoiseUnits::Levels,
            translate_sigma: 20.0,
            rotate_range_deg: 30.0,
            order: vec![AugmentStep::Flips, AugmentStep::Rotate, AugmentStep::Translate, AugmentStep::Noise],
        }
    }
}

impl AugmentConfig {
    /// Every component off.
    pub fn disabled() -> Self {
        Self { flip_prob: 0.0, noise_sigma: 0.0, translate_sigma: 0.0, rotate_range_deg: 0.0, ..Self::default() }
    }

    /// Scale the geometric magnitudes for a patch that is `factor` times the
    /// reference size (e.g. 64 px desk patches vs 512 px).
    pub fn scaled_translation(mut self, factor: f64) -> Self {
        self.translate_sigma *= factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: &str| Err(Error::config(format!("augment.{f}"), m.to_string()));
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return field("flip_prob", "must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return field("noise_sigma", "must be finite and >= 0");
        }
        if !(self.translate_sigma >= 0.0 && self.translate_sigma.is_finite()) {
            return field("translate_sigma", "must be finite and >= 0");
        }
        if !(0.0..=180.0).contains(&self.rotate_range_deg) {
            return field("rotate_range_deg", "must lie in [0, 180]");
        }
        Ok(())
    }
}

/// One realisation of the random augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub degrees: f64,
    pub dx: i64,
    pub dy: i64,
}

pub fn sample_draw(cfg: &AugmentConfig, rng: &mut SeededRng) -> AugmentDraw {
    let flip_h = rng.random_bool(cfg.flip_prob);
    let flip_v = rng.random_bool(cfg.flip_prob);
    let degrees = if cfg.rotate_range_deg > 0.0 {
        rng.random_range(-cfg.rotate_range_deg..=cfg.rotate_range_deg)
    } else {
        0.0
    };
    let (dx, dy) = if cfg.translate_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.translate_sigma).expect("validated sigma");
        (n.sample(rng).round() as i64, n.sample(rng).round() as i64)
    } else {
        (0, 0)
    };
    AugmentDraw { flip_h, flip_v, degrees, dx, dy }
}

/// Apply a drawn parameter set in `cfg.order`; noise draws come from `rng`.
pub fn apply_draw(
    patch: &Image2D,
    draw: &AugmentDraw,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<Image2D> {
    let mut out = patch.clone();
    for step in &cfg.order {
        out = match step {
            AugmentStep::Flips => {
                let mut o = out;
                if draw.flip_h {
                    o = flip_h(&o);
                }
                if draw.flip_v {
                    o = flip_v(&o);
                }
                o
            }
            AugmentStep::Rotate => rotate(&out, draw.degrees)?,
            AugmentStep::Translate => translate(&out, draw.dx, draw.dy),
            AugmentStep::Noise => {
                let sigma = match cfg.noise_units {
                    NoiseUnits::Levels => cfg.noise_sigma,
                    NoiseUnits::Normalized => cfg.noise_sigma * f64::from(out.max_level()),
                };
                add_gaussian_noise(&out, sigma, rng)?
            }
        };
    }
    Ok(out)
}

pub fn augment(patch: &Image2D, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Image2D> {
    let draw = sample_draw(cfg, rng);
    apply_draw(patch, &draw, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn patch() -> Image2D {
        Image2D::from_fn(16, 16, 4096, |x, y| (x * 200 + y * 13) as u32).unwrap()
    }

    #[test]
    fn disabled_is_passthrough() {
        let p = patch();
        let mut rng = seeded(4);
        for _ in 0..20 {
            assert_eq!(augment(&p, &AugmentConfig::disabled(), &mut rng).unwrap(), p);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = patch();
        let cfg = AugmentConfig::default();
        let a = augment(&p, &cfg, &mut seeded(21)).unwrap();
        let b = augment(&p, &cfg, &mut seeded(21)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height(), a.levels()), (16, 16, 4096));
    }

    #[test]
    fn draw_statistics() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(99);
        let n = 10_000;
        let (mut flips, mut s, mut s2) = (0usize, 0.0, 0.0);
        for _ in 0..n {
            let d = sample_draw(&cfg, &mut rng);
            flips += d.flip_h as usize;
            assert!((-30.0..=30.0).contains(&d.degrees));
            s += d.dx as f64;
            s2 += (d.dx * d.dx) as f64;
        }
        let rate = flips as f64 / n as f64;
        let std = (s2 / n as f64 - (s / n as f64).powi(2)).sqrt();
        assert!((rate - 0.5).abs() <= 0.02, "flip rate {rate}");
        assert!((std - 20.0).abs() <= 1.0, "translation std {std}");
    }

    #[test]
    fn order_is_configurable() {
        let p = patch();
        let draw = AugmentDraw { flip_h: true, flip_v: false, degrees: 0.0, dx: 3, dy: 0 };
        let mut cfg = AugmentConfig::disabled();
        let a = apply_draw(&p, &draw, &cfg, &mut seeded(0)).unwrap();
        cfg.order = vec![AugmentStep::Translate, AugmentStep::Flips];
        let b = apply_draw(&p, &draw, &cfg, &mut seeded(0)).unwrap();
        assert_eq!(a, translate(&flip_h(&p), 3, 0));
        assert_eq!(b, flip_h(&translate(&p, 3, 0)));
        assert_ne!(a, b);
    }

    #[test]
    fn validation() {
        let c = AugmentConfig { flip_prob: 1.5, ..AugmentConfig::default() };
        assert!(c.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
