//! Central finite-difference check of analytic gradients.

use rand::Rng;

use super::params::ParamSet;
use crate::error::Result;
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Perturbation size.
    pub step: f64,
    /// Entries sampled per tensor (all entries when the tensor is smaller).
    pub per_tensor: usize,
    /// Relative errors are `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, per_tensor: 4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Compare `analytic` against `(L(θ + h e_i) - L(θ - h e_i)) / 2h` on sampled
/// entries of every tensor whose name passes `keep`.
pub fn gradient_check<P: ParamSet + Clone>(
    params: &P,
    analytic: &P,
    keep: impl Fn(&str) -> bool,
    mut loss: impl FnMut(&P) -> Result<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = seeded(opts.seed);
    let mut targets: Vec<(String, usize, f64)> = Vec::new();
    analytic.visit(&mut |name, g| {
        if !keep(name) || g.is_empty() {
            return;
        }
        let picks: Vec<usize> = if g.len() <= opts.per_tensor {
            (0..g.len()).collect()
        } else {
            (0..opts.per_tensor).map(|_| rng.random_range(0..g.len())).collect()
        };
        for i in picks {
            targets.push((name.to_string(), i, g[i]));
        }
    });
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for (name, idx, a) in targets {
        let shifted = |delta: f64| {
            let mut p = params.clone();
            p.visit_mut(&mut |n, v| {
                if n == name {
                    v[idx] += delta;
                }
            });
            p
        };
        let plus = loss(&shifted(opts.step))?;
        let minus = loss(&shifted(-opts.step))?;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = format!("{name}[{idx}] analytic {a:e} numeric {numeric:e}");
        }
    }
    Ok(report)
}
