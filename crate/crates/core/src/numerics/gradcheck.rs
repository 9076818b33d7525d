use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Checks at most this many sampled coordinates per parameter.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat coordinate)` of the largest error.
    pub worst_param: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst_param`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients from `loss_fn` with central differences.
///
/// `loss_fn` returns the loss and its gradient with respect to each
/// parameter; it must be deterministic.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor<f64>], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        worst_values: None,
        checked: 0,
        passed: true,
    };
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < p.len() => {
                let mut c = sample(&mut rng, p.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for c in coords {
            let orig = p.data()[c];
            work[pi].data_mut()[c] = orig + cfg.step;
            let (plus, _) = loss_fn(&work)?;
            work[pi].data_mut()[c] = orig - cfg.step;
            let (minus, _) = loss_fn(&work)?;
            work[pi].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[pi].data()[c];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_none() {
                report.max_rel_err = rel;
                report.worst_param = Some((pi, c));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    report.passed = report.max_rel_err < cfg.tolerance;
    Ok(report)
}
