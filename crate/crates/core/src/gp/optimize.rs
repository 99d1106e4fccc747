//! Offline hyperparameter search: multi-start Nelder–Mead on the negative log
//! marginal likelihood over `(c, ln l, ln σf²)`, with σn² held fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{GpModel, Hyperparameters, TrainingSet};
use crate::error::{check_dim, Error, Result};
use crate::optim::{nelder_mead, NelderMeadConfig};

const LN_L_RANGE: (f64, f64) = (-7.0, 7.0);
const LN_SF2_RANGE: (f64, f64) = (-14.0, 5.0);
const C_RANGE: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { starts: 8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub theta: Hyperparameters,
    pub lml: f64,
    /// False when every start ran out of iterations before converging.
    pub converged: bool,
}

/// Maximizes the log marginal likelihood with `budget` simplex iterations per
/// start. Start 0 is `theta0`; the rest are seeded perturbations of it. The
/// result never scores below `theta0`.
pub fn optimize_hyperparameters(
    data: &TrainingSet,
    theta0: &Hyperparameters,
    budget: usize,
    cfg: OptimizerConfig,
) -> Result<OptimizeOutcome> {
    theta0.validate()?;
    if data.len() < 5 {
        return Err(Error::InvalidParameter(format!(
            "hyperparameter search needs at least 5 points, got {}",
            data.len()
        )));
    }
    check_dim(theta0.n_w(), data.n_w().unwrap_or(0))?;
    let lml0 = GpModel::fit(data.clone(), theta0.clone())?.log_marginal_likelihood();
    if budget == 0 {
        return Ok(OptimizeOutcome {
            theta: theta0.clone(),
            lml: lml0,
            converged: false,
        });
    }

    let x0 = pack(theta0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![x0.clone()];
    for _ in 1..cfg.starts.max(1) {
        let mut x = x0.clone();
        x[0] = rng.random_range(0.0..1.0);
        for v in &mut x[1..] {
            *v += rng.random_range(-1.5..1.5);
        }
        starts.push(clamp_into_box(x));
    }
    let mut step = vec![1.0; x0.len()];
    step[0] = 0.2;
    let nm = NelderMeadConfig {
        max_iter: budget,
        ..Default::default()
    };
    let sigma_n2 = theta0.sigma_n2;
    let objective = |x: &[f64]| -> f64 {
        match unpack(x, sigma_n2) {
            Some(t) => GpModel::fit(data.clone(), t).map_or(f64::INFINITY, |m| -m.log_marginal_likelihood()),
            None => f64::INFINITY,
        }
    };
    let results: Vec<_> = starts.par_iter().map(|s| nelder_mead(objective, s, &step, nm)).collect();

    let mut best = OptimizeOutcome {
        theta: theta0.clone(),
        lml: lml0,
        converged: false,
    };
    for r in &results {
        if -r.f > best.lml {
            if let Some(t) = unpack(&r.x, sigma_n2) {
                best.theta = t;
                best.lml = -r.f;
            }
        }
    }
    best.converged = results.iter().any(|r| r.converged);
    Ok(best)
}

fn pack(t: &Hyperparameters) -> Vec<f64> {
    let mut x = vec![t.c];
    x.extend(t.lengthscales.iter().map(|l| l.ln()));
    x.push(t.sigma_f2.ln());
    x
}

fn unpack(x: &[f64], sigma_n2: f64) -> Option<Hyperparameters> {
    let n_w = x.len() - 2;
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if !inside(x[0], C_RANGE)
        || !x[1..=n_w].iter().all(|v| inside(*v, LN_L_RANGE))
        || !inside(x[n_w + 1], LN_SF2_RANGE)
    {
        return None;
    }
    Some(Hyperparameters {
        c: x[0],
        lengthscales: x[1..=n_w].iter().map(|v| v.exp()).collect(),
        sigma_f2: x[n_w + 1].exp(),
        sigma_n2,
    })
}

fn clamp_into_box(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    x[0] = x[0].clamp(C_RANGE.0, C_RANGE.1);
    for v in &mut x[1..n - 1] {
        *v = v.clamp(LN_L_RANGE.0, LN_L_RANGE.1);
    }
    x[n - 1] = x[n - 1].clamp(LN_SF2_RANGE.0, LN_SF2_RANGE.1);
    x
}
