//! Online training-set management: candidate detection, recursive inclusion and
//! first-in-first-out eviction under a capacity bound.
//!
//! Every update returns a new [`GpModel`]; the source model is never touched, so
//! rejecting a candidate is just dropping it.

use crate::error::{Error, Result};
use crate::gp::{kernel_noise_free, GpModel};
use crate::linalg::dist2;

/// Regressors closer than this (normalized units) to an existing point are refused.
pub const DUPLICATE_RADIUS: f64 = 1e-9;

/// Thresholds are in the same (normalized) units as the model outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolvingConfig {
    pub e_bar: f64,
    pub sigma2_bar: f64,
    /// Maximum number of training points; `None` for unbounded.
    pub capacity: Option<usize>,
}

impl EvolvingConfig {
    pub fn new(e_bar: f64, sigma2_bar: f64, capacity: Option<usize>) -> Result<Self> {
        if !(e_bar >= 0.0 && sigma2_bar >= 0.0) {
            return Err(Error::InvalidParameter("thresholds must be non-negative".into()));
        }
        if capacity == Some(0) {
            return Err(Error::InvalidParameter("capacity must be at least 1".into()));
        }
        Ok(Self {
            e_bar,
            sigma2_bar,
            capacity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateCheck {
    pub is_candidate: bool,
    /// `y_next − m₊(w)`.
    pub prediction_error: f64,
    pub variance: f64,
}

pub fn is_candidate(model: &GpModel, w: &[f64], y_next: f64, cfg: &EvolvingConfig) -> Result<CandidateCheck> {
    let post = model.posterior(w)?;
    let e = y_next - post.mean;
    Ok(CandidateCheck {
        is_candidate: e.abs() > cfg.e_bar || post.variance > cfg.sigma2_bar,
        prediction_error: e,
        variance: post.variance,
    })
}

/// Model over `D ∪ {(w, y_next)}` with the point appended to the factor.
pub fn with_point(model: &GpModel, w: &[f64], y_next: f64) -> Result<GpModel> {
    let theta = model.theta();
    let mut min_dist = f64::INFINITY;
    for wi in model.data().regressors() {
        min_dist = min_dist.min(dist2(w, wi));
    }
    if min_dist < DUPLICATE_RADIUS {
        return Err(Error::DuplicatePoint { distance: min_dist });
    }
    let kw = model.cross_covariance(w)?;
    let diag = kernel_noise_free(w, w, theta) + theta.sigma_n2;
    let factor = model.factor().append(&kw, diag)?;
    let mut data = model.data().clone();
    data.push(w.to_vec(), y_next)?;
    GpModel::from_parts(data, theta.clone(), factor)
}

/// Model over `D` without its earliest-inserted point.
pub fn evict_oldest(model: &GpModel) -> Result<GpModel> {
    if model.n() == 0 {
        return Err(Error::EmptySet);
    }
    let factor = model.factor().remove(0)?;
    let mut data = model.data().clone();
    data.remove(0);
    if data.is_empty() {
        return GpModel::empty(model.theta().clone());
    }
    GpModel::from_parts(data, model.theta().clone(), factor)
}

/// Outcome of running the inclusion rule on one measurement.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub check: CandidateCheck,
    pub candidate: Option<GpModel>,
    /// Set when the point qualified but could not be inserted numerically.
    pub insert_error: Option<Error>,
}

/// Runs the inclusion rule and, for a qualifying point, builds the candidate:
/// append first, then evict the oldest point if capacity is exceeded.
pub fn propose(model: &GpModel, w: &[f64], y_next: f64, cfg: &EvolvingConfig) -> Result<Proposal> {
    let check = is_candidate(model, w, y_next, cfg)?;
    if !check.is_candidate {
        return Ok(Proposal {
            check,
            candidate: None,
            insert_error: None,
        });
    }
    let grown = match with_point(model, w, y_next) {
        Ok(m) => m,
        Err(e @ (Error::NotPositiveDefinite { .. } | Error::DuplicatePoint { .. })) => {
            return Ok(Proposal {
                check,
                candidate: None,
                insert_error: Some(e),
            })
        }
        Err(e) => return Err(e),
    };
    let candidate = match cfg.capacity {
        Some(m) if grown.n() > m => evict_oldest(&grown)?,
        _ => grown,
    };
    Ok(Proposal {
        check,
        candidate: Some(candidate),
        insert_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Hyperparameters, TrainingSet};

    fn theta() -> Hyperparameters {
        Hyperparameters::new(0.4, vec![0.3, 0.5], 0.2, 1e-4).unwrap()
    }

    fn base(n: usize) -> GpModel {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                vec![t, (3.0 * t).sin().abs()]
            })
            .collect();
        let z = pts.iter().map(|w| 0.3 + 0.2 * w[0] - 0.1 * w[1]).collect();
        GpModel::fit(TrainingSet::from_pairs(pts, z).unwrap(), theta()).unwrap()
    }

    fn assert_same_posterior(a: &GpModel, b: &GpModel) {
        for i in 0..10 {
            let q = [i as f64 * 0.11, 1.0 - i as f64 * 0.07];
            let pa = a.posterior(&q).unwrap();
            let pb = b.posterior(&q).unwrap();
            assert!((pa.mean - pb.mean).abs() < 1e-8);
            assert!((pa.variance - pb.variance).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_branch_triggers() {
        let cfg = EvolvingConfig::new(0.01, 2e-5, None).unwrap();
        let m = GpModel::empty(Hyperparameters::new(0.5, vec![1.0], 1e-4, 0.0).unwrap()).unwrap();
        let c = is_candidate(&m, &[0.0], 0.505, &cfg).unwrap();
        assert!((c.prediction_error - 0.005).abs() < 1e-12);
        assert!((c.variance - 1e-4).abs() < 1e-15);
        assert!(c.is_candidate);
    }

    #[test]
    fn exact_prediction_with_low_variance_is_not_candidate() {
        let m = base(8);
        let w = m.data().regressors()[3].clone();
        let mean = m.posterior_mean(&w).unwrap();
        let cfg = EvolvingConfig::new(0.01, 1.0, None).unwrap();
        assert!(!is_candidate(&m, &w, mean, &cfg).unwrap().is_candidate);
    }

    #[test]
    fn with_point_matches_refit() {
        let m = base(8);
        let grown = with_point(&m, &[0.33, 0.77], 0.5).unwrap();
        let mut data = m.data().clone();
        data.push(vec![0.33, 0.77], 0.5).unwrap();
        assert_same_posterior(&grown, &GpModel::fit(data, theta()).unwrap());
    }

    #[test]
    fn evict_matches_refit_and_empties() {
        let m = base(6);
        let shrunk = evict_oldest(&m).unwrap();
        let mut data = m.data().clone();
        data.remove(0);
        assert_same_posterior(&shrunk, &GpModel::fit(data, theta()).unwrap());

        let one = base(1);
        let empty = evict_oldest(&one).unwrap();
        assert_eq!(empty.n(), 0);
        assert!(matches!(evict_oldest(&empty), Err(Error::EmptySet)));
    }

    #[test]
    fn first_point_into_empty_model_interpolates() {
        let t = Hyperparameters::new(0.0, vec![1.0], 1.0, 0.0).unwrap();
        let m = with_point(&GpModel::empty(t).unwrap(), &[0.2], 0.7).unwrap();
        assert!((m.posterior_mean(&[0.2]).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn propose_respects_capacity_and_fifo() {
        let m = base(40);
        let cfg = EvolvingConfig::new(0.0, 0.0, Some(40)).unwrap();
        let p = propose(&m, &[0.5, 0.123], 0.9, &cfg).unwrap();
        let c = p.candidate.unwrap();
        assert_eq!(c.n(), 40);
        assert_eq!(c.data().regressors()[0], m.data().regressors()[1]);
        assert_eq!(c.data().regressors()[39], vec![0.5, 0.123]);

        let below = propose(&base(10), &[0.5, 0.123], 0.9, &cfg).unwrap();
        assert_eq!(below.candidate.unwrap().n(), 11);

        let huge = EvolvingConfig::new(1e9, 1e9, Some(40)).unwrap();
        assert!(propose(&m, &[0.5, 0.123], 0.9, &huge).unwrap().candidate.is_none());
    }

    #[test]
    fn duplicates_are_dropped_not_fatal() {
        let m = base(5);
        let w = m.data().regressors()[2].clone();
        let cfg = EvolvingConfig::new(0.0, 0.0, None).unwrap();
        let p = propose(&m, &w, 5.0, &cfg).unwrap();
        assert!(p.candidate.is_none());
        assert!(matches!(p.insert_error, Some(Error::DuplicatePoint { .. })));
    }

    #[test]
    fn source_model_untouched() {
        let m = base(12);
        let snapshot = m.clone();
        let cfg = EvolvingConfig::new(0.0, 0.0, Some(12)).unwrap();
        let _ = propose(&m, &[0.9, 0.1], 0.2, &cfg).unwrap();
        assert_eq!(m, snapshot);
    }
}
