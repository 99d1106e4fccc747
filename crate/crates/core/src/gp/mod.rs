//! Exact GP regression with a constant prior mean and the ARD squared-exponential
//! kernel. All solves go through a cached Cholesky factor of the kernel matrix.

mod io;
mod optimize;

pub(crate) use io::parse_key_values;
pub use io::{parse_hyperparameters, parse_training_set, write_hyperparameters, write_training_set};
pub use optimize::{optimize_hyperparameters, OptimizeOutcome, OptimizerConfig};

use crate::chol::CholFactor;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};

/// Jitter relative to the signal variance, used when a pivot collapses.
pub const JITTER_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Constant prior mean.
    pub c: f64,
    pub lengthscales: Vec<f64>,
    pub sigma_f2: f64,
    pub sigma_n2: f64,
}

impl Hyperparameters {
    pub fn new(c: f64, lengthscales: Vec<f64>, sigma_f2: f64, sigma_n2: f64) -> Result<Self> {
        let theta = Self {
            c,
            lengthscales,
            sigma_f2,
            sigma_n2,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::InvalidParameter("prior mean must be finite".into()));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("lengthscales must be positive".into()));
        }
        if !(self.sigma_f2 > 0.0 && self.sigma_f2.is_finite()) {
            return Err(Error::InvalidParameter("sigma_f2 must be positive".into()));
        }
        if !(self.sigma_n2 >= 0.0 && self.sigma_n2.is_finite()) {
            return Err(Error::InvalidParameter("sigma_n2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_w(&self) -> usize {
        self.lengthscales.len()
    }

    /// Values reported for the three CSTR training sets (`c, l1..l4, σf²`).
    pub fn cstr_reported(set: ReportedSet, sigma_n2: f64) -> Self {
        let (c, l, sf2) = match set {
            ReportedSet::D0 => (0.64, [0.07, 0.29, 0.14, 9.93], 0.06),
            ReportedSet::Dref => (0.36, [0.20, 11.7, 0.64, 5.07], 0.13),
            ReportedSet::Dcomb => (0.43, [0.42, 2.09, 1.01, 2.83], 0.26),
        };
        Self {
            c,
            lengthscales: l.to_vec(),
            sigma_f2: sf2,
            sigma_n2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportedSet {
    D0,
    Dref,
    Dcomb,
}

/// Ordered regressor/output pairs. Insertion order is preserved and doubles as age.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    regressors: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(regressors: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        check_dim(regressors.len(), outputs.len())?;
        if let Some(first) = regressors.first() {
            let n_w = first.len();
            for w in &regressors {
                check_dim(n_w, w.len())?;
            }
        }
        Ok(Self { regressors, outputs })
    }

    pub fn push(&mut self, w: Vec<f64>, z: f64) -> Result<()> {
        if let Some(first) = self.regressors.first() {
            check_dim(first.len(), w.len())?;
        }
        self.regressors.push(w);
        self.outputs.push(z);
        Ok(())
    }

    pub fn remove(&mut self, index: usize) -> (Vec<f64>, f64) {
        (self.regressors.remove(index), self.outputs.remove(index))
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Regressor dimension, or `None` for an empty set.
    pub fn n_w(&self) -> Option<usize> {
        self.regressors.first().map(Vec::len)
    }

    pub fn regressors(&self) -> &[Vec<f64>] {
        &self.regressors
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.regressors.iter().map(Vec::as_slice).zip(self.outputs.iter().copied())
    }

    /// Concatenation preserving both orders (`self` first).
    pub fn union(&self, other: &TrainingSet) -> Result<TrainingSet> {
        let mut out = self.clone();
        for (w, z) in other.iter() {
            out.push(w.to_vec(), z)?;
        }
        Ok(out)
    }
}

/// ARD squared-exponential covariance `σf² exp(−½ Σ ((a_k − b_k)/l_k)²) + σn² δ`.
pub fn kernel(a: &[f64], b: &[f64], theta: &Hyperparameters, same_index: bool) -> Result<f64> {
    check_dim(theta.n_w(), a.len())?;
    check_dim(theta.n_w(), b.len())?;
    let noise = if same_index { theta.sigma_n2 } else { 0.0 };
    Ok(kernel_noise_free(a, b, theta) + noise)
}

#[inline]
pub(crate) fn kernel_noise_free(a: &[f64], b: &[f64], theta: &Hyperparameters) -> f64 {
    let mut q = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&theta.lengthscales) {
        let d = (x - y) / l;
        q += d * d;
    }
    theta.sigma_f2 * (-0.5 * q).exp()
}

/// Kernel matrix `K` including the noise diagonal.
pub fn kernel_matrix(data: &TrainingSet, theta: &Hyperparameters) -> Matrix {
    let n = data.len();
    let w = data.regressors();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = theta.sigma_f2 + theta.sigma_n2;
        for j in 0..i {
            let v = kernel_noise_free(&w[i], &w[j], theta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

/// Training set, hyperparameters and the cached factor/weights they determine.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    data: TrainingSet,
    theta: Hyperparameters,
    factor: CholFactor,
    alpha: Vec<f64>,
}

impl GpModel {
    /// Model with no data; the posterior equals the prior.
    pub fn empty(theta: Hyperparameters) -> Result<Self> {
        theta.validate()?;
        let jitter = JITTER_REL * theta.sigma_f2;
        Ok(Self {
            data: TrainingSet::new(),
            theta,
            factor: CholFactor::empty_with_jitter(jitter),
            alpha: Vec::new(),
        })
    }

    pub fn fit(data: TrainingSet, theta: Hyperparameters) -> Result<Self> {
        theta.validate()?;
        if data.is_empty() {
            return Err(Error::EmptySet);
        }
        check_dim(theta.n_w(), data.n_w().unwrap_or(0))?;
        let k = kernel_matrix(&data, &theta);
        let factor = CholFactor::factorize_with_jitter(&k, JITTER_REL * theta.sigma_f2)?;
        let alpha = solve_alpha(&factor, &data, &theta)?;
        Ok(Self {
            data,
            theta,
            factor,
            alpha,
        })
    }

    /// Assembles a model from parts produced by an incremental update.
    pub(crate) fn from_parts(data: TrainingSet, theta: Hyperparameters, factor: CholFactor) -> Result<Self> {
        let alpha = solve_alpha(&factor, &data, &theta)?;
        Ok(Self {
            data,
            theta,
            factor,
            alpha,
        })
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Covariances between `w` and every training regressor (noise-free).
    pub fn cross_covariance(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.theta.n_w(), w.len())?;
        Ok(self
            .data
            .regressors()
            .iter()
            .map(|wi| kernel_noise_free(w, wi, &self.theta))
            .collect())
    }

    /// Posterior mean only; `O(n·n_w)`.
    pub fn posterior_mean(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.theta.n_w(), w.len())?;
        let mut m = self.theta.c;
        for (wi, a) in self.data.regressors().iter().zip(&self.alpha) {
            m += a * kernel_noise_free(w, wi, &self.theta);
        }
        Ok(m)
    }

    /// Posterior mean and latent-function variance at `w`, variance clamped at 0.
    pub fn posterior(&self, w: &[f64]) -> Result<Posterior> {
        let (mean, variance) = self.posterior_unclamped(w)?;
        Ok(Posterior {
            mean,
            variance: variance.max(0.0),
        })
    }

    /// As [`posterior`](Self::posterior) without clamping, for diagnostics.
    pub fn posterior_unclamped(&self, w: &[f64]) -> Result<(f64, f64)> {
        let kw = self.cross_covariance(w)?;
        let mean = self.theta.c + dot(&kw, &self.alpha);
        let v = self.factor.solve_lower(&kw)?;
        Ok((mean, self.theta.sigma_f2 - dot(&v, &v)))
    }

    /// `∇m₊(w) = Σᵢ αᵢ k*(w, wᵢ) Λ (wᵢ − w)`.
    pub fn posterior_mean_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.theta.n_w(), w.len())?;
        let mut g = vec![0.0; w.len()];
        for (wi, a) in self.data.regressors().iter().zip(&self.alpha) {
            let s = a * kernel_noise_free(w, wi, &self.theta);
            for ((gd, (x, xi)), l) in g.iter_mut().zip(w.iter().zip(wi)).zip(&self.theta.lengthscales) {
                *gd += s * (xi - x) / (l * l);
            }
        }
        Ok(g)
    }

    /// `−½ rᵀα − ½ log|K| − (n/2) log 2π` with residual `r = z − c`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n() as f64;
        let fit: f64 = self
            .data
            .outputs()
            .iter()
            .zip(&self.alpha)
            .map(|(z, a)| (z - self.theta.c) * a)
            .sum();
        -0.5 * fit - 0.5 * self.factor.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn log_marginal_likelihood(data: &TrainingSet, theta: &Hyperparameters) -> Result<f64> {
    Ok(GpModel::fit(data.clone(), theta.clone())?.log_marginal_likelihood())
}

fn solve_alpha(factor: &CholFactor, data: &TrainingSet, theta: &Hyperparameters) -> Result<Vec<f64>> {
    let resid: Vec<f64> = data.outputs().iter().map(|z| z - theta.c).collect();
    factor.solve(&resid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta2(l: [f64; 2], sf2: f64, sn2: f64) -> Hyperparameters {
        Hyperparameters::new(0.0, l.to_vec(), sf2, sn2).unwrap()
    }

    #[test]
    fn kernel_values() {
        let t = Hyperparameters::new(0.0, vec![1.0, 1.0], 0.26, 0.0).unwrap();
        assert_eq!(kernel(&[0.3, 0.4], &[0.3, 0.4], &t, false).unwrap(), 0.26);

        let t = theta2([1.0, 1.0], 1.0, 0.0);
        let v = kernel(&[0.0, 0.0], &[1.0, 0.0], &t, false).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);

        let t = theta2([1.0, 1.0], 1.0, 0.25);
        assert!(kernel(&[0.0, 0.0], &[1e3, 0.0], &t, true).unwrap() - 0.25 < 1e-300);
        assert_eq!(kernel(&[0.0, 0.0], &[1e3, 0.0], &t, false).unwrap(), 0.0);
        assert!(matches!(kernel(&[0.0], &[0.0, 0.0], &t, false), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_point_alpha() {
        let t = Hyperparameters::new(0.3, vec![0.5], 0.7, 0.1).unwrap();
        let data = TrainingSet::from_pairs(vec![vec![0.2]], vec![0.9]).unwrap();
        let m = GpModel::fit(data, t).unwrap();
        assert!((m.alpha()[0] - (0.9 - 0.3) / 0.8).abs() < 1e-14);
    }

    #[test]
    fn lml_scalar_case() {
        let t = Hyperparameters::new(0.5, vec![1.0], 0.75, 0.25).unwrap();
        let data = TrainingSet::from_pairs(vec![vec![0.0]], vec![0.5]).unwrap();
        let v = log_marginal_likelihood(&data, &t).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((v + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn interpolates_without_noise_and_recovers_prior() {
        let t = Hyperparameters::new(0.2, vec![0.3], 0.5, 0.0).unwrap();
        let xs = [0.0, 0.4, 0.9];
        let ys = [0.1, 0.7, -0.2];
        let data = TrainingSet::from_pairs(xs.iter().map(|x| vec![*x]).collect(), ys.to_vec()).unwrap();
        let m = GpModel::fit(data, t).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let p = m.posterior(&[*x]).unwrap();
            assert!((p.mean - y).abs() < 1e-8);
            assert!(p.variance.abs() < 1e-8);
        }
        let far = m.posterior(&[50.0]).unwrap();
        assert!((far.mean - 0.2).abs() < 1e-6);
        assert!((far.variance - 0.5).abs() < 1e-6);
    }

    #[test]
    fn empty_model_is_prior() {
        let t = Hyperparameters::new(0.4, vec![1.0], 0.3, 0.01).unwrap();
        let m = GpModel::empty(t).unwrap();
        let p = m.posterior(&[0.1]).unwrap();
        assert_eq!((p.mean, p.variance), (0.4, 0.3));
        assert!(matches!(
            GpModel::fit(TrainingSet::new(), m.theta().clone()),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn gradient_vanishes_at_single_training_point() {
        let t = Hyperparameters::new(0.0, vec![0.5, 2.0], 1.0, 0.01).unwrap();
        let data = TrainingSet::from_pairs(vec![vec![0.3, 0.6]], vec![1.0]).unwrap();
        let m = GpModel::fit(data, t).unwrap();
        assert_eq!(m.posterior_mean_gradient(&[0.3, 0.6]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_points_without_noise_use_jitter() {
        let t = Hyperparameters::new(0.0, vec![1.0], 1.0, 0.0).unwrap();
        let data = TrainingSet::from_pairs(vec![vec![0.5], vec![0.5]], vec![1.0, 1.0]).unwrap();
        // exact duplicates make K singular; jitter lets the fit go through
        let m = GpModel::fit(data, t).unwrap();
        assert!((m.posterior_mean(&[0.5]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::new(0.0, vec![0.0], 1.0, 0.0).is_err());
        assert!(Hyperparameters::new(0.0, vec![1.0], 0.0, 0.0).is_err());
        assert!(Hyperparameters::new(0.0, vec![1.0], 1.0, -1e-3).is_err());
        assert!(Hyperparameters::new(0.0, vec![], 1.0, 0.0).is_err());
    }
}
