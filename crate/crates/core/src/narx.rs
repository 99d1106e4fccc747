//! NARX state bookkeeping and the GP one-step predictor built on it.
//!
//! States hold physical values; regressors fed to the GP are scaled to `[0, 1]`
//! with constants fixed when the training data was generated.

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;

/// `[y_k, …, y_{k−m_y}]` followed by `[u_{k−1}, …, u_{k−m_u}]`, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NarxState {
    pub outputs: Vec<f64>,
    pub inputs: Vec<f64>,
}

impl NarxState {
    pub fn new(outputs: Vec<f64>, inputs: Vec<f64>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::InvalidParameter("state needs at least one output".into()));
        }
        Ok(Self { outputs, inputs })
    }

    /// Outputs only (`m_u = 0`).
    pub fn from_outputs(outputs: Vec<f64>) -> Self {
        Self {
            outputs,
            inputs: Vec::new(),
        }
    }

    /// State at rest: every output equal to `y`, every past input equal to `u`.
    pub fn constant(y: f64, u: f64, m_y: usize, m_u: usize) -> Self {
        Self {
            outputs: vec![y; m_y + 1],
            inputs: vec![u; m_u],
        }
    }

    pub fn y(&self) -> f64 {
        self.outputs[0]
    }

    pub fn n_x(&self) -> usize {
        self.outputs.len() + self.inputs.len()
    }

    /// Flat vector `[outputs; inputs]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.outputs.clone();
        v.extend_from_slice(&self.inputs);
        v
    }

    /// Next state after applying `u` and observing `y_next`.
    pub fn shift(&self, y_next: f64, u: f64) -> NarxState {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        outputs.push(y_next);
        outputs.extend_from_slice(&self.outputs[..self.outputs.len() - 1]);
        let mut inputs = Vec::with_capacity(self.inputs.len());
        if !self.inputs.is_empty() {
            inputs.push(u);
            inputs.extend_from_slice(&self.inputs[..self.inputs.len() - 1]);
        }
        NarxState { outputs, inputs }
    }
}

/// Affine maps from physical output/input ranges onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub y_min: f64,
    pub y_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Scaling {
    pub fn new(y_min: f64, y_max: f64, u_min: f64, u_max: f64) -> Result<Self> {
        if !(y_max > y_min && u_max > u_min) {
            return Err(Error::InvalidParameter("scaling ranges must be non-empty".into()));
        }
        Ok(Self {
            y_min,
            y_max,
            u_min,
            u_max,
        })
    }

    /// No-op scaling, for models trained directly on physical values.
    pub fn identity() -> Self {
        Self {
            y_min: 0.0,
            y_max: 1.0,
            u_min: 0.0,
            u_max: 1.0,
        }
    }

    pub fn y_range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn u_range(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn norm_y(&self, y: f64) -> f64 {
        (y - self.y_min) / self.y_range()
    }

    pub fn denorm_y(&self, y: f64) -> f64 {
        self.y_min + y * self.y_range()
    }

    pub fn norm_u(&self, u: f64) -> f64 {
        (u - self.u_min) / self.u_range()
    }

    pub fn denorm_u(&self, u: f64) -> f64 {
        self.u_min + u * self.u_range()
    }

    /// Normalized regressor `[x; u]`.
    pub fn regressor(&self, x: &NarxState, u: f64) -> Vec<f64> {
        let mut w: Vec<f64> = x.outputs.iter().map(|y| self.norm_y(*y)).collect();
        w.extend(x.inputs.iter().map(|v| self.norm_u(*v)));
        w.push(self.norm_u(u));
        w
    }

    /// Inverse of [`regressor`](Self::regressor) for a known output count.
    pub fn split_regressor(&self, w: &[f64], n_outputs: usize) -> (NarxState, f64) {
        let (ys, rest) = w.split_at(n_outputs);
        let (past, u) = rest.split_at(rest.len() - 1);
        let x = NarxState {
            outputs: ys.iter().map(|v| self.denorm_y(*v)).collect(),
            inputs: past.iter().map(|v| self.denorm_u(*v)).collect(),
        };
        (x, self.denorm_u(u[0]))
    }
}

/// GP posterior mean used as the one-step NARX predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct NarxModel {
    pub gp: GpModel,
    pub scaling: Scaling,
}

impl NarxModel {
    pub fn new(gp: GpModel, scaling: Scaling) -> Self {
        Self { gp, scaling }
    }

    /// Same scaling with a different GP (e.g. an update candidate).
    pub fn with_gp(&self, gp: GpModel) -> Self {
        Self {
            gp,
            scaling: self.scaling,
        }
    }

    pub fn regressor_of(&self, x: &NarxState, u: f64) -> Result<Vec<f64>> {
        check_dim(self.gp.theta().n_w(), x.n_x() + 1)?;
        Ok(self.scaling.regressor(x, u))
    }

    /// Predicted `y_{k+1}` in physical units.
    pub fn predict_output(&self, x: &NarxState, u: f64) -> Result<f64> {
        let w = self.regressor_of(x, u)?;
        Ok(self.scaling.denorm_y(self.gp.posterior_mean(&w)?))
    }

    pub fn predict_step(&self, x: &NarxState, u: f64) -> Result<NarxState> {
        Ok(x.shift(self.predict_output(x, u)?, u))
    }

    /// `[x0, x1, …, x_N]` under `u_seq`.
    pub fn rollout(&self, x0: &NarxState, u_seq: &[f64]) -> Result<Vec<NarxState>> {
        let mut seq = Vec::with_capacity(u_seq.len() + 1);
        seq.push(x0.clone());
        for u in u_seq {
            let next = self.predict_step(seq.last().unwrap(), *u)?;
            seq.push(next);
        }
        Ok(seq)
    }

    /// Gradient of the posterior mean in normalized coordinates.
    pub fn mean_gradient_normalized(&self, x: &NarxState, u: f64) -> Result<Vec<f64>> {
        let w = self.regressor_of(x, u)?;
        self.gp.posterior_mean_gradient(&w)
    }

    /// Gradient of the predicted physical output w.r.t. physical `[x; u]`.
    pub fn mean_gradient_physical(&self, x: &NarxState, u: f64) -> Result<Vec<f64>> {
        let g = self.mean_gradient_normalized(x, u)?;
        let s = &self.scaling;
        let n_y = x.outputs.len();
        Ok(g.iter()
            .enumerate()
            .map(|(i, gi)| if i < n_y { *gi } else { gi * s.y_range() / s.u_range() })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Hyperparameters, TrainingSet};

    fn scaling() -> Scaling {
        Scaling::new(0.3, 0.7, 335.0, 372.0).unwrap()
    }

    fn model() -> NarxModel {
        let s = scaling();
        let mut data = TrainingSet::new();
        for i in 0..15 {
            let t = i as f64;
            let y = 0.5 + 0.15 * (1.3 * t).sin();
            let u = 355.0 + 15.0 * (0.7 * t).cos();
            let x = NarxState::from_outputs(vec![y, y + 0.05 * (2.1 * t).sin(), y - 0.04 * (0.9 * t).cos()]);
            data.push(s.regressor(&x, u), s.norm_y(y + 0.001 * (u - 355.0))).unwrap();
        }
        let theta = Hyperparameters::new(0.5, vec![0.5, 1.0, 1.0, 0.8], 0.1, 0.0).unwrap();
        NarxModel::new(GpModel::fit(data, theta).unwrap(), s)
    }

    #[test]
    fn regressor_concatenates_and_round_trips() {
        let s = scaling();
        let x = NarxState::new(vec![0.5, 0.45, 0.4], vec![350.0]).unwrap();
        let w = s.regressor(&x, 360.0);
        assert_eq!(w.len(), 5);
        assert!((w[0] - 0.5).abs() < 1e-15);
        let (x2, u2) = s.split_regressor(&w, 3);
        for (a, b) in x2.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((u2 - 360.0).abs() < 1e-12);

        let id = Scaling::identity();
        let xr = NarxState::constant(0.439, 356.0, 2, 0);
        assert_eq!(id.regressor(&xr, 356.0), vec![0.439, 0.439, 0.439, 356.0]);
    }

    #[test]
    fn shift_moves_history() {
        let x = NarxState::new(vec![1.0, 2.0, 3.0], vec![10.0, 20.0]).unwrap();
        let n = x.shift(0.5, 30.0);
        assert_eq!(n.outputs, vec![0.5, 1.0, 2.0]);
        assert_eq!(n.inputs, vec![30.0, 10.0]);
    }

    #[test]
    fn predict_step_interpolates_training_pair() {
        let m = model();
        let (w, z) = {
            let (w, z) = m.gp.data().iter().nth(4).unwrap();
            (w.to_vec(), z)
        };
        let (x, u) = m.scaling.split_regressor(&w, 3);
        let next = m.predict_step(&x, u).unwrap();
        assert!((next.y() - m.scaling.denorm_y(z)).abs() < 1e-8);
        assert_eq!(&next.outputs[1..], &x.outputs[..2]);
    }

    #[test]
    fn rollout_chains_single_steps() {
        let m = model();
        let x0 = NarxState::from_outputs(vec![0.5, 0.49, 0.48]);
        let us = [350.0, 352.0, 356.0, 360.0, 341.0];
        assert_eq!(m.rollout(&x0, &[]).unwrap(), vec![x0.clone()]);
        let seq = m.rollout(&x0, &us).unwrap();
        let mut x = x0.clone();
        for (i, u) in us.iter().enumerate() {
            x = m.predict_step(&x, *u).unwrap();
            assert_eq!(seq[i + 1], x);
        }
    }

    #[test]
    fn physical_gradient_matches_finite_difference() {
        let m = model();
        let x = NarxState::from_outputs(vec![0.5, 0.49, 0.51]);
        let u = 352.0;
        let g = m.mean_gradient_physical(&x, u).unwrap();
        let h = [1e-6, 1e-6, 1e-6, 1e-4];
        for i in 0..4 {
            let bump = |s: f64| {
                let mut xv = x.outputs.clone();
                let mut uu = u;
                if i < 3 {
                    xv[i] += s * h[i];
                } else {
                    uu += s * h[i];
                }
                m.predict_output(&NarxState::from_outputs(xv), uu).unwrap()
            };
            let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h[i]);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }
}
