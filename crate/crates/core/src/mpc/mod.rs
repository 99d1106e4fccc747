//! Finite-horizon optimal control problem, the receding-horizon law and the
//! value gate that decides whether an updated model may replace the current one.
//!
//! Costs are evaluated on deviations scaled by the data normalization, so the
//! weights act on the same `[0, 1]` coordinates the GP and terminal design use.
//! Constraints stay in physical units.

mod closed_loop;
mod solver;

pub use closed_loop::{
    run_closed_loop, ClosedLoopConfig, ClosedLoopRun, Controller, GateDecision, Hold, Outlier, StepRecord,
};
pub use solver::{minimize_box, BoxSolverConfig, BoxSolverResult};

use rayon::join;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::narx::{NarxModel, NarxState, Scaling};
use crate::plant::{self, CstrParams, CstrState};

/// Anything that can propagate a NARX state one step ahead.
pub trait Predictor: Sync {
    type State: Clone + Send + Sync;

    fn step(&self, s: &Self::State, u: f64) -> Result<Self::State>;

    fn narx<'a>(&self, s: &'a Self::State) -> &'a NarxState;
}

impl Predictor for NarxModel {
    type State = NarxState;

    fn step(&self, s: &NarxState, u: f64) -> Result<NarxState> {
        self.predict_step(s, u)
    }

    fn narx<'a>(&self, s: &'a NarxState) -> &'a NarxState {
        s
    }
}

/// The true plant used as a predictor, with full state feedback.
#[derive(Debug, Clone, Copy)]
pub struct PlantPredictor {
    pub params: CstrParams,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantNarxState {
    pub plant: CstrState,
    pub narx: NarxState,
}

impl Predictor for PlantPredictor {
    type State = PlantNarxState;

    fn step(&self, s: &PlantNarxState, u: f64) -> Result<PlantNarxState> {
        let plant = plant::step(&s.plant, u, self.ts, &self.params);
        Ok(PlantNarxState {
            narx: s.narx.shift(plant.ca, u),
            plant,
        })
    }

    fn narx<'a>(&self, s: &'a PlantNarxState) -> &'a NarxState {
        &s.narx
    }
}

/// Output band outside which a quadratic hinge penalty applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftBand {
    pub lo: f64,
    pub hi: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub horizon: usize,
    /// State weight on scaled deviations.
    pub q: Matrix,
    pub r: f64,
    pub lambda: f64,
    pub p: Matrix,
    /// Terminal feedback gain on scaled deviations: `Δu_n = kᵀ Δx_n`.
    pub terminal_gain: Vec<f64>,
    pub x_ref: NarxState,
    pub u_ref: f64,
    pub u_box: (f64, f64),
    /// Hard output bounds enforced through an exact penalty.
    pub y_box: Option<(f64, f64)>,
    pub y_soft: Option<SoftBand>,
    pub hard_penalty: f64,
    pub scaling: Scaling,
    pub solver: BoxSolverConfig,
}

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        let n_x = self.x_ref.n_x();
        check_dim(n_x, self.q.rows())?;
        check_dim(n_x, self.q.cols())?;
        check_dim(n_x, self.p.rows())?;
        check_dim(n_x, self.p.cols())?;
        check_dim(n_x, self.terminal_gain.len())?;
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.lambda >= 1.0) {
            return Err(Error::InvalidParameter("terminal weight must be at least 1".into()));
        }
        if !(self.r >= 0.0) || !(self.u_box.1 > self.u_box.0) {
            return Err(Error::InvalidParameter("input weight or box invalid".into()));
        }
        if !self.q.is_symmetric(1e-12) || self.q.symmetric_eigenvalues()[0] < -1e-12 {
            return Err(Error::InvalidParameter("state weight must be symmetric PSD".into()));
        }
        if !self.p.is_symmetric(1e-9) || self.p.symmetric_eigenvalues()[0] <= 0.0 {
            return Err(Error::InvalidParameter("terminal matrix must be SPD".into()));
        }
        Ok(())
    }

    /// Same problem with a different set-point.
    pub fn with_reference(&self, x_ref: NarxState, u_ref: f64) -> OcpSpec {
        OcpSpec {
            x_ref,
            u_ref,
            ..self.clone()
        }
    }

    /// Scaled deviation of `x` from the reference.
    pub fn scaled_deviation(&self, x: &NarxState) -> Vec<f64> {
        let s = &self.scaling;
        let mut d: Vec<f64> = x
            .outputs
            .iter()
            .zip(&self.x_ref.outputs)
            .map(|(a, b)| (a - b) / s.y_range())
            .collect();
        d.extend(x.inputs.iter().zip(&self.x_ref.inputs).map(|(a, b)| (a - b) / s.u_range()));
        d
    }

    /// Terminal law `κ_f(x) = u_ref + kᵀ(x − x_ref)` in physical units, clipped to the box.
    pub fn terminal_law(&self, x: &NarxState) -> f64 {
        let dx = self.scaled_deviation(x);
        let du: f64 = self.terminal_gain.iter().zip(&dx).map(|(k, d)| k * d).sum();
        (self.u_ref + du * self.scaling.u_range()).clamp(self.u_box.0, self.u_box.1)
    }

    fn output_violation(&self, y: f64) -> f64 {
        match self.y_box {
            Some((lo, hi)) => (lo - y).max(0.0) + (y - hi).max(0.0),
            None => 0.0,
        }
    }

    fn terminal_cost(&self, x: &NarxState) -> f64 {
        self.lambda * self.p.quad_form(&self.scaled_deviation(x))
    }
}

/// `‖x − x_ref‖²_Q + R (u − u_ref)² + ℓ_b(y)` on scaled deviations.
pub fn stage_cost(x: &NarxState, u: f64, spec: &OcpSpec) -> f64 {
    let dx = spec.scaled_deviation(x);
    let du = (u - spec.u_ref) / spec.scaling.u_range();
    let mut cost = spec.q.quad_form(&dx) + spec.r * du * du;
    if let Some(band) = spec.y_soft {
        let y = x.y();
        let out = ((band.lo - y).max(0.0) + (y - band.hi).max(0.0)) / spec.scaling.y_range();
        cost += band.gain * out * out;
    }
    cost
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub stage: f64,
    pub terminal: f64,
    /// Summed hard-bound violation of predicted outputs (physical units).
    pub violation: f64,
}

impl CostBreakdown {
    pub fn total(&self, spec: &OcpSpec) -> f64 {
        self.stage + self.terminal + spec.hard_penalty * self.violation
    }
}

fn evaluate<P: Predictor>(model: &P, x0: &P::State, u_seq: &[f64], spec: &OcpSpec) -> Result<(CostBreakdown, Vec<P::State>)> {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(x0.clone());
    let mut stage = 0.0;
    let mut violation = 0.0;
    for u in u_seq {
        let cur = states.last().unwrap();
        stage += stage_cost(model.narx(cur), *u, spec);
        let next = model.step(cur, *u)?;
        violation += spec.output_violation(model.narx(&next).y());
        states.push(next);
    }
    let terminal = spec.terminal_cost(model.narx(states.last().unwrap()));
    Ok((
        CostBreakdown {
            stage,
            terminal,
            violation,
        },
        states,
    ))
}

/// Stage costs along the rollout plus the weighted terminal cost and the
/// penalty on predicted output-bound violations.
pub fn total_cost<P: Predictor>(model: &P, x0: &P::State, u_seq: &[f64], spec: &OcpSpec) -> Result<f64> {
    check_dim(spec.horizon, u_seq.len())?;
    Ok(evaluate(model, x0, u_seq, spec)?.0.total(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    /// The best sequence found still violates the hard output bounds.
    Infeasible,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_seq: Vec<f64>,
    pub x_seq: Vec<NarxState>,
    pub value: f64,
    pub violation: f64,
    pub status: SolverStatus,
}

/// Minimizes the OCP from the warm start (if any) and from `u_ref` held over the
/// horizon, returning the better of the two.
pub fn solve_ocp<P: Predictor>(model: &P, x0: &P::State, spec: &OcpSpec, warm_start: Option<&[f64]>) -> Result<OcpSolution> {
    let n = spec.horizon;
    let s = spec.scaling;
    let lo = vec![s.norm_u(spec.u_box.0); n];
    let hi = vec![s.norm_u(spec.u_box.1); n];
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(2);
    if let Some(w) = warm_start {
        check_dim(n, w.len())?;
        starts.push(w.iter().map(|u| s.norm_u(*u)).collect());
    }
    starts.push(vec![s.norm_u(spec.u_ref); n]);

    let mut failure = None;
    let objective = |un: &[f64]| -> f64 {
        let u: Vec<f64> = un.iter().map(|v| s.denorm_u(*v)).collect();
        match evaluate(model, x0, &u, spec) {
            Ok((c, _)) => c.total(spec),
            Err(_) => f64::INFINITY,
        }
    };
    let mut best: Option<BoxSolverResult> = None;
    for start in &starts {
        let r = minimize_box(objective, start, &lo, &hi, spec.solver);
        if !r.f.is_finite() {
            failure = Some(Error::Infeasible("rollout failed for every candidate input".into()));
            continue;
        }
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = match (best, failure) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start is always tried"),
    };
    let u_seq: Vec<f64> = best.x.iter().map(|v| s.denorm_u(*v).clamp(spec.u_box.0, spec.u_box.1)).collect();
    let (cost, states) = evaluate(model, x0, &u_seq, spec)?;
    let status = if cost.violation > 0.0 && spec.y_box.is_some() {
        SolverStatus::Infeasible
    } else if best.converged {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIter
    };
    Ok(OcpSolution {
        value: cost.total(spec),
        violation: cost.violation,
        u_seq,
        x_seq: states.iter().map(|st| model.narx(st).clone()).collect(),
        status,
    })
}

/// Shifted previous sequence closed with the terminal law at its predicted end state.
pub fn shifted_warm_start(prev: &OcpSolution, spec: &OcpSpec) -> Vec<f64> {
    let mut u: Vec<f64> = prev.u_seq.iter().skip(1).copied().collect();
    u.push(spec.terminal_law(prev.x_seq.last().expect("solution has states")));
    u
}

/// Solves the OCP warm-started from the previous solution and returns the first input.
pub fn control_step<P: Predictor>(
    model: &P,
    x0: &P::State,
    spec: &OcpSpec,
    prev: Option<&OcpSolution>,
) -> Result<(f64, OcpSolution)> {
    let warm = prev.map(|p| shifted_warm_start(p, spec));
    let sol = solve_ocp(model, x0, spec, warm.as_deref())?;
    Ok((sol.u_seq[0], sol))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub accept: bool,
    pub value_current: f64,
    pub value_candidate: f64,
}

/// Accepts the candidate iff its optimal value at `x0` does not exceed the
/// current model's. Both problems are solved from the same warm start.
pub fn value_gate(
    model: &NarxModel,
    candidate: &NarxModel,
    x0: &NarxState,
    spec: &OcpSpec,
    warm_start: Option<&[f64]>,
) -> Result<GateOutcome> {
    let (cur, cand) = join(
        || solve_ocp(model, x0, spec, warm_start),
        || solve_ocp(candidate, x0, spec, warm_start),
    );
    let (cur, cand) = (cur?, cand?);
    Ok(GateOutcome {
        accept: cand.value <= cur.value,
        value_current: cur.value,
        value_candidate: cand.value,
    })
}
