//! Closed-loop simulation of the controller against the plant, including online
//! model updates and the value gate.

use super::{control_step, stage_cost, value_gate, OcpSolution, OcpSpec, PlantNarxState, PlantPredictor, SolverStatus};
use crate::error::Result;
use crate::evolving::{propose, EvolvingConfig};
use crate::narx::{NarxModel, NarxState};
use crate::plant::{self, CstrParams, CstrState, NoiseSource, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    /// Exact plant model with full state feedback; noise-free by construction.
    Oracle,
    /// Fixed GP model.
    Batch,
    /// GP updated online; `gated` applies the value gate to every candidate.
    Recursive { gated: bool },
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Oracle => "oMPC",
            Controller::Batch => "bGP",
            Controller::Recursive { gated: true } => "rGP",
            Controller::Recursive { gated: false } => "rGP-ungated",
        }
    }
}

/// Additive spike on the measurement taken at step `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outlier {
    pub step: usize,
    pub magnitude: f64,
}

/// Set-point held for the first `steps` steps before switching to the
/// reference in the OCP spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Hold {
    pub steps: usize,
    pub x_ref: NarxState,
    pub u_ref: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub controller: Controller,
    pub spec: OcpSpec,
    pub model: NarxModel,
    pub evolving: EvolvingConfig,
    pub plant: CstrParams,
    pub ts: f64,
    pub start: CstrState,
    pub steps: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub outliers: Vec<Outlier>,
    pub hold: Option<Hold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    /// Not a candidate under the inclusion rule.
    Skipped,
    Accepted,
    Rejected,
    /// Committed without consulting the gate.
    Ungated,
    /// Qualified but could not be inserted numerically; dropped.
    InsertFailed,
}

impl GateDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateDecision::Skipped => "none",
            GateDecision::Accepted => "accept",
            GateDecision::Rejected => "reject",
            GateDecision::Ungated => "ungated",
            GateDecision::InsertFailed => "insert_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub u: f64,
    /// Measured output at step `k` (including any injected outlier).
    pub y: f64,
    pub y_true: f64,
    pub v_star: f64,
    /// Prediction error of `y_{k+1}` in physical units.
    pub e_p: f64,
    /// Posterior variance at `w_k` in physical units squared.
    pub sigma2_plus: f64,
    /// Training points after this step's update.
    pub n_points: usize,
    pub candidate: bool,
    pub gate: GateDecision,
    pub solver_status: SolverStatus,
    /// Stage cost of the true state and applied input.
    pub stage_cost: f64,
    /// Measured output (without outliers) outside the hard bounds, or an
    /// infeasible OCP.
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub controller: Controller,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub final_model: Option<NarxModel>,
    /// Set when the run stopped early on an error.
    pub aborted: Option<String>,
}

impl ClosedLoopRun {
    pub fn cost(&self) -> f64 {
        self.records.iter().map(|r| r.stage_cost).sum()
    }

    pub fn violated(&self) -> bool {
        self.aborted.is_some() || self.records.iter().any(|r| r.violation)
    }

    pub fn max_abs_prediction_error(&self) -> f64 {
        self.records.iter().map(|r| r.e_p.abs()).fold(0.0, f64::max)
    }

    pub fn points_added(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.gate, GateDecision::Accepted | GateDecision::Ungated))
            .count()
    }

    /// Measured outputs `y_0 … y_steps`.
    pub fn outputs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }
}

/// Runs one closed-loop experiment. Errors from the optimizer abort the run and
/// are reported in [`ClosedLoopRun::aborted`] rather than returned.
pub fn run_closed_loop(cfg: &ClosedLoopConfig) -> ClosedLoopRun {
    let mut run = ClosedLoopRun {
        controller: cfg.controller,
        seed: cfg.seed,
        records: Vec::with_capacity(cfg.steps + 1),
        final_model: None,
        aborted: None,
    };
    if let Err(e) = simulate(cfg, &mut run) {
        run.aborted = Some(e.to_string());
    }
    run
}

fn simulate(cfg: &ClosedLoopConfig, run: &mut ClosedLoopRun) -> Result<()> {
    let held = cfg.hold.as_ref().map(|h| cfg.spec.with_reference(h.x_ref.clone(), h.u_ref));
    let hold_steps = cfg.hold.as_ref().map_or(0, |h| h.steps);
    let spec_at = |k: usize| match &held {
        Some(s) if k < hold_steps => s,
        _ => &cfg.spec,
    };
    let spec = &cfg.spec;
    let m_y = spec.x_ref.outputs.len() - 1;
    let mut noise = NoiseSource::new(cfg.noise, cfg.seed);
    let spike = |k: usize| cfg.outliers.iter().filter(|o| o.step == k).map(|o| o.magnitude).sum::<f64>();
    let out_of_box = |y: f64| spec.y_box.is_some_and(|(lo, hi)| y < lo || y > hi);

    let mut s = cfg.start;
    let mut x_true = plant::rest_state(&s, m_y);
    let mut x_meas = NarxState::from_outputs((0..=m_y).map(|_| noise.measure(&s)).collect());
    let mut y_clean = x_meas.y();
    x_meas.outputs[0] += spike(0);

    let mut model = cfg.model.clone();
    let oracle = PlantPredictor {
        params: cfg.plant,
        ts: cfg.ts,
    };
    let mut prev: Option<OcpSolution> = None;

    for k in 0..cfg.steps {
        let spec = spec_at(k);
        let (u, sol) = match cfg.controller {
            Controller::Oracle => {
                let st = PlantNarxState {
                    plant: s,
                    narx: x_true.clone(),
                };
                control_step(&oracle, &st, spec, prev.as_ref())?
            }
            _ => control_step(&model, &x_meas, spec, prev.as_ref())?,
        };
        let stage = stage_cost(&x_true, u, spec);

        s = plant::step(&s, u, cfg.ts, &cfg.plant);
        let y_next_clean = noise.measure(&s);
        let y_next = y_next_clean + spike(k + 1);

        let mut e_p = 0.0;
        let mut sigma2 = 0.0;
        let mut candidate = false;
        let mut gate = GateDecision::Skipped;
        if cfg.controller != Controller::Oracle {
            let w = model.regressor_of(&x_meas, u)?;
            let z = model.scaling.norm_y(y_next);
            let proposal = propose(&model.gp, &w, z, &cfg.evolving)?;
            let ry = model.scaling.y_range();
            e_p = proposal.check.prediction_error * ry;
            sigma2 = proposal.check.variance * ry * ry;
            if let Controller::Recursive { gated } = cfg.controller {
                candidate = proposal.check.is_candidate;
                if proposal.insert_error.is_some() {
                    gate = GateDecision::InsertFailed;
                } else if let Some(gp) = proposal.candidate {
                    let cand = model.with_gp(gp);
                    if gated {
                        let outcome = value_gate(&model, &cand, &x_meas, spec, Some(&sol.u_seq))?;
                        if outcome.accept {
                            model = cand;
                            gate = GateDecision::Accepted;
                        } else {
                            gate = GateDecision::Rejected;
                        }
                    } else {
                        model = cand;
                        gate = GateDecision::Ungated;
                    }
                }
            }
        }

        run.records.push(StepRecord {
            k,
            t: k as f64 * cfg.ts,
            u,
            y: x_meas.y(),
            y_true: x_true.y(),
            v_star: sol.value,
            e_p,
            sigma2_plus: sigma2,
            n_points: model.gp.n(),
            candidate,
            gate,
            solver_status: sol.status,
            stage_cost: stage,
            violation: out_of_box(y_clean) || sol.status == SolverStatus::Infeasible,
        });

        x_true = x_true.shift(s.ca, u);
        x_meas = x_meas.shift(y_next, u);
        y_clean = y_next_clean;
        prev = Some(sol);
    }
    let k = cfg.steps;
    run.records.push(StepRecord {
        k,
        t: k as f64 * cfg.ts,
        u: f64::NAN,
        y: x_meas.y(),
        y_true: x_true.y(),
        v_star: f64::NAN,
        e_p: 0.0,
        sigma2_plus: 0.0,
        n_points: model.gp.n(),
        candidate: false,
        gate: GateDecision::Skipped,
        solver_status: SolverStatus::Converged,
        stage_cost: 0.0,
        violation: out_of_box(y_clean),
    });
    run.final_model = Some(model);
    Ok(())
}
