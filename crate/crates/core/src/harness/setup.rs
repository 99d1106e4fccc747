//! Everything a study needs, built deterministically from a [`Config`]: raw
//! identification data, the three local training sets, fitted models, the
//! terminal ingredients and the OCP.

use super::config::{Config, ControllerChoice, InitialSet, ThinningUnits};
use crate::error::{Error, Result};
use crate::evolving::EvolvingConfig;
use crate::gp::{optimize_hyperparameters, GpModel, Hyperparameters, OptimizerConfig, ReportedSet, TrainingSet};
use crate::linalg::Matrix;
use crate::mpc::{BoxSolverConfig, ClosedLoopConfig, Controller, Hold, OcpSpec, Outlier, SoftBand};
use crate::narx::{NarxModel, NarxState, Scaling};
use crate::plant::{self, ChirpSpec, CstrParams, CstrState, NoiseSpec, RawData, RawDataSpec};
use crate::terminal::{box_halfspaces, design_terminal, linearize, HalfSpace, LinearModel, TerminalPair};

/// One of the three local training sets with its fitted model.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub set: InitialSet,
    /// Thinning distance, in the units set by the data config.
    pub w_bar: f64,
    pub theta: Hyperparameters,
    pub lml: f64,
    pub model: NarxModel,
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub config: Config,
    pub params: CstrParams,
    /// Input holding the plant at the initial output.
    pub u0: f64,
    pub start: CstrState,
    pub reference: CstrState,
    pub raw: RawData,
    pub scaling: Scaling,
    pub models: Vec<LocalModel>,
    pub linear: LinearModel,
    pub x_cons: Vec<HalfSpace>,
    pub u_cons: Vec<HalfSpace>,
    pub terminal: TerminalPair,
    pub spec: OcpSpec,
}

impl Setup {
    pub fn build(config: &Config) -> Result<Self> {
        let params = CstrParams::default();
        params.validate()?;
        let d = &config.data;
        let m = &config.mpc;
        let u_box = (m.u_min, m.u_max);
        let u0 = plant::input_for_output(d.y0, &params, u_box)?;
        let start = plant::equilibrium(u0, &params)?;
        let reference = plant::equilibrium(d.u_ref, &params)?;

        let raw = plant::generate_raw(
            &RawDataSpec {
                chirp: ChirpSpec {
                    centers: vec![u0, d.u_ref],
                    amplitude: d.chirp_amplitude,
                    f0: d.chirp_f0,
                    f1: d.chirp_f1,
                    pass_duration: d.chirp_pass_duration,
                },
                start,
                ts: config.plant.ts,
                m_y: d.m_y,
                noise: noise_spec(config, config.plant.noise_sigma),
                seed: d.seed,
            },
            u_box,
            &params,
        )?;
        let (y_lo, y_hi) = raw
            .trajectory
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.y_meas), hi.max(r.y_meas)));
        let scaling = Scaling::new(y_lo, y_hi, m.u_min, m.u_max)?;
        let ry = scaling.y_range();
        let sigma_n2 = (config.plant.noise_sigma / ry).powi(2);

        let (w0, d0, wr, dref) = match d.thinning {
            ThinningUnits::Normalized => {
                let raw_n = normalize_set(&raw.set, &scaling, d.m_y)?;
                let radius = d.radius / ry;
                let (w0, d0) = plant::tune_thinning(&raw_n, scaling.norm_y(d.y0), radius, d.target_points)?;
                let (wr, dref) = plant::tune_thinning(&raw_n, scaling.norm_y(reference.ca), radius, d.target_points)?;
                (w0, d0, wr, dref)
            }
            ThinningUnits::Physical => {
                let (w0, d0) = plant::tune_thinning(&raw.set, d.y0, d.radius, d.target_points)?;
                let (wr, dref) = plant::tune_thinning(&raw.set, reference.ca, d.radius, d.target_points)?;
                (w0, normalize_set(&d0, &scaling, d.m_y)?, wr, normalize_set(&dref, &scaling, d.m_y)?)
            }
        };
        let dcomb = d0.union(&dref)?;
        let mut models = Vec::with_capacity(3);
        for (set, w_bar, data) in [(InitialSet::D0, w0, d0), (InitialSet::Dref, wr, dref), (InitialSet::Dcomb, 0.0, dcomb)] {
            let theta0 = Hyperparameters::cstr_reported(reported(set), sigma_n2);
            let fit = optimize_hyperparameters(
                &data,
                &theta0,
                config.gp.budget,
                OptimizerConfig {
                    starts: config.gp.starts,
                    seed: config.gp.seed,
                },
            )?;
            let gp = GpModel::fit(data, fit.theta.clone())?;
            models.push(LocalModel {
                set,
                w_bar,
                theta: fit.theta,
                lml: fit.lml,
                model: NarxModel::new(gp, scaling),
            });
        }

        let x_ref = NarxState::constant(reference.ca, d.u_ref, d.m_y, 0);
        let linear = linearize(&models[InitialSet::Dref.index()].model, &x_ref, d.u_ref)?;
        let dy = ((m.y_min - reference.ca) / ry, (m.y_max - reference.ca) / ry);
        let du = ((m.u_min - d.u_ref) / scaling.u_range(), (m.u_max - d.u_ref) / scaling.u_range());
        let x_cons = box_halfspaces(&vec![dy; x_ref.n_x()])?;
        let u_cons = box_halfspaces(&[du])?;
        let terminal = design_terminal(&linear, &x_cons, &u_cons)?;

        if m.q_diag.len() != x_ref.n_x() {
            return Err(Error::DimensionMismatch {
                expected: x_ref.n_x(),
                found: m.q_diag.len(),
            });
        }
        let spec = OcpSpec {
            horizon: m.horizon,
            q: Matrix::from_diag(&m.q_diag),
            r: m.r,
            lambda: m.lambda,
            p: terminal.p.scale(m.p_scale),
            terminal_gain: terminal.k.clone(),
            x_ref,
            u_ref: d.u_ref,
            u_box,
            y_box: m.hard_output_constraints.then_some((m.y_min, m.y_max)),
            y_soft: m.soft_band.map(|[lo, hi]| SoftBand {
                lo,
                hi,
                gain: m.barrier_gain,
            }),
            hard_penalty: m.hard_penalty,
            scaling,
            solver: BoxSolverConfig {
                max_iter: m.max_iter,
                f_tol: m.f_tol,
                ..BoxSolverConfig::default()
            },
        };
        spec.validate()?;

        Ok(Self {
            config: config.clone(),
            params,
            u0,
            start,
            reference,
            raw,
            scaling,
            models,
            linear,
            x_cons,
            u_cons,
            terminal,
            spec,
        })
    }

    pub fn model(&self, set: InitialSet) -> &LocalModel {
        &self.models[set.index()]
    }

    /// Evolving thresholds from the config, converted to normalized units.
    pub fn evolving(&self) -> Result<EvolvingConfig> {
        let e = &self.config.evolving;
        let ry = self.scaling.y_range();
        EvolvingConfig::new(e.e_bar / ry, e.sigma2_bar / (ry * ry), (e.capacity > 0).then_some(e.capacity))
    }

    /// Steady state producing output `y0`.
    pub fn start_at(&self, y0: f64) -> Result<CstrState> {
        let u = plant::input_for_output(y0, &self.params, self.spec.u_box)?;
        plant::equilibrium(u, &self.params)
    }

    /// Regulation at the steady state `start` (where the coolant temperature
    /// equals the input) for the configured hold time, if any.
    pub fn hold(&self, start: &CstrState) -> Option<Hold> {
        let steps = (self.config.experiment.hold_time / self.config.plant.ts).round() as usize;
        (steps > 0).then(|| Hold {
            steps,
            x_ref: plant::rest_state(start, self.config.data.m_y),
            u_ref: start.tc,
        })
    }

    /// Spikes of `bound_multiple` times the noise bound at the configured times.
    pub fn outliers(&self, noise_sigma: f64) -> Vec<Outlier> {
        let o = &self.config.outliers;
        let magnitude = o.bound_multiple * noise_spec(&self.config, noise_sigma).bound();
        o.times
            .iter()
            .map(|t| Outlier {
                step: (t / self.config.plant.ts).round() as usize,
                magnitude,
            })
            .collect()
    }

    /// Closed-loop configuration for the experiment section with the given seed.
    pub fn closed_loop(&self, set: InitialSet, controller: ControllerChoice, seed: u64) -> Result<ClosedLoopConfig> {
        let controller = match controller {
            ControllerChoice::Oracle => Controller::Oracle,
            ControllerChoice::Batch => Controller::Batch,
            ControllerChoice::Recursive => Controller::Recursive { gated: true },
            ControllerChoice::RecursiveUngated => Controller::Recursive { gated: false },
        };
        let noise = if controller == Controller::Oracle {
            NoiseSpec::none()
        } else {
            noise_spec(&self.config, self.config.plant.noise_sigma)
        };
        Ok(ClosedLoopConfig {
            controller,
            spec: self.spec.clone(),
            model: self.model(set).model.clone(),
            evolving: self.evolving()?,
            plant: self.params,
            ts: self.config.plant.ts,
            start: self.start,
            steps: self.config.experiment.n_step,
            noise,
            seed,
            outliers: Vec::new(),
            hold: self.hold(&self.start),
        })
    }
}

pub fn noise_spec(config: &Config, sigma: f64) -> NoiseSpec {
    NoiseSpec {
        bound_sigmas: config.plant.noise_bound_sigmas,
        ..NoiseSpec::new(sigma)
    }
}

fn reported(set: InitialSet) -> ReportedSet {
    match set {
        InitialSet::D0 => ReportedSet::D0,
        InitialSet::Dref => ReportedSet::Dref,
        InitialSet::Dcomb => ReportedSet::Dcomb,
    }
}

/// Inverse of [`normalize_set`].
pub fn denormalize_set(set: &TrainingSet, scaling: &Scaling, m_y: usize) -> Result<TrainingSet> {
    let mut out = TrainingSet::new();
    for (w, z) in set.iter() {
        let (x, u) = scaling.split_regressor(w, m_y + 1);
        let mut row = x.outputs;
        row.push(u);
        out.push(row, scaling.denorm_y(z))?;
    }
    Ok(out)
}

/// Maps a physical-unit set `([y…, u], z)` into the model's normalized coordinates.
pub fn normalize_set(set: &TrainingSet, scaling: &Scaling, m_y: usize) -> Result<TrainingSet> {
    let mut out = TrainingSet::new();
    for (w, z) in set.iter() {
        if w.len() != m_y + 2 {
            return Err(Error::DimensionMismatch {
                expected: m_y + 2,
                found: w.len(),
            });
        }
        let x = NarxState::from_outputs(w[..=m_y].to_vec());
        out.push(scaling.regressor(&x, w[m_y + 1]), scaling.norm_y(z))?;
    }
    Ok(out)
}
