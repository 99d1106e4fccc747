//! Continuous stirred-tank reactor used as the true process, its measurement
//! noise, chirp excitation, and extraction of local training sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::TrainingSet;
use crate::linalg::dist2;
use crate::narx::NarxState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrParams {
    /// Feed flow (l/min).
    pub q0: f64,
    /// Liquid volume (l).
    pub v: f64,
    /// Arrhenius pre-exponential factor (1/min).
    pub k0: f64,
    /// Activation temperature E/R (K).
    pub e_over_r: f64,
    /// Heat released per mol converted (J/mol).
    pub heat_of_reaction: f64,
    /// Heat transfer coefficient times area (J/(min K)).
    pub ua: f64,
    pub rho: f64,
    pub cp: f64,
    /// Coolant time constant (min).
    pub tau: f64,
    pub ca_feed: f64,
    pub t_feed: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            q0: 10.0,
            v: 150.0,
            k0: 6e10,
            e_over_r: 9750.0,
            heat_of_reaction: 10000.0,
            ua: 70000.0,
            rho: 1100.0,
            cp: 0.3,
            tau: 1.5,
            ca_feed: 1.0,
            t_feed: 370.0,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.q0,
            self.v,
            self.k0,
            self.e_over_r,
            self.heat_of_reaction,
            self.ua,
            self.rho,
            self.cp,
            self.tau,
            self.ca_feed,
            self.t_feed,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("CSTR parameters must be positive".into()))
        }
    }

    fn rate(&self, t: f64) -> f64 {
        self.k0 * (-self.e_over_r / t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrState {
    pub ca: f64,
    pub t: f64,
    pub tc: f64,
}

/// Right-hand sides `(dCA/dt, dT/dt, dTc/dt)` for coolant reference `tr`.
pub fn derivatives(s: &CstrState, tr: f64, p: &CstrParams) -> [f64; 3] {
    let dilution = p.q0 / p.v;
    let reaction = p.rate(s.t) * s.ca;
    let d_ca = dilution * (p.ca_feed - s.ca) - reaction;
    let d_t = dilution * (p.t_feed - s.t)
        + p.heat_of_reaction / (p.rho * p.cp) * reaction
        + p.ua / (p.v * p.rho * p.cp) * (s.tc - s.t);
    let d_tc = (tr - s.tc) / p.tau;
    [d_ca, d_t, d_tc]
}

/// One forward-Euler step of length `ts`.
pub fn step(s: &CstrState, tr: f64, ts: f64, p: &CstrParams) -> CstrState {
    let [a, b, c] = derivatives(s, tr, p);
    CstrState {
        ca: s.ca + ts * a,
        t: s.t + ts * b,
        tc: s.tc + ts * c,
    }
}

/// Steady state under constant input `tr`.
///
/// With `Tc = tr` and `CA` eliminated through its own balance, the tank energy
/// balance becomes scalar in `T`; it is solved by Newton steps safeguarded by a
/// bracket, to a residual below 1e-10.
pub fn equilibrium(tr: f64, p: &CstrParams) -> Result<CstrState> {
    let dilution = p.q0 / p.v;
    let ca_of = |t: f64| dilution * p.ca_feed / (dilution + p.rate(t));
    let g = |t: f64| {
        derivatives(
            &CstrState {
                ca: ca_of(t),
                t,
                tc: tr,
            },
            tr,
            p,
        )[1]
    };
    let (mut lo, mut hi) = (tr - 200.0, tr + 400.0);
    if g(lo) <= 0.0 || g(hi) >= 0.0 {
        return Err(Error::Infeasible(format!("no steady state bracketed for input {tr}")));
    }
    let mut t = tr;
    for _ in 0..200 {
        let gt = g(t);
        if gt.abs() < 1e-10 {
            break;
        }
        if gt > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let h = 1e-6 * t.abs().max(1.0);
        let slope = (g(t + h) - g(t - h)) / (2.0 * h);
        let newton = t - gt / slope;
        t = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(CstrState {
        ca: ca_of(t),
        t,
        tc: tr,
    })
}

/// Constant input whose steady state has concentration `ca`, by bisection over
/// `bracket`. The steady concentration falls monotonically with the input.
pub fn input_for_output(ca: f64, p: &CstrParams, bracket: (f64, f64)) -> Result<f64> {
    let f = |u: f64| equilibrium(u, p).map(|s| s.ca - ca);
    let (mut lo, mut hi) = bracket;
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo.signum() == fhi.signum() {
        return Err(Error::Infeasible(format!(
            "concentration {ca} not reachable with inputs in [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid)? > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Zero-mean Gaussian measurement noise truncated at `bound_sigmas` deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_n2: f64,
    pub bound_sigmas: f64,
}

impl NoiseSpec {
    pub fn new(sigma_n: f64) -> Self {
        Self {
            sigma_n2: sigma_n * sigma_n,
            bound_sigmas: 4.0,
        }
    }

    pub fn none() -> Self {
        Self::new(0.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_n2.sqrt()
    }

    pub fn bound(&self) -> f64 {
        self.bound_sigmas * self.sigma()
    }
}

/// Seeded stream of truncated-normal noise samples.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(spec: NoiseSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn spec(&self) -> NoiseSpec {
        self.spec
    }

    pub fn sample(&mut self) -> f64 {
        let sigma = self.spec.sigma();
        if sigma == 0.0 {
            return 0.0;
        }
        loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if z.abs() <= self.spec.bound_sigmas {
                return sigma * z;
            }
        }
    }

    pub fn measure(&mut self, s: &CstrState) -> f64 {
        s.ca + self.sample()
    }
}

/// Linear chirp `center + A sin(2π (f0 + (f1 − f0) t / (2T)) t)` over one pass
/// of length `T`, repeated once per center.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpSpec {
    pub centers: Vec<f64>,
    pub amplitude: f64,
    pub f0: f64,
    pub f1: f64,
    pub pass_duration: f64,
}

impl ChirpSpec {
    pub fn value(&self, t: f64) -> f64 {
        let pass = ((t / self.pass_duration).floor() as usize).min(self.centers.len() - 1);
        let tl = t - pass as f64 * self.pass_duration;
        let freq = self.f0 + (self.f1 - self.f0) * tl / (2.0 * self.pass_duration);
        self.centers[pass] + self.amplitude * (2.0 * std::f64::consts::PI * freq * tl).sin()
    }

    pub fn duration(&self) -> f64 {
        self.pass_duration * self.centers.len() as f64
    }

    pub fn check_within(&self, u_box: (f64, f64)) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidParameter("chirp needs at least one pass".into()));
        }
        for c in &self.centers {
            if c - self.amplitude.abs() < u_box.0 || c + self.amplitude.abs() > u_box.1 {
                return Err(Error::ConstraintViolation(format!(
                    "chirp around {c} with amplitude {} leaves [{}, {}]",
                    self.amplitude, u_box.0, u_box.1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u: f64,
    #[serde(rename = "CA_true")]
    pub ca_true: f64,
    pub y_meas: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
    #[serde(rename = "Tc")]
    pub coolant: f64,
}

#[derive(Debug, Clone)]
pub struct RawData {
    /// Physical-unit pairs `([y_k, …, y_{k−m_y}, u_k], y_{k+1})`.
    pub set: TrainingSet,
    pub trajectory: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone)]
pub struct RawDataSpec {
    pub chirp: ChirpSpec,
    pub start: CstrState,
    pub ts: f64,
    pub m_y: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// Simulates the plant under the chirp from `start` and records regressor/output
/// pairs built from noisy measurements.
pub fn generate_raw(spec: &RawDataSpec, u_box: (f64, f64), p: &CstrParams) -> Result<RawData> {
    let RawDataSpec {
        chirp,
        start,
        ts,
        m_y,
        noise,
        seed,
    } = spec;
    let (ts, m_y) = (*ts, *m_y);
    chirp.check_within(u_box)?;
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("sampling time must be positive".into()));
    }
    let steps = (chirp.duration() / ts + 1e-9).floor() as usize;
    let mut noise = NoiseSource::new(*noise, *seed);
    let mut s = *start;
    let mut trajectory = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * ts;
        let u = chirp.value(t);
        trajectory.push(TrajectoryRow {
            t,
            u,
            ca_true: s.ca,
            y_meas: noise.measure(&s),
            temperature: s.t,
            coolant: s.tc,
        });
        s = step(&s, u, ts, p);
    }
    let mut set = TrainingSet::new();
    for k in m_y..steps.saturating_sub(1) {
        let mut w: Vec<f64> = (0..=m_y).map(|j| trajectory[k - j].y_meas).collect();
        w.push(trajectory[k].u);
        set.push(w, trajectory[k + 1].y_meas)?;
    }
    Ok(RawData { set, trajectory })
}

/// Keeps points whose output lies within `radius` of `center`, then walks them in
/// order dropping every later point closer than `w_bar` to a kept one.
pub fn extract_local(raw: &TrainingSet, center: f64, radius: f64, w_bar: f64) -> Result<TrainingSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let mut out = TrainingSet::new();
    for (w, z) in raw.iter() {
        if (z - center).abs() > radius {
            continue;
        }
        if out.regressors().iter().all(|kept| dist2(kept, w) >= w_bar) {
            out.push(w.to_vec(), z)?;
        }
    }
    Ok(out)
}

/// Bisects the thinning threshold so the extracted set has about `target` points.
pub fn tune_thinning(raw: &TrainingSet, center: f64, radius: f64, target: usize) -> Result<(f64, TrainingSet)> {
    let all = extract_local(raw, center, radius, 0.0)?;
    if all.len() <= target {
        return Ok((0.0, all));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while extract_local(raw, center, radius, hi)?.len() > target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if extract_local(raw, center, radius, mid)?.len() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = extract_local(raw, center, radius, lo)?;
    let b = extract_local(raw, center, radius, hi)?;
    let pick_lo = a.len().abs_diff(target) < b.len().abs_diff(target);
    Ok(if pick_lo { (lo, a) } else { (hi, b) })
}

/// NARX history at rest at `s`: all past outputs equal to `s.ca`.
pub fn rest_state(s: &CstrState, m_y: usize) -> NarxState {
    NarxState::from_outputs(vec![s.ca; m_y + 1])
}
