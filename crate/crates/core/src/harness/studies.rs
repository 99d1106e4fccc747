//! Monte Carlo studies built on [`Setup`]: controller comparison, threshold
//! sweeps, region-of-attraction map, outlier study, model validation and the
//! Cholesky timing benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ControllerChoice, InitialSet, SweepParameter};
use super::setup::{noise_spec, normalize_set, Setup};
use crate::chol::CholFactor;
use crate::error::{Error, Result};
use crate::gp::{kernel_matrix, Hyperparameters, TrainingSet};
use crate::mpc::{run_closed_loop, stage_cost, ClosedLoopConfig, ClosedLoopRun, OcpSpec};
use crate::narx::NarxState;

/// Mean accumulated stage cost over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub v_bar: f64,
    pub costs: Vec<f64>,
}

impl PerformanceReport {
    /// Uses the stage costs logged by each run (which follow any set-point
    /// schedule). Runs that stopped on an error must be filtered out first.
    pub fn from_runs<'a>(runs: impl IntoIterator<Item = &'a ClosedLoopRun>) -> Self {
        let costs: Vec<f64> = runs.into_iter().map(|r| r.cost()).collect();
        let v_bar = if costs.is_empty() {
            f64::NAN
        } else {
            costs.iter().sum::<f64>() / costs.len() as f64
        };
        Self { v_bar, costs }
    }
}

/// `V̄ = (1/N_sim) Σ_j Σ_k ℓ(x_k^j, u_k^j)` over equally long state/input sequences.
pub fn performance_metric(runs: &[Vec<(NarxState, f64)>], spec: &OcpSpec) -> Result<PerformanceReport> {
    let Some(first) = runs.first() else {
        return Err(Error::EmptySet);
    };
    if let Some(r) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            found: r.len(),
        });
    }
    let costs: Vec<f64> = runs
        .iter()
        .map(|r| r.iter().map(|(x, u)| stage_cost(x, *u, spec)).sum())
        .collect();
    Ok(PerformanceReport {
        v_bar: costs.iter().sum::<f64>() / runs.len() as f64,
        costs,
    })
}

/// True NARX states and applied inputs of a run, rebuilt from the logged true
/// outputs (history before the first step is taken at rest).
pub fn state_input_sequence(run: &ClosedLoopRun, m_y: usize) -> Vec<(NarxState, f64)> {
    let Some(first) = run.records.first() else {
        return Vec::new();
    };
    let mut x = NarxState::from_outputs(vec![first.y_true; m_y + 1]);
    let mut out: Vec<(NarxState, f64)> = Vec::with_capacity(run.records.len());
    for r in run.records.iter().filter(|r| r.u.is_finite()) {
        if let Some((prev, u)) = out.last() {
            x = prev.shift(r.y_true, *u);
        }
        out.push((x.clone(), r.u));
    }
    out
}

/// Runs every configuration on the rayon pool; results keep input order.
pub fn run_batch(configs: &[ClosedLoopConfig]) -> Vec<ClosedLoopRun> {
    configs.par_iter().map(run_closed_loop).collect()
}

pub fn seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|j| base + j).collect()
}

/// Aggregate of one batch of replicate runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub set: &'static str,
    pub controller: &'static str,
    pub runs: usize,
    pub v_bar: f64,
    /// Runs stopped by an error; excluded from `v_bar`.
    pub failed: usize,
    pub violated: usize,
    pub mean_points_added: f64,
    /// Largest absolute prediction error over all runs and steps (mol/l).
    pub mu: f64,
}

impl BatchSummary {
    pub fn new(set: InitialSet, controller: &'static str, runs: &[ClosedLoopRun]) -> Self {
        let ok: Vec<&ClosedLoopRun> = runs.iter().filter(|r| r.aborted.is_none()).collect();
        let report = PerformanceReport::from_runs(ok.iter().copied());
        Self {
            set: set.name(),
            controller,
            runs: runs.len(),
            v_bar: report.v_bar,
            failed: runs.len() - ok.len(),
            violated: runs.iter().filter(|r| r.violated()).count(),
            mean_points_added: ok.iter().map(|r| r.points_added() as f64).sum::<f64>() / ok.len().max(1) as f64,
            mu: runs.iter().map(|r| r.max_abs_prediction_error()).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub set: InitialSet,
    pub controller: ControllerChoice,
    pub runs: Vec<ClosedLoopRun>,
    pub summary: BatchSummary,
}

pub fn controller_name(c: ControllerChoice) -> &'static str {
    match c {
        ControllerChoice::Oracle => "oMPC",
        ControllerChoice::Batch => "bGP",
        ControllerChoice::Recursive => "rGP",
        ControllerChoice::RecursiveUngated => "rGP-ungated",
    }
}

/// Runs `n_sim` replicates of one controller on one initial set with seeds
/// `base_seed + j`.
pub fn simulate(setup: &Setup, set: InitialSet, controller: ControllerChoice, n_sim: usize, base_seed: u64) -> Result<Batch> {
    let configs = seeds(base_seed, n_sim)
        .into_iter()
        .map(|s| setup.closed_loop(set, controller, s))
        .collect::<Result<Vec<_>>>()?;
    let runs = run_batch(&configs);
    Ok(Batch {
        set,
        controller,
        summary: BatchSummary::new(set, controller_name(controller), &runs),
        runs,
    })
}

/// Every (set, controller) pair on the same seed list.
pub fn compare_controllers(
    setup: &Setup,
    sets: &[InitialSet],
    controllers: &[ControllerChoice],
    n_sim: usize,
    base_seed: u64,
) -> Result<Vec<Batch>> {
    let mut out = Vec::with_capacity(sets.len() * controllers.len());
    for set in sets {
        for c in controllers {
            out.push(simulate(setup, *set, *c, n_sim, base_seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub v_bar: f64,
    pub mean_points_added: f64,
    pub failed: usize,
    pub violated: usize,
}

/// Gated rGP with one inclusion threshold varied over `grid` (physical units)
/// and the other disabled.
pub fn sweep_thresholds(
    setup: &Setup,
    set: InitialSet,
    parameter: SweepParameter,
    grid: &[f64],
    n_sim: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("threshold grid is empty".into()));
    }
    let ry = setup.scaling.y_range();
    let mut rows = Vec::with_capacity(grid.len());
    for value in grid {
        let mut configs = Vec::with_capacity(n_sim);
        for s in seeds(base_seed, n_sim) {
            let mut cfg = setup.closed_loop(set, ControllerChoice::Recursive, s)?;
            match parameter {
                SweepParameter::EBar => {
                    cfg.evolving.e_bar = value / ry;
                    cfg.evolving.sigma2_bar = f64::INFINITY;
                }
                SweepParameter::Sigma2Bar => {
                    cfg.evolving.e_bar = f64::INFINITY;
                    cfg.evolving.sigma2_bar = value / (ry * ry);
                }
            }
            configs.push(cfg);
        }
        let runs = run_batch(&configs);
        let summary = BatchSummary::new(set, "rGP", &runs);
        rows.push(SweepRow {
            parameter: match parameter {
                SweepParameter::EBar => "e_bar",
                SweepParameter::Sigma2Bar => "sigma2_bar",
            },
            value: *value,
            v_bar: summary.v_bar,
            mean_points_added: summary.mean_points_added,
            failed: summary.failed,
            violated: summary.violated,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaCell {
    pub y0: f64,
    pub sigma_n: f64,
    pub feasible: bool,
    pub violations: usize,
    pub failed: usize,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaLevel {
    pub sigma_n: f64,
    pub feasible_count: usize,
    /// Realized prediction-error bound over every run at this noise level.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaMap {
    pub cells: Vec<RoaCell>,
    pub levels: Vec<RoaLevel>,
    /// Rank correlation between `mu` and `feasible_count` across levels.
    pub spearman: f64,
}

/// For each initial output and noise level, `replicates` gated rGP runs; a
/// cell is infeasible if any run violates the output bounds or fails.
pub fn roa_sweep(
    setup: &Setup,
    set: InitialSet,
    y0_grid: &[f64],
    noise_grid: &[f64],
    replicates: usize,
    n_step: usize,
    base_seed: u64,
) -> Result<RoaMap> {
    if y0_grid.is_empty() || noise_grid.is_empty() || replicates == 0 {
        return Err(Error::InvalidParameter("ROA grids and replicate count must be nonempty".into()));
    }
    let mut configs = Vec::with_capacity(y0_grid.len() * noise_grid.len() * replicates);
    for sigma in noise_grid {
        for y0 in y0_grid {
            let start = setup.start_at(*y0)?;
            for s in seeds(base_seed, replicates) {
                let mut cfg = setup.closed_loop(set, ControllerChoice::Recursive, s)?;
                cfg.start = start;
                cfg.hold = setup.hold(&start);
                cfg.steps = n_step;
                cfg.noise = noise_spec(&setup.config, *sigma);
                configs.push(cfg);
            }
        }
    }
    let runs = run_batch(&configs);
    let mut cells = Vec::with_capacity(y0_grid.len() * noise_grid.len());
    let mut levels = Vec::with_capacity(noise_grid.len());
    let mut chunks = runs.chunks(replicates);
    for sigma in noise_grid {
        let mut level = RoaLevel {
            sigma_n: *sigma,
            feasible_count: 0,
            mu: 0.0,
        };
        for y0 in y0_grid {
            let chunk = chunks.next().expect("one chunk per cell");
            let violations = chunk.iter().filter(|r| r.violated()).count();
            let failed = chunk.iter().filter(|r| r.aborted.is_some()).count();
            let mu = chunk.iter().map(|r| r.max_abs_prediction_error()).fold(0.0, f64::max);
            let feasible = violations == 0;
            level.feasible_count += feasible as usize;
            level.mu = level.mu.max(mu);
            cells.push(RoaCell {
                y0: *y0,
                sigma_n: *sigma,
                feasible,
                violations,
                failed,
                mu,
            });
        }
        levels.push(level);
    }
    let mus: Vec<f64> = levels.iter().map(|l| l.mu).collect();
    let counts: Vec<f64> = levels.iter().map(|l| l.feasible_count as f64).collect();
    Ok(RoaMap {
        spearman: spearman(&mus, &counts),
        cells,
        levels,
    })
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN when either side has no spread.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub gated: Vec<ClosedLoopRun>,
    pub ungated: Vec<ClosedLoopRun>,
    /// Step at which dispersion is measured.
    pub probe_step: usize,
    pub dispersion_gated: f64,
    pub dispersion_ungated: f64,
    pub converged_gated: usize,
    pub converged_ungated: usize,
}

/// Runs whose final true output lies within `tol` of the reference.
pub fn converged_count(runs: &[ClosedLoopRun], y_ref: f64, tol: f64) -> usize {
    runs.iter()
        .filter(|r| r.aborted.is_none() && r.records.last().is_some_and(|l| (l.y_true - y_ref).abs() <= tol))
        .count()
}

/// Cross-run standard deviation (population) of the true output at `step`.
pub fn output_dispersion(runs: &[ClosedLoopRun], step: usize) -> f64 {
    let ys: Vec<f64> = runs.iter().filter_map(|r| r.records.get(step).map(|x| x.y_true)).collect();
    if ys.is_empty() {
        return f64::NAN;
    }
    let n = ys.len() as f64;
    let m = ys.iter().sum::<f64>() / n;
    (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Gated and ungated rGP with scheduled output spikes on identical seeds.
pub fn outlier_study(
    setup: &Setup,
    set: InitialSet,
    n_sim: usize,
    base_seed: u64,
    probe_time: f64,
    converge_tol: f64,
) -> Result<OutlierReport> {
    let outliers = setup.outliers(setup.config.plant.noise_sigma);
    if let Some(o) = outliers.iter().find(|o| o.step >= setup.config.experiment.n_step) {
        return Err(Error::InvalidParameter(format!("outlier at step {} is past the run end", o.step)));
    }
    let build = |c: ControllerChoice| -> Result<Vec<ClosedLoopConfig>> {
        seeds(base_seed, n_sim)
            .into_iter()
            .map(|s| {
                let mut cfg = setup.closed_loop(set, c, s)?;
                cfg.outliers = outliers.clone();
                Ok(cfg)
            })
            .collect()
    };
    let gated = run_batch(&build(ControllerChoice::Recursive)?);
    let ungated = run_batch(&build(ControllerChoice::RecursiveUngated)?);
    let probe_step = (probe_time / setup.config.plant.ts).round() as usize;
    let y_ref = setup.reference.ca;
    Ok(OutlierReport {
        probe_step,
        dispersion_gated: output_dispersion(&gated, probe_step),
        dispersion_ungated: output_dispersion(&ungated, probe_step),
        converged_gated: converged_count(&gated, y_ref, converge_tol),
        converged_ungated: converged_count(&ungated, y_ref, converge_tol),
        gated,
        ungated,
    })
}

/// Held-out prediction check for one set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationPoint {
    pub set: &'static str,
    pub y: f64,
    pub y_next: f64,
    /// Measured minus predicted next output (mol/l).
    pub e_p: f64,
    /// Posterior standard deviation (mol/l).
    pub sigma_plus: f64,
}

/// Test points are raw samples inside each set's output neighborhood(s) that
/// were thinned away, so none of them is a training point.
pub fn validate_models(setup: &Setup) -> Result<Vec<ValidationPoint>> {
    let d = &setup.config.data;
    let ry = setup.scaling.y_range();
    let near_y0 = |z: f64| (z - d.y0).abs() <= d.radius;
    let near_ref = |z: f64| (z - setup.reference.ca).abs() <= d.radius;
    let mut out = Vec::new();
    for lm in &setup.models {
        let keep = |z: f64| match lm.set {
            InitialSet::D0 => near_y0(z),
            InitialSet::Dref => near_ref(z),
            InitialSet::Dcomb => near_y0(z) || near_ref(z),
        };
        let mut held_out = TrainingSet::new();
        for (w, z) in setup.raw.set.iter() {
            if keep(z) {
                held_out.push(w.to_vec(), z)?;
            }
        }
        let normalized = normalize_set(&held_out, &setup.scaling, d.m_y)?;
        let train = lm.model.gp.data();
        for ((wn, _), (w, z)) in normalized.iter().zip(held_out.iter()) {
            if train.regressors().iter().any(|t| t.as_slice() == wn) {
                continue;
            }
            let post = lm.model.gp.posterior(wn)?;
            out.push(ValidationPoint {
                set: lm.set.name(),
                y: w[0],
                y_next: z,
                e_p: z - setup.scaling.denorm_y(post.mean),
                sigma_plus: post.variance.sqrt() * ry,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub trials: usize,
    /// In-place append into a factor with reserved capacity.
    pub recursive_median_us: f64,
    /// Append that leaves the old factor intact (the candidate-model path).
    pub copying_median_us: f64,
    pub full_median_us: f64,
    pub speedup: f64,
    /// Relative Frobenius difference between the two factors.
    pub factor_rel_diff: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times appending one point to an `n`-point factor against refactorizing the
/// `(n+1)`-point covariance from scratch. Runs on the calling thread.
pub fn bench_chol(n_grid: &[usize], trials: usize, seed: u64, theta: &Hyperparameters) -> Result<Vec<BenchRow>> {
    if trials == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n grid must be increasing and trials positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_w = theta.n_w();
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut data = TrainingSet::new();
        for _ in 0..=n {
            let w: Vec<f64> = (0..n_w).map(|_| rng.random::<f64>()).collect();
            data.push(w, rng.random())?;
        }
        let k = kernel_matrix(&data, theta);
        let jitter = crate::gp::JITTER_REL * theta.sigma_f2;
        let k_n = k.block(0, n, 0, n);
        let base = CholFactor::factorize_with_jitter(&k_n, jitter)?;
        let col: Vec<f64> = (0..n).map(|i| k[(i, n)]).collect();
        let diag = k[(n, n)];

        let mut rec = Vec::with_capacity(trials);
        let mut copying = Vec::with_capacity(trials);
        let mut full = Vec::with_capacity(trials);
        let mut last = None;
        for _ in 0..trials {
            let mut r = base.clone();
            r.reserve(n + 1);
            let t = Instant::now();
            r.append_in_place(&col, diag)?;
            rec.push(t.elapsed().as_secs_f64() * 1e6);
            let t = Instant::now();
            let c = base.append(&col, diag)?;
            copying.push(t.elapsed().as_secs_f64() * 1e6);
            drop(c);
            let t = Instant::now();
            let f = CholFactor::factorize_with_jitter(&k, jitter)?;
            full.push(t.elapsed().as_secs_f64() * 1e6);
            last = Some((r, f));
        }
        let (r, f) = last.expect("at least one trial");
        let (rm, fm) = (median(rec), median(full));
        rows.push(BenchRow {
            n,
            trials,
            recursive_median_us: rm,
            copying_median_us: median(copying),
            full_median_us: fm,
            speedup: fm / rm,
            factor_rel_diff: r.r().rel_frobenius_err(f.r()),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_values() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 8.0, 5.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        // Ties: ranks of [5, 5, 1] are [2.5, 2.5, 1].
        let r = ranks(&[5.0, 5.0, 1.0]);
        assert_eq!(r, vec![2.5, 2.5, 1.0]);
        assert!(spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).is_nan());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
