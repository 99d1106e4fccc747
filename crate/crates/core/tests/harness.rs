use std::sync::OnceLock;

use rgp_mpc::error::Error;
use rgp_mpc::harness::config::{ControllerChoice, InitialSet, SweepParameter};
use rgp_mpc::harness::{studies, Config, Setup};
use rgp_mpc::mpc::{run_closed_loop, stage_cost, ClosedLoopRun, GateDecision};
use rgp_mpc::narx::NarxState;
use rgp_mpc::plant::NoiseSpec;

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| Setup::build(&Config::default()).unwrap())
}

/// Same setup without the initial set-point phase, so one reference applies throughout.
fn setup_no_hold() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let mut c = Config::default();
        c.experiment.hold_time = 0.0;
        Setup::build(&c).unwrap()
    })
}

fn fingerprint(run: &ClosedLoopRun) -> Vec<String> {
    run.records.iter().map(|r| format!("{r:?}")).collect()
}

#[test]
fn metric_is_zero_at_reference() {
    let spec = &setup().spec;
    let at_ref = vec![(spec.x_ref.clone(), spec.u_ref); 4];
    let rep = studies::performance_metric(&[at_ref.clone(), at_ref], spec).unwrap();
    assert_eq!(rep.v_bar, 0.0);
    assert_eq!(rep.costs, vec![0.0, 0.0]);
}

#[test]
fn metric_two_step_hand_calculation() {
    let spec = &setup().spec;
    let (yr, ur) = (spec.x_ref.y(), spec.u_ref);
    let ry = spec.scaling.y_range();
    let uw = spec.scaling.u_range();
    // Step 1: y off by 0.1·ry in the current output only, input on reference.
    // Step 2: all outputs on reference, input off by 0.2·uw.
    let x1 = NarxState::from_outputs(vec![yr + 0.1 * ry, yr, yr]);
    let x2 = NarxState::from_outputs(vec![yr; 3]);
    let run = vec![(x1, ur), (x2, ur + 0.2 * uw)];
    // 100·0.1² + 5·0.2² = 1.0 + 0.2
    let rep = studies::performance_metric(&[run], spec).unwrap();
    assert!((rep.v_bar - 1.2).abs() < 1e-12, "{}", rep.v_bar);
}

#[test]
fn metric_rejects_ragged_runs() {
    let spec = &setup().spec;
    let a = vec![(spec.x_ref.clone(), spec.u_ref); 3];
    let b = vec![(spec.x_ref.clone(), spec.u_ref); 2];
    assert!(matches!(
        studies::performance_metric(&[a, b], spec),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(studies::performance_metric(&[], spec).is_err());
}

#[test]
fn logged_costs_match_rebuilt_sequence() {
    let s = setup_no_hold();
    let batch = studies::simulate(s, InitialSet::Dref, ControllerChoice::Batch, 2, 3).unwrap();
    let seqs: Vec<_> = batch.runs.iter().map(|r| studies::state_input_sequence(r, 2)).collect();
    let rep = studies::performance_metric(&seqs, &s.spec).unwrap();
    let logged = studies::PerformanceReport::from_runs(&batch.runs);
    assert!((rep.v_bar - logged.v_bar).abs() < 1e-9 * logged.v_bar);
    for (a, b) in rep.costs.iter().zip(&logged.costs) {
        assert!((a - b).abs() < 1e-9 * b);
    }
    let first = &batch.runs[0].records[0];
    assert_eq!(seqs[0][0].1, first.u);
    assert!((stage_cost(&seqs[0][0].0, first.u, &s.spec) - first.stage_cost).abs() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let s = setup();
    let a = studies::simulate(s, InitialSet::Dcomb, ControllerChoice::Recursive, 2, 11).unwrap();
    let b = studies::simulate(s, InitialSet::Dcomb, ControllerChoice::Recursive, 2, 11).unwrap();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        assert_eq!(fingerprint(ra), fingerprint(rb));
    }
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![11, 12]);
    let c = studies::simulate(s, InitialSet::Dcomb, ControllerChoice::Recursive, 1, 12).unwrap();
    assert_eq!(fingerprint(&c.runs[0]), fingerprint(&a.runs[1]));
}

#[test]
fn compare_covers_every_pair_on_shared_seeds() {
    let s = setup();
    let ctl = [ControllerChoice::Oracle, ControllerChoice::Batch];
    let batches = studies::compare_controllers(s, &[InitialSet::D0, InitialSet::Dref], &ctl, 2, 5).unwrap();
    assert_eq!(batches.len(), 4);
    for b in &batches {
        assert_eq!(b.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6]);
        assert_eq!(b.summary.failed, 0);
        assert!(b.summary.v_bar.is_finite());
    }
    // The exact-model controller sees no noise and does not depend on the set.
    assert_eq!(batches[0].summary.v_bar, batches[2].summary.v_bar);
    assert_eq!(batches[0].summary.mu, 0.0);
}

#[test]
fn applied_inputs_stay_in_the_box() {
    let s = setup();
    let b = studies::simulate(s, InitialSet::Dref, ControllerChoice::Recursive, 3, 0).unwrap();
    let (lo, hi) = s.spec.u_box;
    for r in b.runs.iter().flat_map(|r| &r.records).filter(|r| r.u.is_finite()) {
        assert!(r.u >= lo && r.u <= hi);
    }
}

#[test]
fn gate_is_moot_without_candidates() {
    let s = setup();
    let mut gated = s.closed_loop(InitialSet::Dref, ControllerChoice::Recursive, 4).unwrap();
    gated.evolving.e_bar = f64::INFINITY;
    gated.evolving.sigma2_bar = f64::INFINITY;
    let mut ungated = gated.clone();
    ungated.controller = rgp_mpc::mpc::Controller::Recursive { gated: false };
    let (a, b) = (run_closed_loop(&gated), run_closed_loop(&ungated));
    assert!(a.records.iter().all(|r| r.gate == GateDecision::Skipped));
    let strip = |r: &ClosedLoopRun| r.records.iter().map(|x| (x.u.to_bits(), x.y.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn zero_threshold_adds_most_points() {
    let s = setup();
    let rows = studies::sweep_thresholds(s, InitialSet::Dref, SweepParameter::EBar, &[0.0, 0.005, 0.02], 3, 0).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].mean_points_added <= w[0].mean_points_added, "{rows:?}");
    }
    assert!(studies::sweep_thresholds(s, InitialSet::Dref, SweepParameter::EBar, &[], 3, 0).is_err());
}

#[test]
fn noise_free_start_at_reference_is_feasible() {
    let s = setup();
    let m = studies::roa_sweep(s, InitialSet::Dcomb, &[s.reference.ca], &[0.0], 2, 30, 0).unwrap();
    assert_eq!(m.cells.len(), 1);
    assert!(m.cells[0].feasible);
    assert_eq!(m.levels[0].feasible_count, 1);
    assert!(studies::roa_sweep(s, InitialSet::Dcomb, &[], &[0.0], 2, 30, 0).is_err());
}

#[test]
fn oracle_run_has_no_prediction_error() {
    let s = setup();
    let mut cfg = s.closed_loop(InitialSet::D0, ControllerChoice::Oracle, 0).unwrap();
    assert_eq!(cfg.noise, NoiseSpec::none());
    cfg.steps = 20;
    let run = run_closed_loop(&cfg);
    assert!(run.aborted.is_none());
    assert_eq!(run.max_abs_prediction_error(), 0.0);
    assert_eq!(run.records.len(), 21);
}

#[test]
fn outlier_schedule_must_fit_the_run() {
    let mut c = Config::default();
    c.outliers.times = vec![100.0];
    let s = Setup::build(&c).unwrap();
    assert!(studies::outlier_study(&s, InitialSet::Dref, 1, 0, 15.0, 0.01).is_err());
}

#[test]
fn dispersion_and_convergence_helpers() {
    let s = setup();
    let b = studies::simulate(s, InitialSet::Dcomb, ControllerChoice::Batch, 2, 0).unwrap();
    let d = studies::output_dispersion(&b.runs, 30);
    let ys: Vec<f64> = b.runs.iter().map(|r| r.records[30].y_true).collect();
    assert!((d - (ys[0] - ys[1]).abs() / 2.0).abs() < 1e-15);
    assert_eq!(studies::converged_count(&b.runs, s.reference.ca, 1.0), 2);
    assert_eq!(studies::converged_count(&b.runs, s.reference.ca + 10.0, 1.0), 0);
}

#[test]
fn cholesky_benchmark_paths_agree() {
    let theta = s_theta();
    let rows = studies::bench_chol(&[20, 40], 3, 1, &theta).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.factor_rel_diff < 1e-10);
        assert!(r.recursive_median_us > 0.0 && r.copying_median_us > 0.0 && r.full_median_us > 0.0);
    }
    assert!(studies::bench_chol(&[40, 20], 3, 1, &theta).is_err());
}

fn s_theta() -> rgp_mpc::gp::Hyperparameters {
    setup().model(InitialSet::Dref).theta.clone()
}
