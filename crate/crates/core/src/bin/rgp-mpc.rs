use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use rgp_mpc::error::{Error, Result};
use rgp_mpc::gp::{write_hyperparameters, write_training_set};
use rgp_mpc::harness::config::{ControllerChoice, InitialSet};
use rgp_mpc::harness::setup::denormalize_set;
use rgp_mpc::harness::{output, studies, Config, Setup};
use rgp_mpc::terminal::{verify, write_terminal};

#[derive(Parser)]
#[command(name = "rgp-mpc", version, about = "GP-NARX MPC with recursive model updates on a simulated CSTR")]
struct Cli {
    /// TOML config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for replicate runs (overrides experiment.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replicate runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identification trajectory and the three local training sets.
    GenData,
    /// Fitted hyperparameters for each training set.
    FitHp,
    /// Held-out prediction errors and posterior standard deviations.
    Validate,
    /// Linearization and terminal ingredients.
    DesignTerminal,
    /// Replicate runs of the configured controller and initial set.
    Simulate,
    /// Performance table over all controllers and initial sets.
    Compare,
    /// Inclusion-threshold sweep.
    Sweep,
    /// Feasibility map over initial outputs and noise levels.
    Roa,
    /// Gated vs ungated updates with measurement outliers.
    Outliers,
    /// Recursive vs full Cholesky timing.
    BenchChol,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.experiment.seed = s;
    }
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;

    if let Command::BenchChol = cli.command {
        return bench(&config, out);
    }
    let setup = Setup::build(&config)?;
    let base = config.experiment.seed;
    let n_sim = config.experiment.n_sim;
    let seeds = studies::seeds(base, n_sim);
    match cli.command {
        Command::GenData => gen_data(&setup, out),
        Command::FitHp => fit_hp(&setup, out),
        Command::Validate => validate(&setup, out),
        Command::DesignTerminal => design_terminal(&setup, out),
        Command::Simulate => {
            let e = &config.experiment;
            let batch = studies::simulate(&setup, e.initial_set, e.controller, n_sim, base)?;
            output::write_runs(&out.join("runs.csv"), &batch.runs, &config)?;
            output::write_table(&out.join("summary.csv"), &[&batch.summary], &seeds, &config)?;
            print_summary(&batch.summary);
            Ok(())
        }
        Command::Compare => {
            let controllers = [ControllerChoice::Oracle, ControllerChoice::Batch, ControllerChoice::Recursive];
            let batches = studies::compare_controllers(&setup, &InitialSet::ALL, &controllers, n_sim, base)?;
            let rows: Vec<_> = batches.iter().map(|b| &b.summary).collect();
            output::write_table(&out.join("compare.csv"), &rows, &seeds, &config)?;
            rows.iter().for_each(|r| print_summary(r));
            Ok(())
        }
        Command::Sweep => {
            let s = &config.sweep;
            let rows = studies::sweep_thresholds(&setup, config.experiment.initial_set, s.parameter, &s.grid, n_sim, base)?;
            output::write_table(&out.join("sweep.csv"), &rows, &seeds, &config)?;
            for r in &rows {
                println!("{}={:<8} V={:8.2} added={:6.1}", r.parameter, r.value, r.v_bar, r.mean_points_added);
            }
            Ok(())
        }
        Command::Roa => {
            let r = &config.roa;
            let map = studies::roa_sweep(
                &setup,
                r.initial_set,
                &r.y0_grid,
                &r.noise_grid,
                r.replicates,
                r.n_step,
                base,
            )?;
            let seeds = studies::seeds(base, r.replicates);
            output::write_table(&out.join("roa_cells.csv"), &map.cells, &seeds, &config)?;
            output::write_table(&out.join("roa_levels.csv"), &map.levels, &seeds, &config)?;
            for l in &map.levels {
                println!("sigma_n={:.3} mu={:.4} feasible={}", l.sigma_n, l.mu, l.feasible_count);
            }
            println!("spearman={:.3}", map.spearman);
            Ok(())
        }
        Command::Outliers => {
            let rep = studies::outlier_study(&setup, config.experiment.initial_set, n_sim, base, 15.0, 0.01)?;
            let mut runs = rep.gated.clone();
            runs.extend(rep.ungated.iter().cloned());
            output::write_runs(&out.join("outlier_runs.csv"), &runs, &config)?;
            #[derive(Serialize)]
            struct Row {
                variant: &'static str,
                converged: usize,
                dispersion: f64,
                probe_step: usize,
            }
            let rows = [
                Row {
                    variant: "gated",
                    converged: rep.converged_gated,
                    dispersion: rep.dispersion_gated,
                    probe_step: rep.probe_step,
                },
                Row {
                    variant: "ungated",
                    converged: rep.converged_ungated,
                    dispersion: rep.dispersion_ungated,
                    probe_step: rep.probe_step,
                },
            ];
            output::write_table(&out.join("outlier_summary.csv"), &rows, &seeds, &config)?;
            for r in &rows {
                println!("{:8} converged={}/{n_sim} dispersion={:.5}", r.variant, r.converged, r.dispersion);
            }
            Ok(())
        }
        Command::BenchChol => unreachable!(),
    }
}

fn print_summary(s: &studies::BatchSummary) {
    println!(
        "{:6} {:12} V={:8.2} failed={} violated={} added={:.1} mu={:.4}",
        s.set, s.controller, s.v_bar, s.failed, s.violated, s.mean_points_added, s.mu
    );
}

fn gen_data(setup: &Setup, out: &Path) -> Result<()> {
    let c = &setup.config;
    output::write_table(&out.join("trajectory.csv"), &setup.raw.trajectory, &[c.data.seed], c)?;
    for m in &setup.models {
        let set = denormalize_set(m.model.gp.data(), &setup.scaling, c.data.m_y)?;
        std::fs::write(out.join(format!("{}.txt", m.set.name())), write_training_set(&set))?;
        println!("{}: {} points", m.set.name(), set.len());
    }
    println!("u0={:.3} K  y_ref={:.5} mol/l", setup.u0, setup.reference.ca);
    Ok(())
}

fn fit_hp(setup: &Setup, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        set: &'static str,
        n: usize,
        w_bar: f64,
        c: f64,
        l1: f64,
        l2: f64,
        l3: f64,
        l4: f64,
        sigma_f2: f64,
        sigma_n2: f64,
        lml: f64,
    }
    let mut rows = Vec::new();
    for m in &setup.models {
        let t = &m.theta;
        let l = |i: usize| t.lengthscales.get(i).copied().unwrap_or(f64::NAN);
        rows.push(Row {
            set: m.set.name(),
            n: m.model.gp.n(),
            w_bar: m.w_bar,
            c: t.c,
            l1: l(0),
            l2: l(1),
            l3: l(2),
            l4: l(3),
            sigma_f2: t.sigma_f2,
            sigma_n2: t.sigma_n2,
            lml: m.lml,
        });
        std::fs::write(out.join(format!("theta_{}.txt", m.set.name())), write_hyperparameters(t))?;
        println!("{:6} n={:3} lml={:9.2} {:?}", m.set.name(), m.model.gp.n(), m.lml, t);
    }
    output::write_table(&out.join("hyperparameters.csv"), &rows, &[setup.config.gp.seed], &setup.config)
}

fn validate(setup: &Setup, out: &Path) -> Result<()> {
    let points = studies::validate_models(setup)?;
    output::write_table(&out.join("validation.csv"), &points, &[setup.config.data.seed], &setup.config)?;
    for set in InitialSet::ALL {
        let p: Vec<_> = points.iter().filter(|p| p.set == set.name()).collect();
        let ok = p.iter().filter(|p| p.e_p.abs() < 0.02 && p.sigma_plus < 5e-3).count();
        println!("{:6} {ok}/{} within |e_p|<0.02 and sigma<5e-3", set.name(), p.len());
    }
    Ok(())
}

fn design_terminal(setup: &Setup, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Entry {
        quantity: &'static str,
        row: usize,
        col: usize,
        value: f64,
    }
    let mut rows = Vec::new();
    let mut push_matrix = |q: &'static str, m: &rgp_mpc::linalg::Matrix| {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                rows.push(Entry {
                    quantity: q,
                    row: i,
                    col: j,
                    value: m[(i, j)],
                });
            }
        }
    };
    let lin = &setup.linear;
    let t = &setup.terminal;
    push_matrix("A", &lin.a);
    push_matrix("P", &t.p);
    for (q, v) in [("b", &lin.b), ("k", &t.k)] {
        for (i, x) in v.iter().enumerate() {
            rows.push(Entry {
                quantity: q,
                row: i,
                col: 0,
                value: *x,
            });
        }
    }
    output::write_table(&out.join("terminal.csv"), &rows, &[], &setup.config)?;
    std::fs::write(out.join("terminal.txt"), write_terminal(t))?;
    let rep = verify(t, lin, &setup.x_cons, &setup.u_cons);
    println!("k = {:?}", t.k);
    println!("spectral radius {:.4}, state margin {:.2e}, input margin {:.2e}", rep.spectral_radius, rep.state_margin, rep.input_margin);
    if !rep.ok(1e-6) {
        return Err(Error::Infeasible("terminal ingredients fail verification".into()));
    }
    Ok(())
}

fn bench(config: &Config, out: &Path) -> Result<()> {
    let b = &config.bench;
    let theta = rgp_mpc::gp::Hyperparameters::cstr_reported(rgp_mpc::gp::ReportedSet::Dref, 1e-4);
    let rows = studies::bench_chol(&b.n_grid, b.trials, b.seed, &theta)?;
    output::write_table(&out.join("bench_chol.csv"), &rows, &[b.seed], config)?;
    for r in &rows {
        println!(
            "n={:4} recursive={:9.1}us copying={:9.1}us full={:10.1}us speedup={:6.1} diff={:.1e}",
            r.n, r.recursive_median_us, r.copying_median_us, r.full_median_us, r.speedup, r.factor_rel_diff
        );
    }
    Ok(())
}
