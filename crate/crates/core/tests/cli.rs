use std::fs;
use std::path::Path;
use std::process::Command;

fn rgp(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rgp-mpc"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[experiment]\nn_sim = 2\nn_step = 20\ncontroller = \"bGP\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = rgp(d, &["--config", cfg, "--seed", "9", "--threads", "1", "simulate"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["runs.csv", "runs.csv.meta.toml", "summary.csv", "summary.csv.meta.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    let header = runs.lines().next().unwrap();
    for col in ["k", "t", "u", "y", "V_N_star", "e_p", "sigma2_plus", "n_points", "candidate_flag", "gate_decision", "solver_status"] {
        assert!(header.split(',').any(|c| c == col), "missing {col}");
    }
    assert_eq!(runs.lines().count(), 1 + 2 * 21);
    let meta = fs::read_to_string(a.join("runs.csv.meta.toml")).unwrap();
    assert!(meta.contains("seeds = [9, 10]"), "{meta}");
}

#[test]
fn data_and_terminal_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-data", "design-terminal"] {
        let out = rgp(dir.path(), &[cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let set = rgp_mpc::gp::parse_training_set(&fs::read_to_string(dir.path().join("Dref.txt")).unwrap()).unwrap();
    assert_eq!(set.n_w(), Some(4));
    assert!(set.len() >= 20);
    let pair = rgp_mpc::terminal::parse_terminal(&fs::read_to_string(dir.path().join("terminal.txt")).unwrap()).unwrap();
    assert_eq!(pair.k.len(), 3);
    assert!(dir.path().join("trajectory.csv.meta.toml").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[mpc]\nno_such_key = 1\n").unwrap();
    let out = rgp(dir.path(), &["--config", bad.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(1));

    let small = dir.path().join("bench.toml");
    fs::write(&small, "[bench]\nn_grid = [10, 20]\ntrials = 3\n").unwrap();
    let out = rgp(dir.path(), &["--config", small.to_str().unwrap(), "bench-chol"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("bench_chol.csv").exists());

    // No input in the box holds the plant at this output.
    let tight = dir.path().join("tight.toml");
    fs::write(&tight, "[data]\ny0 = 0.9\n").unwrap();
    let out = rgp(dir.path(), &["--config", tight.to_str().unwrap(), "design-terminal"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
