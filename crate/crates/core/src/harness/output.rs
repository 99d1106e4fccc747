//! CSV result files, each with a `.meta.toml` sidecar holding the config, the
//! seeds and a SHA-256 of the CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::Config;
use crate::error::{Error, Result};
use crate::mpc::ClosedLoopRun;

#[derive(Debug, Serialize)]
struct StepRow<'a> {
    run: usize,
    seed: u64,
    controller: &'a str,
    k: usize,
    t: f64,
    u: f64,
    y: f64,
    y_true: f64,
    #[serde(rename = "V_N_star")]
    v_n_star: f64,
    e_p: f64,
    sigma2_plus: f64,
    n_points: usize,
    candidate_flag: bool,
    gate_decision: &'a str,
    solver_status: &'a str,
    stage_cost: f64,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    file: String,
    sha256: String,
    rows: usize,
    seeds: &'a [u64],
    config: &'a Config,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `rows` to `path` as CSV with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.toml");
    csv.with_file_name(name)
}

/// Sidecar for an existing CSV file.
pub fn write_meta(csv: &Path, rows: usize, seeds: &[u64], config: &Config) -> Result<PathBuf> {
    let bytes = fs::read(csv)?;
    let meta = Meta {
        file: csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: sha256_hex(&bytes),
        rows,
        seeds,
        config,
    };
    let path = meta_path(csv);
    let text = toml::to_string(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

/// CSV plus sidecar in one call.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T], seeds: &[u64], config: &Config) -> Result<()> {
    write_rows(path, rows)?;
    write_meta(path, rows.len(), seeds, config)?;
    Ok(())
}

/// Per-step log of every run, one row per step.
pub fn write_runs(path: &Path, runs: &[ClosedLoopRun], config: &Config) -> Result<()> {
    let mut rows = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        for r in &run.records {
            rows.push(StepRow {
                run: i,
                seed: run.seed,
                controller: run.controller.name(),
                k: r.k,
                t: r.t,
                u: r.u,
                y: r.y,
                y_true: r.y_true,
                v_n_star: r.v_star,
                e_p: r.e_p,
                sigma2_plus: r.sigma2_plus,
                n_points: r.n_points,
                candidate_flag: r.candidate,
                gate_decision: r.gate.as_str(),
                solver_status: r.solver_status.as_str(),
                stage_cost: r.stage_cost,
            });
        }
    }
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    write_table(path, &rows, &seeds, config)
}
