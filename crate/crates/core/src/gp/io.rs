//! Plain-text formats.
//!
//! Training set: a header line `n n_w`, then `n` rows of `n_w` regressor values
//! followed by the output, whitespace separated. Lines starting with `#` are
//! skipped.
//!
//! Hyperparameters: `key=value` lines with keys `c`, `sigma_f2`, `sigma_n2` and
//! `l1`..`l{n_w}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Hyperparameters, TrainingSet};
use crate::error::{Error, Result};

pub fn write_training_set(data: &TrainingSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", data.len(), data.n_w().unwrap_or(0));
    for (w, z) in data.iter() {
        for v in w {
            let _ = write!(out, "{v:e} ");
        }
        let _ = writeln!(out, "{z:e}");
    }
    out
}

pub fn parse_training_set(text: &str) -> Result<TrainingSet> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
    let dims = parse_floats(header)?;
    if dims.len() != 2 {
        return Err(Error::Parse(format!("header must be `n n_w`, got `{header}`")));
    }
    let (n, n_w) = (dims[0] as usize, dims[1] as usize);
    let mut data = TrainingSet::new();
    for (row, line) in lines.enumerate() {
        let vals = parse_floats(line)?;
        if vals.len() != n_w + 1 {
            return Err(Error::Parse(format!(
                "row {row}: expected {} values, found {}",
                n_w + 1,
                vals.len()
            )));
        }
        data.push(vals[..n_w].to_vec(), vals[n_w])?;
    }
    if data.len() != n {
        return Err(Error::Parse(format!("header declares {n} rows, found {}", data.len())));
    }
    Ok(data)
}

pub fn write_hyperparameters(theta: &Hyperparameters) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "c={:e}", theta.c);
    for (i, l) in theta.lengthscales.iter().enumerate() {
        let _ = writeln!(out, "l{}={:e}", i + 1, l);
    }
    let _ = writeln!(out, "sigma_f2={:e}", theta.sigma_f2);
    let _ = writeln!(out, "sigma_n2={:e}", theta.sigma_n2);
    out
}

pub fn parse_hyperparameters(text: &str) -> Result<Hyperparameters> {
    let kv = parse_key_values(text)?;
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Parse(format!("missing key `{k}`")));
    let mut lengthscales = Vec::new();
    while let Some(l) = kv.get(&format!("l{}", lengthscales.len() + 1)) {
        lengthscales.push(*l);
    }
    Hyperparameters::new(get("c")?, lengthscales, get("sigma_f2")?, get("sigma_n2")?)
}

/// `key=value` lines with numeric values; blank and `#` lines are skipped.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got `{line}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad number in `{line}`")))?;
        kv.insert(k.trim().to_string(), v);
    }
    Ok(kv)
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_set_round_trip() {
        let data = TrainingSet::from_pairs(
            vec![vec![0.1, 0.2], vec![0.3, 1.0 / 3.0]],
            vec![0.5, 0.123456789012345],
        )
        .unwrap();
        let text = write_training_set(&data);
        assert!(text.starts_with("2 2\n"));
        assert_eq!(parse_training_set(&text).unwrap(), data);
    }

    #[test]
    fn rejects_row_count_mismatch() {
        assert!(parse_training_set("3 1\n0.1 0.2\n").is_err());
        assert!(parse_training_set("1 2\n0.1 0.2\n").is_err());
    }

    #[test]
    fn hyperparameter_round_trip() {
        let t = Hyperparameters::new(0.43, vec![0.42, 2.09, 1.01, 2.83], 0.26, 9e-6).unwrap();
        assert_eq!(parse_hyperparameters(&write_hyperparameters(&t)).unwrap(), t);
        assert!(parse_hyperparameters("c=1\nsigma_f2=1\nsigma_n2=0\n").is_err());
    }
}
