use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::Context;
use nalgebra::DMatrix;
use relu_interp::{InterpMatrix, ModeMatrix};
use serde::de::DeserializeOwned;

use crate::commands::Outcome;

/// Malformed command-line value; maps to the validation exit code.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = read(path)?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} in {}", path.display()))
}

fn looks_like_json(text: &str) -> bool {
    matches!(text.trim_start().chars().next(), Some('{' | '['))
}

/// Interpolation matrix from JSON or headerless CSV.
pub fn load_matrix(path: &Path) -> anyhow::Result<InterpMatrix> {
    let text = read(path)?;
    if looks_like_json(&text) {
        serde_json::from_str(&text).with_context(|| format!("invalid matrix in {}", path.display()))
    } else {
        InterpMatrix::read_csv(text.as_bytes()).with_context(|| format!("invalid matrix in {}", path.display()))
    }
}

/// Mode grid from JSON or whitespace-separated symbols.
pub fn load_mode(path: &Path) -> anyhow::Result<ModeMatrix> {
    let text = read(path)?;
    if looks_like_json(&text) {
        serde_json::from_str(&text).with_context(|| format!("invalid mode grid in {}", path.display()))
    } else {
        ModeMatrix::parse(&text).with_context(|| format!("invalid mode grid in {}", path.display()))
    }
}

/// Targets as a JSON array (of numbers or of rows) or one CSV row per value.
pub fn load_targets(path: &Path) -> anyhow::Result<DMatrix<f64>> {
    let text = read(path)?;
    let rows: Vec<Vec<f64>> = if looks_like_json(&text) {
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("invalid targets in {}", path.display()))?;
        match serde_json::from_value::<Vec<f64>>(value.clone()) {
            Ok(flat) => flat.into_iter().map(|v| vec![v]).collect(),
            Err(_) => serde_json::from_value(value).with_context(|| format!("invalid targets in {}", path.display()))?,
        }
    } else {
        InterpMatrix::read_csv(text.as_bytes())
            .map(|m| (0..m.nrows()).map(|r| m.row(r)).collect())
            .or_else(|_| {
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| parse_numbers(l).map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<Vec<_>>>()
            })
            .with_context(|| format!("invalid targets in {}", path.display()))?
    };
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(input_error(format!("targets in {} must be a non-empty rectangular table", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn parse_numbers(line: &str) -> Result<Vec<f64>, InputError> {
    line.split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| InputError(format!("{f:?}: {e}"))))
        .collect()
}

/// `0,2,5`.
pub fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|e| input_error(format!("{what}: {s:?} is not an index ({e})"))))
        .collect()
}

/// `0,1;2` into `[[0, 1], [2]]`.
pub fn parse_groups(text: &str, what: &str) -> anyhow::Result<Vec<Vec<usize>>> {
    text.split(';').map(|g| parse_list(g, what)).collect()
}

/// `3=0.5,4=1`.
pub fn parse_assignments(text: &str) -> anyhow::Result<Vec<(usize, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| input_error(format!("free value {pair:?} must look like index=value")))?;
            let k = k.trim().parse().map_err(|e| input_error(format!("free value index {k:?}: {e}")))?;
            let v = v.trim().parse().map_err(|e| input_error(format!("free value {v:?}: {e}")))?;
            Ok((k, v))
        })
        .collect()
}

pub fn to_json<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// With `out`, writes the artifact there and the summary to stdout;
/// otherwise the artifact goes to stdout and the summary to stderr.
pub fn emit(outcome: &Outcome, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            fs::write(path, &outcome.artifact).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", outcome.summary);
        }
        None => {
            print!("{}", outcome.artifact);
            eprintln!("{}", outcome.summary);
        }
    }
    Ok(())
}
