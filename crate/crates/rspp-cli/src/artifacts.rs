//! On-disk artifacts: run manifests, chain CSV reading, pilot tables,
//! regression models, and threshold reports.  Every command writes a
//! manifest echoing its merged configuration, master seed, and artifact
//! version, which together determine the outputs bit for bit.

use crate::config::Config;
use anyhow::{bail, Context, Result};
use rspp::abc::{AbcThreshold, PilotTable, RegressionModel};
use rspp::geometry::fmt_f64;
use rspp::mcmc::Chain;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

/// Writes `manifest.json` describing one command invocation.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &Config,
    outputs: &[(String, String)],
    details: serde_json::Value,
) -> Result<PathBuf> {
    let outputs: serde_json::Map<String, serde_json::Value> = outputs
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    let manifest = serde_json::json!({
        "artifact": {
            "name": "rspp",
            "version": env!("CARGO_PKG_VERSION"),
        },
        "command": command,
        "master_seed": config.run.seed,
        "workers": config.run.workers,
        "config": config,
        "outputs": outputs,
        "details": details,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Reads a chain CSV produced by the inference commands back into memory.
/// Returns the parameter column names alongside the chain.
pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Chain)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading chain file {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("chain file is empty")?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5
        || columns[0] != "iter"
        || columns[columns.len() - 3..] != ["accepted", "elapsed_ns", "aux_draws"]
    {
        bail!(
            "chain file {} must have columns iter,<params...>,accepted,elapsed_ns,aux_draws",
            path.display()
        );
    }
    let names: Vec<String> = columns[1..columns.len() - 3]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let dim = names.len();
    let mut draws = Vec::new();
    let mut accept_flags = Vec::new();
    let mut elapsed_ns = Vec::new();
    let mut aux_draws = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 4 {
            bail!(
                "chain file {} row {}: expected {} fields, got {}",
                path.display(),
                row + 2,
                dim + 4,
                fields.len()
            );
        }
        let parse =
            |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().with_context(|| {
                    format!("chain file {} row {}: bad {what} `{s}`", path.display(), row + 2)
                })
            };
        let theta: Vec<f64> = fields[1..=dim]
            .iter()
            .map(|s| parse(s, "parameter"))
            .collect::<Result<_>>()?;
        draws.push(theta);
        accept_flags.push(match fields[dim + 1] {
            "1" => true,
            "0" => false,
            other => bail!(
                "chain file {} row {}: accept flag must be 0 or 1, got `{other}`",
                path.display(),
                row + 2
            ),
        });
        elapsed_ns.push(fields[dim + 2].parse::<u64>().with_context(|| {
            format!("chain file {} row {}: bad elapsed_ns", path.display(), row + 2)
        })?);
        aux_draws.push(fields[dim + 3].parse::<u64>().with_context(|| {
            format!("chain file {} row {}: bad aux_draws", path.display(), row + 2)
        })?);
    }
    if draws.is_empty() {
        bail!("chain file {} has a header but no rows", path.display());
    }
    Ok((
        names,
        Chain {
            draws,
            accept_flags,
            elapsed_ns,
            aux_draws,
            master_seed: 0,
        },
    ))
}

/// Writes the pilot design: `log_<name>` columns for the drawn
/// log-parameters followed by the summary components.
pub fn write_pilot_csv(path: &Path, pilot: &PilotTable, names: &[&str]) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = names
        .iter()
        .map(|n| format!("log_{n}"))
        .chain((0..pilot.summary_dim()).map(|j| format!("eta_{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in 0..pilot.len() {
        let fields: Vec<String> = pilot.log_theta[row]
            .iter()
            .chain(&pilot.eta[row])
            .map(|v| fmt_f64(*v))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Serialization mirror of the fitted summary regression.
#[derive(Serialize, Deserialize)]
pub struct RegressionJson {
    pub a_hat: Vec<f64>,
    pub b_hat: Vec<Vec<f64>>,
    pub var_hat: Vec<f64>,
    pub lambda: f64,
}

impl From<&RegressionModel> for RegressionJson {
    fn from(m: &RegressionModel) -> Self {
        RegressionJson {
            a_hat: m.a_hat.clone(),
            b_hat: m.b_hat.clone(),
            var_hat: m.var_hat.clone(),
            lambda: m.lambda,
        }
    }
}

pub fn write_regression_json(path: &Path, model: &RegressionModel) -> Result<()> {
    let json = serde_json::to_string_pretty(&RegressionJson::from(model))?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Threshold report rows: one `(p, epsilon)` pair per requested percentile.
pub fn thresholds_json(thresholds: &[AbcThreshold]) -> serde_json::Value {
    serde_json::Value::Array(
        thresholds
            .iter()
            .map(|t| serde_json::json!({"p": t.p, "epsilon": t.epsilon}))
            .collect(),
    )
}
