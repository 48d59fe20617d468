//! Result rows, the CSV writer and JSON printing.

use std::io::Write;
use std::path::Path;

use grouped_mdp::experiments::{mean, TrialOutcome};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Required columns, in order. Optional columns follow in [`OPTIONAL_COLUMNS`].
pub const REQUIRED_COLUMNS: [&str; 12] = [
    "experiment", "trial", "groups", "K", "Kprime", "T", "loss_sup", "eps_perf", "eps_approx", "eps_samp", "eps_alg",
    "wall_ms",
];

pub const OPTIONAL_COLUMNS: [&str; 10] =
    ["setting", "seed", "label", "loss_per_state", "covered", "beta_p", "beta_r", "gamma", "gap", "utility"];

/// One CSV record. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub trial: u32,
    pub groups: usize,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "Kprime")]
    pub k_prime: u64,
    #[serde(rename = "T")]
    pub t: u64,
    pub loss_sup: f64,
    pub eps_perf: f64,
    pub eps_approx: f64,
    pub eps_samp: f64,
    pub eps_alg: f64,
    pub wall_ms: f64,
    pub setting: u32,
    pub seed: Option<u64>,
    pub label: Option<String>,
    /// Per-state loss joined with `;`.
    pub loss_per_state: Option<String>,
    pub covered: Option<bool>,
    pub beta_p: Option<f64>,
    pub beta_r: Option<f64>,
    pub gamma: Option<f64>,
    pub gap: Option<f64>,
    pub utility: Option<f64>,
}

impl Row {
    pub fn from_trial(experiment: &str, setting: u32, trial: u32, seed: u64, label: &str, o: &TrialOutcome) -> Self {
        let b = &o.bounds;
        Row {
            experiment: experiment.to_string(),
            trial,
            groups: o.groups,
            k: o.k_total,
            k_prime: o.k_prime,
            t: o.t,
            loss_sup: o.loss.sup,
            eps_perf: b.eps_perf,
            eps_approx: b.eps_approx,
            eps_samp: b.eps_samp,
            eps_alg: b.eps_alg,
            wall_ms: o.wall_ms,
            setting,
            seed: Some(seed),
            label: Some(label.to_string()),
            loss_per_state: Some(join_states(&o.loss.per_state)),
            covered: Some(o.covered()),
            beta_p: Some(b.inputs.beta_p_star),
            beta_r: Some(b.inputs.beta_r_star),
            gamma: Some(b.inputs.gamma),
            gap: None,
            utility: None,
        }
    }
}

pub fn join_states(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_csv(path: &Path, rows: &[Row]) -> CliResult<()> {
    let fail = |e: &dyn std::fmt::Display| CliError::Runtime(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| fail(&e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
    if rows.is_empty() {
        let header: Vec<&str> = REQUIRED_COLUMNS.iter().chain(OPTIONAL_COLUMNS.iter()).copied().collect();
        w.write_record(header).map_err(|e| fail(&e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

/// Pretty JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

/// Per-setting means printed after a run.
pub fn summary(rows: &[Row]) -> String {
    let mut lines = vec![format!(
        "{:>7} {:<10} {:>6} {:>10} {:>8} {:>12} {:>12} {:>8}",
        "setting", "label", "groups", "K", "T", "mean_loss", "mean_bound", "covered"
    )];
    let mut i = 0;
    while i < rows.len() {
        let j = i + rows[i..].iter().take_while(|r| r.setting == rows[i].setting).count();
        let chunk = &rows[i..j];
        let first = &chunk[0];
        let covered = chunk.iter().filter(|r| r.covered == Some(true)).count();
        lines.push(format!(
            "{:>7} {:<10} {:>6} {:>10} {:>8} {:>12.6} {:>12.6} {:>4}/{:<3}",
            first.setting,
            first.label.as_deref().unwrap_or("-"),
            first.groups,
            first.k,
            first.t,
            mean(chunk.iter().map(|r| r.loss_sup)),
            mean(chunk.iter().map(|r| r.eps_perf)),
            covered,
            chunk.len()
        ));
        i = j;
    }
    lines.join("\n")
}
