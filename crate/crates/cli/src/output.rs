//! CSV and JSON writers and the policy file format.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ehjscc::policy::PolicySolution;
use ehjscc::simulator::PolicyTable;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Rows of numbers under a header, with `\n` line endings.
pub fn csv<R, V>(header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = Vec<V>>,
    V: Display,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Numeric CSV with `width` columns. A first line that does not parse is
/// taken as a header.
pub fn parse_csv(text: &str, width: usize) -> Result<Vec<Vec<f64>>, String> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cells {
            Ok(c) if c.len() >= width => rows.push(c[..width].to_vec()),
            Ok(c) => {
                return Err(format!(
                    "line {}: expected {width} columns, found {}",
                    i + 1,
                    c.len()
                ))
            }
            Err(_) if i == 0 => {}
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(rows)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Scalars written next to `policy.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySidecar {
    pub capacity: f64,
    pub pi0: f64,
    pub kappa0: f64,
    pub d_beta: Option<f64>,
    pub d_avg: f64,
    pub d_lb: f64,
    pub inv_kappa_mass: f64,
    pub residual50: f64,
    pub feasible: bool,
    pub diagnostic: Option<String>,
    pub beta: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c: Option<f64>,
}

impl PolicySidecar {
    pub fn new(sol: &PolicySolution) -> Result<Self, CliError> {
        use ehjscc::policy::PolicyKind;
        let (beta, c1, c2, c) = match sol.kind {
            PolicyKind::Adaptive(k) => (Some(k.beta), Some(k.c1), Some(k.c2), None),
            PolicyKind::ConstantKappa { c } => (None, None, None, Some(c)),
        };
        Ok(Self {
            capacity: sol.system.capacity,
            pi0: sol.pi0,
            kappa0: sol.kappa0,
            d_beta: sol.d_beta,
            d_avg: sol.d_avg,
            d_lb: sol.system.lower_bound()?,
            inv_kappa_mass: sol.inv_kappa_mass,
            residual50: sol.residual50,
            feasible: sol.feasible,
            diagnostic: sol.diagnostic.clone(),
            beta,
            c1,
            c2,
            c,
        })
    }
}

pub const POLICY_HEADER: [&str; 4] = ["z", "p", "kappa", "f"];

/// Policy table; the first row holds the values just above empty.
pub fn policy_csv(sol: &PolicySolution) -> String {
    let first = vec![0.0, sol.system.p0plus, sol.kappa0plus, sol.f0plus];
    let rest = (0..sol.p.len()).map(|i| vec![sol.z()[i], sol.p[i], sol.kappa[i], sol.f[i]]);
    csv(&POLICY_HEADER, std::iter::once(first).chain(rest))
}

/// Writes `<stem>.csv` and `<stem>.json` for a solved policy.
pub fn write_policy(dir: &Path, stem: &str, sol: &PolicySolution) -> Result<PathBuf, CliError> {
    let path = write(dir, &format!("{stem}.csv"), &policy_csv(sol))?;
    write(dir, &format!("{stem}.json"), &to_json(&PolicySidecar::new(sol)?)?)?;
    Ok(path)
}

/// Reads a policy CSV and the sidecar next to it.
pub fn read_policy(csv_path: &Path) -> Result<(PolicyTable, PolicySidecar), CliError> {
    let bad = |m: String| CliError::Config(format!("policy {}: {m}", csv_path.display()));
    let text = fs::read_to_string(csv_path).map_err(|e| bad(e.to_string()))?;
    let rows = parse_csv(&text, 3).map_err(bad)?;
    let side_path = csv_path.with_extension("json");
    let side_text = fs::read_to_string(&side_path)
        .map_err(|e| bad(format!("sidecar {}: {e}", side_path.display())))?;
    let sidecar: PolicySidecar =
        serde_json::from_str(&side_text).map_err(|e| bad(format!("sidecar: {e}")))?;
    let table = PolicyTable {
        z: rows.iter().map(|r| r[0]).collect(),
        p: rows.iter().map(|r| r[1]).collect(),
        kappa: rows.iter().map(|r| r[2]).collect(),
        kappa0: sidecar.kappa0,
    };
    Ok((table, sidecar))
}
