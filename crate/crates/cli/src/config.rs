//! TOML run configuration.

use std::path::{Path, PathBuf};

use ehjscc::models::{ArrivalModel, ChannelModel, LeakageModel, LeakageTable, SourceModel};
use ehjscc::policy::{SystemConfig, VariationalConstants, DEFAULT_NODES, DEFAULT_P0PLUS};
use ehjscc::search::SearchSpec;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub arrivals: ArrivalSection,
    #[serde(default = "default_leakage")]
    pub leakage: String,
    pub capacity: Capacity,
    #[serde(default = "default_p0plus")]
    pub p0plus: f64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    pub constants: Option<ConstantsSection>,
    pub search: Option<SearchSection>,
    pub sweep: Option<SweepSection>,
    pub simulate: Option<SimulateSection>,
}

fn default_leakage() -> String {
    "zero".into()
}

fn default_p0plus() -> f64 {
    DEFAULT_P0PLUS
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSection {
    Gaussian { variance: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub noise: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { noise: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSection {
    pub delta: f64,
    pub lambda: f64,
}

impl Default for ArrivalSection {
    fn default() -> Self {
        Self {
            delta: 1.0,
            lambda: 1.0,
        }
    }
}

/// Battery capacity: a positive number or the string `inf`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Capacity {
    Finite(f64),
    Named(InfTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfTag {
    Inf,
}

impl Capacity {
    pub fn value(self) -> f64 {
        match self {
            Capacity::Finite(v) => v,
            Capacity::Named(InfTag::Inf) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Re-solve `C2` so the optimality condition also holds at the full
    /// battery, starting from the given value.
    #[serde(default)]
    pub close: bool,
}

impl ConstantsSection {
    pub fn constants(&self) -> VariationalConstants {
        VariationalConstants::new(self.beta, self.c1, self.c2)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub beta_bounds: Option<(f64, f64)>,
    pub c1_bounds: Option<(f64, f64)>,
    pub c2_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub capacities: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub z0: f64,
    #[serde(default = "one")]
    pub replicas: usize,
    /// `solve` (from `[constants]`) or `custom:<path>` to a policy CSV
    /// written by `solve`.
    #[serde(default = "default_policy")]
    pub policy: String,
}

fn one() -> usize {
    1
}

fn default_policy() -> String {
    "solve".into()
}

/// A parsed config together with the directory relative paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub run: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_str(text: &str, base: PathBuf) -> Result<Self, CliError> {
        let run: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let loaded = Self { run, base };
        loaded.check_fields()?;
        Ok(loaded)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn check_fields(&self) -> Result<(), CliError> {
        let r = &self.run;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{field} must be a positive number, got {v}")))
            }
        };
        match r.source {
            SourceSection::Gaussian { variance } => positive("source.variance", variance)?,
            SourceSection::Bernoulli { p } => {
                if !(p > 0.0 && p <= 0.5) {
                    return Err(CliError::Config(format!("source.p must lie in (0, 1/2], got {p}")));
                }
            }
        }
        positive("channel.noise", r.channel.noise)?;
        positive("arrivals.delta", r.arrivals.delta)?;
        positive("arrivals.lambda", r.arrivals.lambda)?;
        positive("p0plus", r.p0plus)?;
        let cap = r.capacity.value();
        if !(cap > 0.0) {
            return Err(CliError::Config(format!("capacity must be positive or \"inf\", got {cap}")));
        }
        if r.nodes < 4 {
            return Err(CliError::Config(format!("nodes must be at least 4, got {}", r.nodes)));
        }
        self.leakage()?;
        if let Some(s) = &r.simulate {
            positive("simulate.horizon", s.horizon)?;
            if s.replicas == 0 {
                return Err(CliError::Config("simulate.replicas must be at least 1".into()));
            }
            if s.policy != "solve" && !s.policy.starts_with("custom:") {
                return Err(CliError::Config(format!(
                    "simulate.policy must be \"solve\" or \"custom:<path>\", got {:?}",
                    s.policy
                )));
            }
        }
        if let Some(s) = &r.sweep {
            if s.capacities.is_empty() {
                return Err(CliError::Config("sweep.capacities must not be empty".into()));
            }
            for (i, &l) in s.capacities.iter().enumerate() {
                positive(&format!("sweep.capacities[{i}]"), l)?;
            }
        }
        Ok(())
    }

    pub fn source(&self) -> SourceModel {
        match self.run.source {
            SourceSection::Gaussian { variance } => SourceModel::Gaussian { variance },
            SourceSection::Bernoulli { p } => SourceModel::Bernoulli { p },
        }
    }

    pub fn leakage(&self) -> Result<LeakageModel, CliError> {
        let kind = self.run.leakage.as_str();
        Ok(match kind {
            "zero" => LeakageModel::Zero,
            "increasing" => LeakageModel::Increasing,
            "decreasing" => LeakageModel::Decreasing,
            "constant" => LeakageModel::Constant,
            _ => match kind.strip_prefix("custom:") {
                Some(path) => LeakageModel::Custom(self.leakage_table(path)?),
                None => {
                    return Err(CliError::Config(format!(
                        "leakage must be zero, increasing, decreasing, constant or custom:<path>, got {kind:?}"
                    )))
                }
            },
        })
    }

    /// Two-column `z,rate` CSV with an optional header.
    fn leakage_table(&self, path: &str) -> Result<LeakageTable, CliError> {
        let full = self.resolve(path);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| CliError::Config(format!("leakage table {}: {e}", full.display())))?;
        let rows = crate::output::parse_csv(&text, 2)
            .map_err(|e| CliError::Config(format!("leakage table {}: {e}", full.display())))?;
        let (z, rate) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        LeakageTable::new(z, rate)
            .map_err(|e| CliError::Config(format!("leakage table {}: {e}", full.display())))
    }

    /// Capacity as a finite number; `inf` is only meaningful for bounds.
    pub fn finite_capacity(&self) -> Result<f64, CliError> {
        let cap = self.run.capacity.value();
        if cap.is_finite() {
            Ok(cap)
        } else {
            Err(CliError::Config("this command needs a finite capacity".into()))
        }
    }

    pub fn arrivals(&self) -> ArrivalModel {
        ArrivalModel {
            delta: self.run.arrivals.delta,
            lambda: self.run.arrivals.lambda,
        }
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel::Awgn {
            noise: self.run.channel.noise,
        }
    }

    pub fn system(&self) -> Result<SystemConfig, CliError> {
        let mut sys = SystemConfig::new(
            self.source(),
            self.channel(),
            self.arrivals(),
            self.leakage()?,
            self.finite_capacity()?,
        )
        .with_p0plus(self.run.p0plus);
        sys.nodes = self.run.nodes;
        sys.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sys)
    }

    pub fn constants(&self) -> Result<ConstantsSection, CliError> {
        self.run
            .constants
            .ok_or_else(|| CliError::Config("missing [constants] section".into()))
    }

    pub fn search_spec(&self, sys: &SystemConfig, seed: Option<u64>) -> SearchSpec {
        let mut spec = SearchSpec::for_system(sys);
        if let Some(s) = &self.run.search {
            if let Some(b) = s.budget {
                spec.budget = b;
            }
            if let Some(v) = s.seed {
                spec.seed = v;
            }
            if let Some(v) = s.beta_bounds {
                spec.beta_bounds = v;
            }
            if let Some(v) = s.c1_bounds {
                spec.c1_bounds = v;
            }
            if let Some(v) = s.c2_bounds {
                spec.c2_bounds = v;
            }
        }
        if let Some(v) = seed {
            spec.seed = v;
        }
        spec
    }

    pub fn sweep_capacities(&self) -> Result<Vec<f64>, CliError> {
        self.run
            .sweep
            .as_ref()
            .map(|s| s.capacities.clone())
            .ok_or_else(|| CliError::Config("missing [sweep] section".into()))
    }

    pub fn simulate(&self) -> Result<&SimulateSection, CliError> {
        self.run
            .simulate
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [simulate] section".into()))
    }

    /// Path of a custom policy CSV, if the simulation uses one.
    pub fn custom_policy(&self) -> Result<Option<PathBuf>, CliError> {
        Ok(self
            .simulate()?
            .policy
            .strip_prefix("custom:")
            .map(|p| self.resolve(p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
capacity = 5
[source]
kind = "gaussian"
variance = 1.0
"#;

    fn load(extra: &str) -> Result<Loaded, CliError> {
        Loaded::from_str(&format!("{BASE}{extra}"), PathBuf::new())
    }

    #[test]
    fn defaults_fill_in() {
        let c = load("").unwrap();
        let sys = c.system().unwrap();
        assert_eq!(sys.capacity, 5.0);
        assert_eq!(sys.p0plus, DEFAULT_P0PLUS);
        assert_eq!(sys.leakage, LeakageModel::Zero);
        assert_eq!(c.arrivals().delta, 1.0);
    }

    #[test]
    fn infinite_capacity() {
        let c = Loaded::from_str(
            "capacity = \"inf\"\n[source]\nkind = \"gaussian\"\nvariance = 1.0\n",
            PathBuf::new(),
        )
        .unwrap();
        assert_eq!(c.run.capacity.value(), f64::INFINITY);
        assert!(matches!(c.system(), Err(CliError::Config(_))));
    }

    #[test]
    fn errors_name_the_field() {
        let e = Loaded::from_str(
            "capacity = 5\n[source]\nkind = \"gaussian\"\nvariance = -1.0\n",
            PathBuf::new(),
        )
        .unwrap_err();
        assert!(e.to_string().contains("source.variance"), "{e}");
        let e = load("[channel]\nnoise = 1\ntypo = 2\n").unwrap_err();
        assert!(e.to_string().contains("typo"), "{e}");
        let e = Loaded::from_str("capacity = \"big\"\n", PathBuf::new()).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }

    #[test]
    fn leakage_kinds() {
        let c = Loaded::from_str(
            &format!("leakage = \"increasing\"\n{BASE}"),
            PathBuf::new(),
        )
        .unwrap();
        assert_eq!(c.leakage().unwrap(), LeakageModel::Increasing);
        let e = Loaded::from_str(&format!("leakage = \"wobbly\"\n{BASE}"), PathBuf::new());
        assert!(e.is_err());
    }
}
