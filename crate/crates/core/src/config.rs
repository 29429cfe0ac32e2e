//! Experiment configuration: infrastructure, the grid to run, backend
//! overrides and the calibration to use.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendParams;
use crate::error::{Result, SimError};
use crate::kernel::DEFAULT_EVENT_BUDGET;
use crate::model::{Application, NetworkLink, Strategy, Tier};
use crate::sim::Topology;
use crate::workloads::{ArrivalPattern, Calibration, MAX_FPS};

pub const MAX_USERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadGrid {
    pub users: Vec<usize>,
    /// Frame rates; only the video application uses them.
    pub fps: Vec<u32>,
    pub arrival: ArrivalPattern,
}

impl Default for LoadGrid {
    fn default() -> Self {
        LoadGrid { users: vec![10], fps: vec![5], arrival: ArrivalPattern::Burst }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tiers: Vec<Tier>,
    pub links: Vec<NetworkLink>,
    pub strategies: Vec<Strategy>,
    pub applications: Vec<Application>,
    pub load: LoadGrid,
    /// Partial overrides applied on top of the calibration's backend
    /// parameters.
    pub backends: Option<toml::Table>,
    /// Calibration file; the built-in one when absent. Relative paths are
    /// resolved against the config file's directory.
    pub calibration: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub event_budget: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let topo = Topology::testbed();
        ExperimentConfig {
            tiers: topo.tiers,
            links: topo.links,
            strategies: Strategy::ALL.to_vec(),
            applications: Application::ALL.to_vec(),
            load: LoadGrid::default(),
            backends: None,
            calibration: None,
            seed: 42,
            out: PathBuf::from("results"),
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Reads and validates a config file, resolving a relative calibration
    /// path against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            SimError::Config(msg) => SimError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let (Some(cal), Some(dir)) = (&cfg.calibration, path.parent()) {
            if cal.is_relative() {
                cfg.calibration = Some(dir.join(cal));
            }
        }
        Ok(cfg)
    }

    pub fn topology(&self) -> Topology {
        Topology { tiers: self.tiers.clone(), links: self.links.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.load.users.is_empty() {
            return fail("load.users must not be empty".into());
        }
        if let Some(u) = self.load.users.iter().find(|u| !(1..=MAX_USERS).contains(u)) {
            return fail(format!("load.users: {u} is outside 1..={MAX_USERS}"));
        }
        if let Some(f) = self.load.fps.iter().find(|f| !(1..=MAX_FPS).contains(f)) {
            return fail(format!("load.fps: {f} is outside 1..={MAX_FPS}"));
        }
        if let ArrivalPattern::Poisson { rate } = self.load.arrival {
            if !(rate > 0.0 && rate.is_finite()) {
                return fail(format!("load.arrival.rate must be positive, got {rate}"));
            }
        }
        if self.strategies.is_empty() || self.applications.is_empty() {
            return fail("strategies and applications must not be empty".into());
        }
        if self.event_budget == 0 {
            return fail("event_budget must be positive".into());
        }
        let violations = self.topology().violations();
        if !violations.is_empty() {
            return Err(SimError::InvalidPipeline(violations));
        }
        if let Some(path) = &self.calibration {
            if !path.is_file() {
                return fail(format!("calibration file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// The calibration named by the config, with backend overrides applied.
    pub fn resolved_calibration(&self) -> Result<Calibration> {
        let mut cal = match &self.calibration {
            Some(path) => Calibration::load(path)?,
            None => Calibration::embedded(),
        };
        if let Some(overrides) = &self.backends {
            cal.backends = merge_backends(&cal.backends, overrides)?;
        }
        Ok(cal)
    }
}

/// Deep-merges `overrides` into `base`, so a config can change one field
/// without restating the rest.
pub fn merge_backends(base: &BackendParams, overrides: &toml::Table) -> Result<BackendParams> {
    let mut merged = toml::Table::try_from(base).map_err(|e| SimError::Config(e.to_string()))?;
    merge_table(&mut merged, overrides);
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| SimError::Config(format!("backends: {e}")))
}

fn merge_table(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge_table(dst, src),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Parses `5`, `1,2,4`, `1..15` or `10..100:10` (inclusive ranges with an
/// optional step), and comma-separated mixtures of these.
pub fn parse_list(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a non-negative integer"));
        if let Some((lo, rest)) = part.split_once("..") {
            let rest = rest.strip_prefix('=').unwrap_or(rest);
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi)?, num(step)?),
                None => (num(rest)?, 1),
            };
            let lo = num(lo)?;
            if step == 0 || lo > hi {
                return Err(format!("empty range `{part}`"));
            }
            out.extend((lo..=hi).step_by(step as usize));
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Capacity;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_overrides_defaults() {
        let cfg = ExperimentConfig::parse(
            r#"
            seed = 7
            strategies = ["mqtt"]
            applications = ["pocketsphinx"]
            [load]
            users = [10, 50]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.strategies, vec![Strategy::Mqtt]);
        assert_eq!(cfg.load.users, vec![10, 50]);
        assert_eq!(cfg.load.fps, vec![5]);
        assert_eq!(cfg.tiers.len(), 3);
    }

    #[test]
    fn unknown_field_is_reported() {
        let err = ExperimentConfig::parse("sede = 1").unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn users_out_of_range() {
        let mut cfg = ExperimentConfig::default();
        cfg.load.users = vec![0];
        assert!(cfg.validate().is_err());
        cfg.load.users = vec![10_001];
        assert!(cfg.validate().is_err());
        cfg.load.users = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_calibration_file() {
        let cfg = ExperimentConfig { calibration: Some("/nonexistent/cal.toml".into()), ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backend_override_keeps_other_fields() {
        let cfg = ExperimentConfig::parse("[backends.pubsub]\ntopic_capacity = \"unbounded\"\n").unwrap();
        let base = Calibration::embedded();
        let cal = cfg.resolved_calibration().unwrap();
        assert_eq!(cal.backends.pubsub.topic_capacity, Capacity::Unbounded);
        assert_eq!(cal.backends.pubsub.gateway_capacity, base.backends.pubsub.gateway_capacity);
        assert_eq!(cal.backends.flow_queue, base.backends.flow_queue);
    }

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("5").unwrap(), vec![5]);
        assert_eq!(parse_list("1,2, 4").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_list("1..15").unwrap().len(), 15);
        assert_eq!(parse_list("10..=30:10").unwrap(), vec![10, 20, 30]);
        assert!(parse_list("5..1").is_err());
        assert!(parse_list("x").is_err());
        assert!(parse_list("").is_err());
    }
}
