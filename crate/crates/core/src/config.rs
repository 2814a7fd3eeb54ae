//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SensorParams;
use crate::planner::PlannerConfig;

/// Energy arrival rates of the reference fleet, assigned cyclically.
pub const REFERENCE_LAMBDAS: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Relaxed policy truncated to the per-slot budget.
    RelaxTruncate,
    /// Largest AoI among requested sensors.
    Greedy,
    /// Analytic cost of the relaxed policy; no simulation.
    RelaxedLowerBound,
    /// Relaxed policy simulated without truncation.
    Relaxed,
    /// Relax-then-truncate with the true battery level known.
    ExactRelaxTruncate,
    /// Unconstrained optimum, no budget.
    Unconstrained,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::RelaxTruncate,
        PolicyKind::Greedy,
        PolicyKind::RelaxedLowerBound,
        PolicyKind::Relaxed,
        PolicyKind::ExactRelaxTruncate,
        PolicyKind::Unconstrained,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::RelaxTruncate => "relax-truncate",
            PolicyKind::Greedy => "greedy",
            PolicyKind::RelaxedLowerBound => "relaxed-lower-bound",
            PolicyKind::Relaxed => "relaxed",
            PolicyKind::ExactRelaxTruncate => "exact-knowledge-relax-truncate",
            PolicyKind::Unconstrained => "unconstrained",
        }
    }

    /// Whether the per-slot budget is enforced.
    pub fn constrained(&self) -> bool {
        matches!(
            self,
            PolicyKind::RelaxTruncate | PolicyKind::Greedy | PolicyKind::ExactRelaxTruncate
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub k: usize,
    /// Normalized budget; ignored when `n` is set.
    pub gamma: f64,
    /// Commands per slot, overriding `gamma`.
    pub n: Option<usize>,
    pub lambdas: Vec<f64>,
    pub p: f64,
    pub capacity: usize,
    pub delta_max: usize,
    pub policy: PolicyKind,
    pub episodes: usize,
    pub slots: u64,
    pub seed: u64,
    pub planner: PlannerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "default".into(),
            k: 100,
            gamma: 0.15,
            n: None,
            lambdas: REFERENCE_LAMBDAS.to_vec(),
            p: 0.8,
            capacity: 3,
            delta_max: 64,
            policy: PolicyKind::RelaxTruncate,
            episodes: 3,
            slots: 1_000_000,
            seed: 1,
            planner: PlannerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::Config("lambdas must be non-empty".into()));
        }
        if self.n.is_none() && !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma = {} not in (0, 1]", self.gamma)));
        }
        if let Some(n) = self.n {
            if n == 0 || n > self.k {
                return Err(Error::Config(format!("n = {n} not in 1..=k")));
            }
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        self.planner.validate()?;
        self.classes()?;
        Ok(())
    }

    /// Distinct parameter classes in order of first appearance.
    pub fn classes(&self) -> Result<Vec<SensorParams>> {
        let mut out: Vec<SensorParams> = Vec::new();
        for &l in &self.lambdas {
            let p = SensorParams::new(l, self.p, self.capacity, self.delta_max)?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }

    /// Class index of every sensor; rates are assigned cyclically.
    pub fn assignment(&self) -> Result<Vec<usize>> {
        let classes = self.classes()?;
        (0..self.k)
            .map(|k| {
                let l = self.lambdas[k % self.lambdas.len()];
                Ok(classes.iter().position(|c| c.lambda() == l).expect("class present"))
            })
            .collect()
    }

    /// Sensors per class.
    pub fn weights(&self) -> Result<Vec<usize>> {
        let mut w = vec![0; self.classes()?.len()];
        for c in self.assignment()? {
            w[c] += 1;
        }
        Ok(w)
    }

    /// Per-slot budget `N`: the explicit value, else `round(gamma * k)`
    /// clamped to at least one.
    pub fn budget(&self) -> usize {
        match self.n {
            Some(n) => n,
            None => ((self.gamma * self.k as f64).round() as usize).clamp(1, self.k),
        }
    }

    /// Budget the relaxed problem is planned at, `N / K`.
    pub fn planning_gamma(&self) -> f64 {
        self.budget() as f64 / self.k as f64
    }

    /// Budget reported in output rows.
    pub fn nominal_gamma(&self) -> f64 {
        match self.n {
            Some(n) => n as f64 / self.k as f64,
            None => self.gamma,
        }
    }
}
