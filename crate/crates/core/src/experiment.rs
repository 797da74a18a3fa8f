//! Experiment configuration shared by the command line and config files,
//! plus the trajectory CSV writer.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coupling::{EdgePolicy, MetricKind};
use crate::dynamics::Beta;
use crate::error::{ArwError, Result};
use crate::graph::GraphSpec;
use crate::state_space::Configuration;
use crate::suite::SuiteName;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    pub n: u32,
    pub beta: Beta,
    #[serde(default)]
    pub lazy: bool,
    pub seed: u64,
    /// File for simulate/analyze/zchain/coupling, directory for suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Simulate {
        steps: u64,
        #[serde(default = "one")]
        stride: u64,
        #[serde(default)]
        start: StartSpec,
    },
    Analyze {
        #[serde(default)]
        stationary: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mixing_time: Option<f64>,
        #[serde(default)]
        cheeger: bool,
        #[serde(default)]
        reversibility: bool,
    },
    Zchain {
        d: usize,
        delta: f64,
        max_degree: usize,
        mode: ZchainMode,
    },
    Coupling {
        check: CouplingCheck,
    },
    Suite {
        suite: SuiteName,
    },
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZchainMode {
    Stationary,
    Hitting { replicas: usize, max_steps: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CouplingCheck {
    NoContraction,
    Contraction {
        metric: MetricKind,
        policy: EdgePolicy,
    },
    TvAudit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
}

/// Initial configuration of a simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StartSpec {
    /// Each particle placed independently and uniformly, using the run's RNG.
    #[default]
    Uniform,
    /// As even as possible, lower-indexed vertices take the remainder.
    Spread,
    Concentrated(usize),
}

impl fmt::Display for StartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartSpec::Uniform => f.write_str("uniform"),
            StartSpec::Spread => f.write_str("spread"),
            StartSpec::Concentrated(v) => write!(f, "concentrated:{v}"),
        }
    }
}

impl FromStr for StartSpec {
    type Err = ArwError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(StartSpec::Uniform),
            "spread" => Ok(StartSpec::Spread),
            t => t
                .strip_prefix("concentrated:")
                .and_then(|v| v.parse().ok())
                .map(StartSpec::Concentrated)
                .ok_or_else(|| ArwError::Config(format!("invalid start {s:?} (uniform, spread, concentrated:V)"))),
        }
    }
}

impl TryFrom<String> for StartSpec {
    type Error = ArwError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StartSpec> for String {
    fn from(s: StartSpec) -> String {
        s.to_string()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| ArwError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ArwError::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        let needs_graph = matches!(
            self.task,
            Task::Simulate { .. }
                | Task::Analyze { .. }
                | Task::Coupling { check: CouplingCheck::Contraction { .. } | CouplingCheck::TvAudit { .. } }
        );
        if needs_graph && self.graph.is_none() {
            return bad("this command needs a graph");
        }
        let finite_only = !matches!(self.task, Task::Simulate { .. } | Task::Suite { .. });
        if finite_only && self.beta.finite().is_none() {
            return bad("beta = -inf is only supported by simulate");
        }
        match &self.task {
            Task::Simulate { stride, .. } if *stride == 0 => bad("stride must be positive"),
            Task::Analyze { stationary, mixing_time, cheeger, reversibility } => {
                if !(*stationary || mixing_time.is_some() || *cheeger || *reversibility) {
                    return bad("analyze needs at least one of stationary, mixing-time, cheeger, reversibility");
                }
                match mixing_time {
                    Some(eps) if !(*eps > 0.0 && *eps < 1.0) => bad("mixing-time epsilon must lie in (0, 1)"),
                    _ => Ok(()),
                }
            }
            Task::Zchain { d, max_degree, mode, .. } => {
                if *d == 0 || *max_degree == 0 {
                    return bad("zchain needs D >= 1 and Delta >= 1");
                }
                match mode {
                    ZchainMode::Hitting { replicas: 0, .. } => bad("replicas must be positive"),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Metadata written as `# key=value` lines above a trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryHeader {
    pub seed: u64,
    pub graph: String,
    pub beta: Beta,
    pub n: u32,
    pub lazy: bool,
    pub steps: u64,
    pub stride: u64,
    pub k: usize,
    /// JSON echo of the full config, if any.
    pub config: Option<String>,
}

/// Writes `t,x0,...,x{k-1}` rows every `stride` steps.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    stride: u64,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, header: &TrajectoryHeader) -> Result<Self> {
        writeln!(out, "# seed={}", header.seed)?;
        writeln!(out, "# graph={}", header.graph)?;
        writeln!(out, "# beta={}", header.beta)?;
        writeln!(out, "# n={}", header.n)?;
        writeln!(out, "# lazy={}", header.lazy)?;
        writeln!(out, "# steps={}", header.steps)?;
        writeln!(out, "# stride={}", header.stride)?;
        if let Some(config) = &header.config {
            writeln!(out, "# config={config}")?;
        }
        let columns: Vec<String> = (0..header.k).map(|v| format!("x{v}")).collect();
        writeln!(out, "t,{}", columns.join(","))?;
        Ok(TrajectoryWriter { out, stride: header.stride.max(1) })
    }

    /// Writes the row if `t` falls on the stride.
    pub fn observe(&mut self, t: u64, x: &Configuration) -> Result<()> {
        if t.is_multiple_of(self.stride) {
            write!(self.out, "{t}")?;
            for c in x.occupancy() {
                write!(self.out, ",{c}")?;
            }
            writeln!(self.out)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
