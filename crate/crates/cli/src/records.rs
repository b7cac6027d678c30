use serde::{Deserialize, Serialize};
use spinbench::instances::InstanceClass;
use spinbench::mining::InstanceSummary;
use spinbench::resilience::ResilienceRecord;
use spinbench::solver::EngineKind;

use crate::args::Ladder;

/// One line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Record {
    Instance(InstanceEntry),
    Solve(SolveRecord),
    Resilience(ResilienceLine),
    Summary(SummaryLine),
    Yield(YieldLine),
    N1Profile(N1Line),
    Correlation(CorrelationLine),
    Skip(Notice),
    Error(Notice),
}

/// An instance file written by `generate` or exported by `mine`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub file: String,
    pub class: InstanceClass,
    pub index: u64,
    pub seed: u64,
    pub n_spins: usize,
    pub n_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub file: String,
    pub instance_seed: u64,
    pub class: Option<InstanceClass>,
    pub n_spins: usize,
    pub engine: EngineKind,
    pub e0: f64,
    pub degeneracy: u64,
    pub unique: bool,
    pub excited_energy: Option<f64>,
    pub n1: u64,
    pub agreement: bool,
    pub overflow: bool,
    pub sweeps: u64,
    pub thermalized: bool,
    /// Lowest ground state as a string of `+` and `-`.
    pub ground_state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relaxed {
    pub k: i64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(flatten)]
    pub record: ResilienceRecord,
    pub ladder: Ladder,
    pub relaxed: Vec<Relaxed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub class: InstanceClass,
    pub n_spins: usize,
    #[serde(flatten)]
    pub summary: InstanceSummary,
    /// Passed the benchmark filter (mine only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldLine {
    pub class: InstanceClass,
    pub n_spins: usize,
    pub n_total: u64,
    pub n_unique: u64,
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub yield_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N1Line {
    pub class: InstanceClass,
    pub n_spins: usize,
    pub n1: u64,
    pub mean_r: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationLine {
    pub class: InstanceClass,
    pub n_spins: usize,
    /// Quantity correlated against the resilience.
    pub x: String,
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// A skipped or failed instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Notice {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    pub message: String,
}
