//! Instance-class statistics: yield of unique ground states, benchmark-set
//! selection and the dependence of resilience on the first excited level.
//!
//! For field-free instances a ground state is unique when it is a single
//! configuration pair related by the global flip.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{normalize, sample_instance, Instance, InstanceClass};
use crate::model::hamming_distance;
use crate::seeds::derive_seed;
use crate::solver::{Engine, EngineKind, GroundStateReport};
use crate::stats;
use crate::topology::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub seed: u64,
    pub e0: f64,
    pub degeneracy: u64,
    pub unique: bool,
    /// Configurations at `e0 + gap`.
    pub n1: u64,
    /// Minimum and mean Hamming distance from the ground state to the first excited configurations.
    pub hamming: Option<(usize, f64)>,
    pub resilience: Option<f64>,
    pub agreement: bool,
    /// A census hit its storage cap, so degeneracy or `n1` are lower bounds.
    pub overflow: bool,
    pub engine: EngineKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub class: InstanceClass,
    pub n_spins: usize,
    pub n_total: u64,
    pub n_unique: u64,
    pub yield_: f64,
    /// Binomial standard error of the yield.
    pub yield_error: f64,
    pub instances: Vec<InstanceSummary>,
}

impl MiningReport {
    /// Aggregate summaries in seed order regardless of the order they arrive in.
    pub fn from_summaries(class: InstanceClass, n_spins: usize, mut instances: Vec<InstanceSummary>) -> Self {
        instances.sort_by_key(|s| s.seed);
        let n_total = instances.len() as u64;
        let n_unique = instances.iter().filter(|s| s.unique).count() as u64;
        Self {
            class,
            n_spins,
            n_total,
            n_unique,
            yield_: if n_total == 0 { 0.0 } else { n_unique as f64 / n_total as f64 },
            yield_error: stats::binomial_error(n_unique, n_total),
            instances,
        }
    }
}

/// Seed of the `index`-th instance of `class` under `master`.
pub fn instance_seed(master: u64, class: InstanceClass, index: u64) -> u64 {
    derive_seed(master, &[class as u64, index])
}

pub fn instance_seeds(master: u64, class: InstanceClass, n: u64) -> Vec<u64> {
    (0..n).map(|i| instance_seed(master, class, i)).collect()
}

/// Ground state unique, up to the global flip when the fields vanish.
pub fn is_unique(inst: &Instance, gs: &GroundStateReport) -> bool {
    gs.unique_config(inst.has_zero_fields()).is_some()
}

/// Solve one normalized instance and summarize it.
pub fn summarize_instance(inst: &Instance, engine: &Engine) -> Result<(InstanceSummary, GroundStateReport)> {
    let gs = engine.solve(inst)?;
    let summary = InstanceSummary {
        seed: inst.seed(),
        e0: gs.e0,
        degeneracy: gs.degeneracy_estimate,
        unique: is_unique(inst, &gs),
        n1: gs.n1,
        hamming: hamming_profile(inst, &gs)?,
        resilience: None,
        agreement: gs.agreement,
        overflow: gs.gs_overflow || gs.excited_overflow,
        engine: gs.engine,
    };
    Ok((summary, gs))
}

/// Generate, normalize and solve one instance per seed.
pub fn compute_yield(class: InstanceClass, g: Arc<Graph>, seeds: &[u64], engine: &Engine) -> Result<MiningReport> {
    let n = g.n_vertices();
    let summaries = seeds
        .iter()
        .map(|&seed| {
            let inst = normalize(&sample_instance(class, g.clone(), seed))?;
            Ok(summarize_instance(&inst, engine)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MiningReport::from_summaries(class, n, summaries))
}

/// Seeds of instances with a unique ground state (if required) and at most `max_n1`
/// first excited configurations (if given).
pub fn filter_benchmark_set(summaries: &[InstanceSummary], max_n1: Option<u64>, require_unique: bool) -> Vec<u64> {
    summaries
        .iter()
        .filter(|s| !require_unique || s.unique)
        .filter(|s| max_n1.is_none_or(|m| s.n1 <= m && !s.overflow))
        .map(|s| s.seed)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct N1Row {
    pub n1: u64,
    pub mean_r: f64,
    pub count: usize,
}

/// Mean resilience per number of first excited configurations.
pub fn n1_resilience_profile(summaries: &[InstanceSummary]) -> Result<Vec<N1Row>> {
    let mut groups: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for s in summaries {
        let r = s
            .resilience
            .ok_or_else(|| Error::Precondition(format!("instance {} has no resilience", s.seed)))?;
        let g = groups.entry(s.n1).or_default();
        g.0 += r;
        g.1 += 1;
    }
    Ok(groups.into_iter().map(|(n1, (sum, count))| N1Row { n1, mean_r: sum / count as f64, count }).collect())
}

/// Minimum and mean Hamming distance between the ground state and each stored
/// first excited configuration; `None` without excited configurations. With
/// zero fields each distance is the smaller one over the global flip.
pub fn hamming_profile(inst: &Instance, gs: &GroundStateReport) -> Result<Option<(usize, f64)>> {
    if gs.excited_configs.is_empty() || gs.gs_configs.is_empty() {
        return Ok(None);
    }
    let zero_fields = inst.has_zero_fields();
    let mut dists = Vec::with_capacity(gs.excited_configs.len());
    for e in &gs.excited_configs {
        let mut best = usize::MAX;
        for g in &gs.gs_configs {
            let d = hamming_distance(g, e)?;
            best = best.min(if zero_fields { d.min(e.len() - d) } else { d });
        }
        dists.push(best);
    }
    let min = *dists.iter().min().expect("non-empty");
    let mean = dists.iter().sum::<usize>() as f64 / dists.len() as f64;
    Ok(Some((min, mean)))
}
