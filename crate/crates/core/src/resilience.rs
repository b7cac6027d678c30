//! Quenched noise and the resilience of ground states to it.
//!
//! A trial perturbs every coupler by Gaussian noise of width `delta_j` and
//! adds Gaussian fields of width `delta_h`, then solves the perturbed
//! instance. The trial succeeds when the perturbed ground state is the
//! original one. With bond noise alone the perturbed instance keeps the
//! global flip symmetry, so success is then judged up to a flip.
//!
//! The relaxed variant succeeds when the returned configuration, evaluated
//! with the original couplers, lies at or below the `k`-th level.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Instance, InstanceClass};
use crate::model::{energy, SpinConfig};
use crate::seeds::rng_from;
use crate::solver::{Engine, EngineKind, GroundStateReport};
use crate::stats;

const BOND_STREAM: u64 = 0xB0_4D;
const FIELD_STREAM: u64 = 0xF1_E1;
pub const DEFAULT_TRIALS: usize = 10;
/// Relaxed resilience is recorded for `k = 0..=DEFAULT_K_MAX`.
pub const DEFAULT_K_MAX: usize = 4;
const ENERGY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the coupler noise, in units of the largest normalized coupler.
    pub delta_j: f64,
    /// Standard deviation of the random fields, same units.
    pub delta_h: f64,
    pub n_trials: usize,
    pub trial_seed_base: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::new(0.0, 0.0)
    }
}

impl NoiseSpec {
    pub fn new(delta_j: f64, delta_h: f64) -> Self {
        Self { delta_j, delta_h, n_trials: DEFAULT_TRIALS, trial_seed_base: 0 }
    }

    pub fn bonds(delta_j: f64) -> Self {
        Self::new(delta_j, 0.0)
    }

    pub fn fields(delta_h: f64) -> Self {
        Self::new(0.0, delta_h)
    }

    /// Noise levels quoted for the 512-qubit D-Wave Two.
    pub fn dw2() -> Self {
        Self::new(0.035, 0.05)
    }

    /// Noise levels quoted for the D-Wave 2X.
    pub fn dw2x() -> Self {
        Self::new(0.025, 0.03)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dw2" => Ok(Self::dw2()),
            "dw2x" => Ok(Self::dw2x()),
            _ => Err(Error::InvalidParameter(format!("unknown noise preset '{name}'"))),
        }
    }

    pub fn with_trials(mut self, n: usize) -> Self {
        self.n_trials = n;
        self
    }

    pub fn with_seed_base(mut self, seed: u64) -> Self {
        self.trial_seed_base = seed;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.delta_j == 0.0 && self.delta_h == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_j >= 0.0 && self.delta_j.is_finite() && self.delta_h >= 0.0 && self.delta_h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise widths must be finite and non-negative, got {} and {}",
                self.delta_j, self.delta_h
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidParameter("n_trials must be positive".into()));
        }
        Ok(())
    }

    /// Same widths and trial count; seeds may differ.
    fn matches(&self, other: &Self) -> bool {
        self.delta_j == other.delta_j && self.delta_h == other.delta_h && self.n_trials == other.n_trials
    }
}

/// Quenched perturbation of a normalized, field-free instance for one trial.
/// Bond and field noise come from separate streams keyed by the seed base,
/// the instance seed and the trial, so either can be switched off without
/// changing the other.
pub fn perturb(inst: &Instance, spec: &NoiseSpec, trial: u64) -> Result<Instance> {
    spec.validate()?;
    if !inst.is_normalized() {
        return Err(Error::Precondition("noise is defined on normalized instances".into()));
    }
    if !inst.has_zero_fields() {
        return Err(Error::Precondition("noise is applied to instances without fields".into()));
    }
    let mut couplers = inst.couplers().to_vec();
    if spec.delta_j > 0.0 {
        let mut rng = rng_from(spec.trial_seed_base, &[inst.seed(), trial, BOND_STREAM]);
        let normal = Normal::new(0.0, spec.delta_j).expect("validated width");
        for j in &mut couplers {
            *j += normal.sample(&mut rng);
        }
    }
    let mut fields = inst.fields().to_vec();
    if spec.delta_h > 0.0 {
        let mut rng = rng_from(spec.trial_seed_base, &[inst.seed(), trial, FIELD_STREAM]);
        let normal = Normal::new(0.0, spec.delta_h).expect("validated width");
        for h in &mut fields {
            *h = normal.sample(&mut rng);
        }
    }
    inst.with_values(couplers, fields)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u64,
    /// The perturbed ground state is the original one.
    pub same: bool,
    /// Energy of the returned configuration under the original couplers.
    pub energy: f64,
    pub engine: EngineKind,
    /// The perturbed solve itself had a degenerate ground level.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceRecord {
    pub instance_seed: u64,
    pub class: Option<InstanceClass>,
    pub n_spins: usize,
    pub noise: NoiseSpec,
    pub e0: f64,
    /// Level spacing of the uniform ladder.
    pub gap: f64,
    pub trials: Vec<TrialOutcome>,
    pub r: f64,
    /// Relaxed resilience on the uniform ladder, indexed by `k`.
    pub r_k: Vec<f64>,
}

/// Energies that bound the success region of the relaxed resilience.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelLadder {
    /// `E_k = e0 + k * gap` for every candidate level.
    Uniform,
    /// The populated levels of the original spectrum, ascending from `e0`.
    Populated(Vec<f64>),
}

impl ResilienceRecord {
    pub fn n_same(&self) -> usize {
        self.trials.iter().filter(|t| t.same).count()
    }

    /// Energy bound of level `k` on `ladder`.
    pub fn level(&self, k: usize, ladder: &LevelLadder) -> Result<f64> {
        match ladder {
            LevelLadder::Uniform => Ok(self.e0 + k as f64 * self.gap),
            LevelLadder::Populated(levels) => levels.get(k).copied().ok_or_else(|| {
                Error::InvalidParameter(format!("level {k} requested but only {} levels are known", levels.len()))
            }),
        }
    }
}

/// Fraction of trials whose returned configuration has original energy at or
/// below level `k`.
pub fn relaxed_resilience(record: &ResilienceRecord, k: i64, ladder: &LevelLadder) -> Result<f64> {
    let k = usize::try_from(k).map_err(|_| Error::InvalidParameter(format!("level index must be non-negative, got {k}")))?;
    let bound = record.level(k, ladder)?;
    let tol = ENERGY_TOLERANCE * bound.abs().max(1.0);
    let hits = record.trials.iter().filter(|t| t.energy <= bound + tol).count();
    Ok(hits as f64 / record.trials.len() as f64)
}

/// The original ground state, unique up to a flip when fields vanish.
pub fn original_ground_state(inst: &Instance, gs: &GroundStateReport) -> Result<SpinConfig> {
    if !gs.agreement {
        return Err(Error::Precondition("ground state was not confirmed by all copies".into()));
    }
    gs.unique_config(inst.has_zero_fields())
        .cloned()
        .ok_or_else(|| Error::Precondition(format!("ground state is not unique (degeneracy {})", gs.degeneracy_estimate)))
}

/// One noise trial against the original ground state `original`.
pub fn resilience_trial(
    inst: &Instance,
    original: &SpinConfig,
    spec: &NoiseSpec,
    trial: u64,
    engine: &Engine,
) -> Result<TrialOutcome> {
    let modulo_flip = spec.delta_h == 0.0;
    let noisy = perturb(inst, spec, trial)?;
    let rep = engine.solve_ground(&noisy)?;
    let found = rep.unique_config(modulo_flip);
    let same = found.is_some_and(|c| c == original || (modulo_flip && *c == original.negated()));
    Ok(TrialOutcome {
        trial,
        same,
        energy: energy(inst, &rep.gs_configs[0])?,
        engine: rep.engine,
        degenerate: found.is_none(),
    })
}

/// Collect trial outcomes, in any order, into a record.
pub fn assemble_record(
    inst: &Instance,
    gs: &GroundStateReport,
    spec: &NoiseSpec,
    mut trials: Vec<TrialOutcome>,
) -> Result<ResilienceRecord> {
    let gap = inst
        .level_gap()
        .ok_or_else(|| Error::Precondition("instance has no class, so no level spacing".into()))?;
    trials.sort_by_key(|t| t.trial);
    if trials.len() != spec.n_trials || trials.iter().enumerate().any(|(i, t)| t.trial != i as u64) {
        return Err(Error::InvalidInput(format!("expected trials 0..{}", spec.n_trials)));
    }
    let mut record = ResilienceRecord {
        instance_seed: inst.seed(),
        class: inst.class(),
        n_spins: inst.n_spins(),
        noise: *spec,
        e0: gs.e0,
        gap,
        r: 0.0,
        r_k: Vec::new(),
        trials,
    };
    record.r = record.n_same() as f64 / spec.n_trials as f64;
    record.r_k = (0..=DEFAULT_K_MAX as i64)
        .map(|k| relaxed_resilience(&record, k, &LevelLadder::Uniform))
        .collect::<Result<_>>()?;
    Ok(record)
}

/// Resilience of `inst`, whose ground state `gs` must be unique, to `spec`.
pub fn instance_resilience(
    inst: &Instance,
    gs: &GroundStateReport,
    spec: &NoiseSpec,
    engine: &Engine,
) -> Result<ResilienceRecord> {
    spec.validate()?;
    let original = original_ground_state(inst, gs)?;
    let trials = (0..spec.n_trials as u64)
        .map(|t| resilience_trial(inst, &original, spec, t, engine))
        .collect::<Result<Vec<_>>>()?;
    assemble_record(inst, gs, spec, trials)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassResilience {
    pub mean: f64,
    /// Bootstrap standard error over instances.
    pub error: f64,
    pub n_instances: usize,
}

/// Disorder average of `r` with a bootstrap error over instances.
pub fn class_resilience(records: &[ResilienceRecord]) -> Result<ClassResilience> {
    class_resilience_with(records, stats::DEFAULT_RESAMPLES, 0)
}

pub fn class_resilience_with(records: &[ResilienceRecord], resamples: usize, seed: u64) -> Result<ClassResilience> {
    let Some(first) = records.first() else {
        return Err(Error::InvalidInput("no resilience records".into()));
    };
    if records.len() < 2 {
        return Err(Error::InvalidInput("a class average needs at least two records".into()));
    }
    if records.iter().any(|r| !r.noise.matches(&first.noise)) {
        return Err(Error::InvalidInput("records were taken at different noise settings".into()));
    }
    let rs: Vec<f64> = records.iter().map(|r| r.r).collect();
    Ok(ClassResilience {
        mean: stats::mean(&rs),
        error: stats::bootstrap_error(&rs, resamples, seed)?,
        n_instances: rs.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductRuleReport {
    pub predicted: f64,
    pub predicted_error: f64,
    pub observed: f64,
    pub observed_error: f64,
    /// `|predicted - observed|` within twice the combined error.
    pub agrees: bool,
}

/// Compare the combined-noise resilience with the product of the separate ones.
pub fn product_rule_check(bond: ClassResilience, field: ClassResilience, both: ClassResilience) -> ProductRuleReport {
    let predicted = bond.mean * field.mean;
    let predicted_error = ((field.mean * bond.error).powi(2) + (bond.mean * field.error).powi(2)).sqrt();
    let combined = (predicted_error.powi(2) + both.error.powi(2)).sqrt();
    ProductRuleReport {
        predicted,
        predicted_error,
        observed: both.mean,
        observed_error: both.error,
        agrees: (predicted - both.mean).abs() <= 2.0 * combined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{normalize, sample_instance};
    use crate::oracle::{exact_solve, OracleOptions};
    use crate::topology::{build_chimera, build_chimera_rect};
    use std::sync::Arc;

    fn unique_instance(class: InstanceClass, m: usize, from: u64) -> (Instance, GroundStateReport) {
        let g = Arc::new(if m == 1 { build_chimera(1).unwrap() } else { build_chimera_rect(1, m).unwrap() });
        (from..)
            .map(|seed| normalize(&sample_instance(class, g.clone(), seed)).unwrap())
            .find_map(|inst| {
                let gs = Engine::Oracle.solve(&inst).unwrap();
                gs.unique_config(true).is_some().then_some((inst, gs))
            })
            .unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let (inst, gs) = unique_instance(InstanceClass::U567, 1, 0);
        assert_eq!(perturb(&inst, &NoiseSpec::default(), 3).unwrap(), inst);
        let rec = instance_resilience(&inst, &gs, &NoiseSpec::default(), &Engine::Oracle).unwrap();
        assert_eq!(rec.r, 1.0);
        assert!(rec.r_k.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn perturbation_is_quenched_and_has_the_requested_width() {
        let g = Arc::new(build_chimera(8).unwrap());
        let inst = normalize(&sample_instance(InstanceClass::S28, g, 4)).unwrap();
        let spec = NoiseSpec::bonds(0.035);
        let a = perturb(&inst, &spec, 2).unwrap();
        assert_eq!(a, perturb(&inst, &spec, 2).unwrap());
        assert_ne!(a, perturb(&inst, &spec, 3).unwrap());
        assert!(a.has_zero_fields());
        let d: Vec<f64> = a.couplers().iter().zip(inst.couplers()).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        assert_eq!(n, 1472.0);
        let m = stats::mean(&d);
        let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        // the sample variance has relative standard deviation sqrt(2 / (n - 1))
        let rel = (var / (0.035 * 0.035) - 1.0).abs();
        assert!(rel < 3.0 * (2.0 / (n - 1.0)).sqrt(), "{rel}");
    }

    #[test]
    fn bond_and_field_streams_are_independent() {
        let g = Arc::new(build_chimera(2).unwrap());
        let inst = normalize(&sample_instance(InstanceClass::U4, g, 1)).unwrap();
        let both = perturb(&inst, &NoiseSpec::new(0.05, 0.05), 0).unwrap();
        let bonds = perturb(&inst, &NoiseSpec::bonds(0.05), 0).unwrap();
        let fields = perturb(&inst, &NoiseSpec::fields(0.05), 0).unwrap();
        assert_eq!(both.couplers(), bonds.couplers());
        assert_eq!(both.fields(), fields.fields());
        assert_eq!(fields.couplers(), inst.couplers());
    }

    #[test]
    fn preconditions() {
        let g = Arc::new(build_chimera(1).unwrap());
        let raw = sample_instance(InstanceClass::U1, g, 0);
        assert!(matches!(perturb(&raw, &NoiseSpec::bonds(0.1), 0), Err(Error::Precondition(_))));
        let inst = normalize(&raw).unwrap();
        let gs = Engine::Oracle.solve(&inst).unwrap();
        if gs.unique_config(true).is_none() {
            assert!(instance_resilience(&inst, &gs, &NoiseSpec::bonds(0.1), &Engine::Oracle).is_err());
        }
        assert!(NoiseSpec::new(-0.1, 0.0).validate().is_err());
        assert!(NoiseSpec::new(0.1, 0.0).with_trials(0).validate().is_err());
        let (inst, gs) = unique_instance(InstanceClass::U567, 1, 0);
        let rec = instance_resilience(&inst, &gs, &NoiseSpec::bonds(0.1), &Engine::Oracle).unwrap();
        assert!(relaxed_resilience(&rec, -1, &LevelLadder::Uniform).is_err());
        assert!(relaxed_resilience(&rec, 3, &LevelLadder::Populated(vec![rec.e0])).is_err());
    }

    #[test]
    fn overwhelming_noise_destroys_the_ground_state() {
        let mut same = 0;
        let mut total = 0;
        for from in [0, 100, 200, 300, 400] {
            let (inst, gs) = unique_instance(InstanceClass::S28, 1, from);
            let rec = instance_resilience(&inst, &gs, &NoiseSpec::bonds(10.0).with_trials(20), &Engine::Oracle).unwrap();
            same += rec.n_same();
            total += rec.trials.len();
        }
        // a random Gaussian instance picks one flip pair out of 128
        assert!((same as f64) < 0.1 * total as f64, "{same}/{total}");
    }

    /// Recount the relaxed resilience by re-enumerating each perturbed instance
    /// and reading the returned state's level off the original spectrum.
    #[test]
    fn relaxed_resilience_by_reenumeration() {
        let (inst, gs) = unique_instance(InstanceClass::U567, 2, 0);
        let spec = NoiseSpec::bonds(0.05).with_trials(20);
        let rec = instance_resilience(&inst, &gs, &spec, &Engine::Oracle).unwrap();
        let exact = exact_solve(&inst, &OracleOptions { level_window: Some(4.0 * rec.gap), ..OracleOptions::default() })
            .unwrap();
        let gap = rec.gap;
        for k in 0..=2usize {
            let hits = (0..spec.n_trials as u64)
                .filter(|&t| {
                    let noisy = perturb(&inst, &spec, t).unwrap();
                    let best = exact_solve(&noisy, &OracleOptions::ground_only()).unwrap();
                    let e = energy(&inst, &best.gs_configs[0]).unwrap();
                    // levels are multiples of the gap above e0
                    ((e - exact.e0) / gap).round() as usize <= k
                })
                .count();
            let r_k = relaxed_resilience(&rec, k as i64, &LevelLadder::Uniform).unwrap();
            assert_eq!(r_k, hits as f64 / spec.n_trials as f64, "k = {k}");
        }
        // R_0 counts exactly the trials that returned the original ground state
        assert_eq!(rec.r_k[0], rec.r);
        let populated = LevelLadder::Populated(exact.level_energies());
        for k in 1..exact.levels.len() {
            let pop = relaxed_resilience(&rec, k as i64, &populated).unwrap();
            let lo = relaxed_resilience(&rec, k as i64 - 1, &populated).unwrap();
            assert!(lo <= pop);
        }
    }

    #[test]
    fn relaxed_resilience_is_monotone() {
        let (inst, gs) = unique_instance(InstanceClass::S28, 2, 10);
        let rec =
            instance_resilience(&inst, &gs, &NoiseSpec::new(0.1, 0.1).with_trials(16), &Engine::Oracle).unwrap();
        assert!(rec.r_k.windows(2).all(|w| w[0] <= w[1]));
        assert!(rec.r <= rec.r_k[0]);
        let huge = relaxed_resilience(&rec, 1_000_000, &LevelLadder::Uniform).unwrap();
        assert_eq!(huge, 1.0);
    }

    #[test]
    fn class_average_and_errors() {
        let rec = |r: f64| ResilienceRecord {
            instance_seed: 0,
            class: None,
            n_spins: 8,
            noise: NoiseSpec::bonds(0.05),
            e0: -1.0,
            gap: 0.5,
            trials: Vec::new(),
            r,
            r_k: Vec::new(),
        };
        let c = class_resilience(&[rec(1.0), rec(1.0), rec(1.0)]).unwrap();
        assert_eq!((c.mean, c.error), (1.0, 0.0));
        assert_eq!(class_resilience(&[rec(1.0), rec(0.0)]).unwrap().mean, 0.5);
        assert!(class_resilience(&[]).is_err());
        assert!(class_resilience(&[rec(1.0)]).is_err());
        let mut other = rec(1.0);
        other.noise = NoiseSpec::bonds(0.1);
        assert!(class_resilience(&[rec(1.0), other]).is_err());
    }

    #[test]
    fn product_rule() {
        let cr = |mean, error| ClassResilience { mean, error, n_instances: 10 };
        let r = product_rule_check(cr(1.0, 0.0), cr(0.4, 0.05), cr(0.45, 0.05));
        assert_eq!(r.predicted, 0.4);
        assert!(r.agrees);
        let r = product_rule_check(cr(0.0, 0.0), cr(0.0, 0.0), cr(0.0, 0.0));
        assert_eq!(r.predicted, 0.0);
        assert!(r.agrees);
        assert!(!product_rule_check(cr(0.5, 0.01), cr(0.5, 0.01), cr(0.9, 0.01)).agrees);
    }

    #[test]
    fn presets() {
        assert_eq!(NoiseSpec::preset("dw2").unwrap(), NoiseSpec::new(0.035, 0.05));
        assert_eq!(NoiseSpec::preset("dw2x").unwrap(), NoiseSpec::new(0.025, 0.03));
        assert!(NoiseSpec::preset("dw3").is_err());
    }
}
