//! Parallel tempering with isoenergetic cluster moves.
//!
//! A solve runs `n_copies` independent tempering chains on a shared
//! temperature ladder. During the first eighth of the sweeps each copy tracks
//! its lowest energy at the lowest temperature; if all copies agree the ground
//! state has very likely been found. The remaining sweeps sample the distinct
//! configurations at the running ground energy `E0` and at `E0 + gap`.

mod ensemble;
mod lanes;
mod thermal;

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Instance, InstanceClass};
use crate::model::{compile, Compiled, Couplings, SpinConfig, Weight};
use crate::oracle::{exact_solve, ExactSpectrumReport, OracleOptions};
use crate::seeds::{rng_from, Rng};

pub use ensemble::{Ensemble, IcmMove, Replica};
pub use lanes::{lanes_supported, LaneEnsemble, LANES};
pub use thermal::{check_thermalization, LogBinner};

pub const DEFAULT_MAX_STORED: usize = 1 << 16;
const FLOAT_REFRESH_INTERVAL: u64 = 1024;
const SOLVER_STREAM: u64 = 0x50_1C;

/// What one unit of `n_sw` counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateUnit {
    /// One Metropolis sweep of every replica plus one exchange and one cluster step.
    LatticeSweep,
    /// One attempted single-spin update per replica; `n_sw / N` sweeps are run.
    SpinFlip,
}

impl FromStr for UpdateUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep" | "lattice-sweep" => Ok(Self::LatticeSweep),
            "spin-flip" | "flip" => Ok(Self::SpinFlip),
            _ => Err(Error::InvalidParameter(format!("unknown update unit '{s}'"))),
        }
    }
}

impl fmt::Display for UpdateUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LatticeSweep => "lattice-sweep",
            Self::SpinFlip => "spin-flip",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub n_copies: usize,
    pub n_t: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_icm: usize,
    pub n_sw: u64,
    pub seed: u64,
    pub update_unit: UpdateUnit,
    /// Census configurations from every temperature rather than only the lowest.
    pub census_all_temperatures: bool,
    /// Gap for the excited census; defaults to the instance's class gap.
    pub excited_gap: Option<f64>,
    pub max_stored: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            n_copies: 4,
            n_t: 30,
            t_min: 0.15,
            t_max: 3.0,
            n_icm: 14,
            n_sw: 1 << 19,
            seed: 0,
            update_unit: UpdateUnit::LatticeSweep,
            census_all_temperatures: true,
            excited_gap: None,
            max_stored: DEFAULT_MAX_STORED,
        }
    }
}

impl SolverParams {
    /// Simulation parameters used for `class` at every system size.
    pub fn table_one(class: InstanceClass) -> Self {
        match class {
            InstanceClass::U1 => Self { t_max: 3.05, n_icm: 13, ..Self::default() },
            _ => Self::default(),
        }
    }

    /// Total sweeps as `2^b`.
    pub fn with_log2_sweeps(mut self, b: u32) -> Self {
        self.n_sw = 1u64 << b;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return bad(format!("need 0 < t_min < t_max, got {} and {}", self.t_min, self.t_max));
        }
        if self.n_t < 2 {
            return bad(format!("n_t must be at least 2, got {}", self.n_t));
        }
        if self.n_icm < 1 || self.n_icm > self.n_t {
            return bad(format!("n_icm must lie in 1..={}, got {}", self.n_t, self.n_icm));
        }
        if self.n_sw < 8 || !self.n_sw.is_multiple_of(8) {
            return bad(format!("n_sw must be a positive multiple of 8, got {}", self.n_sw));
        }
        if self.n_copies < 2 {
            return bad(format!("n_copies must be at least 2, got {}", self.n_copies));
        }
        if self.max_stored == 0 {
            return bad("max_stored must be positive".into());
        }
        if let Some(g) = self.excited_gap {
            if g.is_nan() || g <= 0.0 {
                return bad(format!("excited gap must be positive, got {g}"));
            }
        }
        Ok(())
    }

    /// Lattice sweeps actually run on an `n`-spin instance (a multiple of 8).
    pub fn sweeps_for(&self, n: usize) -> u64 {
        match self.update_unit {
            UpdateUnit::LatticeSweep => self.n_sw,
            UpdateUnit::SpinFlip => self.n_sw.div_ceil(n.max(1) as u64).div_ceil(8).max(1) * 8,
        }
    }

    /// Set one parameter from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidParameter(format!("bad value '{v}' for {key}")))
        }
        match key {
            "n_copies" => self.n_copies = num(key, value)?,
            "n_t" => self.n_t = num(key, value)?,
            "t_min" => self.t_min = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "n_icm" => self.n_icm = num(key, value)?,
            "n_sw" => self.n_sw = num(key, value)?,
            "b" => {
                let b: u32 = num(key, value)?;
                if b > 62 {
                    return Err(Error::InvalidParameter(format!("b = {b} is too large")));
                }
                self.n_sw = 1 << b;
            }
            "seed" => self.seed = num(key, value)?,
            "update_unit" => self.update_unit = value.parse()?,
            "census_all_temperatures" => self.census_all_temperatures = num(key, value)?,
            "excited_gap" => self.excited_gap = Some(num(key, value)?),
            "max_stored" => self.max_stored = num(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown solver parameter '{key}'"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }
}

/// Geometric ladder from `t_min` to `t_max` with exact endpoints.
pub fn make_temperature_grid(params: &SolverParams) -> Result<Vec<f64>> {
    params.validate()?;
    let (n, lo, hi) = (params.n_t, params.t_min, params.t_max);
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    let mut temps: Vec<f64> = (0..n).map(|i| lo * ratio.powi(i as i32)).collect();
    temps[0] = lo;
    temps[n - 1] = hi;
    Ok(temps)
}

/// Which engine produced a ground-state report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    Oracle,
    PtIcm,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::PtIcm => "pt-icm",
        })
    }
}

impl FromStr for EngineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" | "exact" => Ok(Self::Oracle),
            "pt-icm" | "pt" | "heuristic" => Ok(Self::PtIcm),
            _ => Err(Error::InvalidParameter(format!("unknown engine '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStateReport {
    pub e0: f64,
    /// Distinct configurations seen at `e0`, sorted.
    pub gs_configs: Vec<SpinConfig>,
    pub degeneracy_estimate: u64,
    pub gs_overflow: bool,
    /// `e0 + gap`, when a gap is defined.
    pub excited_energy: Option<f64>,
    /// Distinct configurations seen at `excited_energy`.
    pub n1: u64,
    pub excited_configs: Vec<SpinConfig>,
    pub excited_overflow: bool,
    pub agreement: bool,
    /// Lowest energy of each copy during the first phase.
    pub copy_minima: Vec<f64>,
    pub sweeps_used: u64,
    pub thermalized: bool,
    pub swap_acceptance: Vec<f64>,
    pub engine: EngineKind,
    pub exact_arithmetic: bool,
}

impl GroundStateReport {
    /// Ground state when it is unique, up to a global flip if `modulo_flip`.
    pub fn unique_config(&self, modulo_flip: bool) -> Option<&SpinConfig> {
        match self.gs_configs.as_slice() {
            [c] if !self.gs_overflow => Some(c),
            [a, b] if modulo_flip && !self.gs_overflow && *b == a.negated() => Some(a),
            _ => None,
        }
    }

    /// Repackage an exact census. `n1` counts the configurations at `e0 + gap`.
    pub fn from_exact(rep: &ExactSpectrumReport) -> Self {
        Self {
            e0: rep.e0,
            gs_configs: rep.gs_configs.clone(),
            degeneracy_estimate: rep.degeneracy,
            gs_overflow: rep.gs_overflow,
            excited_energy: rep.excited_target,
            n1: rep.excited_count,
            excited_configs: rep.excited_configs.clone(),
            excited_overflow: rep.excited_overflow,
            agreement: true,
            copy_minima: Vec::new(),
            sweeps_used: 0,
            thermalized: true,
            swap_acceptance: Vec::new(),
            engine: EngineKind::Oracle,
            exact_arithmetic: rep.exact_arithmetic,
        }
    }
}

/// Largest instance [`Engine::Auto`] hands to the exact enumerator.
pub const AUTO_ORACLE_MAX_N: usize = 32;

/// How ground states are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Oracle,
    Heuristic(SolverParams),
    /// The oracle up to [`AUTO_ORACLE_MAX_N`] spins, the heuristic beyond.
    Auto(SolverParams),
}

impl Engine {
    pub fn kind_for(&self, n: usize) -> EngineKind {
        match self {
            Self::Oracle => EngineKind::Oracle,
            Self::Heuristic(_) => EngineKind::PtIcm,
            Self::Auto(_) if n <= AUTO_ORACLE_MAX_N => EngineKind::Oracle,
            Self::Auto(_) => EngineKind::PtIcm,
        }
    }

    /// Ground state and first-excited census of `inst`.
    pub fn solve(&self, inst: &Instance) -> Result<GroundStateReport> {
        self.solve_with(inst, true)
    }

    /// Ground state only where the engine can skip the excited census.
    pub fn solve_ground(&self, inst: &Instance) -> Result<GroundStateReport> {
        self.solve_with(inst, false)
    }

    fn solve_with(&self, inst: &Instance, census: bool) -> Result<GroundStateReport> {
        match (self, self.kind_for(inst.n_spins())) {
            (Self::Heuristic(p) | Self::Auto(p), EngineKind::PtIcm) => find_ground_state(inst, p),
            _ => {
                let opts = OracleOptions { census, ..OracleOptions::default() };
                Ok(GroundStateReport::from_exact(&exact_solve(inst, &opts)?))
            }
        }
    }
}

/// Run the heuristic on `inst`.
pub fn find_ground_state(inst: &Instance, params: &SolverParams) -> Result<GroundStateReport> {
    params.validate()?;
    if inst.n_spins() == 0 {
        return Err(Error::InvalidInput("instance has no spins".into()));
    }
    let gap = params.excited_gap.or_else(|| inst.level_gap());
    Ok(match compile(inst) {
        Compiled::Exact(k) if lanes_supported(&k) => run::<LaneEnsemble>(&k, params, gap),
        Compiled::Exact(k) => run::<Ensemble<i64>>(&k, params, gap),
        Compiled::Float(k) => run::<Ensemble<f64>>(&k, params, gap),
    })
}

/// A capped set of distinct configurations, keyed by packed words.
struct ConfigSet {
    n: usize,
    set: FxHashSet<Box<[u64]>>,
    cap: usize,
    overflow: bool,
    flipped: Vec<u64>,
}

impl ConfigSet {
    fn new(n: usize, cap: usize) -> Self {
        Self { n, set: FxHashSet::default(), cap, overflow: false, flipped: Vec::new() }
    }

    fn insert(&mut self, words: &[u64], with_flip: bool) {
        insert_capped(&mut self.set, self.cap, &mut self.overflow, words);
        if with_flip {
            self.flipped.clear();
            self.flipped.extend(words.iter().map(|w| !w));
            if !self.n.is_multiple_of(64) {
                *self.flipped.last_mut().unwrap() &= (1u64 << (self.n % 64)) - 1;
            }
            insert_capped(&mut self.set, self.cap, &mut self.overflow, &self.flipped);
        }
    }

    fn clear(&mut self) {
        self.set.clear();
        self.overflow = false;
    }

    fn sorted(self) -> Vec<SpinConfig> {
        let n = self.n;
        let mut v: Vec<SpinConfig> = self.set.into_iter().map(|w| SpinConfig::from_words(n, w.into_vec())).collect();
        v.sort_unstable();
        v
    }
}

fn insert_capped(set: &mut FxHashSet<Box<[u64]>>, cap: usize, overflow: &mut bool, words: &[u64]) {
    if set.contains(words) {
        return;
    }
    if set.len() >= cap {
        *overflow = true;
    } else {
        set.insert(words.into());
    }
}

/// What the solve loop needs from a replica ensemble.
trait Chains<'a>: Sized {
    type W: Weight;
    fn build(k: &'a Couplings<Self::W>, temps: &[f64], n_copies: usize, n_icm: usize, rng: &mut Rng) -> Self;
    /// One sweep, one exchange round and one round of cluster moves.
    fn step(&mut self, rng: &mut Rng, sweep: u64);
    fn energy(&self, copy: usize, temp: usize) -> Self::W;
    fn words_into(&self, copy: usize, temp: usize, out: &mut Vec<u64>);
    fn is_dirty(&self, copy: usize, temp: usize) -> bool;
    fn set_clean(&mut self, copy: usize, temp: usize);
    fn mark_all_dirty(&mut self);
    fn swap_acceptance(&self) -> Vec<f64>;
}

impl<'a, W: Weight> Chains<'a> for Ensemble<'a, W> {
    type W = W;
    fn build(k: &'a Couplings<W>, temps: &[f64], n_copies: usize, n_icm: usize, rng: &mut Rng) -> Self {
        Ensemble::new(k, temps, n_copies, n_icm, rng)
    }
    fn step(&mut self, rng: &mut Rng, sweep: u64) {
        self.sweep_all(rng);
        self.pt_exchange(rng);
        self.icm_move(rng);
        if !W::EXACT && sweep.is_multiple_of(FLOAT_REFRESH_INTERVAL) {
            self.recompute_all();
        }
    }
    fn energy(&self, copy: usize, temp: usize) -> W {
        self.replica(copy, temp).energy()
    }
    fn words_into(&self, copy: usize, temp: usize, out: &mut Vec<u64>) {
        out.clear();
        out.extend_from_slice(self.replica(copy, temp).words());
    }
    fn is_dirty(&self, copy: usize, temp: usize) -> bool {
        self.replica(copy, temp).dirty
    }
    fn set_clean(&mut self, copy: usize, temp: usize) {
        self.replica_mut(copy, temp).dirty = false;
    }
    fn mark_all_dirty(&mut self) {
        for r in self.replicas_mut() {
            r.dirty = true;
        }
    }
    fn swap_acceptance(&self) -> Vec<f64> {
        Ensemble::swap_acceptance(self)
    }
}

impl<'a> Chains<'a> for LaneEnsemble<'a> {
    type W = i64;
    fn build(k: &'a Couplings<i64>, temps: &[f64], n_copies: usize, n_icm: usize, rng: &mut Rng) -> Self {
        LaneEnsemble::new(k, temps, n_copies, n_icm, rng)
    }
    fn step(&mut self, rng: &mut Rng, _sweep: u64) {
        self.sweep_all();
        self.pt_exchange(rng);
        self.icm_move(rng);
    }
    fn energy(&self, copy: usize, temp: usize) -> i64 {
        LaneEnsemble::energy(self, copy, temp)
    }
    fn words_into(&self, copy: usize, temp: usize, out: &mut Vec<u64>) {
        LaneEnsemble::words_into(self, copy, temp, out)
    }
    fn is_dirty(&self, copy: usize, temp: usize) -> bool {
        LaneEnsemble::is_dirty(self, copy, temp)
    }
    fn set_clean(&mut self, copy: usize, temp: usize) {
        LaneEnsemble::set_clean(self, copy, temp)
    }
    fn mark_all_dirty(&mut self) {
        LaneEnsemble::mark_all_dirty(self)
    }
    fn swap_acceptance(&self) -> Vec<f64> {
        LaneEnsemble::swap_acceptance(self)
    }
}

fn run<'a, E: Chains<'a>>(k: &'a Couplings<E::W>, params: &SolverParams, gap: Option<f64>) -> GroundStateReport {
    let mut rng = rng_from(params.seed, &[SOLVER_STREAM]);
    let temps = make_temperature_grid(params).expect("validated");
    let mut ens = E::build(k, &temps, params.n_copies, params.n_icm, &mut rng);
    let total = params.sweeps_for(k.n());
    let phase1 = total / 8;
    let with_flip = k.zero_fields();
    let gap_units = gap.map(|g| k.from_real(g));
    let mut words = Vec::new();

    let mut binner = LogBinner::new();
    let mut minima: Vec<Option<(E::W, Vec<u64>)>> = vec![None; params.n_copies];
    for sweep in 1..=phase1 {
        ens.step(&mut rng, sweep);
        binner.push(ens.energy(0, 0).to_f64() / k.scale());
        for (c, best) in minima.iter_mut().enumerate() {
            let e = ens.energy(c, 0);
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                ens.words_into(c, 0, &mut words);
                *best = Some((e, words.clone()));
            }
        }
    }

    let mut e0 = minima.iter().flatten().map(|m| m.0).fold(None, |acc: Option<E::W>, e| match acc {
        Some(a) if a <= e => Some(a),
        _ => Some(e),
    });
    let mut agreement = match e0 {
        Some(e) => minima.iter().flatten().count() == params.n_copies && minima.iter().flatten().all(|m| m.0.same(e)),
        None => false,
    };
    let mut gs = ConfigSet::new(k.n(), params.max_stored);
    let mut excited = ConfigSet::new(k.n(), params.max_stored);
    if let Some(e) = e0 {
        for (me, w) in minima.iter().flatten() {
            if me.same(e) {
                gs.insert(w, with_flip);
            }
        }
    }
    ens.mark_all_dirty();

    let census_temps = if params.census_all_temperatures { params.n_t } else { 1 };
    for sweep in phase1 + 1..=total {
        ens.step(&mut rng, sweep);
        binner.push(ens.energy(0, 0).to_f64() / k.scale());
        for c in 0..params.n_copies {
            for t in 0..census_temps {
                if !ens.is_dirty(c, t) {
                    continue;
                }
                let e = ens.energy(c, t);
                match e0 {
                    Some(cur) if !e.below(cur) => {
                        if e.same(cur) {
                            ens.words_into(c, t, &mut words);
                            gs.insert(&words, with_flip);
                        } else if gap_units.is_some_and(|g| e.same(cur + g)) {
                            ens.words_into(c, t, &mut words);
                            excited.insert(&words, with_flip);
                        }
                    }
                    _ => {
                        // a new lowest energy: statistics restart at this level
                        e0 = Some(e);
                        agreement = false;
                        gs.clear();
                        excited.clear();
                        ens.words_into(c, t, &mut words);
                        gs.insert(&words, with_flip);
                        ens.mark_all_dirty();
                        continue;
                    }
                }
                ens.set_clean(c, t);
            }
        }
    }

    let e0 = e0.expect("at least one sweep ran");
    let gs_overflow = gs.overflow;
    let excited_overflow = excited.overflow;
    let gs_configs = gs.sorted();
    let excited_configs = excited.sorted();
    GroundStateReport {
        e0: k.to_real(e0),
        degeneracy_estimate: gs_configs.len() as u64,
        gs_configs,
        gs_overflow,
        excited_energy: gap_units.map(|g| k.to_real(e0 + g)),
        n1: excited_configs.len() as u64,
        excited_configs,
        excited_overflow,
        agreement,
        copy_minima: minima.iter().flatten().map(|m| k.to_real(m.0)).collect(),
        sweeps_used: total,
        thermalized: binner.thermalized(),
        swap_acceptance: ens.swap_acceptance(),
        engine: EngineKind::PtIcm,
        exact_arithmetic: <E::W as Weight>::EXACT,
    }
}
