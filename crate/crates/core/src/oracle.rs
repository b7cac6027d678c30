//! Exact ground states and low-lying level censuses by exhaustive enumeration.
//!
//! Two enumerators are available. [`Strategy::FullGray`] walks all `2^N`
//! configurations in Gray-code order with O(degree) incremental updates.
//! [`Strategy::Bipartite`] applies to bipartite graphs (every Chimera graph):
//! it Gray-walks only one color class; the spins of the other class then
//! decouple, each contributing `-s_t F_t`, so the conditional spectrum is a
//! sum of independent two-level terms that can be minimized and censused in
//! closed form. Both visit every configuration exactly once, implicitly or
//! explicitly, and produce identical reports.
//!
//! Each solve runs two passes: the first finds the two lowest distinct
//! energies, the second counts every level up to a cutoff and stores the
//! configurations at the ground level and at `e0 + gap`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::model::{compile, Compiled, Couplings, SpinConfig, Weight};

pub const DEFAULT_MAX_N: usize = 32;
pub const DEFAULT_MAX_STORED: usize = 1 << 16;
const MAX_GRAY_BITS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Bipartite decomposition when the graph allows it, full walk otherwise.
    Auto,
    Bipartite,
    FullGray,
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub max_n: usize,
    /// Cap on stored configurations per level; counts stay exact beyond it.
    pub max_stored: usize,
    /// Store configurations at `e0 + gap`. Defaults to the instance's class gap.
    pub excited_gap: Option<f64>,
    /// Count every level up to `e0 + window`. The window is always widened to
    /// cover the first excited level and `e0 + gap`.
    pub level_window: Option<f64>,
    /// When false only the ground level is resolved (no `e1`, no excited census).
    pub census: bool,
    pub strategy: Strategy,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_n: DEFAULT_MAX_N,
            max_stored: DEFAULT_MAX_STORED,
            excited_gap: None,
            level_window: None,
            census: true,
            strategy: Strategy::Auto,
        }
    }
}

impl OracleOptions {
    /// Ground level only; used for perturbed trial instances.
    pub fn ground_only() -> Self {
        Self { census: false, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub energy: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSpectrumReport {
    pub e0: f64,
    /// Ground-state configurations in canonical order (capped).
    pub gs_configs: Vec<SpinConfig>,
    pub degeneracy: u64,
    pub gs_overflow: bool,
    /// Lowest energy strictly above `e0`, if any.
    pub e1: Option<f64>,
    /// Number of configurations at `e1`.
    pub n1: u64,
    /// Every distinct level up to the census cutoff, ascending.
    pub levels: Vec<Level>,
    /// `e0 + gap` when a gap was available.
    pub excited_target: Option<f64>,
    pub excited_configs: Vec<SpinConfig>,
    pub excited_count: u64,
    pub excited_overflow: bool,
    pub exact_arithmetic: bool,
}

impl ExactSpectrumReport {
    /// Number of configurations at `energy`, if it lies inside the censused window.
    pub fn count_at(&self, energy: f64) -> Option<u64> {
        let cutoff = self.levels.last()?.energy;
        if energy > cutoff + 1e-9 {
            return None;
        }
        Some(self.levels.iter().find(|l| (l.energy - energy).abs() <= 1e-9).map_or(0, |l| l.count))
    }

    /// Energies of the censused levels, ascending.
    pub fn level_energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }
}

/// Enumerate `inst` exhaustively.
pub fn exact_solve(inst: &Instance, opts: &OracleOptions) -> Result<ExactSpectrumReport> {
    let n = inst.n_spins();
    if n > opts.max_n {
        return Err(Error::TooLarge { n, max: opts.max_n });
    }
    if n == 0 {
        return Err(Error::InvalidInput("instance has no spins".into()));
    }
    let gap = opts.excited_gap.or_else(|| inst.level_gap());
    if let Some(g) = gap {
        if g.is_nan() || g <= 0.0 {
            return Err(Error::InvalidParameter(format!("excited gap must be positive, got {g}")));
        }
    }
    let plan = Plan::new(inst, opts.strategy)?;
    Ok(match compile(inst) {
        Compiled::Exact(k) => solve_generic(&k, &plan, gap, opts),
        Compiled::Float(k) => solve_generic(&k, &plan, gap, opts),
    })
}

enum Plan {
    Bipartite { outer: Vec<usize>, inner: Vec<usize> },
    FullGray,
}

impl Plan {
    fn new(inst: &Instance, strategy: Strategy) -> Result<Self> {
        let n = inst.n_spins();
        let bipartite = || {
            inst.graph().bipartition().map(|color| {
                let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&v| !color[v]);
                if a.len() <= b.len() {
                    Plan::Bipartite { outer: a, inner: b }
                } else {
                    Plan::Bipartite { outer: b, inner: a }
                }
            })
        };
        let plan = match strategy {
            Strategy::FullGray => Plan::FullGray,
            Strategy::Bipartite => {
                bipartite().ok_or_else(|| Error::InvalidParameter("graph is not bipartite".into()))?
            }
            Strategy::Auto => bipartite().unwrap_or(Plan::FullGray),
        };
        let walked = match &plan {
            Plan::Bipartite { outer, .. } => outer.len(),
            Plan::FullGray => n,
        };
        if walked > MAX_GRAY_BITS {
            return Err(Error::TooLarge { n: walked, max: MAX_GRAY_BITS });
        }
        Ok(plan)
    }
}

/// The two lowest distinct values seen so far.
struct LowestTwo<W> {
    vals: Vec<W>,
}

impl<W: Weight> LowestTwo<W> {
    fn new() -> Self {
        Self { vals: Vec::with_capacity(3) }
    }

    /// Whether `e` could still change the result.
    #[inline]
    fn relevant(&self, e: W) -> bool {
        self.vals.len() < 2 || e.below(self.vals[1]) || e.same(self.vals[1])
    }

    fn insert(&mut self, e: W) {
        if self.vals.iter().any(|&v| v.same(e)) {
            return;
        }
        let pos = self.vals.iter().position(|&v| e < v).unwrap_or(self.vals.len());
        self.vals.insert(pos, e);
        self.vals.truncate(2);
    }
}

struct Census<W> {
    e0: W,
    target: Option<W>,
    cutoff: W,
    levels: Vec<(W, u64)>,
    max_stored: usize,
    gs: Vec<SpinConfig>,
    gs_overflow: bool,
    excited: Vec<SpinConfig>,
    excited_count: u64,
    excited_overflow: bool,
}

impl<W: Weight> Census<W> {
    #[inline]
    fn within(&self, e: W) -> bool {
        !self.cutoff.below(e)
    }

    fn add_level(&mut self, e: W, count: u64) {
        match self.levels.iter_mut().find(|(v, _)| v.same(e)) {
            Some((_, c)) => *c += count,
            None => {
                let pos = self.levels.iter().position(|(v, _)| e < *v).unwrap_or(self.levels.len());
                self.levels.insert(pos, (e, count));
            }
        }
    }

    /// Record `count` configurations at energy `e`, produced on demand by `configs`.
    fn record(&mut self, e: W, count: u64, configs: impl FnOnce(&mut dyn FnMut(SpinConfig) -> bool)) {
        self.add_level(e, count);
        let is_gs = e.same(self.e0);
        let is_excited = self.target.is_some_and(|t| e.same(t));
        if is_excited {
            self.excited_count += count;
        }
        let max = self.max_stored;
        let (store, overflow) = if is_gs {
            (&mut self.gs, &mut self.gs_overflow)
        } else if is_excited {
            (&mut self.excited, &mut self.excited_overflow)
        } else {
            return;
        };
        configs(&mut |c| {
            if store.len() >= max {
                *overflow = true;
                false
            } else {
                store.push(c);
                true
            }
        });
    }
}

fn solve_generic<W: Weight>(k: &Couplings<W>, plan: &Plan, gap: Option<f64>, opts: &OracleOptions) -> ExactSpectrumReport {
    let lowest = match plan {
        Plan::Bipartite { outer, inner } => Bipartite::new(k, outer, inner).lowest_two(),
        Plan::FullGray => full_gray_lowest_two(k),
    };
    let e0 = lowest.vals[0];
    let e1 = lowest.vals.get(1).copied();
    let target = gap.and_then(|g| units(k, g, false)).map(|g| e0 + g);

    let mut cutoff = e0;
    if opts.census {
        for candidate in [e1, target, opts.level_window.and_then(|w| units(k, w, true)).map(|w| e0 + w)].into_iter().flatten() {
            if candidate > cutoff {
                cutoff = candidate;
            }
        }
    }
    let mut census = Census {
        e0,
        target: if opts.census { target } else { None },
        cutoff,
        levels: Vec::new(),
        max_stored: opts.max_stored,
        gs: Vec::new(),
        gs_overflow: false,
        excited: Vec::new(),
        excited_count: 0,
        excited_overflow: false,
    };
    match plan {
        Plan::Bipartite { outer, inner } => Bipartite::new(k, outer, inner).census(&mut census),
        Plan::FullGray => full_gray_census(k, &mut census),
    }

    census.gs.sort_unstable();
    census.excited.sort_unstable();
    let degeneracy = census.levels.iter().find(|(e, _)| e.same(e0)).map_or(0, |l| l.1);
    let (e1_real, n1) = match (opts.census, e1) {
        (true, Some(e)) => (Some(k.to_real(e)), census.levels.iter().find(|(v, _)| v.same(e)).map_or(0, |l| l.1)),
        _ => (None, 0),
    };
    ExactSpectrumReport {
        e0: k.to_real(e0),
        gs_configs: census.gs,
        degeneracy,
        gs_overflow: census.gs_overflow,
        e1: e1_real,
        n1,
        levels: census.levels.iter().map(|&(e, count)| Level { energy: k.to_real(e), count }).collect(),
        excited_target: census.target.map(|t| k.to_real(t)),
        excited_configs: census.excited,
        excited_count: census.excited_count,
        excited_overflow: census.excited_overflow,
        exact_arithmetic: W::EXACT,
    }
}

/// `x` in internal units. On the integer path a value off the unit grid has no
/// exact counterpart: it is rounded down when `floor` is set and dropped otherwise.
fn units<W: Weight>(k: &Couplings<W>, x: f64, floor: bool) -> Option<W> {
    if !W::EXACT {
        return Some(k.from_real(x));
    }
    let u = x * k.scale();
    let r = u.round();
    if (u - r).abs() <= 1e-9 * r.abs().max(1.0) {
        Some(W::from_units(r, 1))
    } else if floor {
        Some(W::from_units(u.floor(), 1))
    } else {
        None
    }
}

/// Conditional enumeration over one color class of a bipartite graph.
struct Bipartite<'a, W: Weight> {
    k: &'a Couplings<W>,
    outer: &'a [usize],
    inner: &'a [usize],
    /// For each outer vertex: (inner position, coupler).
    links: Vec<Vec<(usize, W)>>,
}

/// Walk state: outer spins as a bit mask over `outer`, fields on inner sites.
struct WalkState<W> {
    bits: u64,
    outer_energy: W,
    inner_fields: Vec<W>,
    abs_sum: W,
}

impl<'a, W: Weight> Bipartite<'a, W> {
    fn new(k: &'a Couplings<W>, outer: &'a [usize], inner: &'a [usize]) -> Self {
        let mut pos = vec![usize::MAX; k.n()];
        for (p, &v) in inner.iter().enumerate() {
            pos[v] = p;
        }
        let links = outer
            .iter()
            .map(|&v| {
                let (nbrs, ws) = k.neighbors(v);
                nbrs.iter().zip(ws).map(|(&u, &w)| (pos[u as usize], w)).collect()
            })
            .collect();
        Self { k, outer, inner, links }
    }

    /// State for the outer assignment `bits`, computed from scratch.
    fn fresh_state(&self, bits: u64) -> WalkState<W> {
        let spin = |b: usize| if (bits >> b) & 1 == 1 { -1i8 } else { 1 };
        let mut outer_energy = W::ZERO;
        let mut inner_fields: Vec<W> = self.inner.iter().map(|&v| self.k.field(v)).collect();
        for (b, &v) in self.outer.iter().enumerate() {
            let s = spin(b);
            outer_energy -= self.k.field(v).times_spin(s);
            for &(p, w) in &self.links[b] {
                inner_fields[p] += w.times_spin(s);
            }
        }
        let abs_sum = inner_fields.iter().fold(W::ZERO, |acc, f| acc + f.abs());
        WalkState { bits, outer_energy, inner_fields, abs_sum }
    }

    /// Visit every outer assignment in Gray-code order.
    fn walk(&self, mut visit: impl FnMut(&WalkState<W>)) {
        let mut st = self.fresh_state(0);
        visit(&st);
        let total = 1u64 << self.outer.len();
        for g in 1..total {
            let b = g.trailing_zeros() as usize;
            let s_old: i8 = if (st.bits >> b) & 1 == 1 { -1 } else { 1 };
            st.bits ^= 1 << b;
            st.outer_energy += self.k.field(self.outer[b]).times_spin(s_old).double();
            for &(p, w) in &self.links[b] {
                let f = &mut st.inner_fields[p];
                st.abs_sum -= f.abs();
                *f -= w.times_spin(s_old).double();
                st.abs_sum += f.abs();
            }
            visit(&st);
        }
    }

    fn lowest_two(&self) -> LowestTwo<W> {
        let mut best = LowestTwo::new();
        self.walk(|st| {
            if !best.relevant(st.outer_energy - st.abs_sum - float_slack::<W>()) {
                return;
            }
            let fresh = if W::EXACT { None } else { Some(self.fresh_state(st.bits)) };
            let st = fresh.as_ref().unwrap_or(st);
            let base = st.outer_energy - st.abs_sum;
            best.insert(base);
            let min_excess = st
                .inner_fields
                .iter()
                .filter(|f| !is_free(**f))
                .map(|f| f.abs().double())
                .fold(None, |m: Option<W>, x| Some(match m {
                    Some(m) if m < x => m,
                    _ => x,
                }));
            if let Some(x) = min_excess {
                best.insert(base + x);
            }
        });
        best
    }

    fn census(&self, census: &mut Census<W>) {
        self.walk(|st| {
            if !census.within(st.outer_energy - st.abs_sum) && W::EXACT {
                return;
            }
            let fresh;
            let st = if W::EXACT {
                st
            } else {
                // incremental float sums may drift; re-derive near the cutoff
                if census.cutoff.below(st.outer_energy - st.abs_sum - float_slack::<W>()) {
                    return;
                }
                fresh = self.fresh_state(st.bits);
                &fresh
            };
            let base = st.outer_energy - st.abs_sum;
            if !census.within(base) {
                return;
            }
            let mut free = Vec::new();
            let mut excess: Vec<(W, usize)> = Vec::new();
            for (p, &f) in st.inner_fields.iter().enumerate() {
                if is_free(f) {
                    free.push(p);
                } else {
                    excess.push((f.abs().double(), p));
                }
            }
            excess.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let multiplicity = 1u64 << free.len();
            let mut flipped = Vec::new();
            self.combos(st, census, &excess, 0, base, &mut flipped, &free, multiplicity);
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn combos(
        &self,
        st: &WalkState<W>,
        census: &mut Census<W>,
        excess: &[(W, usize)],
        from: usize,
        energy: W,
        flipped: &mut Vec<usize>,
        free: &[usize],
        multiplicity: u64,
    ) {
        census.record(energy, multiplicity, |sink| {
            let mut base = SpinConfig::all_up(self.k.n());
            for (b, &v) in self.outer.iter().enumerate() {
                if (st.bits >> b) & 1 == 1 {
                    base.flip(v);
                }
            }
            for (p, &v) in self.inner.iter().enumerate() {
                if st.inner_fields[p] < W::ZERO {
                    base.flip(v);
                }
            }
            for &p in flipped.iter() {
                base.flip(self.inner[p]);
            }
            for mask in 0..multiplicity {
                let mut c = base.clone();
                for (bit, &p) in free.iter().enumerate() {
                    if (mask >> bit) & 1 == 1 {
                        c.flip(self.inner[p]);
                    }
                }
                if !sink(c) {
                    break;
                }
            }
        });
        for idx in from..excess.len() {
            let e = energy + excess[idx].0;
            if !census.within(e) {
                break;
            }
            flipped.push(excess[idx].1);
            self.combos(st, census, excess, idx + 1, e, flipped, free, multiplicity);
            flipped.pop();
        }
    }
}

/// A site whose flip leaves the energy on the same level.
#[inline]
fn is_free<W: Weight>(f: W) -> bool {
    f.double().same(W::ZERO)
}

/// Full Gray-code walk over all spins, calling `visit(bits, energy)`.
fn full_gray_walk<W: Weight>(k: &Couplings<W>, mut visit: impl FnMut(u64, W)) {
    let n = k.n();
    let start = SpinConfig::all_up(n);
    let mut fields = k.local_fields(&start);
    let mut energy = k.energy(&start);
    let mut bits = 0u64;
    visit(bits, energy);
    for g in 1..(1u64 << n) {
        let v = g.trailing_zeros() as usize;
        flip_site(k, &mut bits, &mut fields, &mut energy, v);
        visit(bits, energy);
    }
}

#[inline]
fn flip_site<W: Weight>(k: &Couplings<W>, bits: &mut u64, fields: &mut [W], energy: &mut W, v: usize) {
    let s_old: i8 = if (*bits >> v) & 1 == 1 { -1 } else { 1 };
    *energy += fields[v].times_spin(s_old).double();
    *bits ^= 1 << v;
    let (nbrs, ws) = k.neighbors(v);
    for (&u, &w) in nbrs.iter().zip(ws) {
        fields[u as usize] -= w.times_spin(s_old).double();
    }
}

/// Margin for incrementally accumulated float energies.
fn float_slack<W: Weight>() -> W {
    if W::EXACT {
        W::ZERO
    } else {
        W::from_units(1e-6, 1)
    }
}

fn exact_energy<W: Weight>(k: &Couplings<W>, bits: u64) -> W {
    k.energy(&SpinConfig::from_bits(k.n(), bits))
}

fn full_gray_lowest_two<W: Weight>(k: &Couplings<W>) -> LowestTwo<W> {
    let mut best = LowestTwo::new();
    let slack = float_slack::<W>();
    full_gray_walk(k, |bits, e| {
        if W::EXACT {
            if best.relevant(e) {
                best.insert(e);
            }
        } else if best.relevant(e - slack) {
            best.insert(exact_energy(k, bits));
        }
    });
    best
}

fn full_gray_census<W: Weight>(k: &Couplings<W>, census: &mut Census<W>) {
    let slack = float_slack::<W>();
    full_gray_walk(k, |bits, e| {
        let e = if W::EXACT {
            e
        } else if census.within(e - slack) {
            exact_energy(k, bits)
        } else {
            return;
        };
        if census.within(e) {
            census.record(e, 1, |sink| {
                sink(SpinConfig::from_bits(k.n(), bits));
            });
        }
    });
}
