//! Spin configurations, energies and local fields.
//!
//! Energies follow `H = -Σ_{<ij>} J_ij s_i s_j - Σ_i h_i s_i`. An instance
//! whose couplers and fields are integer multiples of a common unit is
//! evaluated in exact `i64` arithmetic and only converted to `f64` at the end;
//! everything else goes through `f64` with an absolute level tolerance of
//! [`FLOAT_TOLERANCE`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{as_integer, Instance};
use crate::seeds::Rng;

/// Two floating-point energies closer than this are the same level.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

/// An assignment of ±1 spins, bit-packed (a set bit is a down spin).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfig {
    len: usize,
    words: Vec<u64>,
}

impl SpinConfig {
    pub fn all_up(n: usize) -> Self {
        Self { len: n, words: vec![0; n.div_ceil(64)] }
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        let mut c = Self::all_up(spins.len());
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => {}
                -1 => c.flip(i),
                other => return Err(Error::InvalidInput(format!("spin {i} is {other}, expected ±1"))),
            }
        }
        Ok(c)
    }

    /// Config whose spin `i` is down iff bit `i` of `bits` is set (`n <= 64`).
    pub fn from_bits(n: usize, bits: u64) -> Self {
        assert!(n <= 64);
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut c = Self::all_up(n);
        if n > 0 {
            c.words[0] = bits & mask;
        }
        c
    }

    /// From packed words; bits beyond `n` must be clear.
    pub fn from_words(n: usize, words: Vec<u64>) -> Self {
        assert_eq!(words.len(), n.div_ceil(64));
        let c = Self { len: n, words };
        debug_assert_eq!(c.negated().negated(), c);
        c
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn is_down(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn spin(&self, i: usize) -> i8 {
        1 - 2 * (self.is_down(i) as i8)
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn set(&mut self, i: usize, s: i8) {
        if self.spin(i) != s {
            self.flip(i);
        }
    }

    /// Global spin flip.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// The representative of `{c, -c}` with spin 0 up.
    pub fn canonical_mod_flip(&self) -> Self {
        if self.len > 0 && self.is_down(0) {
            self.negated()
        } else {
            self.clone()
        }
    }

    pub fn spins(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.spin(i)).collect()
    }

    pub fn count_diff(&self, other: &Self) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    /// Hex encoding: 16 digits per 64-bit word, lowest word first.
    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(n: usize, hex: &str) -> Result<Self> {
        let n_words = n.div_ceil(64);
        if hex.len() != 16 * n_words || !hex.is_ascii() {
            return Err(Error::InvalidInput(format!("config hex of length {} does not encode {n} spins", hex.len())));
        }
        let words = (0..n_words)
            .map(|k| u64::from_str_radix(&hex[16 * k..16 * k + 16], 16))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad config hex: {e}")))?;
        let c = Self { len: n, words };
        let mut cleared = c.clone();
        cleared.clear_tail();
        if cleared != c {
            return Err(Error::InvalidInput("config hex sets bits beyond the spin count".into()));
        }
        Ok(c)
    }
}

fn check_len(a: &SpinConfig, n: usize) -> Result<()> {
    if a.len() != n {
        return Err(Error::InvalidInput(format!("config has {} spins, expected {n}", a.len())));
    }
    Ok(())
}

/// Number of sites where `a` and `b` differ.
pub fn hamming_distance(a: &SpinConfig, b: &SpinConfig) -> Result<usize> {
    check_len(b, a.len())?;
    Ok(a.count_diff(b))
}

/// `a == b`, or `a == -b` when `modulo_global_flip` is set.
pub fn configs_equal(a: &SpinConfig, b: &SpinConfig, modulo_global_flip: bool) -> Result<bool> {
    check_len(b, a.len())?;
    Ok(a == b || (modulo_global_flip && a.count_diff(b) == a.len()))
}

/// Energy arithmetic used by the enumerator and the Monte Carlo engine.
pub trait Weight:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const ZERO: Self;
    const EXACT: bool;
    type AcceptTable: Clone + Send + Sync;

    fn from_units(x: f64, scale: i64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn double(self) -> Self;
    fn times_spin(self, s: i8) -> Self;
    /// Same energy level.
    fn same(self, other: Self) -> bool;
    /// Strictly below `other` by more than the level tolerance.
    fn below(self, other: Self) -> bool;
    /// `self` when `on`, zero otherwise.
    fn select(self, on: bool) -> Self;
    fn accept_table(beta: f64, max_delta: Self) -> Self::AcceptTable;
    /// Metropolis acceptance draw for a move costing `delta`; always consumes randomness.
    fn accept_uphill(table: &Self::AcceptTable, beta: f64, delta: Self, rng: &mut Rng) -> bool;
}

impl Weight for i64 {
    const ZERO: Self = 0;
    const EXACT: bool = true;
    type AcceptTable = Vec<u64>;

    fn from_units(x: f64, scale: i64) -> Self {
        as_integer(x * scale as f64).expect("value is an integer multiple of the unit")
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        i64::abs(self)
    }
    #[inline]
    fn double(self) -> Self {
        2 * self
    }
    #[inline]
    fn times_spin(self, s: i8) -> Self {
        self * s as i64
    }
    #[inline]
    fn same(self, other: Self) -> bool {
        self == other
    }
    #[inline]
    fn below(self, other: Self) -> bool {
        self < other
    }
    #[inline]
    fn select(self, on: bool) -> Self {
        self & -(on as i64)
    }
    fn accept_table(beta: f64, max_delta: Self) -> Vec<u64> {
        (0..=max_delta.max(0))
            .map(|d| {
                let p = (-beta * d as f64).exp();
                if p >= 1.0 {
                    u64::MAX
                } else {
                    (p * 18_446_744_073_709_551_616.0) as u64
                }
            })
            .collect()
    }
    #[inline]
    fn accept_uphill(table: &Vec<u64>, _beta: f64, delta: Self, rng: &mut Rng) -> bool {
        // non-positive deltas land on the p = 1 entry
        let idx = (delta.max(0) as usize).min(table.len() - 1);
        rng.next_u64() < table[idx]
    }
}

impl Weight for f64 {
    const ZERO: Self = 0.0;
    const EXACT: bool = false;
    type AcceptTable = ();

    fn from_units(x: f64, _scale: i64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn double(self) -> Self {
        2.0 * self
    }
    #[inline]
    fn times_spin(self, s: i8) -> Self {
        self * s as f64
    }
    #[inline]
    fn same(self, other: Self) -> bool {
        (self - other).abs() <= FLOAT_TOLERANCE
    }
    #[inline]
    fn below(self, other: Self) -> bool {
        self < other - FLOAT_TOLERANCE
    }
    #[inline]
    fn select(self, on: bool) -> Self {
        self * (on as u8 as f64)
    }
    fn accept_table(_beta: f64, _max_delta: Self) {}
    #[inline]
    fn accept_uphill(_table: &(), beta: f64, delta: Self, rng: &mut Rng) -> bool {
        rng.random::<f64>() < (-beta * delta).exp()
    }
}

/// Instance couplers in CSR form with weights in internal units.
/// A real energy is `internal / scale`.
#[derive(Clone, Debug)]
pub struct Couplings<W: Weight> {
    n: usize,
    offsets: Vec<u32>,
    neighbors: Vec<u32>,
    weights: Vec<W>,
    /// `(neighbor, 2 J)` in CSR order, for incremental field updates.
    links: Vec<(u32, W)>,
    fields: Vec<W>,
    scale: f64,
    zero_fields: bool,
    max_abs_field: W,
}

impl<W: Weight> Couplings<W> {
    fn build(inst: &Instance, scale: i64) -> Self {
        let g = inst.graph();
        let n = g.n_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for v in 0..n {
            for nb in g.neighbors(v) {
                neighbors.push(nb.vertex);
                weights.push(W::from_units(inst.couplers()[nb.edge as usize], scale));
            }
            offsets.push(neighbors.len() as u32);
        }
        let fields: Vec<W> = inst.fields().iter().map(|&h| W::from_units(h, scale)).collect();
        let mut max_abs_field = W::ZERO;
        for v in 0..n {
            let mut total = fields[v].abs();
            for w in &weights[offsets[v] as usize..offsets[v + 1] as usize] {
                total += w.abs();
            }
            if total > max_abs_field {
                max_abs_field = total;
            }
        }
        let links = neighbors.iter().zip(&weights).map(|(&u, &w)| (u, w.double())).collect();
        Self {
            n,
            offsets,
            neighbors,
            weights,
            links,
            fields,
            scale: scale as f64,
            zero_fields: inst.has_zero_fields(),
            max_abs_field,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> (&[u32], &[W]) {
        let range = self.offsets[v] as usize..self.offsets[v + 1] as usize;
        (&self.neighbors[range.clone()], &self.weights[range])
    }

    /// CSR offsets and `(neighbor, 2 J)` links.
    #[inline]
    pub(crate) fn links(&self) -> (&[u32], &[(u32, W)]) {
        (&self.offsets, &self.links)
    }

    #[inline]
    pub fn field(&self, v: usize) -> W {
        self.fields[v]
    }

    pub fn zero_fields(&self) -> bool {
        self.zero_fields
    }

    /// Upper bound on `|F_i|` over all sites and configurations.
    pub fn max_abs_field(&self) -> W {
        self.max_abs_field
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn to_real(&self, w: W) -> f64 {
        w.to_f64() / self.scale
    }

    pub fn from_real(&self, x: f64) -> W {
        W::from_units(x, self.scale as i64)
    }

    /// `F_i = Σ_j J_ij s_j + h_i`.
    pub fn local_field(&self, c: &SpinConfig, v: usize) -> W {
        let (nbrs, ws) = self.neighbors(v);
        let mut f = self.fields[v];
        for (&u, &w) in nbrs.iter().zip(ws) {
            f += w.times_spin(c.spin(u as usize));
        }
        f
    }

    pub fn local_fields(&self, c: &SpinConfig) -> Vec<W> {
        (0..self.n).map(|v| self.local_field(c, v)).collect()
    }

    pub fn energy(&self, c: &SpinConfig) -> W {
        let mut e = W::ZERO;
        for v in 0..self.n {
            let s = c.spin(v);
            let (nbrs, ws) = self.neighbors(v);
            for (&u, &w) in nbrs.iter().zip(ws) {
                if (u as usize) > v {
                    e -= w.times_spin(s * c.spin(u as usize));
                }
            }
            e -= self.fields[v].times_spin(s);
        }
        e
    }
}

/// An instance lowered to exact or floating-point internal arithmetic.
#[derive(Clone, Debug)]
pub enum Compiled {
    Exact(Couplings<i64>),
    Float(Couplings<f64>),
}

pub fn compile(inst: &Instance) -> Compiled {
    match inst.exact_scale() {
        Some(scale) => Compiled::Exact(Couplings::build(inst, scale)),
        None => Compiled::Float(Couplings::build(inst, 1)),
    }
}

/// Energy of `c` on `inst`.
pub fn energy(inst: &Instance, c: &SpinConfig) -> Result<f64> {
    check_len(c, inst.n_spins())?;
    Ok(match compile(inst) {
        Compiled::Exact(k) => k.to_real(k.energy(c)),
        Compiled::Float(k) => k.to_real(k.energy(c)),
    })
}

/// Local field `F_i` at vertex `i`; flipping spin `i` changes the energy by `2 s_i F_i`.
pub fn local_field(inst: &Instance, c: &SpinConfig, i: usize) -> Result<f64> {
    check_len(c, inst.n_spins())?;
    if i >= inst.n_spins() {
        return Err(Error::InvalidInput(format!("vertex {i} out of range")));
    }
    Ok(match compile(inst) {
        Compiled::Exact(k) => k.to_real(k.local_field(c, i)),
        Compiled::Float(k) => k.to_real(k.local_field(c, i)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{normalize, sample_instance, InstanceClass};
    use crate::topology::{build_chimera, Graph};
    use crate::seeds::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn random_config(n: usize, seed: u64) -> SpinConfig {
        let mut rng = Rng::seed_from_u64(seed);
        let spins: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        SpinConfig::from_spins(&spins).unwrap()
    }

    /// Per-edge summation straight from the instance's edge list.
    fn edge_sum_energy(inst: &Instance, c: &SpinConfig) -> f64 {
        let mut e = 0.0;
        for (&(i, j), &jij) in inst.graph().edges().iter().zip(inst.couplers()) {
            e -= jij * (c.spin(i as usize) * c.spin(j as usize)) as f64;
        }
        for (i, &h) in inst.fields().iter().enumerate() {
            e -= h * c.spin(i) as f64;
        }
        e
    }

    #[test]
    fn config_basics() {
        let c = SpinConfig::from_spins(&[1, -1, -1, 1]).unwrap();
        assert_eq!(c.spins(), vec![1, -1, -1, 1]);
        assert_eq!(c.negated().spins(), vec![-1, 1, 1, -1]);
        assert_eq!(c.negated().negated(), c);
        assert!(SpinConfig::from_spins(&[1, 0]).is_err());
        let big = random_config(130, 5);
        assert_eq!(SpinConfig::from_hex(130, &big.to_hex()).unwrap(), big);
        assert_eq!(big.negated().words()[2] >> 2, 0);
        assert!(SpinConfig::from_hex(130, "zz").is_err());
        assert_eq!(SpinConfig::from_bits(3, 0b101).spins(), vec![-1, 1, -1]);
    }

    #[test]
    fn hamming_and_equality() {
        let c = random_config(70, 1);
        assert_eq!(hamming_distance(&c, &c).unwrap(), 0);
        assert_eq!(hamming_distance(&c, &c.negated()).unwrap(), 70);
        let mut one = c.clone();
        one.flip(69);
        assert_eq!(hamming_distance(&c, &one).unwrap(), 1);
        assert!(hamming_distance(&c, &SpinConfig::all_up(3)).is_err());

        assert!(configs_equal(&c, &c.negated(), true).unwrap());
        assert!(!configs_equal(&c, &c.negated(), false).unwrap());
        assert!(configs_equal(&c, &c, true).unwrap());
        assert!(configs_equal(&c, &c, false).unwrap());
        assert!(configs_equal(&c, &SpinConfig::all_up(2), true).is_err());
    }

    #[test]
    fn energy_examples() {
        let g = Arc::new(build_chimera(1).unwrap());
        let zero = Instance::custom(g.clone(), vec![0.0; 16], vec![0.0; 8]).unwrap();
        assert_eq!(energy(&zero, &random_config(8, 3)).unwrap(), 0.0);
        let ferro = Instance::custom(g.clone(), vec![1.0; 16], vec![0.0; 8]).unwrap();
        assert_eq!(energy(&ferro, &SpinConfig::all_up(8)).unwrap(), -16.0);
        assert!(energy(&ferro, &SpinConfig::all_up(7)).is_err());

        let g8 = Arc::new(build_chimera(8).unwrap());
        let inst = sample_instance(InstanceClass::U567, g8, 99);
        let c = random_config(512, 4);
        let e = energy(&inst, &c).unwrap();
        assert_eq!(e, edge_sum_energy(&inst, &c));
        assert_eq!(e.fract(), 0.0);
    }

    #[test]
    fn local_field_examples() {
        let path = Arc::new(Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
        let inst = Instance::custom(path.clone(), vec![5.0, -5.0], vec![0.0; 3]).unwrap();
        assert_eq!(local_field(&inst, &SpinConfig::all_up(3), 1).unwrap(), 0.0);
        let h = Instance::custom(path, vec![0.0, 0.0], vec![0.0, 0.3, 0.0]).unwrap();
        assert_eq!(local_field(&h, &SpinConfig::all_up(3), 1).unwrap(), 0.3);
        assert!(local_field(&h, &SpinConfig::all_up(3), 3).is_err());
    }

    #[test]
    fn normalized_energies_use_exact_units() {
        let g = Arc::new(build_chimera(2).unwrap());
        let raw = sample_instance(InstanceClass::U567, g, 17);
        let norm = normalize(&raw).unwrap();
        let c = random_config(32, 8);
        let e_raw = energy(&raw, &c).unwrap();
        assert_eq!(energy(&norm, &c).unwrap(), e_raw / 7.0);
    }

    #[test]
    fn accept_table_is_monotone() {
        let t = <i64 as Weight>::accept_table(1.0, 10);
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], u64::MAX);
        assert!(t.windows(2).all(|w| w[0] >= w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn single_flip_identity(seed in any::<u64>(), cfg_seed in any::<u64>(), noisy in any::<bool>()) {
            let g = Arc::new(build_chimera(2).unwrap());
            let mut inst = normalize(&sample_instance(InstanceClass::S28, g, seed)).unwrap();
            if noisy {
                let mut rng = Rng::seed_from_u64(seed ^ 1);
                let j = inst.couplers().iter().map(|j| j + 0.05 * (rng.random::<f64>() - 0.5)).collect();
                let h = (0..32).map(|_| 0.05 * (rng.random::<f64>() - 0.5)).collect();
                inst = inst.with_values(j, h).unwrap();
            }
            let c = random_config(32, cfg_seed);
            let e = energy(&inst, &c).unwrap();
            prop_assert!((e - edge_sum_energy(&inst, &c)).abs() <= 1e-12 * e.abs().max(1.0));
            for i in 0..32 {
                let mut f = c.clone();
                f.flip(i);
                let de = energy(&inst, &f).unwrap() - e;
                let predicted = 2.0 * c.spin(i) as f64 * local_field(&inst, &c, i).unwrap();
                if noisy {
                    prop_assert!((de - predicted).abs() <= 1e-12 * e.abs().max(1.0));
                } else {
                    // exact in units of 1/28
                    prop_assert_eq!((de * 28.0).round(), (predicted * 28.0).round());
                    prop_assert!((de - predicted).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn flip_symmetry_without_fields(seed in any::<u64>(), cfg_seed in any::<u64>()) {
            let g = Arc::new(build_chimera(2).unwrap());
            let inst = sample_instance(InstanceClass::U4, g, seed);
            let c = random_config(32, cfg_seed);
            prop_assert_eq!(energy(&inst, &c).unwrap(), energy(&inst, &c.negated()).unwrap());
        }
    }
}
