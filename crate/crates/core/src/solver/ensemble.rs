//! Replicas, Metropolis sweeps, replica exchange and isoenergetic cluster moves.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::model::{Couplings, SpinConfig, Weight};
use crate::seeds::Rng;

/// One spin configuration with cached local fields and energy.
#[derive(Clone, Debug)]
pub struct Replica<W: Weight> {
    spins: Vec<i8>,
    /// The same spins bit-packed, a set bit being a down spin.
    words: Vec<u64>,
    fields: Vec<W>,
    energy: W,
    /// Changed since the solver last looked at it.
    pub(crate) dirty: bool,
}

impl<W: Weight> Replica<W> {
    pub fn from_config(k: &Couplings<W>, c: &SpinConfig) -> Self {
        let mut r = Self { spins: c.spins(), words: Vec::new(), fields: Vec::new(), energy: W::ZERO, dirty: true };
        r.recompute(k);
        r
    }

    pub fn random(k: &Couplings<W>, rng: &mut Rng) -> Self {
        let spins = (0..k.n()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let mut r = Self { spins, words: Vec::new(), fields: Vec::new(), energy: W::ZERO, dirty: true };
        r.recompute(k);
        r
    }

    /// Rebuild the caches from the spins.
    pub fn recompute(&mut self, k: &Couplings<W>) {
        self.fields = (0..k.n())
            .map(|v| {
                let (nbrs, ws) = k.neighbors(v);
                nbrs.iter().zip(ws).fold(k.field(v), |f, (&u, &w)| f + w.times_spin(self.spins[u as usize]))
            })
            .collect();
        let c = SpinConfig::from_spins(&self.spins).expect("spins are ±1");
        self.words = c.words().to_vec();
        self.energy = k.energy(&c);
    }

    #[inline]
    pub fn energy(&self) -> W {
        self.energy
    }

    #[inline]
    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    /// Bit-packed spins in [`SpinConfig`] layout.
    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig::from_words(self.spins.len(), self.words.clone())
    }

    /// Flip site `i`, updating the caches.
    #[inline]
    pub fn flip(&mut self, k: &Couplings<W>, i: usize) {
        let (offs, links) = k.links();
        let s = self.spins[i];
        self.energy += self.fields[i].times_spin(s).double();
        self.spins[i] = -s;
        self.words[i >> 6] ^= 1 << (i & 63);
        for &(u, w2) in &links[offs[i] as usize..offs[i + 1] as usize] {
            self.fields[u as usize] -= w2.times_spin(s);
        }
        self.dirty = true;
    }

    /// One sequential Metropolis sweep.
    #[inline]
    pub fn sweep(&mut self, k: &Couplings<W>, table: &W::AcceptTable, beta: f64, rng: &mut Rng) {
        let (offs, links) = k.links();
        let n = self.spins.len();
        let spins = &mut self.spins[..n];
        let words = &mut self.words[..];
        let fields = &mut self.fields[..n];
        let offs = &offs[..=n];
        let mut energy = self.energy;
        let mut changed = false;
        for i in 0..n {
            let s = spins[i];
            let delta = fields[i].times_spin(s).double();
            if delta <= W::ZERO || W::accept_uphill(table, beta, delta, rng) {
                spins[i] = -s;
                words[i >> 6] ^= 1 << (i & 63);
                energy += delta;
                changed = true;
                for &(u, w2) in &links[offs[i] as usize..offs[i + 1] as usize] {
                    fields[u as usize] -= w2.times_spin(s);
                }
            }
        }
        self.energy = energy;
        self.dirty |= changed;
    }
}

/// A cluster move applied to copies `a` and `b` at temperature index `temp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IcmMove {
    pub temp: usize,
    pub a: usize,
    pub b: usize,
    pub cluster_size: usize,
}

/// Independent copies of a parallel-tempering chain sharing one temperature ladder.
#[derive(Clone, Debug)]
pub struct Ensemble<'a, W: Weight> {
    k: &'a Couplings<W>,
    temps: Vec<f64>,
    /// Inverse temperatures in internal energy units.
    betas: Vec<f64>,
    tables: Vec<W::AcceptTable>,
    /// `copies[c][t]` is the replica of copy `c` at temperature index `t`.
    copies: Vec<Vec<Replica<W>>>,
    n_icm: usize,
    parity: usize,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
    mark: Vec<u32>,
    stamp: u32,
    stack: Vec<usize>,
    cluster: Vec<usize>,
    order: Vec<usize>,
}

impl<'a, W: Weight> Ensemble<'a, W> {
    /// `temps` ascending; cluster moves act on the `n_icm` lowest temperatures.
    pub fn new(k: &'a Couplings<W>, temps: &[f64], n_copies: usize, n_icm: usize, rng: &mut Rng) -> Self {
        let betas: Vec<f64> = temps.iter().map(|t| 1.0 / (t * k.scale())).collect();
        let max_delta = k.max_abs_field().double();
        let tables = betas.iter().map(|&b| W::accept_table(b, max_delta)).collect();
        let copies = (0..n_copies).map(|_| temps.iter().map(|_| Replica::random(k, rng)).collect()).collect();
        Self {
            k,
            temps: temps.to_vec(),
            betas,
            tables,
            copies,
            n_icm: n_icm.min(temps.len()),
            parity: 0,
            swap_attempts: vec![0; temps.len().saturating_sub(1)],
            swap_accepts: vec![0; temps.len().saturating_sub(1)],
            mark: vec![0; k.n()],
            stamp: 0,
            stack: Vec::new(),
            cluster: Vec::new(),
            order: (0..n_copies).collect(),
        }
    }

    pub fn couplings(&self) -> &Couplings<W> {
        self.k
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temps
    }

    pub fn n_copies(&self) -> usize {
        self.copies.len()
    }

    pub fn n_temps(&self) -> usize {
        self.temps.len()
    }

    pub fn replica(&self, copy: usize, temp: usize) -> &Replica<W> {
        &self.copies[copy][temp]
    }

    pub(crate) fn replica_mut(&mut self, copy: usize, temp: usize) -> &mut Replica<W> {
        &mut self.copies[copy][temp]
    }

    pub(crate) fn replicas_mut(&mut self) -> impl Iterator<Item = &mut Replica<W>> {
        self.copies.iter_mut().flatten()
    }

    pub fn replace(&mut self, copy: usize, temp: usize, r: Replica<W>) {
        self.copies[copy][temp] = r;
    }

    pub fn metropolis_sweep(&mut self, copy: usize, temp: usize, rng: &mut Rng) {
        let (k, table, beta) = (self.k, &self.tables[temp], self.betas[temp]);
        self.copies[copy][temp].sweep(k, table, beta, rng);
    }

    /// One Metropolis sweep of every replica.
    pub fn sweep_all(&mut self, rng: &mut Rng) {
        let k = self.k;
        for copy in &mut self.copies {
            for (t, r) in copy.iter_mut().enumerate() {
                r.sweep(k, &self.tables[t], self.betas[t], rng);
            }
        }
    }

    /// Replica exchange between neighbouring temperatures within each copy,
    /// alternating between even and odd pairs on successive calls.
    pub fn pt_exchange(&mut self, rng: &mut Rng) {
        let n_t = self.temps.len();
        for copy in &mut self.copies {
            let mut t = self.parity;
            while t + 1 < n_t {
                let x = (self.betas[t] - self.betas[t + 1]) * (copy[t].energy - copy[t + 1].energy).to_f64();
                self.swap_attempts[t] += 1;
                if x >= 0.0 || rng.random::<f64>() < x.exp() {
                    copy.swap(t, t + 1);
                    self.swap_accepts[t] += 1;
                }
                t += 2;
            }
        }
        self.parity ^= 1;
    }

    /// Acceptance ratio for each adjacent temperature pair.
    pub fn swap_acceptance(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    /// Isoenergetic cluster moves at the `n_icm` lowest temperatures.
    /// Returns the number of non-trivial moves.
    pub fn icm_move(&mut self, rng: &mut Rng) -> usize {
        self.icm_inner(rng, None)
    }

    /// As [`Self::icm_move`], appending every non-trivial move to `log`.
    pub fn icm_move_logged(&mut self, rng: &mut Rng, log: &mut Vec<IcmMove>) -> usize {
        self.icm_inner(rng, Some(log))
    }

    fn icm_inner(&mut self, rng: &mut Rng, mut log: Option<&mut Vec<IcmMove>>) -> usize {
        let mut moves = 0;
        for temp in 0..self.n_icm {
            self.order.shuffle(rng);
            for p in 0..self.order.len() / 2 {
                let (a, b) = (self.order[2 * p], self.order[2 * p + 1]);
                let size = self.cluster_move(temp, a, b, rng);
                if size > 0 {
                    moves += 1;
                    if let Some(log) = log.as_deref_mut() {
                        log.push(IcmMove { temp, a, b, cluster_size: size });
                    }
                }
            }
        }
        moves
    }

    fn cluster_move(&mut self, temp: usize, a: usize, b: usize, rng: &mut Rng) -> usize {
        let k = self.k;
        let wa = self.copies[a][temp].words();
        let wb = self.copies[b][temp].words();
        let differing: u32 = wa.iter().zip(wb).map(|(x, y)| (x ^ y).count_ones()).sum();
        if differing == 0 {
            return 0;
        }
        let mut pick = rng.random_range(0..differing);
        let mut seed = 0;
        for (w, (x, y)) in wa.iter().zip(wb).enumerate() {
            let mut d = x ^ y;
            let c = d.count_ones();
            if pick < c {
                for _ in 0..pick {
                    d &= d - 1;
                }
                seed = 64 * w + d.trailing_zeros() as usize;
                break;
            }
            pick -= c;
        }

        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.fill(0);
            self.stamp = 1;
        }
        let differs = |u: usize| ((wa[u >> 6] ^ wb[u >> 6]) >> (u & 63)) & 1 == 1;
        self.cluster.clear();
        self.stack.clear();
        self.stack.push(seed);
        self.mark[seed] = self.stamp;
        while let Some(v) = self.stack.pop() {
            self.cluster.push(v);
            for &u in k.neighbors(v).0 {
                let u = u as usize;
                if self.mark[u] != self.stamp && differs(u) {
                    self.mark[u] = self.stamp;
                    self.stack.push(u);
                }
            }
        }
        let (ra, rb) = pair_mut(&mut self.copies, a, b);
        if self.cluster.len() == differing as usize {
            // the cluster is every disagreeing site, so flipping it in both
            // replicas is the same as exchanging them
            std::mem::swap(&mut ra[temp], &mut rb[temp]);
            return self.cluster.len();
        }
        for &v in &self.cluster {
            ra[temp].flip(k, v);
            rb[temp].flip(k, v);
        }
        self.cluster.len()
    }

    /// Largest deviation between cached and recomputed energies, in internal units.
    pub fn max_cache_drift(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in self.copies.iter().flatten() {
            let fresh = self.k.energy(&r.config());
            worst = worst.max((fresh - r.energy).to_f64().abs());
        }
        worst
    }

    pub fn recompute_all(&mut self) {
        let k = self.k;
        for r in self.copies.iter_mut().flatten() {
            r.recompute(k);
        }
    }
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
