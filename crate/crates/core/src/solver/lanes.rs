//! Lane-parallel replica ensemble for integer instances.
//!
//! Replicas are laid out side by side in groups of [`LANES`]: for each group,
//! site `i` of all its replicas occupies one contiguous row. A Metropolis sweep
//! then visits sites in order and updates a whole row at once without
//! data-dependent branches, which the compiler turns into vector code. Each
//! lane draws from its own xoshiro128++ stream, so results do not depend on
//! how the rows are scheduled.
//!
//! Replica exchange relabels replicas instead of moving their data; cluster
//! moves operate on single lanes.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};

use super::ensemble::IcmMove;
use crate::model::{Couplings, SpinConfig};
use crate::seeds::Rng;

pub const LANES: usize = 8;
/// Largest `|E|` bound the lane engine accepts (it works in `i32`).
const ENERGY_LIMIT: i64 = 1 << 30;

#[derive(Clone, Copy, Debug, Default)]
struct LaneState {
    energy: [i32; LANES],
    /// All ones once the replica changed since it was last marked clean.
    dirty: [i32; LANES],
    /// Offset of the lane's temperature in the threshold table.
    offset: [i32; LANES],
    rng: [[u32; LANES]; 4],
}

#[derive(Clone, Debug)]
pub struct LaneEnsemble<'a> {
    k: &'a Couplings<i64>,
    n: usize,
    words: usize,
    n_copies: usize,
    temps: Vec<f64>,
    betas: Vec<f64>,
    n_icm: usize,
    offs: Vec<u32>,
    links: Vec<(u32, i32)>,
    /// Acceptance thresholds `floor(p * 2^32)` per temperature and cost.
    thresholds: Vec<u32>,
    max_delta: i32,
    spins: Vec<i32>,
    fields: Vec<i32>,
    bits: Vec<u64>,
    lanes: Vec<LaneState>,
    /// Replica at `copy * n_t + temp`.
    at: Vec<usize>,
    temp_of: Vec<usize>,
    parity: usize,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
    /// Neighbourhood of each site as a bitset of `words` words.
    nbr_masks: Vec<u64>,
    diff: Vec<u64>,
    grown: Vec<u64>,
    stack: Vec<usize>,
    order: Vec<usize>,
}

/// Whether `k` fits the lane engine's `i32` arithmetic.
pub fn lanes_supported(k: &Couplings<i64>) -> bool {
    let mut bound = 0i64;
    for v in 0..k.n() {
        let (_, ws) = k.neighbors(v);
        bound += k.field(v).abs() + ws.iter().map(|w| w.abs()).sum::<i64>();
    }
    bound < ENERGY_LIMIT && k.max_abs_field() < ENERGY_LIMIT / 4
}

impl<'a> LaneEnsemble<'a> {
    /// `temps` ascending; cluster moves act on the `n_icm` lowest temperatures.
    /// Panics when [`lanes_supported`] is false.
    pub fn new(k: &'a Couplings<i64>, temps: &[f64], n_copies: usize, n_icm: usize, rng: &mut Rng) -> Self {
        assert!(lanes_supported(k), "instance exceeds the lane engine's range");
        let n = k.n();
        let words = n.div_ceil(64);
        let n_t = temps.len();
        let replicas = n_copies * n_t;
        let groups = replicas.div_ceil(LANES).max(1);
        let (offs, links64) = k.links();
        let links = links64.iter().map(|&(u, w)| (u, w as i32)).collect();
        let max_delta = (2 * k.max_abs_field()) as i32;
        let stride = max_delta as usize + 1;
        let betas: Vec<f64> = temps.iter().map(|t| 1.0 / (t * k.scale())).collect();
        let mut thresholds = Vec::with_capacity(n_t * stride);
        for &b in &betas {
            thresholds.extend((0..stride).map(|d| {
                let p = (-b * d as f64).exp();
                if p >= 1.0 {
                    u32::MAX
                } else {
                    (p * 4_294_967_296.0) as u32
                }
            }));
        }

        let mut ens = Self {
            k,
            n,
            words,
            n_copies,
            temps: temps.to_vec(),
            betas,
            n_icm: n_icm.min(n_t),
            offs: offs.to_vec(),
            links,
            thresholds,
            max_delta,
            spins: vec![1; groups * n * LANES],
            fields: vec![0; groups * n * LANES],
            bits: vec![0; groups * words * LANES],
            lanes: vec![LaneState::default(); groups],
            at: (0..replicas).collect(),
            temp_of: (0..groups * LANES).map(|r| if r < replicas { r % n_t } else { 0 }).collect(),
            parity: 0,
            swap_attempts: vec![0; n_t.saturating_sub(1)],
            swap_accepts: vec![0; n_t.saturating_sub(1)],
            nbr_masks: {
                let mut m = vec![0u64; n * words];
                for v in 0..n {
                    for &u in k.neighbors(v).0 {
                        let u = u as usize;
                        m[v * words + u / 64] |= 1 << (u % 64);
                    }
                }
                m
            },
            diff: vec![0; words],
            grown: vec![0; words],
            stack: Vec::new(),
            order: (0..n_copies).collect(),
        };
        for r in 0..groups * LANES {
            let lane = &mut ens.lanes[r / LANES];
            for s in 0..4 {
                // xoshiro128++ must not start from the all-zero state
                lane.rng[s][r % LANES] = rng.next_u32() | (s == 0) as u32;
            }
            let spins: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            ens.load(r, &SpinConfig::from_spins(&spins).expect("spins are ±1"));
        }
        ens.refresh_offsets();
        ens
    }

    #[inline]
    fn site(&self, r: usize, i: usize) -> usize {
        ((r / LANES) * self.n + i) * LANES + r % LANES
    }

    #[inline]
    fn word(&self, r: usize, w: usize) -> usize {
        ((r / LANES) * self.words + w) * LANES + r % LANES
    }

    fn refresh_offsets(&mut self) {
        let stride = self.max_delta + 1;
        for r in 0..self.temp_of.len() {
            self.lanes[r / LANES].offset[r % LANES] = self.temp_of[r] as i32 * stride;
        }
    }

    /// Overwrite replica `r` with `c` and rebuild its caches.
    fn load(&mut self, r: usize, c: &SpinConfig) {
        for i in 0..self.n {
            let idx = self.site(r, i);
            self.spins[idx] = c.spin(i) as i32;
        }
        for (w, &word) in c.words().iter().enumerate() {
            let idx = self.word(r, w);
            self.bits[idx] = word;
        }
        self.rebuild(r);
    }

    fn rebuild(&mut self, r: usize) {
        let mut e = 0i64;
        for i in 0..self.n {
            let s = self.spins[self.site(r, i)];
            let mut f = self.k.field(i) as i32;
            for &(u, j2) in &self.links[self.offs[i] as usize..self.offs[i + 1] as usize] {
                f += (j2 / 2) * self.spins[self.site(r, u as usize)];
            }
            let idx = self.site(r, i);
            self.fields[idx] = f;
            // bonds are seen from both ends
            e -= (s * (f + self.k.field(i) as i32)) as i64;
        }
        let lane = &mut self.lanes[r / LANES];
        lane.energy[r % LANES] = (e / 2) as i32;
        lane.dirty[r % LANES] = -1;
    }

    #[inline]
    fn replica_id(&self, copy: usize, temp: usize) -> usize {
        self.at[copy * self.temps.len() + temp]
    }

    pub fn couplings(&self) -> &Couplings<i64> {
        self.k
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temps
    }

    pub fn n_copies(&self) -> usize {
        self.n_copies
    }

    pub fn n_temps(&self) -> usize {
        self.temps.len()
    }

    /// Cached energy of copy `copy` at temperature index `temp`, in internal units.
    #[inline]
    pub fn energy(&self, copy: usize, temp: usize) -> i64 {
        let r = self.replica_id(copy, temp);
        self.lanes[r / LANES].energy[r % LANES] as i64
    }

    /// Packed spins of copy `copy` at temperature index `temp`.
    pub fn words_into(&self, copy: usize, temp: usize, out: &mut Vec<u64>) {
        let r = self.replica_id(copy, temp);
        out.clear();
        out.extend((0..self.words).map(|w| self.bits[self.word(r, w)]));
    }

    pub fn config(&self, copy: usize, temp: usize) -> SpinConfig {
        let mut w = Vec::new();
        self.words_into(copy, temp, &mut w);
        SpinConfig::from_words(self.n, w)
    }

    pub fn replace(&mut self, copy: usize, temp: usize, c: &SpinConfig) {
        let r = self.replica_id(copy, temp);
        self.load(r, c);
    }

    pub(crate) fn is_dirty(&self, copy: usize, temp: usize) -> bool {
        let r = self.replica_id(copy, temp);
        self.lanes[r / LANES].dirty[r % LANES] != 0
    }

    pub(crate) fn set_clean(&mut self, copy: usize, temp: usize) {
        let r = self.replica_id(copy, temp);
        self.lanes[r / LANES].dirty[r % LANES] = 0;
    }

    pub(crate) fn mark_all_dirty(&mut self) {
        for lane in &mut self.lanes {
            lane.dirty = [-1; LANES];
        }
    }

    /// One Metropolis sweep of every replica.
    pub fn sweep_all(&mut self) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                unsafe { self.sweep_avx2() };
                return;
            }
        }
        self.sweep_portable();
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    fn sweep_avx2(&mut self) {
        let (n, words) = (self.n, self.words);
        for g in 0..self.lanes.len() {
            // SAFETY: the slices hold exactly one group, and every threshold
            // index is an offset of a valid temperature plus at most `max_delta`.
            unsafe {
                avx2::sweep_group(
                    n,
                    &self.offs,
                    &self.links,
                    &mut self.fields[g * n * LANES..(g + 1) * n * LANES],
                    &mut self.spins[g * n * LANES..(g + 1) * n * LANES],
                    &mut self.bits[g * words * LANES..(g + 1) * words * LANES],
                    &mut self.lanes[g],
                    &self.thresholds,
                    self.max_delta,
                )
            };
        }
    }

    #[inline(always)]
    fn sweep_portable(&mut self) {
        let (n, words) = (self.n, self.words);
        for g in 0..self.lanes.len() {
            sweep_group(
                n,
                &self.offs,
                &self.links,
                &mut self.fields[g * n * LANES..(g + 1) * n * LANES],
                &mut self.spins[g * n * LANES..(g + 1) * n * LANES],
                &mut self.bits[g * words * LANES..(g + 1) * words * LANES],
                &mut self.lanes[g],
                &self.thresholds,
                self.max_delta,
            );
        }
    }

    /// Replica exchange between neighbouring temperatures within each copy,
    /// alternating between even and odd pairs on successive calls.
    pub fn pt_exchange(&mut self, rng: &mut Rng) {
        let n_t = self.temps.len();
        for copy in 0..self.n_copies {
            let mut t = self.parity;
            while t + 1 < n_t {
                let (ra, rb) = (self.at[copy * n_t + t], self.at[copy * n_t + t + 1]);
                let ea = self.lanes[ra / LANES].energy[ra % LANES];
                let eb = self.lanes[rb / LANES].energy[rb % LANES];
                let x = (self.betas[t] - self.betas[t + 1]) * (ea - eb) as f64;
                self.swap_attempts[t] += 1;
                if x >= 0.0 || rng.random::<f64>() < x.exp() {
                    self.at.swap(copy * n_t + t, copy * n_t + t + 1);
                    self.temp_of[ra] = t + 1;
                    self.temp_of[rb] = t;
                    self.swap_accepts[t] += 1;
                }
                t += 2;
            }
        }
        self.parity ^= 1;
        self.refresh_offsets();
    }

    pub fn swap_acceptance(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    /// Isoenergetic cluster moves at the `n_icm` lowest temperatures.
    pub fn icm_move(&mut self, rng: &mut Rng) -> usize {
        self.icm_inner(rng, None)
    }

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
        let n_t = self.temps.len();
        let (ra, rb) = (self.at[a * n_t + temp], self.at[b * n_t + temp]);
        let mut differing = 0u32;
        for w in 0..self.words {
            let d = self.bits[self.word(ra, w)] ^ self.bits[self.word(rb, w)];
            self.diff[w] = d;
            differing += d.count_ones();
        }
        if differing == 0 {
            return 0;
        }
        let mut pick = rng.random_range(0..differing);
        let mut seed = 0;
        for (w, &word) in self.diff.iter().enumerate() {
            let c = word.count_ones();
            if pick < c {
                let mut d = word;
                for _ in 0..pick {
                    d &= d - 1;
                }
                seed = 64 * w + d.trailing_zeros() as usize;
                break;
            }
            pick -= c;
        }

        // grow the connected component of disagreeing sites around the seed
        let words = self.words;
        self.grown.fill(0);
        self.grown[seed / 64] |= 1 << (seed % 64);
        self.stack.clear();
        self.stack.push(seed);
        let mut size = 1;
        while let Some(v) = self.stack.pop() {
            for w in 0..words {
                let mut add = self.nbr_masks[v * words + w] & self.diff[w] & !self.grown[w];
                self.grown[w] |= add;
                while add != 0 {
                    self.stack.push(64 * w + add.trailing_zeros() as usize);
                    add &= add - 1;
                    size += 1;
                }
            }
        }
        if size == differing as usize {
            // flipping every disagreeing site in both replicas exchanges them
            self.at.swap(a * n_t + temp, b * n_t + temp);
        } else {
            for w in 0..words {
                let mut g = self.grown[w];
                while g != 0 {
                    let v = 64 * w + g.trailing_zeros() as usize;
                    g &= g - 1;
                    self.flip(ra, v);
                    self.flip(rb, v);
                }
            }
        }
        size
    }

    fn flip(&mut self, r: usize, i: usize) {
        let idx = self.site(r, i);
        let s = self.spins[idx];
        let lane = &mut self.lanes[r / LANES];
        lane.energy[r % LANES] += 2 * s * self.fields[idx];
        lane.dirty[r % LANES] = -1;
        self.spins[idx] = -s;
        let w = self.word(r, i >> 6);
        self.bits[w] ^= 1 << (i & 63);
        for &(u, j2) in &self.links[self.offs[i] as usize..self.offs[i + 1] as usize] {
            let ui = self.site(r, u as usize);
            self.fields[ui] -= j2 * s;
        }
    }

    /// Largest deviation between cached and recomputed energies or fields.
    pub fn max_cache_drift(&self) -> f64 {
        let mut worst = 0i64;
        for copy in 0..self.n_copies {
            for t in 0..self.temps.len() {
                let r = self.replica_id(copy, t);
                let c = self.config(copy, t);
                worst = worst.max((self.k.energy(&c) - self.energy(copy, t)).abs());
                for i in 0..self.n {
                    worst = worst.max((self.k.local_field(&c, i) - self.fields[self.site(r, i)] as i64).abs());
                    let s = self.spins[self.site(r, i)];
                    if s != c.spin(i) as i32 {
                        worst = worst.max(1);
                    }
                }
            }
        }
        worst as f64
    }
}

#[inline(always)]
fn next_u32(rng: &mut [[u32; LANES]; 4]) -> [u32; LANES] {
    let mut out = [0u32; LANES];
    for l in 0..LANES {
        let (s0, s1, s2, s3) = (rng[0][l], rng[1][l], rng[2][l], rng[3][l]);
        out[l] = s0.wrapping_add(s3).rotate_left(7).wrapping_add(s0);
        let t = s1 << 9;
        let s2 = s2 ^ s0;
        let s3 = s3 ^ s1;
        let s1 = s1 ^ s2;
        let s0 = s0 ^ s3;
        rng[0][l] = s0;
        rng[1][l] = s1;
        rng[2][l] = s2 ^ t;
        rng[3][l] = s3.rotate_left(11);
    }
    out
}

/// Sequential Metropolis sweep of one lane group.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn sweep_group(
    n: usize,
    offs: &[u32],
    links: &[(u32, i32)],
    fields: &mut [i32],
    spins: &mut [i32],
    bits: &mut [u64],
    lanes: &mut LaneState,
    thresholds: &[u32],
    max_delta: i32,
) {
    let mut st = *lanes;
    for i in 0..n {
        let row = i * LANES;
        let f: [i32; LANES] = fields[row..row + LANES].try_into().unwrap();
        let s: [i32; LANES] = spins[row..row + LANES].try_into().unwrap();
        let draw = next_u32(&mut st.rng);
        let mut sgn = [0i32; LANES];
        let mut delta = [0i32; LANES];
        for l in 0..LANES {
            sgn[l] = s[l] >> 31;
            delta[l] = ((f[l] ^ sgn[l]) - sgn[l]) << 1;
        }
        let mut thr = [0u32; LANES];
        for l in 0..LANES {
            thr[l] = thresholds[(st.offset[l] + delta[l].clamp(0, max_delta)) as usize];
        }
        let mut m = [0i32; LANES];
        for l in 0..LANES {
            m[l] = -(((delta[l] <= 0) | (draw[l] < thr[l])) as i32);
        }
        if m.iter().all(|&x| x == 0) {
            continue;
        }
        let out: &mut [i32; LANES] = (&mut spins[row..row + LANES]).try_into().unwrap();
        for l in 0..LANES {
            out[l] = s[l] - ((s[l] << 1) & m[l]);
            st.energy[l] += delta[l] & m[l];
            st.dirty[l] |= m[l];
        }
        let (w, b) = (i >> 6, i & 63);
        let bw: &mut [u64; LANES] = (&mut bits[w * LANES..(w + 1) * LANES]).try_into().unwrap();
        for l in 0..LANES {
            bw[l] ^= ((m[l] as u32 & 1) as u64) << b;
        }
        for &(u, j2) in &links[offs[i] as usize..offs[i + 1] as usize] {
            let ur = u as usize * LANES;
            let nb: &mut [i32; LANES] = (&mut fields[ur..ur + LANES]).try_into().unwrap();
            for l in 0..LANES {
                nb[l] -= ((j2 ^ sgn[l]) - sgn[l]) & m[l];
            }
        }
    }
    *lanes = st;
}

/// The same sweep written with AVX2 intrinsics; results are bit-identical.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{LaneState, LANES};
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn rotl(x: __m256i, k: i32) -> __m256i {
        _mm256_or_si256(_mm256_sll_epi32(x, _mm_cvtsi32_si128(k)), _mm256_srl_epi32(x, _mm_cvtsi32_si128(32 - k)))
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn sweep_group(
        n: usize,
        offs: &[u32],
        links: &[(u32, i32)],
        fields: &mut [i32],
        spins: &mut [i32],
        bits: &mut [u64],
        lanes: &mut LaneState,
        thresholds: &[u32],
        max_delta: i32,
    ) {
        debug_assert_eq!(fields.len(), n * LANES);
        let ld = |p: *const i32| _mm256_loadu_si256(p as *const __m256i);
        let fp = fields.as_mut_ptr();
        let sp = spins.as_mut_ptr();
        let bp = bits.as_mut_ptr() as *mut __m256i;
        let tp = thresholds.as_ptr() as *const i32;
        let mut r0 = ld(lanes.rng[0].as_ptr() as *const i32);
        let mut r1 = ld(lanes.rng[1].as_ptr() as *const i32);
        let mut r2 = ld(lanes.rng[2].as_ptr() as *const i32);
        let mut r3 = ld(lanes.rng[3].as_ptr() as *const i32);
        let mut energy = ld(lanes.energy.as_ptr());
        let mut dirty = ld(lanes.dirty.as_ptr());
        let offset = ld(lanes.offset.as_ptr());
        let zero = _mm256_setzero_si256();
        let one = _mm256_set1_epi32(1);
        let top = _mm256_set1_epi32(max_delta);
        let bias = _mm256_set1_epi32(i32::MIN);
        for i in 0..n {
            let f = ld(fp.add(i * LANES));
            let s = ld(sp.add(i * LANES));
            let draw = _mm256_add_epi32(rotl(_mm256_add_epi32(r0, r3), 7), r0);
            let t = _mm256_slli_epi32(r1, 9);
            r2 = _mm256_xor_si256(r2, r0);
            r3 = _mm256_xor_si256(r3, r1);
            r1 = _mm256_xor_si256(r1, r2);
            r0 = _mm256_xor_si256(r0, r3);
            r2 = _mm256_xor_si256(r2, t);
            r3 = rotl(r3, 11);

            let sgn = _mm256_srai_epi32(s, 31);
            let delta = _mm256_slli_epi32(_mm256_sub_epi32(_mm256_xor_si256(f, sgn), sgn), 1);
            let idx = _mm256_add_epi32(offset, _mm256_min_epi32(_mm256_max_epi32(delta, zero), top));
            let thr = _mm256_i32gather_epi32::<4>(tp, idx);
            let below = _mm256_cmpgt_epi32(_mm256_xor_si256(thr, bias), _mm256_xor_si256(draw, bias));
            let m = _mm256_or_si256(below, _mm256_cmpgt_epi32(one, delta));
            let ns = _mm256_sub_epi32(s, _mm256_and_si256(_mm256_slli_epi32(s, 1), m));
            _mm256_storeu_si256(sp.add(i * LANES) as *mut __m256i, ns);
            energy = _mm256_add_epi32(energy, _mm256_and_si256(delta, m));
            dirty = _mm256_or_si256(dirty, m);

            let bit = _mm256_set1_epi64x((1u64 << (i & 63)) as i64);
            let w = bp.add((i >> 6) * 2);
            let lo = _mm256_and_si256(_mm256_cvtepi32_epi64(_mm256_castsi256_si128(m)), bit);
            let hi = _mm256_and_si256(_mm256_cvtepi32_epi64(_mm256_extracti128_si256::<1>(m)), bit);
            _mm256_storeu_si256(w, _mm256_xor_si256(_mm256_loadu_si256(w), lo));
            _mm256_storeu_si256(w.add(1), _mm256_xor_si256(_mm256_loadu_si256(w.add(1)), hi));

            for &(u, j2) in links.get_unchecked(*offs.get_unchecked(i) as usize..*offs.get_unchecked(i + 1) as usize) {
                let q = fp.add(u as usize * LANES) as *mut __m256i;
                let j = _mm256_set1_epi32(j2);
                let d = _mm256_and_si256(_mm256_sub_epi32(_mm256_xor_si256(j, sgn), sgn), m);
                _mm256_storeu_si256(q, _mm256_sub_epi32(_mm256_loadu_si256(q), d));
            }
        }
        let st = |p: *mut i32, v: __m256i| _mm256_storeu_si256(p as *mut __m256i, v);
        st(lanes.rng[0].as_mut_ptr() as *mut i32, r0);
        st(lanes.rng[1].as_mut_ptr() as *mut i32, r1);
        st(lanes.rng[2].as_mut_ptr() as *mut i32, r2);
        st(lanes.rng[3].as_mut_ptr() as *mut i32, r3);
        st(lanes.energy.as_mut_ptr(), energy);
        st(lanes.dirty.as_mut_ptr(), dirty);
    }
}
