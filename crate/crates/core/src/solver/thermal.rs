//! Logarithmic binning of a measurement series.
//!
//! Sweep `t` (counted from 1) falls in bin `k = floor(log2 t)`, which covers
//! sweeps `[2^k, 2^(k+1))`. A series is deemed thermalized once the means of
//! the last three complete bins agree pairwise within one combined standard
//! error.

#[derive(Clone, Debug, Default)]
struct Bin {
    count: u64,
    sum: f64,
    sum_sq: f64,
}

impl Bin {
    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LogBinner {
    bins: Vec<Bin>,
    seen: u64,
}

impl LogBinner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.seen += 1;
        let k = (63 - self.seen.leading_zeros()) as usize;
        if self.bins.len() <= k {
            self.bins.resize(k + 1, Bin::default());
        }
        let b = &mut self.bins[k];
        b.count += 1;
        b.sum += x;
        b.sum_sq += x * x;
    }

    pub fn len(&self) -> u64 {
        self.seen
    }

    pub fn is_empty(&self) -> bool {
        self.seen == 0
    }

    /// `(mean, standard error)` of every complete bin, oldest first.
    pub fn complete_bins(&self) -> Vec<(f64, f64)> {
        self.bins
            .iter()
            .enumerate()
            .filter(|(k, b)| b.count == 1u64 << k)
            .map(|(_, b)| (b.mean(), b.std_error()))
            .collect()
    }

    pub fn thermalized(&self) -> bool {
        let bins = self.complete_bins();
        if bins.len() < 3 {
            return false;
        }
        let last = &bins[bins.len() - 3..];
        (0..3).all(|a| {
            (a + 1..3).all(|b| {
                let (ma, ea) = last[a];
                let (mb, eb) = last[b];
                (ma - mb).abs() <= (ea * ea + eb * eb).sqrt()
            })
        })
    }
}

/// Thermalization check on a per-sweep series of lowest-temperature energies.
/// Fewer than 8 entries is never thermalized.
pub fn check_thermalization(history: &[f64]) -> bool {
    if history.len() < 8 {
        return false;
    }
    let mut binner = LogBinner::new();
    for &x in history {
        binner.push(x);
    }
    binner.thermalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_follow_powers_of_two() {
        let mut b = LogBinner::new();
        for t in 1..=15u64 {
            b.push(t as f64);
        }
        let bins = b.complete_bins();
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[0].0, 1.0);
        assert_eq!(bins[1].0, 2.5);
        assert_eq!(bins[3].0, 11.5);
        b.push(16.0);
        assert_eq!(b.complete_bins().len(), 4);
    }

    #[test]
    fn constant_series_is_thermalized() {
        assert!(check_thermalization(&[-3.5; 64]));
    }

    #[test]
    fn falling_series_is_not() {
        let h: Vec<f64> = (0..1024).map(|t| -10.0 * t as f64).collect();
        assert!(!check_thermalization(&h));
    }

    #[test]
    fn short_history_is_not() {
        assert!(!check_thermalization(&[1.0; 7]));
        assert!(!check_thermalization(&[]));
    }
}
