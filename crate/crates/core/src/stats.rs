//! Small statistics helpers: bootstrap errors, binomial errors and rank correlation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::seeds::rng_from;

pub const DEFAULT_RESAMPLES: usize = 10_000;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation of the mean over `resamples` bootstrap resamples.
/// Deterministic for a given `seed`.
pub fn bootstrap_error(xs: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("bootstrap of an empty sample".into()));
    }
    if resamples < 2 {
        return Err(Error::InvalidParameter("need at least two bootstrap resamples".into()));
    }
    let mut rng = rng_from(seed, &[0xB007]);
    let n = xs.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let m = mean(&means);
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_error(successes: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = successes as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided p-value of the t approximation with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

impl Correlation {
    pub fn significantly_negative(&self, alpha: f64) -> bool {
        self.rho < 0.0 && self.p_value < alpha
    }

    pub fn significantly_positive(&self, alpha: f64) -> bool {
        self.rho > 0.0 && self.p_value < alpha
    }
}

/// Spearman rank correlation. Fails on fewer than three points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("samples of length {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("rank correlation needs three points, got {n}")));
    }
    let rho = pearson(&ranks(x), &ranks(y))
        .ok_or_else(|| Error::InvalidInput("rank correlation of a constant sample".into()))?;
    Ok(Correlation { rho, p_value: rank_p_value(rho, n), n })
}

fn rank_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.cdf(-t.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_share_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_data() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = spearman(&x, &[10.0, 20.0, 25.0, 80.0, 81.0]).unwrap();
        assert_eq!(c.rho, 1.0);
        let c = spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.rho, -1.0);
        assert!(c.significantly_negative(0.05));
        assert!(spearman(&x, &[1.0; 5]).is_err());
    }

    #[test]
    fn spearman_without_ties_matches_rank_difference_formula() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let mut y = x.clone();
        y.swap(0, 5);
        y.swap(1, 7);
        y.swap(2, 3);
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let rho = 1.0 - 6.0 * d2 / (12.0 * 143.0);
        assert!((spearman(&x, &y).unwrap().rho - rho).abs() < 1e-12);
    }

    #[test]
    fn p_value_at_tabulated_critical_value() {
        // two-sided 5% critical t on 10 degrees of freedom is 2.228
        let t: f64 = 2.228;
        let rho = t / (10.0 + t * t).sqrt();
        assert!((rank_p_value(rho, 12) - 0.05).abs() < 1e-3);
        assert!((rank_p_value(-rho, 12) - 0.05).abs() < 1e-3);
        assert!((rank_p_value(0.0, 12) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_of_constant_sample_is_zero() {
        assert_eq!(bootstrap_error(&[1.0; 20], 1000, 1).unwrap(), 0.0);
        assert!(bootstrap_error(&[], 100, 1).is_err());
    }

    #[test]
    fn bootstrap_matches_standard_error() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let e = bootstrap_error(&xs, DEFAULT_RESAMPLES, 3).unwrap();
        let se = (0.25f64 / 200.0).sqrt();
        assert!((e - se).abs() < 0.1 * se, "{e} vs {se}");
    }

    #[test]
    fn binomial() {
        assert_eq!(binomial_error(0, 10), 0.0);
        assert!((binomial_error(180, 900) - (0.2f64 * 0.8 / 900.0).sqrt()).abs() < 1e-15);
    }
}
