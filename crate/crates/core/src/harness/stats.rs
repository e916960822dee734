//! Small-sample statistics used by the protocols.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with divisor `n`.
pub fn population_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Variance with divisor `n - 1`.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn standard_error(x: &[f64]) -> f64 {
    (sample_variance(x) / x.len() as f64).sqrt()
}

/// Two-sided Student-t confidence interval for the mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

pub fn t_interval(x: &[f64], level: f64) -> Interval {
    let m = mean(x);
    if x.len() < 2 {
        return Interval { mean: m, lo: m, hi: m };
    }
    let dist = StudentsT::new(0.0, 1.0, (x.len() - 1) as f64).expect("positive degrees of freedom");
    let q = dist.inverse_cdf(0.5 + level / 2.0);
    let half = q * standard_error(x);
    Interval {
        mean: m,
        lo: m - half,
        hi: m + half,
    }
}

/// One-sided paired t-test of `mean(a - b) > 0`; returns `(t, p)`.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let se = standard_error(&d);
    let t = mean(&d) / se;
    if !t.is_finite() {
        let p = if mean(&d) > 0.0 { 0.0 } else { 1.0 };
        return (t, p);
    }
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("positive degrees of freedom");
    (t, 1.0 - dist.cdf(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_of_known_sample() {
        // n = 4, mean 2.5, sd = sqrt(5/3); t_{0.975, 3} = 3.182446305284263
        let i = t_interval(&[1.0, 2.0, 3.0, 4.0], 0.95);
        let half = 3.182446305284263 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((i.mean - 2.5).abs() < 1e-15);
        assert!((i.hi - 2.5 - half).abs() < 1e-9);
    }

    #[test]
    fn paired_test_direction() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.5, 1.4, 2.6, 3.2, 4.7];
        let (t, p) = paired_t_greater(&a, &b);
        assert!(t > 0.0 && p < 0.05);
        let (_, p_rev) = paired_t_greater(&b, &a);
        assert!(p_rev > 0.95);
    }

    #[test]
    fn variance_divisors() {
        let x = [1.0, 3.0];
        assert_eq!(population_variance(&x), 1.0);
        assert_eq!(sample_variance(&x), 2.0);
    }
}
