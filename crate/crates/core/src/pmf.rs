//! Probability mass functions over contiguous integer windows.

use crate::error::{Error, Result};

/// Closed integer interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntWindow {
    pub lo: i64,
    pub hi: i64,
}

impl IntWindow {
    pub fn new(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi, "empty window [{lo}, {hi}]");
        IntWindow { lo, hi }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }

    /// Widen both ends by `by` states.
    pub fn widen(&self, by: i64) -> Self {
        IntWindow::new(self.lo - by, self.hi + by)
    }
}

/// A pmf stored densely from `lo`. Mass outside the stored window is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IntPmf {
    lo: i64,
    probs: Vec<f64>,
}

/// Normalization slack accepted by [`IntPmf::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

impl IntPmf {
    /// Validated constructor: entries must be finite, non-negative and sum to
    /// one within [`NORMALIZATION_TOL`].
    pub fn new(lo: i64, probs: Vec<f64>) -> Result<Self> {
        let pmf = IntPmf::unnormalized(lo, probs)?;
        let total = pmf.total_mass();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Validation(format!("pmf sums to {total}, not 1 within {NORMALIZATION_TOL:e}")));
        }
        Ok(pmf)
    }

    /// Constructor that only checks entries, for truncated or defective pmfs.
    pub fn unnormalized(lo: i64, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("pmf has empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Validation(format!("invalid probability {p}")));
        }
        Ok(IntPmf { lo, probs })
    }

    pub fn point_mass(k: i64) -> Self {
        IntPmf { lo: k, probs: vec![1.0] }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    pub fn window(&self) -> IntWindow {
        IntWindow::new(self.lo, self.hi())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pmf(&self, k: i64) -> f64 {
        if k < self.lo {
            return 0.0;
        }
        self.probs.get((k - self.lo) as usize).copied().unwrap_or(0.0)
    }

    /// `(k, P(k))` pairs in increasing `k`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.lo + i as i64, p))
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.probs.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        kahan_sum(self.iter().map(|(k, p)| k as f64 * p)) / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        kahan_sum(self.iter().map(|(k, p)| (k as f64 - m).powi(2) * p)) / self.total_mass()
    }

    pub fn pgf(&self, s: f64) -> f64 {
        kahan_sum(self.iter().map(|(k, p)| p * s.powi(k as i32)))
    }

    /// Distribution of the sum of two independent variables.
    pub fn convolve(&self, other: &IntPmf) -> IntPmf {
        let mut out = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, &a) in self.probs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.probs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        IntPmf { lo: self.lo + other.lo, probs: out }
    }

    /// Rescale to unit mass.
    pub fn normalized(mut self) -> IntPmf {
        let total = self.total_mass();
        self.probs.iter_mut().for_each(|p| *p /= total);
        self
    }

    /// Kolmogorov distance `max_k |F(k) - G(k)|` against another pmf.
    pub fn kolmogorov_distance(&self, other: &IntPmf) -> f64 {
        let lo = self.lo.min(other.lo);
        let hi = self.hi().max(other.hi());
        let (mut fa, mut fb, mut d) = (0.0_f64, 0.0_f64, 0.0_f64);
        for k in lo..=hi {
            fa += self.pmf(k);
            fb += other.pmf(k);
            d = d.max((fa - fb).abs());
        }
        d
    }

    /// Empirical pmf of an integer sample.
    pub fn empirical(values: &[i64]) -> Result<IntPmf> {
        let lo = *values.iter().min().ok_or_else(|| Error::Validation("empty sample".into()))?;
        let hi = *values.iter().max().unwrap();
        let mut counts = vec![0.0; (hi - lo + 1) as usize];
        for &v in values {
            counts[(v - lo) as usize] += 1.0;
        }
        let n = values.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        Ok(IntPmf { lo, probs: counts })
    }
}

/// Compensated summation.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized() {
        assert!(IntPmf::new(0, vec![0.5, 0.4]).is_err());
        assert!(IntPmf::new(0, vec![0.5, -0.1, 0.6]).is_err());
        assert!(IntPmf::new(0, vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn moments_and_convolution() {
        let coin = IntPmf::new(0, vec![0.5, 0.5]).unwrap();
        let two = coin.convolve(&coin);
        assert_eq!(two.probs(), &[0.25, 0.5, 0.25]);
        assert!((two.mean() - 1.0).abs() < 1e-15);
        assert!((two.variance() - 0.5).abs() < 1e-15);
        assert_eq!(two.pmf(-1), 0.0);
        assert_eq!(two.pmf(3), 0.0);
    }

    #[test]
    fn kolmogorov_of_identical_is_zero() {
        let p = IntPmf::new(-2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(p.kolmogorov_distance(&p), 0.0);
        let q = IntPmf::point_mass(0);
        assert!((p.kolmogorov_distance(&q) - 0.4).abs() < 1e-12);
    }
}
