//! Integer-valued innovation distributions.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::pmf::{kahan_sum, IntPmf, IntWindow};
use crate::special::{ln_factorial, ln_poisson_product_series};

/// Upper bound on the number of states [`InnovationModel::support_window`]
/// will visit.
pub const MAX_WINDOW_STATES: usize = 1_000_000;

/// A distribution on the integers usable as the innovation law of a model.
pub trait InnovationModel: fmt::Debug + Clone + Send + Sync {
    fn log_pmf(&self, k: i64) -> f64;

    fn pmf(&self, k: i64) -> f64 {
        self.log_pmf(k).exp()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64;

    fn mean(&self) -> f64;

    fn variance(&self) -> f64;

    /// `E[s^eps]` for `s` in `(0, 1]`.
    fn pgf(&self, s: f64) -> f64;

    /// Smallest window centred on the rounded mean whose complement carries
    /// less than `tail_tol` mass.
    fn support_window(&self, tail_tol: f64) -> Result<IntWindow> {
        if !(tail_tol > 0.0 && tail_tol <= 1e-6) {
            return Err(domain(format!("tail tolerance {tail_tol} outside (0, 1e-6]")));
        }
        let c = self.mean().round() as i64;
        let mut mass = self.pmf(c);
        let mut comp = 0.0;
        let mut r = 0i64;
        while 1.0 - (mass + comp) >= tail_tol {
            r += 1;
            if (2 * r + 1) as usize > MAX_WINDOW_STATES {
                return Err(Error::TruncationFailure { max_states: MAX_WINDOW_STATES });
            }
            // Two-sum style accumulation keeps the complement estimate honest.
            let add = self.pmf(c - r) + self.pmf(c + r);
            let t = mass + add;
            comp += (mass - t) + add;
            mass = t;
        }
        Ok(IntWindow::new(c - r, c + r))
    }

    /// Tabulate the pmf on a window.
    fn pmf_on(&self, window: IntWindow) -> IntPmf {
        IntPmf::unnormalized(window.lo, window.iter().map(|k| self.pmf(k)).collect())
            .expect("pmf values are finite and non-negative")
    }

    /// Truncated pmf covering all but `tail_tol` of the mass.
    fn truncated_pmf(&self, tail_tol: f64) -> Result<IntPmf> {
        Ok(self.pmf_on(self.support_window(tail_tol)?))
    }
}

/// Difference of two independent Poisson variables with means `lambda1`
/// and `lambda2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skellam {
    lambda1: f64,
    lambda2: f64,
}

impl Skellam {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 > 0.0 && lambda2.is_finite() && lambda2 > 0.0) {
            return Err(domain(format!("Skellam parameters must be positive, got ({lambda1}, {lambda2})")));
        }
        Ok(Skellam { lambda1, lambda2 })
    }

    /// Parameters with the given mean and variance (`variance > |mean|`).
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        Skellam::new((variance + mean) / 2.0, (variance - mean) / 2.0)
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn is_symmetric(&self) -> bool {
        self.lambda1 == self.lambda2
    }

    /// Log-pmf for every `k` in `window`, reusing the Bessel evaluations for
    /// `k` and `-k`.
    pub fn log_pmf_table(&self, window: IntWindow) -> Vec<f64> {
        window.iter().map(|k| self.log_pmf(k)).collect()
    }
}

impl InnovationModel for Skellam {
    /// `P(k) = e^{-(l1+l2)} (l1/l2)^{k/2} I_|k|(2 sqrt(l1 l2))`, evaluated
    /// term by term through the Bessel series.
    fn log_pmf(&self, k: i64) -> f64 {
        let nu = k.unsigned_abs();
        if nu > u32::MAX as u64 {
            return f64::NEG_INFINITY;
        }
        if k >= 0 {
            ln_poisson_product_series(nu as u32, self.lambda1, self.lambda2)
        } else {
            ln_poisson_product_series(nu as u32, self.lambda2, self.lambda1)
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        sample_poisson(self.lambda1, rng) as i64 - sample_poisson(self.lambda2, rng) as i64
    }

    fn mean(&self) -> f64 {
        self.lambda1 - self.lambda2
    }

    fn variance(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    fn pgf(&self, s: f64) -> f64 {
        (self.lambda1 * (s - 1.0) + self.lambda2 * (1.0 / s - 1.0)).exp()
    }
}

/// Poisson draw: sequential inversion below 30, Hörmann's PTRS transformed
/// rejection above.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda < 30.0 {
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            let next = cdf + p;
            if next == cdf {
                // Remaining mass is below double precision.
                break;
            }
            cdf = next;
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// An arbitrary finitely supported distribution given by its pmf table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPmf {
    pmf: IntPmf,
    cdf: Vec<f64>,
}

impl TabulatedPmf {
    pub fn new(pmf: IntPmf) -> Result<Self> {
        let total = pmf.total_mass();
        if (total - 1.0).abs() > crate::pmf::NORMALIZATION_TOL {
            return Err(Error::Validation(format!("pmf sums to {total}")));
        }
        let mut acc = 0.0;
        let cdf = pmf
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(TabulatedPmf { pmf, cdf })
    }

    pub fn point(k: i64) -> Self {
        TabulatedPmf::new(IntPmf::point_mass(k)).unwrap()
    }

    pub fn as_pmf(&self) -> &IntPmf {
        &self.pmf
    }
}

impl InnovationModel for TabulatedPmf {
    fn log_pmf(&self, k: i64) -> f64 {
        self.pmf.pmf(k).ln()
    }

    fn pmf(&self, k: i64) -> f64 {
        self.pmf.pmf(k)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        self.pmf.lo() + idx as i64
    }

    fn mean(&self) -> f64 {
        self.pmf.mean()
    }

    fn variance(&self) -> f64 {
        self.pmf.variance()
    }

    fn pgf(&self, s: f64) -> f64 {
        kahan_sum(self.pmf.iter().map(|(k, p)| p * s.powf(k as f64)))
    }

    fn support_window(&self, _tail_tol: f64) -> Result<IntWindow> {
        let lo = self.pmf.iter().find(|&(_, p)| p > 0.0).map(|(k, _)| k).unwrap();
        let hi = self.pmf.iter().filter(|&(_, p)| p > 0.0).last().map(|(k, _)| k).unwrap();
        Ok(IntWindow::new(lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Poisson pmf on `0..len` by the recurrence `p_{j+1} = p_j lambda/(j+1)`
    /// started at the mode and normalized by the total, which never touches
    /// a log-gamma function.
    fn poisson_table(lambda: f64, len: usize) -> Vec<f64> {
        let mode = (lambda.floor() as usize).min(len - 1);
        let mut w = vec![0.0; len];
        w[mode] = 1.0;
        for j in mode + 1..len {
            w[j] = w[j - 1] * lambda / j as f64;
        }
        for j in (0..mode).rev() {
            w[j] = w[j + 1] * (j + 1) as f64 / lambda;
        }
        let total: f64 = kahan_sum(w.iter().copied());
        w.iter().map(|x| x / total).collect()
    }

    /// `P(Pois(l1) - Pois(l2) = k) = sum_j Pois(l1; j + k) Pois(l2; j)`.
    fn skellam_oracle(l1: f64, l2: f64, k: i64) -> f64 {
        let len = (l1.max(l2) + 40.0 * l1.max(l2).sqrt() + 80.0 + k.unsigned_abs() as f64) as usize;
        let p1 = poisson_table(l1, len);
        let p2 = poisson_table(l2, len);
        let mut terms = Vec::new();
        for (j, q) in p2.iter().enumerate() {
            let i = j as i64 + k;
            if i >= 0 && (i as usize) < len {
                terms.push(p1[i as usize] * q);
            }
        }
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        kahan_sum(terms)
    }

    #[test]
    fn skellam_zero_at_unit_rates() {
        let s = Skellam::new(1.0, 1.0).unwrap();
        let oracle = skellam_oracle(1.0, 1.0, 0);
        assert!((oracle - 0.308_508).abs() < 1e-6);
        assert!((s.pmf(0) - oracle).abs() < 1e-15);
        assert!((s.pmf(3) - s.pmf(-3)).abs() < 1e-17);
    }

    #[test]
    fn skellam_moments() {
        let s = Skellam::new(1.5, 0.5).unwrap();
        assert_eq!(s.mean(), 1.0);
        assert_eq!(s.variance(), 2.0);
        let t = s.truncated_pmf(1e-12).unwrap();
        assert!((t.mean() - 1.0).abs() < 1e-8);
        assert!((t.variance() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn skellam_matches_poisson_convolution_on_grid() {
        let grid = [0.05, 0.3, 1.0, 4.5, 20.0, 90.0, 300.0];
        let mut worst = 0.0f64;
        for &l1 in &grid {
            for &l2 in &grid {
                let s = Skellam::new(l1, l2).unwrap();
                for k in -50i64..=50 {
                    let oracle = skellam_oracle(l1, l2, k);
                    if oracle < 1e-290 {
                        continue;
                    }
                    let rel = (s.pmf(k) - oracle).abs() / oracle;
                    worst = worst.max(rel);
                    assert!(rel < 1e-13, "l1={l1} l2={l2} k={k}: rel err {rel:e}");
                }
            }
        }
        eprintln!("worst relative error {worst:e}");
    }

    #[test]
    fn skellam_rejects_nonpositive() {
        assert!(Skellam::new(0.0, 1.0).is_err());
        assert!(Skellam::new(1.0, -2.0).is_err());
        assert!(Skellam::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn pgf_matches_series() {
        let s = Skellam::new(1.3, 0.6).unwrap();
        // s^k amplifies the left tail by up to 5^|k| at s = 0.2, so the window
        // must reach further left than the plain mass tolerance.
        let w = s.support_window(1e-12).unwrap().widen(30);
        let t = s.pmf_on(w);
        for &u in &[0.2, 0.5, 0.9] {
            assert!((s.pgf(u) - t.pgf(u)).abs() < 1e-9, "s={u}");
        }
    }

    #[test]
    fn support_windows() {
        let w = Skellam::new(1.0, 1.0).unwrap().support_window(1e-12).unwrap();
        assert!(w.lo <= -12 && w.hi >= 12, "{w:?}");
        // Cumulative-mass oracle: the complement of the window is below tol.
        let big = Skellam::new(20.0, 14.0).unwrap();
        let w = big.support_window(1e-12).unwrap();
        assert!(w.len() < 200);
        let inside: f64 = kahan_sum(w.iter().map(|k| skellam_oracle(20.0, 14.0, k)));
        assert!(1.0 - inside < 1e-12);
        let point = TabulatedPmf::point(0);
        assert_eq!(point.support_window(1e-9).unwrap(), IntWindow::new(0, 0));
        assert!(Skellam::new(1.0, 1.0).unwrap().support_window(0.1).is_err());
    }

    #[test]
    fn skellam_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let s = Skellam::new(1.0, 1.0).unwrap();
        let xs: Vec<i64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<i64>() as f64 / n as f64;
        assert!(mean.abs() < 0.006);
        let p0 = xs.iter().filter(|&&x| x == 0).count() as f64 / n as f64;
        let se = (s.pmf(0) * (1.0 - s.pmf(0)) / n as f64).sqrt();
        assert!((p0 - s.pmf(0)).abs() < 3.0 * se);

        let s = Skellam::new(1.5, 0.5).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng) as f64).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - 2.0).abs() < 0.02);
    }

    #[test]
    fn large_rate_poisson_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &lam in &[35.0, 210.0] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(lam, &mut rng) as f64).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - lam).abs() < 4.0 * (lam / n as f64).sqrt(), "mean {m}");
            assert!((v / lam - 1.0).abs() < 0.02, "var {v}");
        }
    }

    #[test]
    fn tabulated_sampling() {
        let t = TabulatedPmf::new(IntPmf::new(-1, vec![0.25, 0.5, 0.25]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<i64> = (0..100_000).map(|_| t.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| (-1..=1).contains(x)));
        let zeros = xs.iter().filter(|&&x| x == 0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01);
        assert!((t.pgf(1.0) - 1.0).abs() < 1e-15);
    }
}
