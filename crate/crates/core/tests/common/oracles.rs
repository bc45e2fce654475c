//! Brute-force reference implementations. They enumerate rounding outcomes
//! directly and share no code paths with the library operators beyond the
//! innovation pmf itself.
#![allow(dead_code)]

use mrarma::{InnovationModel, IntPmf};

/// Naive floor and fractional part, no snapping.
pub fn naive_split(z: f64) -> (i64, f64) {
    let fl = z.floor();
    (fl as i64, z - fl)
}

/// `P(<alpha X> = y)` by enumerating every state of `X` and both rounding
/// outcomes.
pub fn scaled_round_pmf(alpha: f64, x: &IntPmf, y: i64) -> f64 {
    let mut total = 0.0;
    for (v, p) in x.iter() {
        let (fl, fr) = naive_split(alpha * v as f64);
        if fl == y {
            total += (1.0 - fr) * p;
        }
        if fl + 1 == y {
            total += fr * p;
        }
    }
    total
}

/// Linear predictor with `hist[0]` the most recent value.
pub fn predictor(alphas: &[f64], hist: &[i64]) -> f64 {
    alphas.iter().zip(hist).map(|(a, &x)| a * x as f64).sum()
}

/// `P(X_t = x | hist)` under a single rounding of the full predictor.
pub fn transition_pmf<I: InnovationModel>(alphas: &[f64], hist: &[i64], innov: &I, x: i64) -> f64 {
    let (fl, fr) = naive_split(predictor(alphas, hist));
    (1.0 - fr) * innov.pmf(x - fl) + fr * innov.pmf(x - fl - 1)
}

/// `P(X_t = x | hist)` with each term rounded separately, over all `2^p`
/// rounding outcomes.
pub fn star_transition_pmf<I: InnovationModel>(alphas: &[f64], hist: &[i64], innov: &I, x: i64) -> f64 {
    let splits: Vec<(i64, f64)> = alphas.iter().zip(hist).map(|(a, &h)| naive_split(a * h as f64)).collect();
    let mut total = 0.0;
    for mask in 0u32..(1 << splits.len()) {
        let mut weight = 1.0;
        let mut shift = 0;
        for (i, &(fl, fr)) in splits.iter().enumerate() {
            if mask & (1 << i) != 0 {
                weight *= fr;
                shift += fl + 1;
            } else {
                weight *= 1.0 - fr;
                shift += fl;
            }
        }
        total += weight * innov.pmf(x - shift);
    }
    total
}

/// Skellam pmf from the defining sum `sum_m Pois(l1; m + k) Pois(l2; m)`
/// with Poisson weights built by recurrence.
pub fn skellam_pmf(l1: f64, l2: f64, k: i64) -> f64 {
    let (la, lb, k) = if k >= 0 { (l1, l2, k as u64) } else { (l2, l1, (-k) as u64) };
    // Pois(la; k) by recurrence in log space.
    let mut ln_pa = -la;
    for j in 1..=k {
        ln_pa += (la / j as f64).ln();
    }
    let mut ln_pb = -lb;
    let mut total = 0.0;
    for m in 0..2000u64 {
        if m > 0 {
            ln_pa += (la / (m + k) as f64).ln();
            ln_pb += (lb / m as f64).ln();
        }
        let term = (ln_pa + ln_pb).exp();
        total += term;
        if m as f64 > la + lb + 50.0 && term < total * 1e-18 {
            break;
        }
    }
    total
}
