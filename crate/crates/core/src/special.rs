//! Special functions: log-factorials, Poisson log-pmf and the exponentially
//! scaled modified Bessel function of the first kind.
//!
//! The Poisson log-pmf follows Loader's saddle-point decomposition
//! `ln P(n) = -ln(2 pi n)/2 - stirlerr(n) - bd0(n, lambda)`, which keeps every
//! intermediate quantity small and so stays accurate to a few ulps even for
//! large `lambda`.

use std::f64::consts::PI;

use crate::pmf::kahan_sum;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`.
pub fn stirlerr(n: u64) -> f64 {
    if n == 0 {
        // ln 0! = 0 with the convention 0 ln 0 = 0.
        return -LN_SQRT_2PI;
    }
    if n <= 15 {
        let nf = n as f64;
        let lnfact: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
        return lnfact - (nf + 0.5) * nf.ln() + nf - LN_SQRT_2PI;
    }
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let nf = n as f64;
    let nn = nf * nf;
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    (nf + 0.5) * nf.ln() - nf + LN_SQRT_2PI + stirlerr(n)
}

/// Deviance term `x ln(x / m) + m - x`, evaluated without cancellation when
/// `x` is close to `m`.
pub fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln P(N = n)` for `N ~ Poisson(lambda)`, `lambda > 0`.
pub fn ln_poisson_pmf(n: u64, lambda: f64) -> f64 {
    if n == 0 {
        return -lambda;
    }
    let nf = n as f64;
    -0.5 * (2.0 * PI * nf).ln() - stirlerr(n) - bd0(nf, lambda)
}

/// Series terms beyond which the asymptotic expansion takes over.
pub const MAX_SERIES_TERMS: usize = 10_000;

/// `ln(e^{-x} I_nu(x))` for integer order `nu >= 0` and `x > 0`.
///
/// Uses the ascending series `I_nu(x) = sum_m (x/2)^{2m+nu} / (m! (m+nu)!)`.
/// With `a = x/2`, the scaled terms factor as
/// `e^{-2a} a^m/m! * a^{m+nu}/(m+nu)! = Pois(a; m) Pois(a; m+nu)`.
pub fn ln_bessel_i_scaled(nu: u32, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    ln_poisson_product_series(nu, 0.5 * x, 0.5 * x)
}

/// `ln sum_m Pois(la; m + nu) Pois(lb; m)`.
///
/// This is the Bessel series above with the prefactor
/// `e^{-(sqrt la - sqrt lb)^2} (la/lb)^{nu/2}` distributed over the terms,
/// so that `la != lb` costs no cancellation between large logarithms. Each
/// term is a product of two well-conditioned Poisson probabilities; the sum
/// is accumulated outward from the largest term, relative to that term.
pub fn ln_poisson_product_series(nu: u32, la: f64, lb: f64) -> f64 {
    debug_assert!(la > 0.0 && lb > 0.0);
    let nu64 = nu as u64;
    let ln_term = |m: u64| ln_poisson_pmf(m + nu64, la) + ln_poisson_pmf(m, lb);

    // The term ratio la lb / ((m+1)(m+nu+1)) crosses one at the peak.
    let a2 = la * lb;
    let half = nu as f64 / 2.0;
    let peak = ((a2 + half * half).sqrt() - half - 1.0).max(0.0);
    let m0 = peak.round() as u64;
    let ln_peak = ln_term(m0);

    let mut terms = Vec::with_capacity(64);
    terms.push(1.0);
    let cutoff = f64::EPSILON * 1e-3;
    let mut count = 1usize;
    let mut m = m0;
    while m > 0 {
        m -= 1;
        let t = (ln_term(m) - ln_peak).exp();
        terms.push(t);
        count += 1;
        if t < cutoff {
            break;
        }
    }
    let mut m = m0;
    loop {
        m += 1;
        let t = (ln_term(m) - ln_peak).exp();
        terms.push(t);
        count += 1;
        if t < cutoff {
            break;
        }
        if count > MAX_SERIES_TERMS {
            let gap = la.sqrt() - lb.sqrt();
            return -gap * gap + half * (la / lb).ln() + ln_bessel_i_scaled_asymptotic(nu, 2.0 * a2.sqrt());
        }
    }
    // Smallest first for the compensated sum.
    terms.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ln_peak + kahan_sum(terms).ln()
}

/// Large-argument expansion
/// `e^{-x} I_nu(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k prod_{j<=k} (4nu^2 - (2j-1)^2) / (k! (8x)^k)`,
/// truncated at its smallest term.
pub fn ln_bessel_i_scaled_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let j = (2 * k - 1) as f64;
        let next = -term * (mu - j * j) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < f64::EPSILON * sum.abs() {
            break;
        }
    }
    -0.5 * (2.0 * PI * x).ln() + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_small_and_large() {
        let mut exact = 0.0f64;
        for n in 1..=170u64 {
            exact += (n as f64).ln();
            let got = ln_factorial(n);
            assert!((got - exact).abs() <= 1e-12 * exact.max(1.0), "n={n}: {got} vs {exact}");
        }
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
    }

    #[test]
    fn poisson_pmf_normalizes() {
        for &lam in &[0.01, 0.7, 3.0, 42.0, 300.0] {
            let total: f64 = (0..2000u64).map(|n| ln_poisson_pmf(n, lam).exp()).sum();
            assert!((total - 1.0).abs() < 1e-13, "lambda={lam}: {total}");
        }
    }

    #[test]
    fn poisson_pmf_known_values() {
        // e^{-1}
        assert!((ln_poisson_pmf(0, 1.0) - (-1.0)).abs() < 1e-16);
        // 3^2 e^{-3} / 2
        let want = (9.0f64 * (-3.0f64).exp() / 2.0).ln();
        assert!((ln_poisson_pmf(2, 3.0) - want).abs() < 1e-14);
    }

    #[test]
    fn bessel_known_values() {
        // I_0(1) = 1.2660658777520082, I_1(1) = 0.5651591039924851
        let i0 = (ln_bessel_i_scaled(0, 1.0) + 1.0).exp();
        let i1 = (ln_bessel_i_scaled(1, 1.0) + 1.0).exp();
        assert!((i0 - 1.266_065_877_752_008_2).abs() < 1e-15);
        assert!((i1 - 0.565_159_103_992_485_1).abs() < 1e-15);
        // e^{-10} I_0(10) = 0.1278333371634286
        let s = ln_bessel_i_scaled(0, 10.0).exp();
        assert!((s - 0.127_833_337_163_428_6).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_agrees_with_series_for_large_argument() {
        for &nu in &[0u32, 1, 5] {
            let x = 5000.0;
            let a = ln_bessel_i_scaled(nu, x);
            let b = ln_bessel_i_scaled_asymptotic(nu, x);
            assert!((a - b).abs() < 1e-12, "nu={nu}: {a} vs {b}");
        }
    }
}
