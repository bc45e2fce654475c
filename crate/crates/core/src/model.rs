//! The MRARMA(p, q) model
//! `X_t = eps_t + <Z_{t-1}>`, `Z_{t-1} = sum_i alpha_i X_{t-i} + sum_j beta_j eps_{t-j}`,
//! with i.i.d. integer innovations and a fresh, independent rounding at
//! every step.
//!
//! Lagged values are always passed as a [`History`], which makes the time
//! orientation explicit: lag 1 is the most recent value.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, numerical, Error, Result};
use crate::innovations::InnovationModel;
use crate::rounding::{sample_split, split, split_unchecked, FractionalSplit, TwoPointDist};

/// Tolerance on `1 - |root|` used by the stationarity and invertibility checks.
pub const ROOT_TOL: f64 = 1e-10;

/// Default burn-in for simulation.
pub const DEFAULT_BURNIN: usize = 250;

/// Lagged values of a series with an explicit orientation.
#[derive(Debug, Clone, Copy)]
pub struct History<'a, T> {
    values: &'a [T],
    recent_first: bool,
}

impl<'a, T: Copy> History<'a, T> {
    /// `values[0]` is lag 1, `values[1]` lag 2, and so on.
    pub fn most_recent_first(values: &'a [T]) -> Self {
        History { values, recent_first: true }
    }

    /// `values` in time order; the last element is lag 1.
    pub fn chronological(values: &'a [T]) -> Self {
        History { values, recent_first: false }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at lag `i >= 1`.
    pub fn lag(&self, i: usize) -> T {
        assert!(i >= 1 && i <= self.values.len(), "lag {i} out of range");
        if self.recent_first {
            self.values[i - 1]
        } else {
            self.values[self.values.len() - i]
        }
    }
}

impl History<'static, f64> {
    pub fn empty() -> Self {
        History { values: &[], recent_first: true }
    }
}

/// Numeric types accepted in histories.
pub trait Real: Copy {
    fn real(self) -> f64;
}

impl Real for f64 {
    fn real(self) -> f64 {
        self
    }
}

impl Real for i64 {
    fn real(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityCheck {
    pub satisfied: bool,
    pub spectral_radius: f64,
}

/// Model order, coefficients and innovation law.
#[derive(Debug, Clone, PartialEq)]
pub struct MrarmaSpec<I> {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    innovation: I,
}

impl<I: InnovationModel> MrarmaSpec<I> {
    /// Coefficients must be finite and the highest-order coefficient of each
    /// part non-zero, so that `(p, q)` is the actual order.
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>, innovation: I) -> Result<Self> {
        if let Some(c) = alphas.iter().chain(&betas).find(|c| !c.is_finite()) {
            return Err(domain(format!("non-finite coefficient {c}")));
        }
        if alphas.last() == Some(&0.0) {
            return Err(domain("highest-order AR coefficient must be non-zero"));
        }
        if betas.last() == Some(&0.0) {
            return Err(domain("highest-order MA coefficient must be non-zero"));
        }
        Ok(MrarmaSpec { alphas, betas, innovation })
    }

    /// Pure MRAR(p).
    pub fn ar(alphas: Vec<f64>, innovation: I) -> Result<Self> {
        MrarmaSpec::new(alphas, Vec::new(), innovation)
    }

    /// i.i.d. innovations, `p = q = 0`.
    pub fn iid(innovation: I) -> Self {
        MrarmaSpec { alphas: Vec::new(), betas: Vec::new(), innovation }
    }

    /// Skips the order checks; estimators use this for trial parameters.
    pub(crate) fn from_parts(alphas: Vec<f64>, betas: Vec<f64>, innovation: I) -> Self {
        MrarmaSpec { alphas, betas, innovation }
    }

    pub fn p(&self) -> usize {
        self.alphas.len()
    }

    pub fn q(&self) -> usize {
        self.betas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn innovation(&self) -> &I {
        &self.innovation
    }

    pub fn is_pure_ar(&self) -> bool {
        self.betas.is_empty()
    }

    /// Spectral radius of the AR companion matrix; the MA part does not
    /// change the radius of the full state matrix.
    pub fn check_stationary(&self) -> StationarityCheck {
        let spectral_radius = spectral_radius(&self.alphas);
        StationarityCheck { satisfied: spectral_radius < 1.0 - ROOT_TOL, spectral_radius }
    }

    /// All roots of `1 - beta_1 z - ... - beta_q z^q` lie outside the unit circle.
    pub fn check_invertible(&self) -> bool {
        // Roots of the MA polynomial are reciprocals of the companion eigenvalues.
        spectral_radius(&self.betas) * (1.0 + ROOT_TOL) < 1.0
    }

    fn check_arity<T, U>(&self, x_hist: &History<T>, eps_hist: &History<U>) -> Result<()>
    where
        T: Copy,
        U: Copy,
    {
        if x_hist.len() < self.p() {
            return Err(Error::Arity { needed: self.p(), got: x_hist.len() });
        }
        if eps_hist.len() < self.q() {
            return Err(Error::Arity { needed: self.q(), got: eps_hist.len() });
        }
        Ok(())
    }

    /// `Z_{t-1}`, the argument of the rounding operator.
    pub fn linear_predictor<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<f64> {
        self.check_arity(&x_hist, &eps_hist)?;
        let ar: f64 = self.alphas.iter().enumerate().map(|(i, a)| a * x_hist.lag(i + 1).real()).sum();
        let ma: f64 = self.betas.iter().enumerate().map(|(j, b)| b * eps_hist.lag(j + 1).real()).sum();
        Ok(ar + ma)
    }

    /// `E[X_t | past] = mu_eps + Z_{t-1}`.
    pub fn cond_mean<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<f64> {
        Ok(self.innovation.mean() + self.linear_predictor(x_hist, eps_hist)?)
    }

    /// `Var[X_t | past] = sigma_eps^2 + frac(Z)(1 - frac(Z))`.
    pub fn cond_var<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<f64> {
        let z = self.linear_predictor(x_hist, eps_hist)?;
        Ok(self.innovation.variance() + split(z)?.rounding_variance())
    }

    /// `mu = mu_eps (1 + sum beta) / (1 - sum alpha)`.
    pub fn uncond_mean(&self) -> Result<f64> {
        let sa: f64 = self.alphas.iter().sum();
        if sa >= 1.0 {
            return Err(domain(format!("sum of AR coefficients {sa} must be below 1")));
        }
        let sb: f64 = self.betas.iter().sum();
        Ok(self.innovation.mean() * (1.0 + sb) / (1.0 - sa))
    }

    /// Conditional law of `X_t` given `X_{t-1}, ..., X_{t-p}` (pure AR only).
    pub fn transition(&self, x_hist: History<i64>) -> Result<ConditionalLaw<'_, I>> {
        if !self.is_pure_ar() {
            return Err(Error::Unsupported(
                "conditional law given observations requires q = 0; innovations are latent".into(),
            ));
        }
        let z = self.linear_predictor(x_hist, History::<f64>::empty())?;
        Ok(ConditionalLaw { rounding: TwoPointDist::from_split(split(z)?), innovation: &self.innovation })
    }

    /// `P(X_t = x | history)`.
    pub fn transition_pmf(&self, x_hist: History<i64>, x: i64) -> Result<f64> {
        Ok(self.transition(x_hist)?.pmf(x))
    }

    /// `E[s^{X_t} | history] = pgf_eps(s) pgf_<z>(s)`.
    pub fn cond_pgf(&self, x_hist: History<i64>, s: f64) -> Result<f64> {
        self.transition(x_hist)?.pgf(s)
    }

    /// Simulate with a seeded generator owned by the call.
    pub fn simulate(&self, opts: &SimOptions) -> Result<SimOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (series, innovations_used) =
            self.simulate_with_rng(opts.n, opts.burnin, &mut rng, opts.allow_nonstationary)?;
        Ok(SimOutput { series, innovations_used, seed: opts.seed, burnin: opts.burnin })
    }

    /// Iterate the recursion from a zero pre-sample history for
    /// `burnin + n` steps and keep the last `n`. Returns `(X, eps)`.
    pub fn simulate_with_rng<R: Rng + ?Sized>(
        &self,
        n: usize,
        burnin: usize,
        rng: &mut R,
        allow_nonstationary: bool,
    ) -> Result<(Vec<i64>, Vec<i64>)> {
        self.check_simulable(n, allow_nonstationary)?;
        run_recursion(self, n, burnin, rng, |z, rng| Ok(sample_split(split(z)?, rng)))
    }

    pub(crate) fn check_simulable(&self, n: usize, allow_nonstationary: bool) -> Result<()> {
        if n == 0 {
            return Err(domain("series length must be positive"));
        }
        if !allow_nonstationary {
            let st = self.check_stationary();
            if !st.satisfied {
                return Err(domain(format!("AR part is not stationary (spectral radius {:.6})", st.spectral_radius)));
            }
            if !self.check_invertible() {
                return Err(domain("MA part is not invertible"));
            }
        }
        Ok(())
    }

    /// Mixed covariances `c(s) = Cov[X_r, eps_{r-s}]` for `s = 0..=max_s`.
    pub fn mixed_covariances(&self, max_s: usize) -> Vec<f64> {
        let s2 = self.innovation.variance();
        let mut c = vec![0.0; max_s + 1];
        c[0] = s2;
        for s in 1..=max_s {
            let ar: f64 = (1..=s.min(self.p())).map(|i| self.alphas[i - 1] * c[s - i]).sum();
            let ma = if s <= self.q() { self.betas[s - 1] * s2 } else { 0.0 };
            c[s] = ar + ma;
        }
        c
    }

    /// Autocovariances `gamma(0..=max_lag)` given the value of the
    /// unidentified term `E[frac(Z)(1 - frac(Z))]`, which lies in `[0, 1/4]`.
    ///
    /// Solves the lag-`1..=p` Yule–Walker equations
    /// `gamma(h) = sum_i alpha_i gamma(h-i) + sum_{j>=h} beta_j c(j-h)` jointly
    /// with the variance decomposition
    /// `gamma(0) = Var[Z] + sigma_eps^2 + rounding_var`, then extends by the
    /// recursion for lags above `p`.
    pub fn autocovariances(&self, max_lag: usize, rounding_var: f64) -> Result<Vec<f64>> {
        if !self.check_stationary().satisfied {
            return Err(numerical("autocovariances undefined for a non-stationary AR part"));
        }
        let (p, q) = (self.p(), self.q());
        let s2 = self.innovation.variance();
        let c = self.mixed_covariances(max_lag.max(p).max(q) + 1);
        let cm = |s: isize| if s < 0 { 0.0 } else { c[s as usize] };
        let a = &self.alphas;
        let b = &self.betas;

        let mut m = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut rhs = DVector::<f64>::zeros(p + 1);
        // Lag 0: gamma(0) - Var[AR part] = cross terms + MA variance + sigma^2 + rounding.
        m[(0, 0)] += 1.0;
        for i in 1..=p {
            for k in 1..=p {
                m[(0, i.abs_diff(k))] -= a[i - 1] * a[k - 1];
            }
        }
        let mut cross = 0.0;
        for i in 1..=p {
            for j in i..=q {
                cross += a[i - 1] * b[j - 1] * c[j - i];
            }
        }
        let ma_var: f64 = b.iter().map(|bj| bj * bj).sum::<f64>() * s2;
        rhs[0] = 2.0 * cross + ma_var + s2 + rounding_var;
        for h in 1..=p {
            m[(h, h)] += 1.0;
            for i in 1..=p {
                m[(h, h.abs_diff(i))] -= a[i - 1];
            }
            rhs[h] = (1..=q).map(|j| b[j - 1] * cm(j as isize - h as isize)).sum();
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(|| numerical("singular Yule–Walker system"))?;

        let mut gamma = vec![0.0; max_lag.max(p) + 1];
        gamma[..=p].copy_from_slice(sol.as_slice());
        for h in p + 1..gamma.len() {
            let ar: f64 = (1..=p).map(|i| a[i - 1] * gamma[h - i]).sum();
            let ma: f64 = (1..=q).map(|j| b[j - 1] * cm(j as isize - h as isize)).sum();
            gamma[h] = ar + ma;
        }
        gamma.truncate(max_lag + 1);
        Ok(gamma)
    }

    /// Autocovariance envelopes from the two extreme values (0 and 1/4) of
    /// the rounding-variance term.
    pub fn yule_walker(&self, max_lag: usize) -> Result<YuleWalker> {
        if max_lag == 0 {
            return Err(domain("max_lag must be positive"));
        }
        let lower = self.autocovariances(max_lag, 0.0)?;
        let upper = self.autocovariances(max_lag, 0.25)?;
        let acf_lower = lower.iter().map(|g| g / lower[0]).collect();
        let acf_upper = upper.iter().map(|g| g / upper[0]).collect();
        Ok(YuleWalker { lower, upper, acf_lower, acf_upper })
    }
}

/// Autocovariance envelopes. For pure AR models the two acf vectors agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YuleWalker {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub acf_lower: Vec<f64>,
    pub acf_upper: Vec<f64>,
}

/// One-step conditional law of a pure AR model: innovation shifted by an
/// independent two-point rounding.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalLaw<'a, I> {
    rounding: TwoPointDist,
    innovation: &'a I,
}

impl<I: InnovationModel> ConditionalLaw<'_, I> {
    pub fn rounding(&self) -> TwoPointDist {
        self.rounding
    }

    /// `(1 - frac) P(eps = x - floor) + frac P(eps = x - floor - 1)`.
    pub fn pmf(&self, x: i64) -> f64 {
        let k = x - self.rounding.lower_value;
        let mut p = self.rounding.lower_prob * self.innovation.pmf(k);
        if self.rounding.upper_prob > 0.0 {
            p += self.rounding.upper_prob * self.innovation.pmf(k - 1);
        }
        p
    }

    pub fn mean(&self) -> f64 {
        self.innovation.mean() + self.rounding.mean()
    }

    pub fn variance(&self) -> f64 {
        self.innovation.variance() + self.rounding.variance()
    }

    pub fn pgf(&self, s: f64) -> Result<f64> {
        check_pgf_arg(s)?;
        Ok(self.innovation.pgf(s) * self.rounding.pgf(s))
    }
}

pub(crate) fn check_pgf_arg(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(domain(format!("pgf argument {s} outside (0, 1]")));
    }
    Ok(())
}

/// Spectral radius of the companion matrix of `1 - c_1 z - ... - c_k z^k`.
pub fn spectral_radius(coefs: &[f64]) -> f64 {
    match coefs.len() {
        0 => 0.0,
        1 => coefs[0].abs(),
        k => {
            let mut a = DMatrix::<f64>::zeros(k, k);
            for (i, c) in coefs.iter().enumerate() {
                a[(0, i)] = *c;
            }
            for i in 1..k {
                a[(i, i - 1)] = 1.0;
            }
            a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub n: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Simulate even if the spec fails the stationarity/invertibility checks.
    pub allow_nonstationary: bool,
}

impl SimOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        SimOptions { n, burnin: DEFAULT_BURNIN, seed, allow_nonstationary: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub series: Vec<i64>,
    pub innovations_used: Vec<i64>,
    pub seed: u64,
    pub burnin: usize,
}

/// Shared driver for the base and star recursions; `round` maps the
/// current linear predictor (recomputed by the caller if it needs the
/// individual terms) to the rounded increment.
pub(crate) fn run_recursion<I, R, F>(
    spec: &MrarmaSpec<I>,
    n: usize,
    burnin: usize,
    rng: &mut R,
    mut step: F,
) -> Result<(Vec<i64>, Vec<i64>)>
where
    I: InnovationModel,
    R: Rng + ?Sized,
    F: FnMut(f64, &mut R) -> Result<i64>,
{
    run_recursion_terms(spec, n, burnin, rng, |terms, rng| step(terms.iter().sum(), rng))
}

/// Like [`run_recursion`], but hands the individual `alpha_i X_{t-i}` and
/// `beta_j eps_{t-j}` terms to `step`.
pub(crate) fn run_recursion_terms<I, R, F>(
    spec: &MrarmaSpec<I>,
    n: usize,
    burnin: usize,
    rng: &mut R,
    mut step: F,
) -> Result<(Vec<i64>, Vec<i64>)>
where
    I: InnovationModel,
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> Result<i64>,
{
    let (p, q) = (spec.p(), spec.q());
    let total = burnin + n;
    let mut xs: Vec<i64> = Vec::with_capacity(total);
    let mut es: Vec<i64> = Vec::with_capacity(total);
    let mut terms = vec![0.0; p + q];
    for t in 0..total {
        for i in 1..=p {
            terms[i - 1] = if t >= i { spec.alphas[i - 1] * xs[t - i] as f64 } else { 0.0 };
        }
        for j in 1..=q {
            terms[p + j - 1] = if t >= j { spec.betas[j - 1] * es[t - j] as f64 } else { 0.0 };
        }
        if terms.iter().any(|v| !v.is_finite()) {
            return Err(numerical(format!("simulated path diverged at step {t}")));
        }
        let rounded = step(&terms, rng)?;
        let eps = spec.innovation.sample(rng);
        xs.push(eps + rounded);
        es.push(eps);
    }
    Ok((xs.split_off(burnin), es.split_off(burnin)))
}

/// Fractional split of the linear predictor for a chronological AR window
/// ending just before index `t`; used by the likelihood hot loop.
#[inline]
pub(crate) fn ar_split(alphas: &[f64], series: &[i64], t: usize) -> FractionalSplit {
    let z: f64 = alphas.iter().enumerate().map(|(i, a)| a * series[t - 1 - i] as f64).sum();
    split_unchecked(z)
}
