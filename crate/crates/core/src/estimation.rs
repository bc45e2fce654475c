//! Parameter estimation and model selection.
//!
//! Pure autoregressions can be fitted by moments (Yule–Walker), conditional
//! least squares or conditional maximum likelihood with Skellam innovations.
//! Mixed models go through an iterated three-stage least-squares regression
//! since their innovations are latent.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numerical, Error, Result};
use crate::innovations::{InnovationModel, Skellam};
use crate::model::{ar_split, spectral_radius, MrarmaSpec};
use crate::optim::{bfgs, nelder_mead, numerical_hessian, BfgsOptions, NelderMeadOptions};
use crate::pmf::kahan_sum;
use crate::rounding::split_unchecked;

/// Floor applied to transition probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

/// Smallest Skellam rate reported by the moment-based estimators.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Stationarity margin enforced on MLE trial points.
pub const MLE_BARRIER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    #[serde(alias = "mm")]
    Mm,
    #[serde(alias = "cls")]
    Cls,
    #[serde(alias = "mle")]
    Mle,
    #[serde(alias = "ls3", alias = "3sls")]
    Ls3,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mm => "MM",
            Method::Cls => "CLS",
            Method::Mle => "MLE",
            Method::Ls3 => "LS3",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mm" => Ok(Method::Mm),
            "cls" => Ok(Method::Cls),
            "mle" => Ok(Method::Mle),
            "ls3" | "3sls" => Ok(Method::Ls3),
            other => Err(Error::Validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Outcome of a fit. Estimates are keyed `alpha1.., beta1.., mu_eps,
/// sigma2_eps, lambda1, lambda2`; MLE reports only the coefficients and
/// Skellam rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub estimates: IndexMap<String, f64>,
    pub se: Option<IndexMap<String, f64>>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn alpha_name(i: usize) -> String {
    format!("alpha{i}")
}

pub fn beta_name(j: usize) -> String {
    format!("beta{j}")
}

impl FitResult {
    fn new(method: Method, p: usize, q: usize, n: usize) -> Self {
        FitResult {
            method,
            p,
            q,
            n,
            estimates: IndexMap::new(),
            se: None,
            loglik: None,
            aic: None,
            bic: None,
            converged: true,
            iterations: 0,
            warnings: Vec::new(),
        }
    }

    /// Best point of an MLE run that failed to converge, as carried by
    /// [`Error::NonConvergence`]; no standard errors are attached.
    pub fn mle_unconverged(p: usize, n: usize, best: &[f64], loglik: f64, iterations: usize) -> Result<Self> {
        if best.len() != p + 2 {
            return Err(Error::Arity { needed: p + 2, got: best.len() });
        }
        let mut fit = FitResult::new(Method::Mle, p, 0, n);
        fit.set_coefficients(&best[..p], &[]);
        fit.estimates.insert("lambda1".into(), best[p]);
        fit.estimates.insert("lambda2".into(), best[p + 1]);
        fit.loglik = Some(loglik);
        let ic = aic_bic(loglik, n, p, p + 2);
        fit.aic = Some(ic.aic);
        fit.bic = Some(ic.bic);
        fit.converged = false;
        fit.iterations = iterations;
        Ok(fit)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.estimates.get(name).copied()
    }

    pub fn alphas(&self) -> Vec<f64> {
        (1..=self.p).map(|i| self.estimates[&alpha_name(i)]).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        (1..=self.q).map(|j| self.estimates[&beta_name(j)]).collect()
    }

    pub fn skellam(&self) -> Result<Skellam> {
        match (self.get("lambda1"), self.get("lambda2")) {
            (Some(l1), Some(l2)) => Skellam::new(l1, l2),
            _ => Err(Error::Validation("fit carries no Skellam rates".into())),
        }
    }

    /// The fitted model; orders are taken as fitted even if a top
    /// coefficient happens to be zero.
    pub fn spec(&self) -> Result<MrarmaSpec<Skellam>> {
        Ok(MrarmaSpec::from_parts(self.alphas(), self.betas(), self.skellam()?))
    }

    fn set_skellam_from_moments(&mut self, mu: f64, sigma2: f64) {
        self.estimates.insert("mu_eps".into(), mu);
        self.estimates.insert("sigma2_eps".into(), sigma2);
        for (name, v) in [("lambda1", 0.5 * (sigma2 + mu)), ("lambda2", 0.5 * (sigma2 - mu))] {
            let v = if v < LAMBDA_FLOOR || !v.is_finite() {
                self.warnings.push(format!("{name} estimate {v} clipped to {LAMBDA_FLOOR:e}"));
                LAMBDA_FLOOR
            } else {
                v
            };
            self.estimates.insert(name.into(), v);
        }
    }

    fn set_coefficients(&mut self, alphas: &[f64], betas: &[f64]) {
        for (i, a) in alphas.iter().enumerate() {
            self.estimates.insert(alpha_name(i + 1), *a);
        }
        for (j, b) in betas.iter().enumerate() {
            self.estimates.insert(beta_name(j + 1), *b);
        }
    }
}

fn require_len(series: &[i64], needed: usize) -> Result<()> {
    if series.len() < needed {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than the required {needed}",
            series.len()
        )));
    }
    Ok(())
}

pub fn sample_mean(series: &[i64]) -> f64 {
    kahan_sum(series.iter().map(|&x| x as f64)) / series.len() as f64
}

/// `gamma_hat(h) = (1/n) sum_t (x_t - xbar)(x_{t+h} - xbar)` for `h = 0..=max_lag`.
pub fn sample_acvf(series: &[i64], max_lag: usize) -> Result<Vec<f64>> {
    require_len(series, max_lag + 2)?;
    let n = series.len();
    let m = sample_mean(series);
    let d: Vec<f64> = series.iter().map(|&x| x as f64 - m).collect();
    Ok((0..=max_lag).map(|h| kahan_sum((0..n - h).map(|t| d[t] * d[t + h])) / n as f64).collect())
}

/// Least squares via a thin QR decomposition; rejects rank-deficient designs.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if diag_max == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * diag_max) {
        return Err(numerical("collinear regression design"));
    }
    let qty = qr.q().tr_mul(y);
    r.solve_upper_triangular(&qty).ok_or_else(|| numerical("singular triangular factor"))
}

/// Mean of `frac(z)(1 - frac(z))` over fitted linear predictors.
fn mean_rounding_variance(z: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = z.map(|z| split_unchecked(z).rounding_variance()).collect();
    kahan_sum(v.iter().copied()) / v.len() as f64
}

/// Method of moments: Yule–Walker for the coefficients, the mean equation
/// for `mu_eps`, and the lower-envelope variance decomposition for
/// `sigma_eps^2`.
pub fn fit_mm_mrar(series: &[i64], p: usize) -> Result<FitResult> {
    require_len(series, 10 * (p + 1))?;
    let g = sample_acvf(series, p)?;
    if g[0] <= 0.0 {
        return Err(numerical("series has zero sample variance"));
    }
    let alphas = if p == 0 {
        Vec::new()
    } else {
        let gamma = DMatrix::from_fn(p, p, |i, j| g[i.abs_diff(j)]);
        let rhs = DVector::from_iterator(p, g[1..=p].iter().copied());
        gamma
            .lu()
            .solve(&rhs)
            .filter(|a| a.iter().all(|v| v.is_finite()))
            .ok_or_else(|| numerical("singular Yule–Walker matrix"))?
            .as_slice()
            .to_vec()
    };
    let mu = sample_mean(series) * (1.0 - alphas.iter().sum::<f64>());
    let sigma2 = g[0] - alphas.iter().zip(&g[1..]).map(|(a, g)| a * g).sum::<f64>();
    let mut fit = FitResult::new(Method::Mm, p, 0, series.len());
    fit.set_coefficients(&alphas, &[]);
    fit.set_skellam_from_moments(mu, sigma2);
    Ok(fit)
}

/// Conditional least squares: regression of `x_t` on an intercept and
/// `x_{t-1}, ..., x_{t-p}`. The innovation variance is the residual mean
/// square minus the average rounding variance of the fitted predictors.
pub fn fit_cls_mrar(series: &[i64], p: usize) -> Result<FitResult> {
    require_len(series, 10 * (p + 1))?;
    let n = series.len();
    let rows = n - p;
    let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { series[p + r - c] as f64 });
    let y = DVector::from_iterator(rows, series[p..].iter().map(|&v| v as f64));
    let coef = least_squares(&x, &y)?;
    let resid = &y - &x * &coef;
    let mse = kahan_sum(resid.iter().map(|e| e * e)) / rows as f64;
    let alphas: Vec<f64> = coef.iter().skip(1).copied().collect();
    let rv = if p == 0 { 0.0 } else { mean_rounding_variance((p..n).map(|t| ar_split_value(&alphas, series, t))) };
    let mut fit = FitResult::new(Method::Cls, p, 0, n);
    fit.set_coefficients(&alphas, &[]);
    fit.set_skellam_from_moments(coef[0], mse - rv);
    Ok(fit)
}

fn ar_split_value(alphas: &[f64], series: &[i64], t: usize) -> f64 {
    alphas.iter().enumerate().map(|(i, a)| a * series[t - 1 - i] as f64).sum()
}

/// Per-observation conditional log-probabilities `ln P(X_t | X_{t-1..t-p})`
/// for `t = p+1..n`.
pub fn loglik_terms<I: InnovationModel>(series: &[i64], alphas: &[f64], innovation: &I) -> Result<Vec<f64>> {
    let p = alphas.len();
    if let Some(a) = alphas.iter().find(|a| !a.is_finite()) {
        return Err(domain(format!("non-finite coefficient {a}")));
    }
    require_len(series, p + 1)?;
    let splits: Vec<_> = (p..series.len()).map(|t| ar_split(alphas, series, t)).collect();
    // Innovation values needed are x_t - floor(z) and one below.
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for (s, &x) in splits.iter().zip(&series[p..]) {
        lo = lo.min(x - s.floor - 1);
        hi = hi.max(x - s.floor);
    }
    let table = innovation.pmf_on(crate::pmf::IntWindow::new(lo, hi));
    Ok(splits
        .iter()
        .zip(&series[p..])
        .map(|(s, &x)| {
            let k = x - s.floor;
            let prob = (1.0 - s.frac) * table.pmf(k) + s.frac * table.pmf(k - 1);
            prob.max(LOG_FLOOR).ln()
        })
        .collect())
}

/// Conditional log-likelihood `sum_{t>p} ln P(X_t | X_{t-1}, ..., X_{t-p})`.
pub fn loglik_mrar<I: InnovationModel>(series: &[i64], alphas: &[f64], innovation: &I) -> Result<f64> {
    Ok(kahan_sum(loglik_terms(series, alphas, innovation)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoCriteria {
    pub aic: f64,
    pub bic: f64,
}

/// AIC and BIC from the corrected log-likelihood `n/(n-p) * loglik`; BIC
/// uses `ln n`. Requires `n > p`.
pub fn aic_bic(loglik: f64, n: usize, p: usize, k: usize) -> InfoCriteria {
    assert!(n > p, "need n > p");
    let corrected = n as f64 / (n - p) as f64 * loglik;
    InfoCriteria { aic: -2.0 * corrected + 2.0 * k as f64, bic: -2.0 * corrected + k as f64 * (n as f64).ln() }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MleOptions {
    pub bfgs: BfgsOptions,
    pub nelder_mead: NelderMeadOptions,
}

/// `-loglik` on the natural scale `(alpha_1..alpha_p, lambda1, lambda2)`,
/// `+inf` outside the parameter space.
fn neg_loglik_natural(series: &[i64], theta: &[f64]) -> f64 {
    let p = theta.len() - 2;
    let (l1, l2) = (theta[p], theta[p + 1]);
    if spectral_radius(&theta[..p]) >= 1.0 - MLE_BARRIER {
        return f64::INFINITY;
    }
    let Ok(innov) = Skellam::new(l1, l2) else {
        return f64::INFINITY;
    };
    match loglik_mrar(series, &theta[..p], &innov) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    }
}

fn starting_point(series: &[i64], p: usize) -> Result<Vec<f64>> {
    let cls = fit_cls_mrar(series, p)?;
    let mut alphas = cls.alphas();
    while spectral_radius(&alphas) >= 0.95 {
        alphas.iter_mut().for_each(|a| *a *= 0.9);
    }
    let mu = cls.get("mu_eps").unwrap();
    // Keep the rates well inside the domain; the optimizer moves from there.
    let sigma2 = cls.get("sigma2_eps").unwrap().max(mu.abs() + 0.02);
    alphas.push((0.5 * (sigma2 + mu)).max(0.01));
    alphas.push((0.5 * (sigma2 - mu)).max(0.01));
    Ok(alphas)
}

/// Conditional MLE for Skellam-MRAR(p).
///
/// `start` is on the natural scale `(alpha_1..alpha_p, lambda1, lambda2)`;
/// by default CLS estimates are used. The rates are optimized on the log
/// scale and trial points with spectral radius `>= 1 - 1e-8` are rejected.
pub fn fit_mle_mrar(series: &[i64], p: usize, start: Option<&[f64]>) -> Result<FitResult> {
    fit_mle_mrar_with(series, p, start, &MleOptions::default())
}

pub fn fit_mle_mrar_with(series: &[i64], p: usize, start: Option<&[f64]>, opts: &MleOptions) -> Result<FitResult> {
    require_len(series, 10 * (p + 2))?;
    let start = match start {
        Some(s) if s.len() == p + 2 => s.to_vec(),
        Some(s) => return Err(Error::Arity { needed: p + 2, got: s.len() }),
        None => starting_point(series, p)?,
    };
    if start[p] <= 0.0 || start[p + 1] <= 0.0 {
        return Err(domain("starting Skellam rates must be positive"));
    }
    let to_natural = |theta: &[f64]| -> Vec<f64> {
        let mut v = theta.to_vec();
        v[p] = theta[p].exp();
        v[p + 1] = theta[p + 1].exp();
        v
    };
    let objective = |theta: &[f64]| neg_loglik_natural(series, &to_natural(theta));
    let mut theta0 = start.clone();
    theta0[p] = start[p].ln();
    theta0[p + 1] = start[p + 1].ln();

    let first = bfgs(objective, &theta0, &opts.bfgs);
    let mut iterations = first.iterations;
    let best = if first.converged {
        first
    } else {
        let from = if first.f.is_finite() { first.x.clone() } else { theta0.clone() };
        let second = nelder_mead(objective, &from, &opts.nelder_mead);
        iterations += second.iterations;
        let better = if second.f <= first.f { second.clone() } else { first.clone() };
        if !second.converged {
            return Err(Error::NonConvergence { best: to_natural(&better.x), loglik: -better.f, iterations });
        }
        better
    };
    let natural = to_natural(&best.x);
    let loglik = -best.f;
    let n = series.len();
    let mut fit = FitResult::new(Method::Mle, p, 0, n);
    fit.set_coefficients(&natural[..p], &[]);
    fit.estimates.insert("lambda1".into(), natural[p]);
    fit.estimates.insert("lambda2".into(), natural[p + 1]);
    fit.loglik = Some(loglik);
    let ic = aic_bic(loglik, n, p, p + 2);
    fit.aic = Some(ic.aic);
    fit.bic = Some(ic.bic);
    fit.iterations = iterations;
    match mle_se(series, p, &natural) {
        Ok(se) => fit.se = Some(se),
        Err(e) => fit.warnings.push(format!("standard errors unavailable: {e}")),
    }
    Ok(fit)
}

/// Standard errors from the inverse of a (negative log-likelihood) Hessian.
pub fn se_from_hessian(h: &DMatrix<f64>) -> Result<Vec<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::HessianNotPositiveDefinite);
    }
    let chol = h.clone().cholesky().ok_or(Error::HessianNotPositiveDefinite)?;
    let inv = chol.inverse();
    inv.diagonal()
        .iter()
        .map(|&v| if v > 0.0 { Ok(v.sqrt()) } else { Err(Error::HessianNotPositiveDefinite) })
        .collect()
}

/// Approximate standard errors at an MLE `(alpha_1..alpha_p, lambda1,
/// lambda2)` from a central-difference Hessian of `-loglik` on the natural
/// scale, with step `max(1e-4, 1e-4 |theta_i|)`.
///
/// The log-likelihood has kinks in the coefficients wherever a linear
/// predictor crosses an integer, and optimizers tend to stop on one. The
/// Hessian is therefore taken of the likelihood with each observation's
/// rounding floor held at its value at the estimate, which is the smooth
/// piece the estimate lies on. Away from kinks the two coincide.
pub fn mle_se(series: &[i64], p: usize, estimates: &[f64]) -> Result<IndexMap<String, f64>> {
    mle_se_with(series, p, estimates, true)
}

/// As [`mle_se`]; `freeze_floors = false` differentiates the raw
/// likelihood, kinks included.
pub fn mle_se_with(series: &[i64], p: usize, estimates: &[f64], freeze_floors: bool) -> Result<IndexMap<String, f64>> {
    if estimates.len() != p + 2 {
        return Err(Error::Arity { needed: p + 2, got: estimates.len() });
    }
    require_len(series, p + 1)?;
    let steps: Vec<f64> = estimates.iter().map(|v| (1e-4 * v.abs()).max(1e-4)).collect();
    let h = if freeze_floors {
        let floors: Vec<i64> = (p..series.len()).map(|t| ar_split(&estimates[..p], series, t).floor).collect();
        let mut f = |theta: &[f64]| neg_loglik_frozen(series, theta, &floors);
        numerical_hessian(&mut f, estimates, &steps)
    } else {
        let mut f = |theta: &[f64]| neg_loglik_natural(series, theta);
        numerical_hessian(&mut f, estimates, &steps)
    };
    let se = se_from_hessian(&h)?;
    let mut out = IndexMap::new();
    for (i, s) in se[..p].iter().enumerate() {
        out.insert(alpha_name(i + 1), *s);
    }
    out.insert("lambda1".into(), se[p]);
    out.insert("lambda2".into(), se[p + 1]);
    Ok(out)
}

/// `-loglik` with the rounding floor of observation `t` fixed to
/// `floors[t - p]`, i.e. the two-point weights extended linearly.
fn neg_loglik_frozen(series: &[i64], theta: &[f64], floors: &[i64]) -> f64 {
    let p = theta.len() - 2;
    let Ok(innov) = Skellam::new(theta[p], theta[p + 1]) else {
        return f64::INFINITY;
    };
    let alphas = &theta[..p];
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for (f, &x) in floors.iter().zip(&series[p..]) {
        lo = lo.min(x - f - 1);
        hi = hi.max(x - f);
    }
    let table = innov.pmf_on(crate::pmf::IntWindow::new(lo, hi));
    let terms = (p..series.len()).map(|t| {
        let fl = floors[t - p];
        let w = ar_split_value(alphas, series, t) - fl as f64;
        let k = series[t] - fl;
        let prob = (1.0 - w) * table.pmf(k) + w * table.pmf(k - 1);
        if prob > 0.0 {
            prob.ln()
        } else {
            f64::NEG_INFINITY
        }
    });
    -kahan_sum(terms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ls3Options {
    pub max_iter: usize,
    pub tol: f64,
    /// Order of the stage-one long autoregression; `floor(sqrt(n))` by default.
    pub stage1_order: Option<usize>,
}

impl Default for Ls3Options {
    fn default() -> Self {
        Ls3Options { max_iter: 50, tol: 1e-8, stage1_order: None }
    }
}

/// Lower band of the Cholesky factor of a banded symmetric Toeplitz matrix
/// with first-row entries `acov[0..=q]`; `l[i][k]` holds `L(i, i - k)`.
fn banded_cholesky(acov: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
    let q = acov.len() - 1;
    let mut l = vec![vec![0.0; q + 1]; n];
    for i in 0..n {
        for j in i.saturating_sub(q)..=i {
            let mut s = acov[i - j];
            for k in i.saturating_sub(q)..j {
                s -= l[i][i - k] * l[j][j - k];
            }
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return None;
                }
                l[i][0] = s.sqrt();
            } else {
                l[i][i - j] = s / l[j][0];
            }
        }
    }
    Some(l)
}

/// Solves `L z = y` for a banded lower factor, column by column.
fn banded_forward(l: &[Vec<f64>], y: &DMatrix<f64>) -> DMatrix<f64> {
    let q = l[0].len() - 1;
    let mut z = y.clone();
    for c in 0..y.ncols() {
        for i in 0..y.nrows() {
            let mut s = y[(i, c)];
            for j in i.saturating_sub(q)..i {
                s -= l[i][i - j] * z[(j, c)];
            }
            z[(i, c)] = s / l[i][0];
        }
    }
    z
}

/// Regression of `x_t - e_t` on `1, x_{t-1..t-p}, e_{t-1..t-q}` over `t0..n`.
fn ls3_design(series: &[i64], e: &[f64], p: usize, q: usize, t0: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows = series.len() - t0;
    let x = DMatrix::from_fn(rows, 1 + p + q, |r, c| {
        let t = t0 + r;
        if c == 0 {
            1.0
        } else if c <= p {
            series[t - c] as f64
        } else {
            e[t - (c - p)]
        }
    });
    let y = DVector::from_fn(rows, |r, _| series[t0 + r] as f64 - e[t0 + r]);
    (x, y)
}

/// Iterated three-stage least squares for MRARMA(p, q), `q >= 1`.
pub fn fit_3sls_mrarma(series: &[i64], p: usize, q: usize, opts: &Ls3Options) -> Result<FitResult> {
    if q == 0 {
        return Err(domain("three-stage LS needs q >= 1; use CLS for pure autoregressions"));
    }
    let n = series.len();
    let m = opts.stage1_order.unwrap_or((n as f64).sqrt().floor() as usize);
    if m == 0 || 4 * m >= n {
        return Err(Error::InsufficientData(format!("stage-one order {m} is not below n/4 = {}", n / 4)));
    }
    let t0 = m + p.max(q);
    if n - t0 < 4 * (1 + p + q) {
        return Err(Error::InsufficientData(format!("only {} usable observations", n - t0)));
    }

    // Stage 1: long autoregression.
    let x1 = DMatrix::from_fn(n - m, m + 1, |r, c| if c == 0 { 1.0 } else { series[m + r - c] as f64 });
    let y1 = DVector::from_iterator(n - m, series[m..].iter().map(|&v| v as f64));
    let b1 = least_squares(&x1, &y1)?;
    let r1 = &y1 - &x1 * &b1;
    let mut e = vec![0.0; n];
    e[m..].copy_from_slice(r1.as_slice());

    let mut fit = FitResult::new(Method::Ls3, p, q, n);
    let mut coef: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // Stage 2: ordinary LS.
        let (x, y) = ls3_design(series, &e, p, q, t0);
        let b2 = least_squares(&x, &y)?;
        // Stage 3: GLS with MA(q) error covariance from the stage-2 betas.
        let mut beta = vec![1.0];
        beta.extend(b2.iter().skip(1 + p));
        let acov: Vec<f64> = (0..=q).map(|h| (0..=q - h).map(|j| beta[j] * beta[j + h]).sum()).collect();
        let b3 = match banded_cholesky(&acov, x.nrows()) {
            Some(l) => {
                let xw = banded_forward(&l, &x);
                let yw = banded_forward(&l, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
                least_squares(&xw, &DVector::from_column_slice(yw.as_slice()))?
            }
            None => {
                fit.warnings.push("GLS covariance not positive definite; kept stage-2 estimates".into());
                b2
            }
        };
        let change = coef.as_ref().map(|c| (c - &b3).amax());
        coef = Some(b3.clone());
        if matches!(change, Some(d) if d < opts.tol) {
            converged = true;
            break;
        }
        let betas: Vec<f64> = b3.iter().skip(1 + p).copied().collect();
        if spectral_radius(&betas) >= 1.0 {
            fit.warnings.push("MA part not invertible; stopped refining residuals".into());
            break;
        }
        // Refresh residuals by the ARMA recursion with the current estimates.
        let mut fresh = vec![0.0; n];
        for t in p..n {
            let mut v = series[t] as f64 - b3[0];
            for i in 1..=p {
                v -= b3[i] * series[t - i] as f64;
            }
            for j in 1..=q.min(t) {
                v -= b3[p + j] * fresh[t - j];
            }
            fresh[t] = v;
        }
        e = fresh;
    }
    let b = coef.expect("at least one iteration");
    let alphas: Vec<f64> = b.iter().skip(1).take(p).copied().collect();
    let betas: Vec<f64> = b.iter().skip(1 + p).copied().collect();
    let sum_beta: f64 = betas.iter().sum();
    let mu = b[0] / (1.0 + sum_beta);
    let resid = &e[t0..];
    let rmean = kahan_sum(resid.iter().copied()) / resid.len() as f64;
    let rvar = kahan_sum(resid.iter().map(|v| (v - rmean).powi(2))) / resid.len() as f64;
    let rv = mean_rounding_variance((t0..n).map(|t| {
        let ar: f64 = (1..=p).map(|i| alphas[i - 1] * series[t - i] as f64).sum();
        let ma: f64 = (1..=q).map(|j| betas[j - 1] * (e[t - j] + mu)).sum();
        ar + ma
    }));
    fit.set_coefficients(&alphas, &betas);
    fit.set_skellam_from_moments(mu, rvar - rv);
    fit.converged = converged;
    fit.iterations = iterations;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimOptions;

    fn sim(alphas: Vec<f64>, l1: f64, l2: f64, n: usize, seed: u64) -> Vec<i64> {
        let spec = MrarmaSpec::ar(alphas, Skellam::new(l1, l2).unwrap()).unwrap();
        spec.simulate(&SimOptions::new(n, seed)).unwrap().series
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Mm, Method::Cls, Method::Mle, Method::Ls3] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn acvf_small_cases() {
        let alt: Vec<i64> = (0..100).map(|t| if t % 2 == 0 { 1 } else { -1 }).collect();
        let g = sample_acvf(&alt, 2).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert!((g[1] + 0.99).abs() < 1e-15);
        assert!(sample_acvf(&[1, 2], 1).is_err());
    }

    #[test]
    fn aic_bic_arithmetic() {
        let ic = aic_bic(-100.0, 100, 0, 2);
        assert!((ic.aic - 204.0).abs() < 1e-12);
        assert!((ic.bic - (200.0 + 2.0 * 100f64.ln())).abs() < 1e-12);
        let a = aic_bic(-100.0, 240, 2, 3);
        assert!((a.aic - (200.0 * 240.0 / 238.0 + 6.0)).abs() < 1e-12);
        assert!((aic_bic(-50.0, 80, 1, 4).aic - aic_bic(-50.0, 80, 1, 3).aic - 2.0).abs() < 1e-12);
    }

    #[test]
    fn iid_mean_estimates_agree() {
        let x = sim(vec![], 1.5, 0.5, 2000, 5);
        let xbar = sample_mean(&x);
        let mm = fit_mm_mrar(&x, 0).unwrap();
        let cls = fit_cls_mrar(&x, 0).unwrap();
        let mle = fit_mle_mrar(&x, 0, None).unwrap();
        assert!((mm.get("mu_eps").unwrap() - xbar).abs() < 1e-8);
        assert!((cls.get("mu_eps").unwrap() - xbar).abs() < 1e-8);
        let mle_mu = mle.get("lambda1").unwrap() - mle.get("lambda2").unwrap();
        assert!((mle_mu - xbar).abs() < 1e-5, "{mle_mu} vs {xbar}");
    }

    #[test]
    fn cls_matches_normal_equations() {
        let x = sim(vec![0.6, -0.3], 1.5, 0.5, 500, 9);
        let fit = fit_cls_mrar(&x, 2).unwrap();
        // Normal equations X'X b = X'y accumulated directly.
        let mut xtx = [[0.0f64; 3]; 3];
        let mut xty = [0.0f64; 3];
        for t in 2..x.len() {
            let row = [1.0, x[t - 1] as f64, x[t - 2] as f64];
            for i in 0..3 {
                xty[i] += row[i] * x[t] as f64;
                for j in 0..3 {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        let a = DMatrix::from_fn(3, 3, |i, j| xtx[i][j]);
        let b = a.lu().solve(&DVector::from_row_slice(&xty)).unwrap();
        assert!((fit.get("mu_eps").unwrap() - b[0]).abs() < 1e-10);
        assert!((fit.get("alpha1").unwrap() - b[1]).abs() < 1e-10);
        assert!((fit.get("alpha2").unwrap() - b[2]).abs() < 1e-10);
    }

    #[test]
    fn constant_series_is_rejected() {
        let x = vec![3i64; 100];
        assert!(matches!(fit_mm_mrar(&x, 1), Err(Error::Numerical(_))));
        assert!(matches!(fit_cls_mrar(&x, 1), Err(Error::Numerical(_))));
        assert!(matches!(fit_mm_mrar(&x[..5], 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn negative_rates_are_clipped_with_warning() {
        // Variance far below |mean|: no Skellam law fits.
        let x: Vec<i64> = (0..100).map(|t| 5 + (t % 2)).collect();
        let fit = fit_mm_mrar(&x, 0).unwrap();
        assert_eq!(fit.get("lambda2").unwrap(), LAMBDA_FLOOR);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn loglik_matches_enumeration() {
        let e = Skellam::new(0.8, 1.1).unwrap();
        let x = sim(vec![0.35, -0.2], 0.8, 1.1, 60, 3);
        let alphas = [0.35, -0.2];
        let terms = loglik_terms(&x, &alphas, &e).unwrap();
        for (k, t) in (2..x.len()).enumerate() {
            let z = 0.35 * x[t - 1] as f64 - 0.2 * x[t - 2] as f64;
            let fl = z.floor();
            let frac = z - fl;
            // Enumerate the two rounding outcomes.
            let mut prob = 0.0;
            for (r, w) in [(fl as i64, 1.0 - frac), (fl as i64 + 1, frac)] {
                prob += w * e.pmf(x[t] - r);
            }
            assert!((terms[k] - prob.ln()).abs() < 1e-12, "t={t}");
        }
        // Additivity over windows.
        let whole = loglik_mrar(&x, &alphas, &e).unwrap();
        let head = loglik_mrar(&x[..30], &alphas, &e).unwrap();
        let tail = loglik_mrar(&x[28..], &alphas, &e).unwrap();
        assert!((whole - head - tail).abs() < 1e-10);
    }

    #[test]
    fn iid_loglik_is_sum_of_log_pmf() {
        let e = Skellam::new(1.0, 2.0).unwrap();
        let x = [0, -1, 3, -4, 2];
        let want: f64 = x.iter().map(|&v| e.log_pmf(v)).sum();
        assert!((loglik_mrar(&x, &[], &e).unwrap() - want).abs() < 1e-12);
        assert!(loglik_mrar(&x, &[f64::NAN], &e).is_err());
    }

    #[test]
    fn mle_beats_truth_and_stays_feasible() {
        let x = sim(vec![0.6, -0.3], 1.5, 0.5, 1000, 21);
        let truth = [0.6, -0.3, 1.5, 0.5];
        let fit = fit_mle_mrar(&x, 2, Some(&truth)).unwrap();
        let e = Skellam::new(1.5, 0.5).unwrap();
        let at_truth = loglik_mrar(&x, &truth[..2], &e).unwrap();
        assert!(fit.loglik.unwrap() >= at_truth - 1e-9);
        assert!(fit.converged);
        assert!(spectral_radius(&fit.alphas()) < 1.0);
        assert!(fit.get("lambda1").unwrap() > 0.0 && fit.get("lambda2").unwrap() > 0.0);
        let se = fit.se.as_ref().unwrap();
        assert_eq!(se.len(), 4);
        assert!(se.values().all(|v| *v > 0.0 && *v < 0.5));
        let default_start = fit_mle_mrar(&x, 2, None).unwrap();
        assert!((default_start.loglik.unwrap() - fit.loglik.unwrap()).abs() < 1e-4);
    }

    #[test]
    fn quadratic_hessian_gives_exact_se() {
        // -loglik = 0.5 theta' H theta with H = diag(4, 25): se = (0.5, 0.2).
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 25.0]);
        let se = se_from_hessian(&h).unwrap();
        assert!((se[0] - 0.5).abs() < 1e-12 && (se[1] - 0.2).abs() < 1e-12);
        let mut f = |v: &[f64]| 0.5 * (4.0 * v[0] * v[0] + 25.0 * v[1] * v[1]);
        let hn = numerical_hessian(&mut f, &[0.1, -0.2], &[1e-4, 1e-4]);
        let se = se_from_hessian(&hn).unwrap();
        assert!((se[0] - 0.5).abs() < 1e-6 && (se[1] - 0.2).abs() < 1e-6);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(se_from_hessian(&indefinite), Err(Error::HessianNotPositiveDefinite));
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        let acov = [1.3, 0.4, -0.1];
        let n = 12;
        let l = banded_cholesky(&acov, n).unwrap();
        let dense = DMatrix::from_fn(n, n, |i, j| acov.get(i.abs_diff(j)).copied().unwrap_or(0.0));
        let full = dense.clone().cholesky().unwrap().l();
        for i in 0..n {
            for k in 0..=2.min(i) {
                assert!((l[i][k] - full[(i, i - k)]).abs() < 1e-14);
            }
        }
        let y = DMatrix::from_fn(n, 2, |i, j| (i * 3 + j) as f64 - 5.0);
        let z = banded_forward(&l, &y);
        assert!((&full * z - y).amax() < 1e-12);
    }

    #[test]
    fn three_stage_rejects_bad_input() {
        let x = sim(vec![0.5], 1.0, 1.0, 200, 1);
        assert!(fit_3sls_mrarma(&x, 1, 0, &Ls3Options::default()).is_err());
        let opts = Ls3Options { stage1_order: Some(60), ..Default::default() };
        assert!(matches!(fit_3sls_mrarma(&x, 1, 1, &opts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn three_stage_recovers_arma11() {
        let spec = MrarmaSpec::new(vec![0.5], vec![0.3], Skellam::new(1.0, 1.0).unwrap()).unwrap();
        let x = spec.simulate(&SimOptions::new(10_000, 77)).unwrap().series;
        let fit = fit_3sls_mrarma(&x, 1, 1, &Ls3Options::default()).unwrap();
        assert!((fit.get("alpha1").unwrap() - 0.5).abs() < 0.06, "{fit:?}");
        assert!((fit.get("beta1").unwrap() - 0.3).abs() < 0.08, "{fit:?}");
        assert!(fit.get("mu_eps").unwrap().abs() < 0.1);
    }
}
