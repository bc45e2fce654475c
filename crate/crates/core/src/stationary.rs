//! Stationary marginal distributions of first-order models.
//!
//! MRAR(1) is a Markov chain on the integers; its invariant pmf is computed
//! on a finite window of states. MRMA(1) needs no chain: the marginal is the
//! convolution of the innovation law with the law of `<beta_1 eps>`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{domain, numerical, Error, Result};
use crate::innovations::InnovationModel;
use crate::pmf::{kahan_sum, IntPmf, IntWindow};
use crate::rounding::{scaled_round_dist, split_unchecked};

/// Largest row-mass deficiency tolerated in a truncated transition matrix.
pub const ROW_DEFICIENCY_TOL: f64 = 1e-10;

/// Largest invariant mass tolerated on the two outermost states of a window.
pub const BOUNDARY_MASS_TOL: f64 = 1e-12;

/// Power-iteration budget before giving up.
pub const MAX_POWER_ITERATIONS: usize = 100_000;

/// Largest window the automatic driver will try.
pub const MAX_STATES: usize = 20_000;

const AITKEN_EVERY: usize = 10;
const STALL_WINDOW: usize = 2_000;

/// Truncated transition matrix of an MRAR(1) chain; row `y`, column `x`.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    window: IntWindow,
    matrix: DMatrix<f64>,
    max_deficiency: f64,
}

impl TransitionMatrix {
    pub fn window(&self) -> IntWindow {
        self.window
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Largest `1 - sum_x P(y -> x)` over the rows.
    pub fn max_deficiency(&self) -> f64 {
        self.max_deficiency
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `P(y -> x)`; zero outside the window.
    pub fn entry(&self, y: i64, x: i64) -> f64 {
        if !self.window.contains(y) || !self.window.contains(x) {
            return 0.0;
        }
        self.matrix[((y - self.window.lo) as usize, (x - self.window.lo) as usize)]
    }

    /// Wraps an arbitrary row-stochastic matrix, indexed from `lo`.
    pub fn from_matrix(lo: i64, matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::Validation("transition matrix must be square and non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("transition matrix has invalid entries".into()));
        }
        let max_deficiency = (0..n).map(|r| 1.0 - kahan_sum(matrix.row(r).iter().copied())).fold(0.0, f64::max);
        if !(-ROW_DEFICIENCY_TOL..=ROW_DEFICIENCY_TOL).contains(&max_deficiency) {
            return Err(Error::WindowTooSmall { deficiency: max_deficiency });
        }
        Ok(TransitionMatrix { window: IntWindow::new(lo, lo + n as i64 - 1), matrix, max_deficiency })
    }

    fn residual_l1(&self, pi: &DVector<f64>) -> f64 {
        let next = self.matrix.tr_mul(pi);
        kahan_sum(next.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()))
    }
}

/// `P(X_t = x | X_{t-1} = y)` for an MRAR(1) chain, tabulated on `window`.
pub fn mrar1_transition_matrix<I: InnovationModel>(
    alpha1: f64,
    innovation: &I,
    window: IntWindow,
) -> Result<TransitionMatrix> {
    if !alpha1.is_finite() || alpha1.abs() >= 1.0 {
        return Err(domain(format!("alpha1 = {alpha1} must lie in (-1, 1)")));
    }
    let n = window.len();
    // Innovation values reachable as x - floor(alpha y) - {0, 1}.
    let shifts: Vec<_> = window.iter().map(|y| split_unchecked(alpha1 * y as f64)).collect();
    let fmin = shifts.iter().map(|s| s.floor).min().unwrap();
    let fmax = shifts.iter().map(|s| s.floor).max().unwrap();
    let eps = innovation.pmf_on(IntWindow::new(window.lo - fmax - 1, window.hi - fmin));
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    let mut max_deficiency = 0.0f64;
    for (r, s) in shifts.iter().enumerate() {
        for (c, x) in window.iter().enumerate() {
            matrix[(r, c)] = (1.0 - s.frac) * eps.pmf(x - s.floor) + s.frac * eps.pmf(x - s.floor - 1);
        }
        let deficiency = 1.0 - kahan_sum(matrix.row(r).iter().copied());
        max_deficiency = max_deficiency.max(deficiency);
    }
    if max_deficiency > ROW_DEFICIENCY_TOL {
        return Err(Error::WindowTooSmall { deficiency: max_deficiency });
    }
    Ok(TransitionMatrix { window, matrix, max_deficiency })
}

/// A truncated marginal pmf with its moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDist {
    pub lo: i64,
    pub pmf: Vec<f64>,
    /// Upper bound on the mass lost to truncation.
    pub tail_bound: f64,
    pub mean: f64,
    pub variance: f64,
}

impl StationaryDist {
    fn from_pmf(pmf: IntPmf, tail_bound: f64) -> Self {
        let (mean, variance) = (pmf.mean(), pmf.variance());
        StationaryDist { lo: pmf.lo(), pmf: pmf.probs().to_vec(), tail_bound, mean, variance }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.pmf.len() as i64 - 1
    }

    pub fn window(&self) -> IntWindow {
        IntWindow::new(self.lo, self.hi())
    }

    pub fn prob(&self, x: i64) -> f64 {
        if x < self.lo || x > self.hi() {
            return 0.0;
        }
        self.pmf[(x - self.lo) as usize]
    }

    pub fn to_int_pmf(&self) -> IntPmf {
        IntPmf::unnormalized(self.lo, self.pmf.clone()).expect("stored pmf is valid")
    }

    /// Writes `x,pi` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,pi")?;
        for (i, p) in self.pmf.iter().enumerate() {
            writeln!(out, "{},{:e}", self.lo + i as i64, p)?;
        }
        Ok(())
    }
}

/// Invariant pmf of a row-stochastic matrix with `||pi P - pi||_1 < tol`.
///
/// Runs power iteration with periodic Aitken extrapolation; if progress
/// stalls, falls back to [`solve_invariant_direct`].
pub fn solve_invariant(p: &TransitionMatrix, tol: f64) -> Result<StationaryDist> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(domain(format!("tolerance {tol} must be positive")));
    }
    let n = p.len();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut prev = pi.clone();
    let mut prev2 = pi.clone();
    let mut best = f64::INFINITY;
    let mut best_iter = 0;
    for it in 1..=MAX_POWER_ITERATIONS {
        prev2.copy_from(&prev);
        prev.copy_from(&pi);
        pi = p.matrix.tr_mul(&prev);
        normalize(&mut pi);
        if it % AITKEN_EVERY == 0 {
            if let Some(acc) = aitken(&prev2, &prev, &pi) {
                if p.residual_l1(&acc) < p.residual_l1(&pi) {
                    pi = acc;
                }
            }
        }
        let res = p.residual_l1(&pi);
        if res < tol {
            return Ok(finish(p, pi));
        }
        if res < 0.5 * best {
            best = res;
            best_iter = it;
        } else if it - best_iter > STALL_WINDOW {
            break;
        }
    }
    let direct = solve_invariant_direct(p)?;
    let res = p.residual_l1(&DVector::from_column_slice(&direct.pmf));
    if res < tol {
        Ok(direct)
    } else {
        Err(numerical(format!("invariant pmf not found: power iteration stalled, direct residual {res:e}")))
    }
}

/// Invariant pmf by a direct solve of `(P^T - I) pi = 0` with one equation
/// replaced by `sum pi = 1`.
pub fn solve_invariant_direct(p: &TransitionMatrix) -> Result<StationaryDist> {
    let n = p.len();
    let mut a = p.matrix.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mut pi = a
        .lu()
        .solve(&b)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| numerical("singular invariance system"))?;
    // Round-off can leave tiny negative entries in the far tails.
    pi.iter_mut().for_each(|v| *v = v.max(0.0));
    normalize(&mut pi);
    Ok(finish(p, pi))
}

fn normalize(v: &mut DVector<f64>) {
    let total = kahan_sum(v.iter().copied());
    *v /= total;
}

fn aitken(x0: &DVector<f64>, x1: &DVector<f64>, x2: &DVector<f64>) -> Option<DVector<f64>> {
    let mut out = x2.clone();
    for i in 0..out.len() {
        let d1 = x2[i] - x1[i];
        let d2 = x2[i] - 2.0 * x1[i] + x0[i];
        if d2.abs() > 1e-300 {
            out[i] = (x2[i] - d1 * d1 / d2).max(0.0);
        }
    }
    let total = kahan_sum(out.iter().copied());
    if !total.is_finite() || total <= 0.0 {
        return None;
    }
    out /= total;
    Some(out)
}

fn finish(p: &TransitionMatrix, pi: DVector<f64>) -> StationaryDist {
    let pmf = IntPmf::unnormalized(p.window.lo, pi.iter().copied().collect()).expect("valid pmf");
    let n = pi.len();
    let boundary = pi[0] + pi[n - 1];
    StationaryDist::from_pmf(pmf, p.max_deficiency + boundary)
}

/// Stationary pmf of MRAR(1) on an automatically sized window.
///
/// Starts at the mean plus or minus ten upper-envelope standard deviations
/// and widens by half until every row loses less than
/// [`ROW_DEFICIENCY_TOL`] and the outermost states carry less than
/// [`BOUNDARY_MASS_TOL`].
pub fn mrar1_stationary<I: InnovationModel>(alpha1: f64, innovation: &I, tol: f64) -> Result<StationaryDist> {
    if !alpha1.is_finite() || alpha1.abs() >= 1.0 {
        return Err(domain(format!("alpha1 = {alpha1} must lie in (-1, 1)")));
    }
    let mean = innovation.mean() / (1.0 - alpha1);
    let sd_upper = ((innovation.variance() + 0.25) / (1.0 - alpha1 * alpha1)).sqrt();
    let center = mean.round() as i64;
    let mut half = (10.0 * sd_upper).ceil() as i64 + 2;
    loop {
        if (2 * half + 1) as usize > MAX_STATES {
            return Err(Error::TruncationFailure { max_states: MAX_STATES });
        }
        let window = IntWindow::new(center - half, center + half);
        match mrar1_transition_matrix(alpha1, innovation, window) {
            Ok(p) => {
                let dist = solve_invariant(&p, tol)?;
                let edge = dist.pmf[0] + dist.pmf[dist.pmf.len() - 1];
                if edge < BOUNDARY_MASS_TOL {
                    return Ok(dist);
                }
            }
            Err(Error::WindowTooSmall { .. }) => {}
            Err(e) => return Err(e),
        }
        half = (half as f64 * 1.5).ceil() as i64;
    }
}

/// Marginal of MRMA(1), `X_t = eps_t + <beta_1 eps_{t-1}>`.
pub fn mrma1_marginal<I: InnovationModel>(beta1: f64, innovation: &I, tail_tol: f64) -> Result<StationaryDist> {
    if !beta1.is_finite() || beta1.abs() >= 1.0 {
        return Err(domain(format!("beta1 = {beta1} must lie in (-1, 1)")));
    }
    let eps = innovation.truncated_pmf(tail_tol)?;
    let rounded = scaled_round_dist(beta1, &eps)?;
    let marginal = eps.convolve(&rounded);
    let lost = (1.0 - marginal.total_mass()).max(0.0);
    Ok(StationaryDist::from_pmf(marginal, lost + f64::EPSILON * eps.probs().len() as f64))
}

/// `E[frac(alpha1 X)(1 - frac(alpha1 X))]` under a marginal pmf; the
/// unidentified term in the variance decomposition.
pub fn expected_rounding_variance(alpha1: f64, marginal: &StationaryDist) -> f64 {
    let total = kahan_sum(marginal.pmf.iter().copied());
    kahan_sum(
        marginal
            .pmf
            .iter()
            .enumerate()
            .map(|(i, p)| p * split_unchecked(alpha1 * (marginal.lo + i as i64) as f64).rounding_variance()),
    ) / total
}

/// Exact `E[frac(Z)(1 - frac(Z))]` for first-order models: `Z = alpha1 X`
/// under the stationary MRAR(1) law, or `Z = beta1 eps` for MRMA(1).
pub fn first_order_rounding_variance<I: InnovationModel>(
    alpha1: f64,
    beta1: f64,
    innovation: &I,
    tol: f64,
) -> Result<f64> {
    match (alpha1 != 0.0, beta1 != 0.0) {
        (true, true) => Err(Error::Unsupported("exact rounding variance needs p + q <= 1".into())),
        (true, false) => Ok(expected_rounding_variance(alpha1, &mrar1_stationary(alpha1, innovation, tol)?)),
        (false, true) => {
            let eps = innovation.truncated_pmf(1e-14)?;
            let d = StationaryDist::from_pmf(eps, 0.0);
            Ok(expected_rounding_variance(beta1, &d))
        }
        (false, false) => Ok(0.0),
    }
}

/// `gamma(1) = sum_{y,x} (y - mu)(x - mu) pi(y) P(y -> x)` for MRAR(1).
pub fn exact_lag1_autocov<I: InnovationModel>(alpha1: f64, innovation: &I, tol: f64) -> Result<f64> {
    let dist = mrar1_stationary(alpha1, innovation, tol)?;
    let p = mrar1_transition_matrix(alpha1, innovation, dist.window())?;
    Ok(lag1_autocov(&p, &dist))
}

/// Lag-one autocovariance of a chain started in `dist`.
pub fn lag1_autocov(p: &TransitionMatrix, dist: &StationaryDist) -> f64 {
    let mu = dist.mean;
    let w = p.window();
    let mut terms = Vec::with_capacity(w.len() * w.len());
    for (r, y) in w.iter().enumerate() {
        let py = dist.prob(y);
        if py == 0.0 {
            continue;
        }
        for (c, x) in w.iter().enumerate() {
            terms.push((y as f64 - mu) * (x as f64 - mu) * py * p.matrix[(r, c)]);
        }
    }
    kahan_sum(terms)
}
