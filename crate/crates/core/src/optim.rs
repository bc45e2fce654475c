//! Small derivative-free and quasi-Newton minimizers.
//!
//! Objectives may return `+inf` to reject a point (a barrier); both methods
//! treat such points as worse than any finite value.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_tol: 1e-6, step_tol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Converged once every vertex is within this distance (max-norm) of the best one.
    pub x_tol: f64,
    pub max_evals: usize,
    /// Initial simplex edge, relative to `max(|x_i|, 0.1)`.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { x_tol: 1e-8, max_evals: 2000, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    Step,
    LineSearch,
    MaxIter,
    Simplex,
    MaxEvals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
}

/// Central-difference gradient with step `1e-5 * max(1, |x_i|)`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with per-coordinate steps.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(k, k);
    let mut xp = x.to_vec();
    for i in 0..k {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Objective wrapper that counts calls and maps NaN to `+inf`.
struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = |p: &[f64]| self.call(p);
        DVector::from_vec(numerical_gradient(&mut g, x.as_slice()))
    }
}

/// BFGS with an Armijo backtracking line search and finite-difference
/// gradients.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum {
    let k = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = obj.call(x.as_slice());
    let finish = |x: DVector<f64>, f: f64, iterations, evaluations, converged, reason| Minimum {
        x: x.as_slice().to_vec(),
        f,
        iterations,
        evaluations,
        converged,
        reason,
    };
    if !fx.is_finite() {
        return finish(x, fx, 0, obj.evals, false, StopReason::LineSearch);
    }
    let mut g = obj.gradient(&x);
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut first = true;
    for it in 1..=opts.max_iter {
        if g.amax() < opts.grad_tol {
            return finish(x, fx, it - 1, obj.evals, true, StopReason::Gradient);
        }
        let mut d = -(&hinv * &g);
        let mut slope = g.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            hinv = DMatrix::identity(k, k);
            d = -g.clone();
            slope = g.dot(&d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * t;
            let fnew = obj.call(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            return finish(x, fx, it, obj.evals, false, StopReason::LineSearch);
        };
        let s = &xn - &x;
        let gn = obj.gradient(&xn);
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                hinv *= sy / y.dot(&y);
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let step = s.amax();
        x = xn;
        fx = fnew;
        g = gn;
        if step < opts.step_tol {
            return finish(x, fx, it, obj.evals, true, StopReason::Step);
        }
    }
    let converged = g.amax() < opts.grad_tol;
    finish(x, fx, opts.max_iter, obj.evals, converged, StopReason::MaxIter)
}

/// Nelder–Mead simplex search with standard coefficients.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let k = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let v0 = x0.to_vec();
    let f0 = obj.call(&v0);
    simplex.push((v0, f0));
    for i in 0..k {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step * x0[i].abs().max(0.1);
        let fv = obj.call(&v);
        simplex.push((v, fv));
    }
    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0.clone();
        let spread =
            simplex[1..].iter().flat_map(|(v, _)| v.iter().zip(&best).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if spread < opts.x_tol && simplex[0].1.is_finite() {
            return Minimum {
                x: best,
                f: simplex[0].1,
                iterations,
                evaluations: obj.evals,
                converged: true,
                reason: StopReason::Simplex,
            };
        }
        if obj.evals >= opts.max_evals {
            return Minimum {
                x: best,
                f: simplex[0].1,
                iterations,
                evaluations: obj.evals,
                converged: false,
                reason: StopReason::MaxEvals,
            };
        }
        iterations += 1;
        let centroid: Vec<f64> =
            (0..k).map(|i| simplex[..k].iter().map(|(v, _)| v[i]).sum::<f64>() / k as f64).collect();
        let worst = simplex[k].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = obj.call(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = obj.call(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = obj.call(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = obj.call(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let b = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = vertex.0.iter().zip(&b).map(|(x, b)| b + 0.5 * (x - b)).collect();
                    let fv = obj.call(&v);
                    *vertex = (v, fv);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let m = bfgs(rosenbrock, &[-1.2, 1.0], &BfgsOptions::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let opts = NelderMeadOptions { max_evals: 5000, ..Default::default() };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn barrier_is_respected() {
        // Minimum of the unconstrained quadratic lies outside the feasible set.
        let f = |x: &[f64]| if x[0] >= 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let m = bfgs(f, &[0.0], &BfgsOptions::default());
        assert!(m.x[0] < 1.0);
        let m = nelder_mead(f, &[0.0], &NelderMeadOptions::default());
        assert!(m.x[0] < 1.0 && m.x[0] > 0.99);
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        // f = 1.5 x^2 + x y + 2 y^2 - z^2/2 ... positive definite part only in x, y.
        let mut f = |v: &[f64]| 1.5 * v[0] * v[0] + v[0] * v[1] + 2.0 * v[1] * v[1] + 0.25 * v[2] * v[2];
        let h = numerical_hessian(&mut f, &[0.3, -0.7, 2.0], &[1e-3, 1e-3, 1e-3]);
        let want = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 4.0, 0.0, 0.0, 0.0, 0.5]);
        assert!((h - want).amax() < 1e-6);
    }
}
