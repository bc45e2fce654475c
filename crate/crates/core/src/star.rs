//! Variant with an independent rounding per term:
//! `X_t = eps_t + sum_i <alpha_i X_{t-i}> + sum_j <beta_j eps_{t-j}>`.
//!
//! The conditional mean is the same as for [`MrarmaSpec`]; the conditional
//! variance picks up one rounding variance per term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::innovations::InnovationModel;
use crate::model::{
    check_pgf_arg, run_recursion_terms, History, MrarmaSpec, Real, SimOptions, SimOutput, StationarityCheck,
};
use crate::pmf::IntPmf;
use crate::rounding::{sample_split, split, TwoPointDist};

#[derive(Debug, Clone, PartialEq)]
pub struct MrarmaStarSpec<I>(MrarmaSpec<I>);

impl<I: InnovationModel> MrarmaStarSpec<I> {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>, innovation: I) -> Result<Self> {
        MrarmaSpec::new(alphas, betas, innovation).map(MrarmaStarSpec)
    }

    pub fn from_base(spec: MrarmaSpec<I>) -> Self {
        MrarmaStarSpec(spec)
    }

    /// The coefficients and innovation law, shared with the base model.
    pub fn base(&self) -> &MrarmaSpec<I> {
        &self.0
    }

    pub fn check_stationary(&self) -> StationarityCheck {
        self.0.check_stationary()
    }

    pub fn check_invertible(&self) -> bool {
        self.0.check_invertible()
    }

    /// Identical to [`MrarmaSpec::cond_mean`].
    pub fn cond_mean<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<f64> {
        self.0.cond_mean(x_hist, eps_hist)
    }

    fn term_splits<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<Vec<TwoPointDist>> {
        let (p, q) = (self.0.p(), self.0.q());
        if x_hist.len() < p {
            return Err(Error::Arity { needed: p, got: x_hist.len() });
        }
        if eps_hist.len() < q {
            return Err(Error::Arity { needed: q, got: eps_hist.len() });
        }
        let ar = self.0.alphas().iter().enumerate().map(|(i, a)| a * x_hist.lag(i + 1).real());
        let ma = self.0.betas().iter().enumerate().map(|(j, b)| b * eps_hist.lag(j + 1).real());
        ar.chain(ma).map(|z| split(z).map(TwoPointDist::from_split)).collect()
    }

    /// `sigma_eps^2 + sum` of the per-term rounding variances.
    pub fn cond_var_star<T: Real, U: Real>(&self, x_hist: History<T>, eps_hist: History<U>) -> Result<f64> {
        let terms = self.term_splits(x_hist, eps_hist)?;
        Ok(self.0.innovation().variance() + terms.iter().map(|d| d.variance()).sum::<f64>())
    }

    /// Law of the summed roundings given the AR history (pure AR only).
    pub fn rounding_law(&self, x_hist: History<i64>) -> Result<IntPmf> {
        if !self.0.is_pure_ar() {
            return Err(Error::Unsupported(
                "conditional law given observations requires q = 0; innovations are latent".into(),
            ));
        }
        let terms = self.term_splits(x_hist, History::<f64>::empty())?;
        Ok(terms.iter().fold(IntPmf::point_mass(0), |acc, d| acc.convolve(&d.to_pmf())))
    }

    /// `P(X_t = x | history)`: the summed roundings convolved with the innovation.
    pub fn transition_pmf_star(&self, x_hist: History<i64>, x: i64) -> Result<f64> {
        let r = self.rounding_law(x_hist)?;
        let innov = self.0.innovation();
        Ok(r.iter().filter(|(_, w)| *w > 0.0).map(|(k, w)| w * innov.pmf(x - k)).sum())
    }

    /// `pgf_eps(s)` times the product of the per-term two-point pgfs.
    pub fn cond_pgf_star(&self, x_hist: History<i64>, s: f64) -> Result<f64> {
        check_pgf_arg(s)?;
        if !self.0.is_pure_ar() {
            return Err(Error::Unsupported("conditional pgf requires q = 0".into()));
        }
        let terms = self.term_splits(x_hist, History::<f64>::empty())?;
        Ok(self.0.innovation().pgf(s) * terms.iter().map(|d| d.pgf(s)).product::<f64>())
    }

    pub fn simulate_star(&self, opts: &SimOptions) -> Result<SimOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (series, innovations_used) =
            self.simulate_star_with_rng(opts.n, opts.burnin, &mut rng, opts.allow_nonstationary)?;
        Ok(SimOutput { series, innovations_used, seed: opts.seed, burnin: opts.burnin })
    }

    pub fn simulate_star_with_rng<R: Rng + ?Sized>(
        &self,
        n: usize,
        burnin: usize,
        rng: &mut R,
        allow_nonstationary: bool,
    ) -> Result<(Vec<i64>, Vec<i64>)> {
        self.0.check_simulable(n, allow_nonstationary)?;
        run_recursion_terms(&self.0, n, burnin, rng, |terms, rng| {
            let mut total = 0i64;
            for &z in terms {
                total += sample_split(split(z)?, rng);
            }
            Ok(total)
        })
    }
}
