//! Sample autocorrelations and standardized Pearson residuals.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{domain, numerical, Error, Result};
use crate::estimation::sample_acvf;
use crate::innovations::InnovationModel;
use crate::model::{History, MrarmaSpec};
use crate::pmf::kahan_sum;

/// Sample acf for lags `0..=max_lag`.
pub fn sample_acf(series: &[i64], max_lag: usize) -> Result<Vec<f64>> {
    let g = sample_acvf(series, max_lag)?;
    if g[0] <= 0.0 {
        return Err(numerical("series has zero sample variance"));
    }
    Ok(g.iter().map(|v| v / g[0]).collect())
}

fn real_acf(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n < max_lag + 2 {
        return Err(Error::InsufficientData(format!("{n} values for {max_lag} lags")));
    }
    let m = kahan_sum(values.iter().copied()) / n as f64;
    let d: Vec<f64> = values.iter().map(|v| v - m).collect();
    let g0 = kahan_sum(d.iter().map(|v| v * v));
    if g0 <= 0.0 {
        return Err(numerical("zero sample variance"));
    }
    Ok((0..=max_lag).map(|h| kahan_sum((0..n - h).map(|t| d[t] * d[t + h])) / g0).collect())
}

/// Durbin–Levinson recursion: partial autocorrelations for lags
/// `1..acf.len()` from an acf starting at lag 0.
pub fn durbin_levinson(acf: &[f64]) -> Vec<f64> {
    let max_lag = acf.len() - 1;
    let mut pacf = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = acf[0];
    for k in 1..=max_lag {
        let num = acf[k] - phi.iter().enumerate().map(|(j, p)| p * acf[k - 1 - j]).sum::<f64>();
        let a = num / v;
        let prev = phi.clone();
        for j in 0..prev.len() {
            phi[j] = prev[j] - a * prev[prev.len() - 1 - j];
        }
        phi.push(a);
        v *= 1.0 - a * a;
        pacf.push(a);
    }
    pacf
}

/// Sample pacf; element `k - 1` is lag `k`, for `k = 1..=max_lag`.
pub fn sample_pacf(series: &[i64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 {
        return Err(domain("max_lag must be positive"));
    }
    Ok(durbin_levinson(&sample_acf(series, max_lag)?))
}

/// `+-1.96 / sqrt(n)`.
pub fn significance_band(n: usize) -> f64 {
    1.96 / (n as f64).sqrt()
}

/// Ljung–Box statistic `n(n+2) sum_{k=1}^{h} r_k^2 / (n - k)` from an acf
/// starting at lag 0.
pub fn ljung_box(acf: &[f64], n: usize, lags: usize) -> f64 {
    let nf = n as f64;
    nf * (nf + 2.0) * (1..=lags).map(|k| acf[k] * acf[k] / (nf - k as f64)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Residuals for `t = p+1..n` (one-based), in time order.
    pub residuals: Vec<f64>,
    pub mean: f64,
    /// Sample variance with divisor `len - 1`.
    pub variance: f64,
    /// Residual acf for lags `0..=max_lag`.
    pub acf: Vec<f64>,
    pub significance_band: f64,
}

impl ResidualReport {
    fn from_residuals(residuals: Vec<f64>, max_lag: usize) -> Result<Self> {
        let n = residuals.len();
        let mean = kahan_sum(residuals.iter().copied()) / n as f64;
        let variance = kahan_sum(residuals.iter().map(|r| (r - mean).powi(2))) / (n as f64 - 1.0);
        let acf = real_acf(&residuals, max_lag)?;
        Ok(ResidualReport { residuals, mean, variance, acf, significance_band: significance_band(n) })
    }

    /// Lags `1..=max_lag` whose acf falls outside the band.
    pub fn significant_lags(&self) -> Vec<usize> {
        (1..self.acf.len()).filter(|&h| self.acf[h].abs() > self.significance_band).collect()
    }

    pub fn ljung_box(&self, lags: usize) -> f64 {
        ljung_box(&self.acf, self.residuals.len(), lags.min(self.acf.len() - 1))
    }

    /// `lag,acf,band_lo,band_hi` rows for lags `1..=max_lag`.
    pub fn write_acf_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_acf_csv(out, "acf", &self.acf[1..], 1, self.significance_band)
    }

    /// `t,residual` rows, `t` one-based as in the input series.
    pub fn write_residuals_csv<W: Write>(&self, mut out: W, first_t: usize) -> io::Result<()> {
        writeln!(out, "t,residual")?;
        for (i, r) in self.residuals.iter().enumerate() {
            writeln!(out, "{},{r}", first_t + i)?;
        }
        Ok(())
    }
}

/// Writes `lag,<column>,band_lo,band_hi` rows starting at `first_lag`.
pub fn write_acf_csv<W: Write>(
    mut out: W,
    column: &str,
    values: &[f64],
    first_lag: usize,
    band: f64,
) -> io::Result<()> {
    writeln!(out, "lag,{column},band_lo,band_hi")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{},{v},{},{band}", first_lag + i, -band)?;
    }
    Ok(())
}

fn check_innovation_variance<I: InnovationModel>(spec: &MrarmaSpec<I>) -> Result<()> {
    if spec.innovation().variance().is_nan() || spec.innovation().variance() <= 0.0 {
        return Err(domain("innovation variance must be positive"));
    }
    Ok(())
}

/// Standardized Pearson residuals `(x_t - E[X_t | past]) / sqrt(Var[X_t | past])`
/// of a pure autoregression, for `t = p+1..n`.
pub fn pearson_residuals<I: InnovationModel>(
    series: &[i64],
    spec: &MrarmaSpec<I>,
    max_lag: usize,
) -> Result<ResidualReport> {
    if !spec.is_pure_ar() {
        return Err(Error::Unsupported(
            "mixed models need estimated innovations; use pearson_residuals_with_innovations".into(),
        ));
    }
    check_innovation_variance(spec)?;
    let p = spec.p();
    if series.len() <= p + max_lag + 1 {
        return Err(Error::InsufficientData(format!("series of length {} too short", series.len())));
    }
    let residuals = (p..series.len())
        .map(|t| {
            let hist = History::chronological(&series[..t]);
            let m = spec.cond_mean(hist, History::<f64>::empty())?;
            let v = spec.cond_var(hist, History::<f64>::empty())?;
            Ok((series[t] as f64 - m) / v.sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualReport::from_residuals(residuals, max_lag)
}

/// Innovation estimates `x_t - Z_{t-1}` from the fitted recursion, started
/// with zero innovations before the first `max(p, q)` observations.
pub fn filter_innovations<I: InnovationModel>(series: &[i64], spec: &MrarmaSpec<I>) -> Result<Vec<f64>> {
    let start = spec.p().max(spec.q());
    let mut eps = vec![0.0; series.len()];
    for t in start..series.len() {
        let z = spec.linear_predictor(History::chronological(&series[..t]), History::chronological(&eps[..t]))?;
        eps[t] = series[t] as f64 - z;
    }
    Ok(eps)
}

/// Approximate Pearson residuals for a mixed model, using an estimated
/// innovation sequence `eps_hat` aligned with `series` (for example from
/// three-stage LS). Residuals start where `p` observations and `q`
/// innovations of history are available.
pub fn pearson_residuals_with_innovations<I: InnovationModel>(
    series: &[i64],
    eps_hat: &[f64],
    spec: &MrarmaSpec<I>,
    max_lag: usize,
) -> Result<ResidualReport> {
    if eps_hat.len() != series.len() {
        return Err(Error::Validation("innovation estimates must align with the series".into()));
    }
    check_innovation_variance(spec)?;
    let start = spec.p().max(spec.q());
    if series.len() <= start + max_lag + 1 {
        return Err(Error::InsufficientData(format!("series of length {} too short", series.len())));
    }
    let residuals = (start..series.len())
        .map(|t| {
            let xh = History::chronological(&series[..t]);
            let eh = History::chronological(&eps_hat[..t]);
            let m = spec.cond_mean(xh, eh)?;
            let v = spec.cond_var(xh, eh)?;
            Ok((series[t] as f64 - m) / v.sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualReport::from_residuals(residuals, max_lag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::Skellam;
    use crate::model::SimOptions;
    use nalgebra::{DMatrix, DVector};

    fn sim(alphas: Vec<f64>, n: usize, seed: u64) -> Vec<i64> {
        MrarmaSpec::ar(alphas, Skellam::new(1.0, 1.0).unwrap())
            .unwrap()
            .simulate(&SimOptions::new(n, seed))
            .unwrap()
            .series
    }

    #[test]
    fn pacf_first_lag_is_acf() {
        let x = sim(vec![0.5], 500, 1);
        let acf = sample_acf(&x, 5).unwrap();
        let pacf = sample_pacf(&x, 5).unwrap();
        assert!((pacf[0] - acf[1]).abs() < 1e-15);
    }

    #[test]
    fn pacf_matches_toeplitz_regression_oracle() {
        let x = sim(vec![0.6, -0.3], 800, 2);
        let acf = sample_acf(&x, 8).unwrap();
        let pacf = sample_pacf(&x, 8).unwrap();
        for k in 1..=8 {
            let r = DMatrix::from_fn(k, k, |i, j| acf[i.abs_diff(j)]);
            let rhs = DVector::from_iterator(k, acf[1..=k].iter().copied());
            let phi = r.lu().solve(&rhs).unwrap();
            assert!((pacf[k - 1] - phi[k - 1]).abs() < 1e-10, "lag {k}");
        }
    }

    #[test]
    fn pacf_of_ar1_cuts_off() {
        let x = sim(vec![0.5], 20_000, 3);
        let pacf = sample_pacf(&x, 3).unwrap();
        assert!((pacf[0] - 0.5).abs() < 0.03);
        assert!(pacf[1].abs() < 0.03 && pacf[2].abs() < 0.03);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(sample_pacf(&[2; 50], 3).is_err());
        assert!(sample_pacf(&[1, 2, 3], 0).is_err());
    }

    #[test]
    fn residual_report_moments_are_exact() {
        let x = sim(vec![0.5], 300, 4);
        let spec = MrarmaSpec::ar(vec![0.5], Skellam::new(1.0, 1.0).unwrap()).unwrap();
        let rep = pearson_residuals(&x, &spec, 10).unwrap();
        assert_eq!(rep.residuals.len(), 299);
        let n = rep.residuals.len() as f64;
        let m: f64 = rep.residuals.iter().sum::<f64>() / n;
        let v: f64 = rep.residuals.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((rep.mean - m).abs() < 1e-12 && (rep.variance - v).abs() < 1e-12);
        assert!((rep.significance_band - 1.96 / n.sqrt()).abs() < 1e-15);
        // First residual by hand: z = 0.5 x_1.
        let z = 0.5 * x[0] as f64;
        let frac = z - z.floor();
        let want = (x[1] as f64 - z) / (2.0 + frac * (1.0 - frac)).sqrt();
        assert!((rep.residuals[0] - want).abs() < 1e-14);
    }

    #[test]
    fn misspecified_model_shows_in_residual_acf() {
        let x = sim(vec![0.5], 5000, 5);
        let wrong = MrarmaSpec::iid(Skellam::new(1.0, 1.0).unwrap());
        let rep = pearson_residuals(&x, &wrong, 5).unwrap();
        assert!(rep.acf[1] > rep.significance_band);
        assert!(rep.significant_lags().contains(&1));
    }

    #[test]
    fn mixed_spec_needs_innovations() {
        let spec = MrarmaSpec::new(vec![0.5], vec![0.3], Skellam::new(1.0, 1.0).unwrap()).unwrap();
        let out = spec.simulate(&SimOptions::new(400, 6)).unwrap();
        assert!(matches!(pearson_residuals(&out.series, &spec, 5), Err(Error::Unsupported(_))));
        let eps: Vec<f64> = out.innovations_used.iter().map(|&e| e as f64).collect();
        let rep = pearson_residuals_with_innovations(&out.series, &eps, &spec, 5).unwrap();
        assert_eq!(rep.residuals.len(), 399);
        assert!(rep.mean.abs() < 0.2 && (rep.variance - 1.0).abs() < 0.2);
    }

    #[test]
    fn ljung_box_of_white_noise() {
        let acf = [1.0, 0.0, 0.0];
        assert_eq!(ljung_box(&acf, 100, 2), 0.0);
        let acf = [1.0, 0.1];
        assert!((ljung_box(&acf, 100, 1) - 100.0 * 102.0 * 0.01 / 99.0).abs() < 1e-12);
    }

    #[test]
    fn acf_csv_layout() {
        let mut buf = Vec::new();
        write_acf_csv(&mut buf, "pacf", &[0.5, -0.25], 1, 0.1).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lag,pacf,band_lo,band_hi\n1,0.5,-0.1,0.1\n2,-0.25,-0.1,0.1\n");
    }

    #[test]
    fn filtered_innovations_follow_the_recursion() {
        let spec = MrarmaSpec::new(vec![0.5], vec![0.4], Skellam::new(1.0, 1.0).unwrap()).unwrap();
        let x = [3i64, 1, -2, 0];
        let e = filter_innovations(&x, &spec).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - (1.0 - 1.5)).abs() < 1e-15);
        assert!((e[2] - (-2.0 - 0.5 - 0.4 * e[1])).abs() < 1e-15);
        assert!((e[3] - (0.0 + 1.0 - 0.4 * e[2])).abs() < 1e-15);
    }
}
