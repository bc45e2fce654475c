//! Monte Carlo estimation studies: simulate from a Skellam DGP at several
//! sample sizes, fit each replication, and summarize the estimates.
//!
//! Replication `r` at size index `s` draws from
//! `ChaCha8Rng::seed_from_u64(master_seed)` on stream `(s << 32) | r`, so
//! results do not depend on scheduling or thread count.

use std::panic::{self, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimation::{
    alpha_name, beta_name, fit_3sls_mrarma, fit_cls_mrar, fit_mle_mrar, fit_mm_mrar, FitResult, Ls3Options, Method,
};
use crate::innovations::Skellam;
use crate::model::{MrarmaSpec, DEFAULT_BURNIN};

pub const DEFAULT_REPLICATIONS: usize = 200;

/// Smallest sample size a study accepts.
pub const MIN_SAMPLE_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl DgpConfig {
    pub fn spec(&self) -> Result<MrarmaSpec<Skellam>> {
        MrarmaSpec::new(self.alphas.clone(), self.betas.clone(), Skellam::new(self.lambda1, self.lambda2)?)
    }

    /// True values keyed like [`FitResult::estimates`].
    fn truth(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.alphas.iter().enumerate().map(|(i, a)| (alpha_name(i + 1), *a)).collect();
        out.extend(self.betas.iter().enumerate().map(|(j, b)| (beta_name(j + 1), *b)));
        out.push(("lambda1".into(), self.lambda1));
        out.push(("lambda2".into(), self.lambda2));
        out
    }
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_burnin() -> usize {
    DEFAULT_BURNIN
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mle]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dgp: DgpConfig,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(domain("replications must be at least 1"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < MIN_SAMPLE_SIZE) {
            return Err(domain(format!("sample sizes must be non-empty and at least {MIN_SAMPLE_SIZE}")));
        }
        if self.sample_sizes.len() > u32::MAX as usize || self.replications > u32::MAX as usize {
            return Err(domain("too many sample sizes or replications"));
        }
        if self.methods.is_empty() {
            return Err(domain("no estimation methods given"));
        }
        let spec = self.dgp.spec()?;
        let st = spec.check_stationary();
        if !st.satisfied || !spec.check_invertible() {
            return Err(domain("DGP must be stationary and invertible"));
        }
        for m in &self.methods {
            match (m, spec.q()) {
                (Method::Ls3, 0) => return Err(domain("LS3 needs a DGP with an MA part")),
                (Method::Mm | Method::Cls | Method::Mle, q) if q > 0 => {
                    return Err(domain(format!("{m} applies to pure autoregressions only")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One summary row: `n, method, parameter, true, mean_est, mc_sd, mean_se`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub method: Method,
    pub parameter: String,
    pub truth: f64,
    pub mean_est: f64,
    pub mc_sd: f64,
    pub mean_se: Option<f64>,
    /// Replications that contributed.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedReplication {
    pub n: usize,
    pub method: Method,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub failures: Vec<FailedReplication>,
    pub attempted: usize,
}

impl StudyReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.attempted as f64
    }

    pub fn row(&self, n: usize, method: Method, parameter: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.n == n && r.method == method && r.parameter == parameter)
    }

    /// CSV with header `n,method,parameter,true,mean_est,mc_sd,mean_se`;
    /// failed replications appear as rows with parameter `failed:rep<k>`
    /// and empty numeric fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,method,parameter,true,mean_est,mc_sd,mean_se\n");
        for r in &self.rows {
            let se = r.mean_se.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n, r.method, r.parameter, r.truth, r.mean_est, r.mc_sd, se
            ));
        }
        for f in &self.failures {
            out.push_str(&format!("{},{},failed:rep{},,,,\n", f.n, f.method, f.replication));
        }
        out
    }
}

/// Generator for replication `rep` at size index `size_idx`.
pub fn replication_rng(master_seed: u64, size_idx: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((size_idx as u64) << 32) | rep as u64);
    rng
}

fn fit_one(series: &[i64], p: usize, q: usize, method: Method) -> Result<FitResult> {
    match method {
        Method::Mm => fit_mm_mrar(series, p),
        Method::Cls => fit_cls_mrar(series, p),
        Method::Mle => fit_mle_mrar(series, p, None),
        Method::Ls3 => fit_3sls_mrarma(series, p, q, &Ls3Options::default()),
    }
}

type RepOutcome = Vec<std::result::Result<FitResult, String>>;

fn run_replication(cfg: &StudyConfig, spec: &MrarmaSpec<Skellam>, size_idx: usize, rep: usize) -> RepOutcome {
    let n = cfg.sample_sizes[size_idx];
    let caught = panic::catch_unwind(AssertUnwindSafe(|| {
        let mut rng = replication_rng(cfg.master_seed, size_idx, rep);
        let series = match spec.simulate_with_rng(n, cfg.burnin, &mut rng, false) {
            Ok((x, _)) => x,
            Err(e) => return vec![Err(format!("simulation failed: {e}")); cfg.methods.len()],
        };
        cfg.methods
            .iter()
            .map(|&m| {
                panic::catch_unwind(AssertUnwindSafe(|| fit_one(&series, spec.p(), spec.q(), m)))
                    .map_err(|_| "estimator panicked".to_string())
                    .and_then(|r| r.map_err(|e| e.to_string()))
            })
            .collect()
    }));
    caught.unwrap_or_else(|_| vec![Err("replication panicked".to_string()); cfg.methods.len()])
}

/// Runs the study on at most `threads` workers (`None`: rayon's default).
pub fn run_study(cfg: &StudyConfig, threads: Option<usize>) -> Result<StudyReport> {
    cfg.validate()?;
    let spec = cfg.dgp.spec()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.sample_sizes.len()).flat_map(|s| (0..cfg.replications).map(move |r| (s, r))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let outcomes: Vec<RepOutcome> =
        pool.install(|| jobs.par_iter().map(|&(s, r)| run_replication(cfg, &spec, s, r)).collect());

    let truth = cfg.dgp.truth();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (s, &n) in cfg.sample_sizes.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let mut fits = Vec::new();
            for r in 0..cfg.replications {
                match &outcomes[s * cfg.replications + r][mi] {
                    Ok(fit) => fits.push(fit),
                    Err(message) => {
                        failures.push(FailedReplication { n, method, replication: r, message: message.clone() })
                    }
                }
            }
            for (name, value) in &truth {
                let ests: Vec<f64> = fits.iter().filter_map(|f| f.get(name)).collect();
                if ests.is_empty() {
                    continue;
                }
                let k = ests.len() as f64;
                let mean = ests.iter().sum::<f64>() / k;
                let sd = if ests.len() > 1 {
                    (ests.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                } else {
                    f64::NAN
                };
                let ses: Vec<f64> =
                    fits.iter().filter_map(|f| f.se.as_ref().and_then(|se| se.get(name).copied())).collect();
                let mean_se = (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64);
                rows.push(StudyRow {
                    n,
                    method,
                    parameter: name.clone(),
                    truth: *value,
                    mean_est: mean,
                    mc_sd: sd,
                    mean_se,
                    count: ests.len(),
                });
            }
        }
    }
    Ok(StudyReport { rows, failures, attempted: jobs.len() * cfg.methods.len() })
}
