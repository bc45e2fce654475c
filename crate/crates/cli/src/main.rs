//! `mrarma`: simulate, fit, diagnose and study mean-preserving rounded
//! ARMA models for integer-valued time series.
//!
//! Exit codes: 0 success, 1 usage, 2 data or domain error, 3 numerical
//! failure (non-convergence, too many failed study replications).

mod data;
mod table;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrarma::diagnostics::{filter_innovations, pearson_residuals_with_innovations, sample_pacf, significance_band};
use mrarma::estimation::{fit_3sls_mrarma, fit_cls_mrar, fit_mle_mrar, fit_mm_mrar, FitResult, Ls3Options, Method};
use mrarma::study::{run_study, StudyConfig};
use mrarma::{mrar1_stationary, mrma1_marginal, InnovationModel, MrarmaSpec, SimOptions, Skellam};

use table::{model_label, TableRow};

/// Share of failed replications above which `study` exits with code 3.
const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<mrarma::Error> for CliError {
    fn from(e: mrarma::Error) -> Self {
        use mrarma::Error as E;
        let msg = e.to_string();
        match e {
            E::Unsupported(_) => CliError::Usage(msg),
            E::Domain(_) | E::Validation(_) | E::Arity { .. } | E::InsufficientData(_) | E::WindowTooSmall { .. } => {
                CliError::Data(msg)
            }
            E::Numerical(_)
            | E::TruncationFailure { .. }
            | E::HessianNotPositiveDefinite
            | E::NonConvergence { .. } => CliError::Numerical(msg),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "mrarma", version, about = "Mean-preserving rounded ARMA models for integer time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Skellam MRARMA(p, q) series, one integer per line.
    Simulate(SimulateArgs),
    /// Fit a model and write the result as JSON.
    Fit(FitArgs),
    /// Pearson residual diagnostics for a fitted model.
    Diagnose(DiagnoseArgs),
    /// Stationary marginal of an MRAR(1) or MRMA(1) model.
    Stationary(StationaryArgs),
    /// Monte Carlo estimation study from a TOML configuration.
    Study(StudyArgs),
    /// Fit i.i.d. and MRAR(p) models by ML and print a comparison table.
    Table(TableArgs),
}

#[derive(Args)]
struct Rates {
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    lambda2: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// AR coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Vec<f64>,
    /// MA coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Vec<f64>,
    #[command(flatten)]
    rates: Rates,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 250)]
    burnin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Simulate even if the AR part is not stationary.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InnovationKind {
    Skellam,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    q: usize,
    /// mm, cls, mle or ls3.
    #[arg(long)]
    method: Method,
    #[arg(long, value_enum, default_value = "skellam")]
    innovation: InnovationKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    /// A JSON document written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    maxlag: u64,
    /// Writes `<prefix>_residuals.csv`, `<prefix>_acf.csv` and `<prefix>_pacf.csv`.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
#[group(id = "coef", required = true, multiple = false, args = ["alpha", "beta"])]
struct StationaryArgs {
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[command(flatten)]
    rates: Rates,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// CSV with header `x,pi`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    data: PathBuf,
    /// Autoregressive orders to fit; 0 is the i.i.d. model.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    orders: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Stationary(a) => stationary(a),
        Command::Study(a) => study(a),
        Command::Table(a) => table_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn describe(spec: &MrarmaSpec<Skellam>) -> String {
    let inn = spec.innovation();
    format!(
        "MRARMA({}, {}) alpha = {:?}, beta = {:?}, Skellam({}, {}) innovations (mean {}, variance {})",
        spec.p(),
        spec.q(),
        spec.alphas(),
        spec.betas(),
        inn.lambda1(),
        inn.lambda2(),
        inn.mean(),
        inn.variance()
    )
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    for (flag, given, len) in [("--p", a.p, a.alpha.len()), ("--q", a.q, a.beta.len())] {
        if let Some(order) = given {
            if order != len {
                return Err(CliError::Usage(format!("{flag} {order} does not match {len} coefficients")));
            }
        }
    }
    let spec = MrarmaSpec::new(a.alpha, a.beta, Skellam::new(a.rates.lambda1, a.rates.lambda2)?)?;
    println!("{}", describe(&spec));
    let st = spec.check_stationary();
    println!(
        "stationarity: spectral radius {:.6} ({})",
        st.spectral_radius,
        if st.satisfied { "stationary" } else { "not stationary" }
    );
    if !st.satisfied && !a.force {
        return Err(CliError::Data("model is not stationary; pass --force to simulate anyway".into()));
    }
    if st.satisfied {
        println!("unconditional mean: {:.6}", spec.uncond_mean()?);
    }
    let out = spec.simulate(&SimOptions { n: a.n, burnin: a.burnin, seed: a.seed, allow_nonstationary: a.force })?;
    let mut text = String::with_capacity(out.series.len() * 4);
    for x in &out.series {
        text.push_str(&x.to_string());
        text.push('\n');
    }
    write_file(&a.out, text.as_bytes())?;
    println!("wrote {} observations to {} (seed {}, burn-in {})", a.n, a.out.display(), a.seed, a.burnin);
    Ok(())
}

fn write_json(path: &Path, fit: &FitResult) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(fit).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let InnovationKind::Skellam = a.innovation;
    match (a.method, a.q) {
        (Method::Ls3, 0) => return Err(CliError::Usage("ls3 fits mixed models; pass --q 1 or more".into())),
        (Method::Mm | Method::Cls | Method::Mle, q) if q > 0 => {
            return Err(CliError::Usage(format!("{} supports pure autoregressions only (--q 0)", a.method)))
        }
        _ => {}
    }
    let data = data::load(&a.data)?;
    let x = &data.values;
    let result = match a.method {
        Method::Mm => fit_mm_mrar(x, a.p),
        Method::Cls => fit_cls_mrar(x, a.p),
        Method::Mle => fit_mle_mrar(x, a.p, None),
        Method::Ls3 => fit_3sls_mrarma(x, a.p, a.q, &Ls3Options::default()),
    };
    let fit = match result {
        Ok(fit) => fit,
        Err(mrarma::Error::NonConvergence { best, loglik, iterations }) => {
            let fit = FitResult::mle_unconverged(a.p, x.len(), &best, loglik, iterations)?;
            write_json(&a.out, &fit)?;
            return Err(CliError::Numerical(format!(
                "optimizer did not converge after {iterations} iterations; best point written to {}",
                a.out.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&a.out, &fit)?;
    if fit.method == Method::Mle {
        print!("{}", table::render(&[TableRow { label: model_label(fit.p), fit: fit.clone() }]));
    } else {
        for (k, v) in &fit.estimates {
            println!("{k:<12}{v:>12.6}");
        }
    }
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let data = data::load(&a.data)?;
    let text = fs::read_to_string(&a.fit).map_err(|e| io_err(&a.fit, e))?;
    let fit: FitResult =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.fit.display())))?;
    let x = &data.values;
    let maxlag = usize::try_from(a.maxlag).map_err(|_| CliError::Usage("--maxlag too large".into()))?;
    if fit.n != x.len() {
        return Err(CliError::Data(format!("fit was computed on {} observations, data has {}", fit.n, x.len())));
    }
    let start = fit.p.max(fit.q);
    if x.len() <= start + maxlag + 1 {
        return Err(CliError::Data(format!(
            "{} observations are too few for orders ({}, {}) and --maxlag {maxlag}",
            x.len(),
            fit.p,
            fit.q
        )));
    }
    if fit.estimates.len() < fit.p + fit.q || (1..=fit.p).any(|i| fit.get(&format!("alpha{i}")).is_none()) {
        return Err(CliError::Data("fit document does not match its stated orders".into()));
    }
    let spec = fit.spec()?;
    let eps = filter_innovations(x, &spec)?;
    let report = pearson_residuals_with_innovations(x, &eps, &spec, maxlag)?;
    let pacf = sample_pacf(x, maxlag)?;

    println!("{}", describe(&spec));
    println!("Pearson residuals: n = {}", report.residuals.len());
    println!("  mean      {:.6}", report.mean);
    println!("  variance  {:.6}", report.variance);
    println!("  band      +/-{:.6}", report.significance_band);
    println!("  Ljung-Box Q({maxlag}) = {:.4}", report.ljung_box(maxlag));
    let sig = report.significant_lags();
    if sig.is_empty() {
        println!("  no residual autocorrelation outside the band");
    } else {
        println!("  residual acf outside the band at lags {sig:?}");
    }
    println!("lag        acf(resid)    pacf(data)");
    for k in 1..=maxlag {
        println!("{k:<6}{:>14.6}{:>14.6}", report.acf[k], pacf[k - 1]);
    }
    if let Some(prefix) = &a.out_prefix {
        let path = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        let residuals = path("_residuals.csv");
        let acf = path("_acf.csv");
        let pacf_path = path("_pacf.csv");
        let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| io_err(p, e));
        report.write_residuals_csv(create(&residuals)?, start + 1).map_err(|e| io_err(&residuals, e))?;
        report.write_acf_csv(create(&acf)?).map_err(|e| io_err(&acf, e))?;
        let band = significance_band(x.len());
        mrarma::diagnostics::write_acf_csv(create(&pacf_path)?, "pacf", &pacf, 1, band)
            .map_err(|e| io_err(&pacf_path, e))?;
        println!("wrote {}, {}, {}", residuals.display(), acf.display(), pacf_path.display());
    }
    Ok(())
}

/// Six decimals without a sign on values that round to zero.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        s[1..].to_string()
    } else {
        s
    }
}

fn stationary(a: StationaryArgs) -> Result<(), CliError> {
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(CliError::Usage("--tol must lie in (0, 1)".into()));
    }
    let inn = Skellam::new(a.rates.lambda1, a.rates.lambda2)?;
    let (label, dist) = match (a.alpha, a.beta) {
        (Some(alpha), None) => (format!("MRAR(1), alpha1 = {alpha}"), mrar1_stationary(alpha, &inn, a.tol)?),
        (None, Some(beta)) => (format!("MRMA(1), beta1 = {beta}"), mrma1_marginal(beta, &inn, a.tol)?),
        _ => return Err(CliError::Usage("give exactly one of --alpha and --beta".into())),
    };
    println!("{label}, Skellam({}, {})", inn.lambda1(), inn.lambda2());
    println!("support: {}..={}", dist.lo, dist.hi());
    println!("mean: {}", fixed6(dist.mean));
    println!("variance: {}", fixed6(dist.variance));
    if let Some(out) = &a.out {
        let file = File::create(out).map_err(|e| io_err(out, e))?;
        let mut w = BufWriter::new(file);
        dist.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(out, e))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Worker cap from `MRARMA_THREADS`, if set.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("MRARMA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("MRARMA_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn study(a: StudyArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| io_err(&a.config, e))?;
    let cfg: StudyConfig = toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.config.display())))?;
    let report = run_study(&cfg, thread_cap()?)?;
    write_file(&a.out, report.to_csv().as_bytes())?;
    for f in &report.failures {
        eprintln!("replication {} (n = {}, {}) failed: {}", f.replication, f.n, f.method, f.message);
    }
    println!("{} fits, {} failed; summary written to {}", report.attempted, report.failures.len(), a.out.display());
    if report.failure_rate() > MAX_FAILURE_RATE {
        return Err(CliError::Numerical(format!(
            "{:.1}% of replications failed (limit {:.0}%)",
            100.0 * report.failure_rate(),
            100.0 * MAX_FAILURE_RATE
        )));
    }
    Ok(())
}

fn table_cmd(a: TableArgs) -> Result<(), CliError> {
    if a.orders.is_empty() {
        return Err(CliError::Usage("--orders is empty".into()));
    }
    let data = data::load(&a.data)?;
    let mut rows = Vec::new();
    let mut unconverged = false;
    for &p in &a.orders {
        let fit = match fit_mle_mrar(&data.values, p, None) {
            Ok(fit) => fit,
            Err(mrarma::Error::NonConvergence { best, loglik, iterations }) => {
                unconverged = true;
                eprintln!("warning: MRAR({p}) fit did not converge; showing the best point found");
                FitResult::mle_unconverged(p, data.values.len(), &best, loglik, iterations)?
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(TableRow { label: model_label(p), fit });
    }
    println!("{}: n = {}, ML estimates (approximate s.e. in parentheses)", data.label, data.values.len());
    print!("{}", table::render(&rows));
    if unconverged {
        return Err(CliError::Numerical("at least one fit did not converge".into()));
    }
    Ok(())
}
