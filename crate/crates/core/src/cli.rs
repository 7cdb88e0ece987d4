//! Command-line front end. Exit codes: 0 success, 1 solver failure,
//! 2 usage or schema error, 3 resource guard.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::caratheodory::{reduce_support, ReductionCertificate};
use crate::envelope::{build_curve, convexify, default_grid, CurvePoint, EnvelopeCertificate};
use crate::error::Error;
use crate::inner::{kkt_residual, solve_inner, KktReport, RateStatus};
use crate::oracle::{oracle_value, OracleValue};
use crate::outer::{Instance, OuterOptions, OuterResult};
use crate::prob::reduce_cost;
use crate::spec::ProblemSpec;
use crate::tiebreak::{default_delta, tiebreak_from_inner};

/// Residual bounds used by `check-kkt`.
pub const KKT_TOL: f64 = 1e-6;
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "mdr", version, about = "Mismatched distortion-rate solver")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Envelope value at one rate, with its certificate.
    Value {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        rate: f64,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Raw and convexified values over a rate grid, as CSV.
    Curve {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Exhaustive finite-blocklength game value.
    Oracle {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rate: f64,
    },
    /// Recomputes the optimality residuals stored in a value report.
    CheckKkt {
        #[arg(long)]
        report: PathBuf,
    },
    /// Support reduction for the candidates of a value report.
    Reduce {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Absolute encoder-optimality slack of the tie-break.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Auxiliary symbols beyond |U| + 3.
    #[arg(long, default_value_t = 0)]
    pub extra_w: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Grid as START:END:STEP.
    #[arg(long, conflicts_with = "rate_list")]
    pub rates: Option<String>,
    /// Comma-separated rates.
    #[arg(long)]
    pub rate_list: Option<String>,
    /// Points of the default grid on [0, log2 |U|].
    #[arg(long, default_value_t = 21)]
    pub grid_points: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub spec_path: Option<String>,
    pub rate: Option<f64>,
    pub grid: Vec<f64>,
    pub n: Option<usize>,
    pub outer: OuterOptions,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Solver(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(Error::Guard { .. }) => 3,
            CliError::Solver(
                Error::Schema { .. }
                | Error::InvalidDistribution(_)
                | Error::Dimension(_)
                | Error::Input(_),
            ) => 2,
            CliError::Solver(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Solver(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn load_spec(path: &PathBuf) -> CliResult<ProblemSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(ProblemSpec::parse(&text)?)
}

fn parse_rate(s: &str) -> CliResult<f64> {
    let x: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("`{s}` is not a number")))?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(CliError::Usage(format!(
            "rate {x} must be finite and non-negative"
        )));
    }
    Ok(x)
}

/// Resolves the grid options; the default is evenly spaced on `[0, log2 |U|]`.
pub fn resolve_grid(args: &GridArgs, n_u: usize) -> CliResult<Vec<f64>> {
    let mut grid = if let Some(list) = &args.rate_list {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(parse_rate)
            .collect::<CliResult<Vec<f64>>>()?
    } else if let Some(range) = &args.rates {
        let parts: Vec<&str> = range.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(CliError::Usage(format!("`{range}` is not START:END:STEP")));
        };
        let (a, b, step) = (parse_rate(a)?, parse_rate(b)?, parse_rate(step)?);
        if !(step > 0.0) || b < a {
            return Err(CliError::Usage(format!("`{range}` describes no rates")));
        }
        let k = ((b - a) / step + 1e-9).floor() as usize;
        (0..=k).map(|i| a + i as f64 * step).collect()
    } else {
        if args.grid_points == 0 {
            return Err(CliError::Usage("grid needs at least one point".into()));
        }
        default_grid((n_u as f64).log2(), args.grid_points)
    };
    if grid.is_empty() {
        return Err(CliError::Usage("empty rate grid".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

fn outer_options(s: &SearchArgs) -> CliResult<OuterOptions> {
    if let Some(d) = s.delta {
        if !(d > 0.0) {
            return Err(CliError::Usage(format!("delta {d} must be positive")));
        }
    }
    Ok(OuterOptions {
        starts: s.starts,
        seed: s.seed,
        delta: s.delta,
        extra_w: s.extra_w,
        ..OuterOptions::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePoint {
    pub rate: f64,
    /// Time-sharing weight of this point.
    pub weight: f64,
    pub result: OuterResult,
    pub kkt: KktReport,
    /// Tie-broken value of the winning candidate at the run's slack and at
    /// `SENSITIVITY_DELTAS` times the encoder cost range.
    pub delta_sensitivity: Vec<DeltaValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaValue {
    pub delta: f64,
    pub decoder_value: f64,
}

pub const SENSITIVITY_DELTAS: [f64; 2] = [1e-6, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub rate: f64,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub rate: f64,
    pub certificate: ReductionCertificate,
    pub value_before: f64,
    /// Tie-break value re-solved under the reduced weights.
    pub value_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub config: RunConfig,
    pub spec: Value,
    /// Source symbols kept after dropping those of zero mass.
    pub source_symbols: Vec<usize>,
    pub rate: f64,
    /// Best searched value at the query rate itself.
    pub raw_value: Option<f64>,
    /// Envelope of searched values: an upper bound on the true function.
    pub value: f64,
    pub certificate: EnvelopeCertificate,
    pub mixture: Vec<MixturePoint>,
    pub curve: Vec<CurveEntry>,
    pub reductions: Vec<ReductionReport>,
}

fn curve_values(points: &[CurvePoint]) -> Vec<(f64, f64)> {
    points
        .iter()
        .filter_map(|p| p.value.map(|v| (p.rate, v)))
        .collect()
}

fn mixture_point(
    inst: &Instance,
    p: &CurvePoint,
    weight: f64,
    opts: &OuterOptions,
) -> CliResult<MixturePoint> {
    let result = p.result.clone().ok_or_else(|| {
        CliError::Solver(Error::Convergence {
            context: format!("certificate uses failed point at {}", p.rate),
            residual: f64::NAN,
        })
    })?;
    let ce_bar = reduce_cost(&result.best.decoder_kernel, &inst.ce)?;
    let kkt = kkt_residual(
        &result.inner,
        &inst.pu,
        &result.best.lambda,
        &ce_bar,
        p.rate,
    );
    let cd_bar = reduce_cost(&result.best.decoder_kernel, &inst.cd)?;
    let range = if ce_bar.range() > 0.0 {
        ce_bar.range()
    } else {
        1.0
    };
    let deltas = std::iter::once(opts.delta.unwrap_or_else(|| default_delta(&ce_bar)))
        .chain(SENSITIVITY_DELTAS.iter().map(|d| d * range));
    let delta_sensitivity = deltas
        .map(|delta| {
            let tb = tiebreak_from_inner(
                &result.inner,
                &inst.pu,
                &result.best.lambda,
                &ce_bar,
                &cd_bar,
                p.rate,
                result.inner.encoder_value,
                delta,
                &opts.solver,
            )?;
            Ok(DeltaValue {
                delta,
                decoder_value: tb.decoder_value,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(MixturePoint {
        rate: p.rate,
        weight,
        result,
        kkt,
        delta_sensitivity,
    })
}

/// Support reduction followed by a fresh tie-break under the reduced weights.
pub fn reduce_point(
    inst: &Instance,
    point: &MixturePoint,
    opts: &OuterOptions,
) -> CliResult<ReductionReport> {
    let r = &point.result;
    let kernel = &r.best.decoder_kernel;
    let ce_bar = reduce_cost(kernel, &inst.ce)?;
    let cd_bar = reduce_cost(kernel, &inst.cd)?;
    let certificate = reduce_support(&r.best.lambda, &r.inner.p_star, &ce_bar, &cd_bar, &inst.pu)?;
    let lambda = &certificate.lambda_out;
    let inner = solve_inner(&inst.pu, lambda, &ce_bar, point.rate, &opts.solver)?;
    let delta = opts.delta.unwrap_or_else(|| default_delta(&ce_bar));
    let tb = tiebreak_from_inner(
        &inner,
        &inst.pu,
        lambda,
        &ce_bar,
        &cd_bar,
        point.rate,
        inner.encoder_value,
        delta,
        &opts.solver,
    )?;
    Ok(ReductionReport {
        rate: point.rate,
        certificate,
        value_before: r.value,
        value_after: tb.decoder_value,
    })
}

pub fn cmd_value(
    spec: &ProblemSpec,
    rate: f64,
    grid: &[f64],
    mut config: RunConfig,
) -> CliResult<ValueReport> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(CliError::Usage(format!(
            "rate {rate} must be finite and non-negative"
        )));
    }
    let inst = Instance::from_spec(spec)?;
    let (_, kept) = spec.strip_zero_mass();
    let mut grid = grid.to_vec();
    if !grid.contains(&rate) {
        grid.push(rate);
        grid.sort_by(f64::total_cmp);
    }
    config.rate = Some(rate);
    config.grid = grid.clone();
    let points = build_curve(&inst, &grid, &config.outer)?;
    let values = curve_values(&points);
    let cert = convexify(&values, rate)?;
    let at = |r: f64| {
        points
            .iter()
            .find(|p| p.rate == r)
            .expect("certificate rates are grid rates")
    };
    let mut mixture = vec![mixture_point(
        &inst,
        at(cert.r1),
        cert.alpha,
        &config.outer,
    )?];
    if cert.alpha < 1.0 {
        mixture.push(mixture_point(
            &inst,
            at(cert.r2),
            1.0 - cert.alpha,
            &config.outer,
        )?);
    }
    let target = inst.n_u() + 3;
    let reductions = mixture
        .iter()
        .filter(|m| m.result.best.lambda.support().len() > target)
        .map(|m| reduce_point(&inst, m, &config.outer))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ValueReport {
        spec: spec.to_value(),
        source_symbols: kept,
        rate,
        raw_value: at(rate).value,
        value: cert.value,
        certificate: cert,
        mixture,
        curve: points
            .iter()
            .map(|p| CurveEntry {
                rate: p.rate,
                value: p.value,
                error: p.error.clone(),
            })
            .collect(),
        reductions,
        config,
    })
}

/// `%.12g`-style formatting.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{:.11e}", x);
    // the rounded mantissa may have moved to the next decade
    let exp = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (m, e) = sci.split_once('e').expect("scientific format");
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{e}")
    }
}

pub const CSV_HEADER: &str = "rate,c_raw,c_envelope,alpha,r1,r2,c_e_star,info,status,starts";

pub fn cmd_curve(spec: &ProblemSpec, grid: &[f64], config: &RunConfig) -> CliResult<String> {
    if grid.is_empty() {
        return Err(CliError::Usage("empty rate grid".into()));
    }
    let inst = Instance::from_spec(spec)?;
    let points = build_curve(&inst, grid, &config.outer)?;
    let values = curve_values(&points);
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in &points {
        let env = convexify(&values, p.rate)?;
        let f = |x: Option<f64>| x.map(sig12).unwrap_or_default();
        let (ce_star, info, status, starts) = match &p.result {
            Some(r) => (
                Some(r.inner.encoder_value),
                Some(r.tiebreak.info),
                match r.inner.status {
                    RateStatus::RateActive => "rate_active",
                    RateStatus::RateInactive => "rate_inactive",
                },
                r.starts_used.to_string(),
            ),
            None => (None, None, "failed", String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            sig12(p.rate),
            f(p.value),
            sig12(env.value),
            sig12(env.alpha),
            sig12(env.r1),
            sig12(env.r2),
            f(ce_star),
            f(info),
            status,
            starts
        )
        .expect("writing to a string");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config: RunConfig,
    pub spec: Value,
    pub oracle: OracleValue,
    /// Deterministic decoders only: an upper bound on the game value.
    pub upper_bound: bool,
}

pub fn cmd_oracle(
    spec: &ProblemSpec,
    n: usize,
    rate: f64,
    config: RunConfig,
) -> CliResult<OracleReport> {
    if n == 0 {
        return Err(CliError::Usage("n must be at least 1".into()));
    }
    Ok(OracleReport {
        oracle: oracle_value(spec, n, rate)?,
        spec: spec.to_value(),
        upper_bound: true,
        config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCheck {
    pub rate: f64,
    pub report: KktReport,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSummary {
    pub points: Vec<KktCheck>,
    pub ok: bool,
}

fn load_report(path: &PathBuf) -> CliResult<(ValueReport, Instance)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let report: ValueReport = serde_json::from_str(&text).map_err(|e| {
        CliError::Solver(Error::Schema {
            path: "$".into(),
            message: e.to_string(),
        })
    })?;
    let spec = ProblemSpec::from_value(&report.spec)?;
    let inst = Instance::from_spec(&spec)?;
    Ok((report, inst))
}

pub fn check_kkt(report: &ValueReport, inst: &Instance) -> CliResult<KktSummary> {
    let points = report
        .mixture
        .iter()
        .map(|m| {
            let ce_bar = reduce_cost(&m.result.best.decoder_kernel, &inst.ce)?;
            let k = kkt_residual(
                &m.result.inner,
                &inst.pu,
                &m.result.best.lambda,
                &ce_bar,
                m.rate,
            );
            Ok(KktCheck {
                rate: m.rate,
                ok: k.max() <= KKT_TOL && k.feasibility() <= FEASIBILITY_TOL,
                report: k,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(KktSummary {
        ok: points.iter().all(|p| p.ok),
        points,
    })
}

fn to_json<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("reports serialize");
    s.push('\n');
    s
}

fn execute(cli: &Cli) -> CliResult<String> {
    let config = |command: &str, spec: Option<&PathBuf>, outer: OuterOptions| RunConfig {
        command: command.into(),
        spec_path: spec.map(|p| p.display().to_string()),
        rate: None,
        grid: Vec::new(),
        n: None,
        outer,
    };
    match &cli.command {
        Command::Value {
            spec,
            rate,
            search,
            grid,
        } => {
            let s = load_spec(spec)?;
            let g = resolve_grid(grid, s.n_u())?;
            let rate = parse_rate(&rate.to_string())?;
            let cfg = config("value", Some(spec), outer_options(search)?);
            Ok(to_json(&cmd_value(&s, rate, &g, cfg)?))
        }
        Command::Curve { spec, search, grid } => {
            let s = load_spec(spec)?;
            let g = resolve_grid(grid, s.n_u())?;
            let mut cfg = config("curve", Some(spec), outer_options(search)?);
            cfg.grid = g.clone();
            cmd_curve(&s, &g, &cfg)
        }
        Command::Oracle { spec, n, rate } => {
            let s = load_spec(spec)?;
            let rate = parse_rate(&rate.to_string())?;
            let mut cfg = config("oracle", Some(spec), OuterOptions::default());
            cfg.rate = Some(rate);
            cfg.n = Some(*n);
            Ok(to_json(&cmd_oracle(&s, *n, rate, cfg)?))
        }
        Command::CheckKkt { report } => {
            let (r, inst) = load_report(report)?;
            let summary = check_kkt(&r, &inst)?;
            let text = to_json(&summary);
            if summary.ok {
                Ok(text)
            } else {
                print!("{text}");
                Err(CliError::Solver(Error::Convergence {
                    context: "stored solution fails the optimality check".into(),
                    residual: summary
                        .points
                        .iter()
                        .map(|p| p.report.max())
                        .fold(0.0, f64::max),
                }))
            }
        }
        Command::Reduce { report } => {
            let (r, inst) = load_report(report)?;
            let reductions = r
                .mixture
                .iter()
                .map(|m| reduce_point(&inst, m, &r.config.outer))
                .collect::<CliResult<Vec<_>>>()?;
            Ok(to_json(&reductions))
        }
    }
}

fn execute_with_threads(cli: &Cli) -> CliResult<String> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| execute(cli))
    }
    #[cfg(not(feature = "parallel"))]
    {
        execute(cli)
    }
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute_with_threads(&cli) {
        Ok(text) => {
            if let Some(path) = &cli.out {
                if let Err(e) = std::fs::write(path, text) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return 2;
                }
            } else {
                print!("{text}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
