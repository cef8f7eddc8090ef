//! The `delaycea` command line: `fit`, `rmst`, `cea` and `simulate`.
//!
//! Exit status is 0 on success, 1 on usage or input errors and 2 when
//! estimation fails; in the last case the report is still written, with the
//! failure recorded in its error section.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::asymptotics::{var_rmst, Convention};
use crate::cea::{
    cost_effectiveness, inb_curve, tail_pair, CostSpec, Interval, DENOM_FLOOR, Z_975,
};
use crate::cox::{fit, CoxConfig, CoxFit};
use crate::data::{resolve_profile, CovariateProfile, Dataset, DelaySpec, ProfileAtoms};
use crate::error::CeaError;
use crate::io::{
    format_convention, format_delay_draw, format_delay_hazard, format_delays, format_list,
    format_sim_profile, ingest_csv, parse_analysis_toml, parse_convention, parse_delays,
    parse_design_toml, parse_grid, parse_list, parse_profile, parse_scenario, write_csv,
    AnalysisConfig, CsvOptions, DelaySource, DesignConfig, Ingested,
};
use crate::report::{
    finite, CeaRow, Coefficient, CurvePoint, FitSummary, GroupSummary, Report, RmstRow,
    StudyRecord, StudySummary, DEFAULT_PRECISION, UNIT_CURRENCY, UNIT_ICER, UNIT_LOG_HR, UNIT_NATS,
    UNIT_PROPORTION, UNIT_YEARS,
};
use crate::rmst::{rmst, RmstEstimate, Scenario};
use crate::sim::{generate_dataset, run_study, StudyScenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ESTIMATION: i32 = 2;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "DELAYCEA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "delaycea",
    version,
    about = "Cost-effectiveness of delayed treatment switches from censored survival data"
)]
pub struct Cli {
    /// Worker threads for parallel sections (all cores when unset)
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the stratified Cox model
    Fit(FitArgs),
    /// Restricted mean survival time per group
    Rmst(RmstArgs),
    /// ICER and INB of each group against group 1
    Cea(CeaArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the report here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `human` or `jsonl`
    #[arg(long)]
    pub format: Option<String>,
    /// Significant digits in the human format
    #[arg(long)]
    pub precision: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// TOML file with analysis settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Horizon η in years
    #[arg(long)]
    pub eta: Option<f64>,
    /// `auto`, `counting` or `raw`
    #[arg(long)]
    pub shape: Option<String>,
    /// `strict` (0/1 only) or `lenient`
    #[arg(long)]
    pub events: Option<String>,
    #[arg(long)]
    pub col_id: Option<String>,
    #[arg(long)]
    pub col_entry: Option<String>,
    #[arg(long)]
    pub col_exit: Option<String>,
    #[arg(long)]
    pub col_event: Option<String>,
    #[arg(long)]
    pub col_group: Option<String>,
    #[arg(long)]
    pub col_delay: Option<String>,
    #[arg(long)]
    pub col_time: Option<String>,
    #[arg(long)]
    pub col_switch_time: Option<String>,
    #[arg(long)]
    pub col_switch_group: Option<String>,
    /// Comma-separated covariate columns (default: every column no --col-* option names)
    #[arg(long)]
    pub covariates: Option<String>,
    /// Ridge penalty on the Cox log partial likelihood
    #[arg(long)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// `strt`, `dly` or `dst`
    #[arg(long)]
    pub scenario: Option<String>,
    /// Start of the STRT window, years
    #[arg(long)]
    pub r: Option<f64>,
    /// Common delay of the DLY scenario, years
    #[arg(long)]
    pub a: Option<f64>,
    /// DST delay distribution: none, fixed:δ, empirical, discrete:p@δ;…, grid, mixexp:p0,rate
    #[arg(long)]
    pub delays: Option<String>,
    /// Covariate profile: observed, fixed:x1,… or weighted:w@x1,…;…
    #[arg(long)]
    pub profile: Option<String>,
    /// Martingale pairing convention: min or max
    #[arg(long)]
    pub convention: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RmstArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CeaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Cost per person-year by group, comma-separated from group 1
    #[arg(long)]
    pub costs: Option<String>,
    /// Willingness to pay per life-year
    #[arg(long)]
    pub theta: Option<f64>,
    /// INB-vs-θ curve: start:stop:step or a comma list
    #[arg(long)]
    pub theta_grid: Option<String>,
    /// ICER-vs-η curve: start:stop:step or a comma list
    #[arg(long)]
    pub eta_grid: Option<String>,
    /// Write the curve points as CSV here
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML design file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda01: Option<f64>,
    #[arg(long)]
    pub lambda02: Option<f64>,
    /// λ02/λ01, instead of --lambda02
    #[arg(long)]
    pub hazard_ratio: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub covariate_p: Option<f64>,
    #[arg(long)]
    pub censor_rate: Option<f64>,
    /// Fraction of group-2 subjects with a delay
    #[arg(long)]
    pub delay_fraction: Option<f64>,
    /// uniform:low,high or discrete:p@δ;…
    #[arg(long)]
    pub delay_draw: Option<String>,
    /// switch or treatment2
    #[arg(long)]
    pub delay_hazard: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    /// DST delay distribution
    #[arg(long)]
    pub delays: Option<String>,
    #[arg(long)]
    pub costs: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// population or observed
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub convention: Option<String>,
    /// Comma-separated scenarios
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Write the replicate-0 dataset as CSV here
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Jsonl,
}

/// Where and how a report is written.
#[derive(Debug, Clone)]
pub struct Output {
    pub path: Option<PathBuf>,
    pub format: Format,
    pub precision: usize,
}

impl Output {
    fn resolve(
        args: &OutputArgs,
        out: Option<&str>,
        format: Option<&str>,
        precision: Option<usize>,
    ) -> Result<Self, String> {
        let format = match args.format.as_deref().or(format).unwrap_or("human") {
            "human" => Format::Human,
            "jsonl" => Format::Jsonl,
            f => return Err(format!("unknown format '{f}' (expected human or jsonl)")),
        };
        let precision = args.precision.or(precision).unwrap_or(DEFAULT_PRECISION);
        if !(1..=17).contains(&precision) {
            return Err(format!("precision {precision} outside 1..=17"));
        }
        Ok(Self {
            path: args.out.clone().or_else(|| out.map(PathBuf::from)),
            format,
            precision,
        })
    }

    pub fn render(&self, report: &Report) -> String {
        match self.format {
            Format::Human => report.to_human(self.precision),
            Format::Jsonl => report.to_jsonl(),
        }
    }

    fn write(&self, report: &Report) -> Result<(), String> {
        let text = self.render(report);
        match &self.path {
            Some(p) => {
                std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display()))
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// A command's report and exit status.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub status: i32,
}

enum Failure {
    Usage(String),
    Estimation(CeaError),
}

impl From<CeaError> for Failure {
    fn from(e: CeaError) -> Self {
        Failure::Estimation(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn parse_or_usage<T>(r: crate::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

/// Parses `args` (including the program name), runs the command and writes
/// its report. Returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli) {
        Ok((outcome, output)) => {
            if let Err(msg) = output.write(&outcome.report) {
                eprintln!("error: {msg}");
                return EXIT_USAGE;
            }
            for e in &outcome.report.errors {
                eprintln!("error: {e}");
            }
            outcome.status
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}

/// Runs a parsed command without writing the report. `Err` is a usage error.
pub fn execute(cli: &Cli) -> Result<(Outcome, Output), String> {
    if cli.threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args, cli.threads),
        other => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(t) = cli.threads {
                builder = builder.num_threads(t);
            }
            let pool = builder.build().map_err(|e| format!("thread pool: {e}"))?;
            pool.install(|| match other {
                Command::Fit(a) => cmd_fit(a),
                Command::Rmst(a) => cmd_rmst(a),
                Command::Cea(a) => cmd_cea(a),
                Command::Simulate(_) => unreachable!("handled above"),
            })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<AnalysisConfig, String> {
    match path {
        None => Ok(AnalysisConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            parse_analysis_toml(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

struct Loaded {
    input: String,
    ingested: Ingested,
    ridge: f64,
}

fn load_data(args: &DataArgs, cfg: &AnalysisConfig, eta: Option<f64>) -> Result<Loaded, String> {
    let input = args
        .input
        .clone()
        .or_else(|| cfg.input.as_ref().map(PathBuf::from))
        .ok_or("--input is required")?;
    let mut options = CsvOptions::default();
    if let Some(m) = &cfg.columns {
        options.mapping = m.clone();
    }
    if let Some(s) = args.shape.as_deref().or(cfg.shape.as_deref()) {
        options.shape = s.parse().map_err(|e: CeaError| e.to_string())?;
    }
    if let Some(s) = args.events.as_deref().or(cfg.events.as_deref()) {
        options.events = s.parse().map_err(|e: CeaError| e.to_string())?;
    }
    let m = &mut options.mapping;
    for (flag, slot) in [
        (&args.col_id, &mut m.id),
        (&args.col_entry, &mut m.entry),
        (&args.col_exit, &mut m.exit),
        (&args.col_event, &mut m.event),
        (&args.col_group, &mut m.group),
        (&args.col_delay, &mut m.delay),
        (&args.col_time, &mut m.time),
        (&args.col_switch_time, &mut m.switch_time),
        (&args.col_switch_group, &mut m.switch_group),
    ] {
        if let Some(v) = flag {
            *slot = v.clone();
        }
    }
    if let Some(c) = &args.covariates {
        m.covariates = Some(
            c.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        );
    }
    let ridge = args.ridge.or(cfg.ridge).unwrap_or(0.0);
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err("--ridge must be non-negative".into());
    }
    let mut ingested =
        ingest_csv(&input, &options, eta.unwrap_or(f64::INFINITY)).map_err(|e| match e {
            CeaError::Rows(issues) => {
                let mut s = format!("{}: {} malformed row(s)", input.display(), issues.len());
                for i in issues.iter().take(20) {
                    s.push_str(&format!("\n  line {}: {}", i.line, i.message));
                }
                s
            }
            e => format!("{}: {e}", input.display()),
        })?;
    if eta.is_none() {
        ingested.dataset.eta = ingested
            .dataset
            .records
            .iter()
            .map(|r| r.exit)
            .fold(0.0, f64::max);
    }
    Ok(Loaded {
        input: input.display().to_string(),
        ingested,
        ridge,
    })
}

fn fit_section(report: &mut Report, ds: &Dataset, names: &[String], fitted: &CoxFit) {
    report.fit = Some(FitSummary {
        subjects: ds.n_subjects(),
        records: ds.records.len(),
        events: ds.records.iter().filter(|r| r.event).count(),
        iterations: fitted.iterations,
        converged: fitted.converged,
        loglik: finite(fitted.loglik),
        loglik_unit: UNIT_NATS.into(),
    });
    let se = fitted.beta_se();
    for (k, name) in names.iter().enumerate() {
        let b = fitted.beta[k];
        let s = finite(se[k]);
        report.coefficients.push(Coefficient {
            name: name.clone(),
            estimate: finite(b),
            se: s,
            ci_lower: s.and_then(|s| finite(b - Z_975 * s)),
            ci_upper: s.and_then(|s| finite(b + Z_975 * s)),
            unit: UNIT_LOG_HR.into(),
        });
    }
    if !fitted.converged {
        report.warnings.push(format!(
            "Newton iteration stopped after {} iterations without meeting the tolerance",
            fitted.iterations
        ));
    }
}

fn group_section(report: &mut Report, ds: &Dataset) {
    for s in ds.strata() {
        report.groups.push(GroupSummary {
            group: s,
            records: ds.n_stratum(s),
            events: ds
                .records
                .iter()
                .filter(|r| r.stratum == s && r.event)
                .count(),
            min_delay: ds.min_delay(s).and_then(finite),
            delay_unit: UNIT_YEARS.into(),
        });
    }
}

fn run_fit(report: &mut Report, loaded: &Loaded) -> Result<CoxFit, CeaError> {
    let ds = &loaded.ingested.dataset;
    group_section(report, ds);
    let cfg = CoxConfig {
        ridge: loaded.ridge,
        ..CoxConfig::default()
    };
    let fitted = fit(ds, &cfg)?;
    fit_section(report, ds, &loaded.ingested.covariate_names, &fitted);
    Ok(fitted)
}

pub fn cmd_fit(args: &FitArgs) -> Result<(Outcome, Output), String> {
    let cfg = load_config(args.data.config.as_deref())?;
    let output = Output::resolve(
        &args.output,
        cfg.out.as_deref(),
        cfg.format.as_deref(),
        cfg.precision,
    )?;
    let eta = args.data.eta.or(cfg.eta);
    let loaded = load_data(&args.data, &cfg, eta)?;
    let mut report = Report::new("fit");
    report.echo("input", &loaded.input);
    report.echo(
        "shape",
        format!("{:?}", loaded.ingested.shape).to_lowercase(),
    );
    if loaded.ridge > 0.0 {
        report.echo("ridge", loaded.ridge);
    }
    let status = match run_fit(&mut report, &loaded) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            report.fail(e);
            EXIT_ESTIMATION
        }
    };
    Ok((Outcome { report, status }, output))
}

/// Scenario settings after merging the config file with the flags.
struct Plan {
    scenario: Scenario,
    lower: f64,
    delays: DelaySource,
    delays_text: Option<String>,
    profile: CovariateProfile,
    profile_text: String,
    convention: Convention,
    eta: f64,
}

fn plan(args: &ScenarioArgs, cfg: &AnalysisConfig, eta: Option<f64>) -> Result<Plan, Failure> {
    let Some(eta) = eta else {
        return usage("--eta is required");
    };
    if !(eta.is_finite() && eta > 0.0) {
        return usage("--eta must be positive");
    }
    let Some(sc) = args.scenario.as_deref().or(cfg.scenario.as_deref()) else {
        return usage("--scenario is required (strt, dly or dst)");
    };
    let scenario = parse_or_usage(parse_scenario(sc))?;
    let r = args.r.or(cfg.r);
    let a = args.a.or(cfg.a);
    let delays_text = args.delays.clone().or_else(|| cfg.delays.clone());
    let (lower, delays) = match scenario {
        Scenario::Strt => {
            if a.is_some() || delays_text.is_some() {
                return usage("scenario strt takes --r only; remove --a and --delays");
            }
            let Some(r) = r else {
                return usage("scenario strt requires --r");
            };
            (r, DelaySource::Spec(DelaySpec::None))
        }
        Scenario::Dly => {
            if r.is_some() || delays_text.is_some() {
                return usage("scenario dly takes --a only; remove --r and --delays");
            }
            let Some(a) = a else {
                return usage("scenario dly requires --a");
            };
            (a, DelaySource::Spec(DelaySpec::None))
        }
        Scenario::Dst => {
            if r.is_some() || a.is_some() {
                return usage("scenario dst takes --delays only; remove --r and --a");
            }
            let Some(d) = &delays_text else {
                return usage("scenario dst requires --delays");
            };
            (0.0, parse_or_usage(parse_delays(d))?)
        }
    };
    if !(lower.is_finite() && lower >= 0.0) {
        return usage("--r and --a must be non-negative");
    }
    let profile_text = args
        .profile
        .clone()
        .or_else(|| cfg.profile.clone())
        .unwrap_or_else(|| "observed".into());
    let profile = parse_or_usage(parse_profile(&profile_text))?;
    let convention = match args.convention.as_deref().or(cfg.convention.as_deref()) {
        Some(c) => parse_or_usage(parse_convention(c))?,
        None => Convention::default(),
    };
    Ok(Plan {
        scenario,
        lower,
        delays,
        delays_text,
        profile,
        profile_text,
        convention,
        eta,
    })
}

fn echo_plan(report: &mut Report, plan: &Plan) {
    report.echo("eta", plan.eta);
    report.echo("scenario", plan.scenario);
    match plan.scenario {
        Scenario::Strt => report.echo("r", plan.lower),
        Scenario::Dly => report.echo("a", plan.lower),
        Scenario::Dst => report.echo("delays", plan.delays_text.as_deref().unwrap_or("")),
    }
    report.echo("profile", &plan.profile_text);
    report.echo("convention", format_convention(plan.convention));
}

/// Switcher delays pooled over every group above 1.
fn pooled_delays(ds: &Dataset) -> Vec<f64> {
    ds.records
        .iter()
        .filter(|r| r.stratum > 1)
        .map(|r| r.delay)
        .collect()
}

fn delay_spec(plan: &Plan, ds: &Dataset) -> DelaySpec {
    match &plan.delays {
        DelaySource::Spec(s) => s.clone(),
        DelaySource::Empirical => DelaySpec::Empirical(pooled_delays(ds)),
    }
}

struct Estimated {
    fitted: CoxFit,
    atoms: ProfileAtoms,
    spec: DelaySpec,
    estimates: Vec<RmstEstimate>,
}

fn rmst_rows(
    report: &mut Report,
    fitted: &CoxFit,
    plan: &Plan,
    estimates: &[RmstEstimate],
) -> Result<(), CeaError> {
    let mut unsupported = false;
    for e in estimates {
        let se = match e.influence {
            Some(_) => finite(var_rmst(fitted, e, plan.convention)?.se()),
            None => {
                unsupported = true;
                None
            }
        };
        let iv = Interval::new(e.value, se);
        report.rmst.push(RmstRow {
            scenario: plan.scenario.to_string(),
            group: e.stratum,
            window_lower: finite(e.window.0),
            window_upper: finite(e.window.1),
            estimate: finite(iv.estimate),
            se: iv.se,
            ci_lower: iv.lower,
            ci_upper: iv.upper,
            tail_estimate: finite(e.value_tail),
            unit: UNIT_YEARS.into(),
        });
        for d in &e.diagnostics {
            report.warnings.push(format!("group {}: {d}", e.stratum));
        }
    }
    if unsupported {
        report
            .warnings
            .push(CeaError::UnsupportedVariance.to_string());
    }
    Ok(())
}

fn run_rmst(report: &mut Report, loaded: &Loaded, plan: &Plan) -> Result<Estimated, CeaError> {
    let fitted = run_fit(report, loaded)?;
    let ds = &loaded.ingested.dataset;
    let atoms = resolve_profile(&plan.profile, ds)?;
    let spec = delay_spec(plan, ds);
    let estimates = ds
        .strata()
        .into_iter()
        .map(|s| {
            rmst(
                &fitted,
                s,
                &atoms,
                plan.scenario,
                plan.lower,
                &spec,
                plan.eta,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    rmst_rows(report, &fitted, plan, &estimates)?;
    Ok(Estimated {
        fitted,
        atoms,
        spec,
        estimates,
    })
}

fn analysis_inputs(
    data: &DataArgs,
    scenario: &ScenarioArgs,
    output: &OutputArgs,
) -> Result<(AnalysisConfig, Output, Plan), Failure> {
    let cfg = load_config(data.config.as_deref()).map_err(Failure::Usage)?;
    let out = Output::resolve(
        output,
        cfg.out.as_deref(),
        cfg.format.as_deref(),
        cfg.precision,
    )
    .map_err(Failure::Usage)?;
    let plan = plan(scenario, &cfg, data.eta.or(cfg.eta))?;
    Ok((cfg, out, plan))
}

fn usage_only<T>(r: Result<T, Failure>) -> Result<T, String> {
    r.map_err(|f| match f {
        Failure::Usage(m) => m,
        Failure::Estimation(e) => e.to_string(),
    })
}

pub fn cmd_rmst(args: &RmstArgs) -> Result<(Outcome, Output), String> {
    let (cfg, output, plan) =
        usage_only(analysis_inputs(&args.data, &args.scenario, &args.output))?;
    let loaded = load_data(&args.data, &cfg, Some(plan.eta))?;
    let mut report = Report::new("rmst");
    report.echo("input", &loaded.input);
    echo_plan(&mut report, &plan);
    let status = match run_rmst(&mut report, &loaded, &plan) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            report.fail(e);
            EXIT_ESTIMATION
        }
    };
    Ok((Outcome { report, status }, output))
}

struct CeaPlan {
    costs: CostSpec,
    theta_grid: Option<Vec<f64>>,
    eta_grid: Option<Vec<f64>>,
}

fn cea_plan(args: &CeaArgs, cfg: &AnalysisConfig) -> Result<CeaPlan, String> {
    let rates = match (&args.costs, &cfg.costs) {
        (Some(s), _) => parse_list(s).map_err(|e| format!("--costs: {e}"))?,
        (None, Some(c)) => c.clone(),
        (None, None) => {
            return Err("--costs is required (comma list by group, from group 1)".into())
        }
    };
    let theta = args
        .theta
        .or(cfg.theta)
        .ok_or("--theta is required (willingness to pay per life-year)")?;
    let costs = CostSpec::new(rates, theta).map_err(|e| e.to_string())?;
    let grid = |flag: &Option<String>,
                conf: &Option<String>,
                name: &str|
     -> Result<Option<Vec<f64>>, String> {
        match flag.as_ref().or(conf.as_ref()) {
            None => Ok(None),
            Some(s) => parse_grid(s).map(Some).map_err(|e| format!("{name}: {e}")),
        }
    };
    Ok(CeaPlan {
        costs,
        theta_grid: grid(&args.theta_grid, &cfg.theta_grid, "--theta-grid")?,
        eta_grid: grid(&args.eta_grid, &cfg.eta_grid, "--eta-grid")?,
    })
}

fn interval_fields(iv: &Interval) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    (
        finite(iv.estimate),
        iv.se.and_then(finite),
        iv.lower.and_then(finite),
        iv.upper.and_then(finite),
    )
}

fn run_cea(
    report: &mut Report,
    loaded: &Loaded,
    plan: &Plan,
    cp: &CeaPlan,
) -> Result<(), CeaError> {
    let est = run_rmst(report, loaded, plan)?;
    let Some(first) = est.estimates.first().filter(|e| e.stratum == 1) else {
        return Err(CeaError::EmptyStratum(1));
    };
    let scenario = plan.scenario.to_string();
    for ej in est.estimates.iter().filter(|e| e.stratum > 1) {
        let ce = cost_effectiveness(
            &est.fitted,
            first,
            ej,
            &cp.costs,
            DENOM_FLOOR,
            plan.convention,
        )?;
        let row = |measure: &str, theta: Option<f64>, iv: Option<Interval>, unit: &str| {
            let (estimate, se, lo, hi) = iv
                .as_ref()
                .map_or((None, None, None, None), interval_fields);
            CeaRow {
                scenario: scenario.clone(),
                group: ej.stratum,
                reference: 1,
                measure: measure.into(),
                theta,
                theta_unit: UNIT_ICER.into(),
                estimate,
                se,
                ci_lower: lo,
                ci_upper: hi,
                unit: unit.into(),
            }
        };
        report.cea.push(row("icer", None, ce.icer, UNIT_ICER));
        report
            .cea
            .push(row("inb", Some(ce.theta), Some(ce.inb), UNIT_CURRENCY));
        for w in &ce.warnings {
            if w != &CeaError::UnsupportedVariance.to_string() {
                report
                    .warnings
                    .push(format!("group {} vs 1: {w}", ej.stratum));
            }
        }
        if let Some(grid) = &cp.theta_grid {
            let pair = tail_pair(&est.fitted, first, ej, plan.convention)?;
            let c1 = cp.costs.rate(1)?;
            let cj = cp.costs.rate(ej.stratum)?;
            for (theta, iv) in inb_curve(&pair, c1, cj, grid)? {
                let (estimate, se, lo, hi) = interval_fields(&iv);
                report.curves.push(CurvePoint {
                    curve: "inb_vs_theta".into(),
                    scenario: scenario.clone(),
                    group: ej.stratum,
                    x: finite(theta),
                    x_unit: UNIT_ICER.into(),
                    estimate,
                    se,
                    ci_lower: lo,
                    ci_upper: hi,
                    unit: UNIT_CURRENCY.into(),
                });
            }
        }
        if let Some(grid) = &cp.eta_grid {
            for &eta in grid {
                let point = (|| -> Result<Option<Interval>, CeaError> {
                    let e1 = rmst(
                        &est.fitted,
                        1,
                        &est.atoms,
                        plan.scenario,
                        plan.lower,
                        &est.spec,
                        eta,
                    )?;
                    let e2 = rmst(
                        &est.fitted,
                        ej.stratum,
                        &est.atoms,
                        plan.scenario,
                        plan.lower,
                        &est.spec,
                        eta,
                    )?;
                    Ok(cost_effectiveness(
                        &est.fitted,
                        &e1,
                        &e2,
                        &cp.costs,
                        DENOM_FLOOR,
                        plan.convention,
                    )?
                    .icer)
                })();
                let iv = match point {
                    Ok(iv) => iv,
                    Err(e) => {
                        report
                            .warnings
                            .push(format!("icer_vs_eta at eta = {eta}: {e}"));
                        None
                    }
                };
                let (estimate, se, lo, hi) = iv
                    .as_ref()
                    .map_or((None, None, None, None), interval_fields);
                report.curves.push(CurvePoint {
                    curve: "icer_vs_eta".into(),
                    scenario: scenario.clone(),
                    group: ej.stratum,
                    x: finite(eta),
                    x_unit: UNIT_YEARS.into(),
                    estimate,
                    se,
                    ci_lower: lo,
                    ci_upper: hi,
                    unit: UNIT_ICER.into(),
                });
            }
        }
    }
    Ok(())
}

pub fn cmd_cea(args: &CeaArgs) -> Result<(Outcome, Output), String> {
    let (cfg, output, plan) =
        usage_only(analysis_inputs(&args.data, &args.scenario, &args.output))?;
    let cp = cea_plan(args, &cfg)?;
    let loaded = load_data(&args.data, &cfg, Some(plan.eta))?;
    let groups = loaded.ingested.dataset.strata();
    if let Some(&max) = groups.last() {
        if max > cp.costs.rates.len() {
            return Err(format!(
                "--costs lists {} rate(s) but the data has group {max}",
                cp.costs.rates.len()
            ));
        }
    }
    let mut report = Report::new("cea");
    report.echo("input", &loaded.input);
    echo_plan(&mut report, &plan);
    report.echo("costs", format_list(&cp.costs.rates));
    report.echo("theta", cp.costs.theta);
    if let Some(g) = &cp.theta_grid {
        report.echo("theta_grid", format_list(g));
    }
    if let Some(g) = &cp.eta_grid {
        report.echo("eta_grid", format_list(g));
    }
    let status = match run_cea(&mut report, &loaded, &plan, &cp) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report.fail(e);
            EXIT_ESTIMATION
        }
    };
    if let Some(path) = &args.series {
        std::fs::write(path, report.curves_csv())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok((Outcome { report, status }, output))
}

fn design_config(args: &SimulateArgs) -> Result<DesignConfig, String> {
    let base = match &args.config {
        None => DesignConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            parse_design_toml(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
    };
    let costs = match &args.costs {
        Some(s) => Some(parse_list(s).map_err(|e| format!("--costs: {e}"))?),
        None => None,
    };
    let scenarios = args
        .scenario
        .as_ref()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let flags = DesignConfig {
        n: args.n,
        lambda01: args.lambda01,
        lambda02: args.lambda02,
        hazard_ratio: args.hazard_ratio,
        beta: args.beta,
        covariate_p: args.covariate_p,
        censor_rate: args.censor_rate,
        delay_fraction: args.delay_fraction,
        delay_draw: args.delay_draw.clone(),
        delay_hazard: args.delay_hazard.clone(),
        eta: args.eta,
        r: args.r,
        a: args.a,
        dst_delays: args.delays.clone(),
        costs,
        theta: args.theta,
        replicates: args.replicates,
        seed: args.seed,
        profile: args.profile.clone(),
        convention: args.convention.clone(),
        scenarios,
        out: None,
        format: None,
        precision: None,
    };
    let mut merged = base.merged(&flags);
    // A flag for one of the two ways of setting λ02 replaces the file's other one.
    if flags.lambda02.is_some() {
        merged.hazard_ratio = None;
    }
    if flags.hazard_ratio.is_some() {
        merged.lambda02 = None;
    }
    Ok(merged)
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    threads: Option<usize>,
) -> Result<(Outcome, Output), String> {
    let cfg = design_config(args)?;
    let output = Output::resolve(
        &args.output,
        cfg.out.as_deref(),
        cfg.format.as_deref(),
        cfg.precision,
    )?;
    let design = cfg.to_design().map_err(|e| e.to_string())?;
    let scenarios: Vec<StudyScenario> = cfg
        .scenario_list()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| StudyScenario::new(s.to_string(), s))
        .collect();
    let mut report = Report::new("simulate");
    let d = &design;
    report.echo("n", d.n);
    report.echo("lambda01", d.lambda01);
    report.echo("lambda02", d.lambda02);
    report.echo("beta", d.beta);
    report.echo("covariate_p", d.covariate_p);
    report.echo("censor_rate", d.censor_rate);
    report.echo("delay_fraction", d.delay_fraction);
    report.echo("delay_draw", format_delay_draw(&d.delay_draw));
    report.echo("delay_hazard", format_delay_hazard(d.delay_hazard));
    report.echo("eta", d.eta);
    report.echo("r", d.r);
    report.echo("a", d.a);
    report.echo("dst_delays", format_delays(&d.dst_delays));
    report.echo("costs", format_list(&d.costs.rates));
    report.echo("theta", d.costs.theta);
    report.echo("replicates", d.replicates);
    report.echo("seed", d.seed);
    report.echo("profile", format_sim_profile(d.profile));
    report.echo("convention", format_convention(d.convention));
    report.echo(
        "scenarios",
        scenarios
            .iter()
            .map(|s| s.label.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    if let Some(path) = &args.emit_data {
        let (ds, _) = generate_dataset(d, &mut d.rng(0)).map_err(|e| e.to_string())?;
        let file = std::fs::File::create(path)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        write_csv(&ds, &["x".to_string()], file).map_err(|e| e.to_string())?;
    }
    let status = match run_study(d, &scenarios, threads) {
        Ok(res) => {
            report.study = Some(StudySummary {
                replicates: res.replicates,
                failures: res.failures,
                failure_rate: finite(res.failure_rate),
                censoring_rate_group1: finite(res.mean_censoring_rate[0]),
                censoring_rate_group2: finite(res.mean_censoring_rate[1]),
                missing_treatment: finite(res.mean_missing_treatment),
                unit: UNIT_PROPORTION.into(),
            });
            for row in &res.rows {
                report.study_rows.push(StudyRecord {
                    scenario: row.scenario.clone(),
                    estimand: row.estimand.clone(),
                    truth: finite(row.truth),
                    mean: finite(row.mean),
                    rel_bias_pct: finite(row.rel_bias_pct),
                    mean_se: finite(row.mean_se),
                    empirical_sd: finite(row.empirical_sd),
                    se_rel_bias_pct: finite(row.se_rel_bias_pct),
                    coverage: finite(row.coverage),
                    count: row.count,
                    unit: match row.estimand.as_str() {
                        "icer" => UNIT_ICER,
                        "inb" => UNIT_CURRENCY,
                        _ => UNIT_YEARS,
                    }
                    .into(),
                });
            }
            report.warnings.extend(res.warnings);
            EXIT_OK
        }
        Err(e) => {
            report.fail(e);
            EXIT_ESTIMATION
        }
    };
    Ok((Outcome { report, status }, output))
}
