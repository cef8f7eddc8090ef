//! Simulation designs with exponential survival, closed-form targets and a
//! replicate harness for bias and coverage.

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{var_rmst, Convention};
use crate::cea::{cost_effectiveness, CostSpec, Interval, DENOM_FLOOR};
use crate::cox::{fit, CoxConfig};
use crate::data::{
    resolve_profile, split_switcher_history, CovariateProfile, Dataset, DelaySpec, ProfileAtoms,
    RawSubject, SubjectRecord,
};
use crate::error::{CeaError, Result};
use crate::rmst::{rmst, Scenario};

/// Delay values of the ten-atom DST grid, `0.05, 0.15, …, 0.95`.
pub const DST_GRID: [f64; 10] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];

/// The ten-atom grid with uniform weights, or with the given weights.
pub fn dst_grid(weights: Option<&[f64]>) -> Result<DelaySpec> {
    let w: Vec<f64> = match weights {
        None => vec![0.1; DST_GRID.len()],
        Some(w) if w.len() == DST_GRID.len() => w.to_vec(),
        Some(w) => {
            return Err(CeaError::InvalidInput(format!(
                "expected {} grid weights, got {}",
                DST_GRID.len(),
                w.len()
            )))
        }
    };
    Ok(DelaySpec::Discrete(w.into_iter().zip(DST_GRID).collect()))
}

/// Distribution of delays among delayed group-2 subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelayDraw {
    Uniform {
        low: f64,
        high: f64,
    },
    /// `(probability, δ)` atoms.
    Atoms(Vec<(f64, f64)>),
}

/// Death hazard of a delayed group-2 subject before the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DelayHazard {
    /// Treatment-1 hazard until `δ`, treatment-2 hazard afterwards.
    #[default]
    Switch,
    /// Treatment-2 hazard from time zero; the delay only truncates.
    Treatment2,
}

/// Covariate distribution the simulated RMSTs are averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProfileMode {
    /// `X ~ Ber(covariate_p)`, the design distribution.
    #[default]
    Population,
    /// The subjects of each replicate.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    /// Per year.
    pub lambda01: f64,
    /// Per year.
    pub lambda02: f64,
    pub beta: f64,
    pub covariate_p: f64,
    /// Per year.
    pub censor_rate: f64,
    /// Fraction of group-2 subjects with a positive delay.
    pub delay_fraction: f64,
    pub delay_draw: DelayDraw,
    pub delay_hazard: DelayHazard,
    /// Years.
    pub eta: f64,
    pub r: f64,
    pub a: f64,
    /// Delay distribution for the DST scenario.
    pub dst_delays: DelaySpec,
    pub costs: CostSpec,
    pub replicates: usize,
    pub seed: u64,
    pub profile: ProfileMode,
    pub convention: Convention,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n: 1000,
            lambda01: 1.0,
            lambda02: 0.5,
            beta: -2.0,
            covariate_p: 0.9,
            censor_rate: 0.01,
            delay_fraction: 0.0,
            delay_draw: DelayDraw::Uniform {
                low: 0.0,
                high: 1.0,
            },
            delay_hazard: DelayHazard::Switch,
            eta: 10.0,
            r: 0.5,
            a: 0.5,
            dst_delays: dst_grid(None).expect("ten weights"),
            costs: CostSpec {
                rates: vec![115.0, 330.0],
                theta: 1352.0,
            },
            replicates: 200,
            seed: 20240601,
            profile: ProfileMode::Population,
            convention: Convention::Min,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CeaError::InvalidInput(format!("{name} must be positive")))
            }
        };
        positive(self.lambda01, "lambda01")?;
        positive(self.lambda02, "lambda02")?;
        positive(self.censor_rate, "censor_rate")?;
        positive(self.eta, "eta")?;
        if self.n < 2 {
            return Err(CeaError::InvalidInput("n must be at least 2".into()));
        }
        if !self.beta.is_finite() {
            return Err(CeaError::InvalidInput("beta must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.covariate_p) {
            return Err(CeaError::InvalidInput(
                "covariate_p must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.delay_fraction) {
            return Err(CeaError::InvalidInput(
                "delay_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.replicates < 1 {
            return Err(CeaError::InvalidInput(
                "replicates must be at least 1".into(),
            ));
        }
        match &self.delay_draw {
            DelayDraw::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && 0.0 <= *low && low <= high) {
                    return Err(CeaError::InvalidInput("invalid uniform delay range".into()));
                }
            }
            DelayDraw::Atoms(atoms) => {
                DelaySpec::Discrete(atoms.clone()).atoms(f64::INFINITY)?;
            }
        }
        if !(0.0..self.eta).contains(&self.r) || !(0.0..self.eta).contains(&self.a) {
            return Err(CeaError::InvalidInput(
                "r and a must lie in [0, eta)".into(),
            ));
        }
        CostSpec::new(self.costs.rates.clone(), self.costs.theta)?;
        if self.costs.rates.len() < 2 {
            return Err(CeaError::InvalidInput(
                "costs needed for both groups".into(),
            ));
        }
        Ok(())
    }

    /// Random stream of replicate `replicate`.
    pub fn rng(&self, replicate: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        rng
    }
}

/// Per-dataset quantities of the generation step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Fraction of each group without an observed death.
    pub censoring_rate: [f64; 2],
    /// Delayed group-2 subjects who died before switching, as a fraction of
    /// all group-2 subjects.
    pub missing_treatment: f64,
    /// The same count as a fraction of delayed subjects.
    pub missing_among_delayed: f64,
    pub delayed: usize,
}

fn draw_delay(draw: &DelayDraw, rng: &mut ChaCha20Rng) -> f64 {
    let u: f64 = rng.random();
    match draw {
        DelayDraw::Uniform { low, high } => low + (high - low) * u,
        DelayDraw::Atoms(atoms) => {
            let mut acc = 0.0;
            for &(w, d) in atoms {
                acc += w;
                if u < acc {
                    return d;
                }
            }
            atoms.last().map_or(0.0, |a| a.1)
        }
    }
}

/// Simulates one dataset. Subjects alternate between groups 1 and 2.
pub fn generate_dataset(
    design: &SimDesign,
    rng: &mut ChaCha20Rng,
) -> Result<(Dataset, GenerationStats)> {
    design.validate()?;
    let bern = Bernoulli::new(design.covariate_p).expect("validated probability");
    let mut records = Vec::with_capacity(design.n + design.n / 2);
    let mut no_death = [0usize; 2];
    let mut size = [0usize; 2];
    let (mut delayed, mut missed) = (0usize, 0usize);
    for i in 0..design.n {
        let x = if bern.sample(rng) { 1.0 } else { 0.0 };
        let delayed_draw: f64 = rng.random();
        let delay = draw_delay(&design.delay_draw, rng);
        let e: f64 = Exp1.sample(rng);
        let c: f64 = Exp1.sample(rng);
        let censor = c / design.censor_rate;

        let group = 1 + i % 2;
        let rel = (design.beta * x).exp();
        let h1 = design.lambda01 * rel;
        let h2 = design.lambda02 * rel;
        let delay = if group == 2 && delayed_draw < design.delay_fraction {
            Some(delay)
        } else if group == 2 {
            Some(0.0)
        } else {
            None
        };
        let death = match (delay, design.delay_hazard) {
            (None, _) => e / h1,
            (Some(_), DelayHazard::Treatment2) => e / h2,
            (Some(d), DelayHazard::Switch) if e < h1 * d => e / h1,
            (Some(d), DelayHazard::Switch) => d + (e - h1 * d) / h2,
        };
        let end = death.min(censor).min(design.eta);
        let died = death <= censor.min(design.eta);
        size[group - 1] += 1;
        if !died {
            no_death[group - 1] += 1;
        }
        if let Some(d) = delay {
            if d > 0.0 {
                delayed += 1;
                if death < d && died {
                    missed += 1;
                }
            }
        }
        let id = format!("s{i}");
        match delay {
            Some(d) if d < end => {
                let raw = RawSubject {
                    subject_id: id,
                    followup_end: end,
                    died,
                    switch_time: Some(d),
                    switch_stratum: 2,
                    covariates: vec![x],
                };
                records.extend(split_switcher_history(&raw)?);
            }
            _ => records.push(SubjectRecord::new(id, 0.0, end, died, 1, vec![x], 0.0)),
        }
    }
    let rate = |k: usize| {
        if size[k] == 0 {
            0.0
        } else {
            no_death[k] as f64 / size[k] as f64
        }
    };
    let frac = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let stats = GenerationStats {
        censoring_rate: [rate(0), rate(1)],
        missing_treatment: frac(missed, size[1]),
        missing_among_delayed: frac(missed, delayed),
        delayed,
    };
    Ok((Dataset::new(records, design.eta), stats))
}

/// Closed-form targets for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    /// RMST of groups 1 and 2, years.
    pub mu: [f64; 2],
    /// Post-delay components, years.
    pub mu_tail: [f64; 2],
    pub icer: f64,
    pub inb: f64,
    /// ICER of the STRT scenario as `η → ∞`.
    pub limiting_icer: f64,
}

fn strt_x(lambda: f64, rel: f64, span: f64) -> f64 {
    -(-lambda * rel * span).exp_m1() / (lambda * rel)
}

fn dly_x(l1: f64, lj: f64, rel: f64, a: f64, eta: f64) -> (f64, f64) {
    let head = strt_x(l1, rel, a);
    let tail = (-l1 * rel * a).exp() * strt_x(lj, rel, eta - a);
    (head, tail)
}

fn mixed(p: f64, beta: f64, f: impl Fn(f64) -> f64) -> f64 {
    p * f(beta.exp()) + (1.0 - p) * f(1.0)
}

/// Exact RMST, ICER and INB of the design under `scenario`.
pub fn theoretical_values(design: &SimDesign, scenario: Scenario) -> Result<Theory> {
    let (l1, l2, eta, p, b) = (
        design.lambda01,
        design.lambda02,
        design.eta,
        design.covariate_p,
        design.beta,
    );
    let lambdas = [l1, l2];
    let mut mu = [0.0; 2];
    let mut tail = [0.0; 2];
    for g in 0..2 {
        let lj = lambdas[g];
        match scenario {
            Scenario::Strt => {
                mu[g] = mixed(p, b, |rel| strt_x(lj, rel, eta - design.r));
                tail[g] = mu[g];
            }
            Scenario::Dly => {
                mu[g] = mixed(p, b, |rel| {
                    let (h, t) = dly_x(l1, lj, rel, design.a, eta);
                    h + t
                });
                tail[g] = mixed(p, b, |rel| dly_x(l1, lj, rel, design.a, eta).1);
            }
            Scenario::Dst => {
                let atoms = design.dst_delays.atoms(eta)?.ok_or_else(|| {
                    CeaError::NoClosedForm("continuous delay distribution".into())
                })?;
                for (w, d) in atoms {
                    mu[g] += w * mixed(p, b, |rel| {
                        let (h, t) = dly_x(l1, lj, rel, d, eta);
                        h + t
                    });
                    tail[g] += w * mixed(p, b, |rel| dly_x(l1, lj, rel, d, eta).1);
                }
            }
        }
    }
    let (c1, c2) = (design.costs.rate(1)?, design.costs.rate(2)?);
    let icer = (c2 * tail[1] - c1 * tail[0]) / (tail[1] - tail[0]);
    let inb = crate::cea::inb(tail[0], tail[1], c1, c2, design.costs.theta);
    Ok(Theory {
        mu,
        mu_tail: tail,
        icer,
        inb,
        limiting_icer: limiting_icer(l1, l2, c1, c2),
    })
}

/// `(c2/λ2 − c1/λ1)/(1/λ2 − 1/λ1)`; with `λ1 = 1` this is `(c2 − c1 λ2)/(1 − λ2)`.
pub fn limiting_icer(lambda1: f64, lambda2: f64, c1: f64, c2: f64) -> f64 {
    (c2 / lambda2 - c1 / lambda1) / (1.0 / lambda2 - 1.0 / lambda1)
}

/// One scenario evaluated in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyScenario {
    pub label: String,
    pub scenario: Scenario,
}

impl StudyScenario {
    pub fn new(label: impl Into<String>, scenario: Scenario) -> Self {
        Self {
            label: label.into(),
            scenario,
        }
    }
}

/// Estimates of one replicate for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub mu: [Interval; 2],
    pub icer: Option<Interval>,
    pub inb: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub stats: GenerationStats,
    /// One entry per scenario; `Err` carries the failure message.
    pub estimates: Vec<std::result::Result<ReplicateEstimate, String>>,
}

fn profile_atoms(design: &SimDesign, ds: &Dataset) -> Result<ProfileAtoms> {
    match design.profile {
        ProfileMode::Population => Ok(vec![
            (design.covariate_p, vec![1.0]),
            (1.0 - design.covariate_p, vec![0.0]),
        ]),
        ProfileMode::Observed => resolve_profile(&CovariateProfile::Observed, ds),
    }
}

fn estimate(
    design: &SimDesign,
    fitted: &crate::cox::CoxFit,
    atoms: &ProfileAtoms,
    scenario: Scenario,
) -> Result<ReplicateEstimate> {
    let lower = match scenario {
        Scenario::Strt => design.r,
        Scenario::Dly => design.a,
        Scenario::Dst => 0.0,
    };
    let e1 = rmst(
        fitted,
        1,
        atoms,
        scenario,
        lower,
        &design.dst_delays,
        design.eta,
    )?;
    let e2 = rmst(
        fitted,
        2,
        atoms,
        scenario,
        lower,
        &design.dst_delays,
        design.eta,
    )?;
    let se = |e: &crate::rmst::RmstEstimate| -> Result<Option<f64>> {
        match e.influence {
            Some(_) => Ok(Some(var_rmst(fitted, e, design.convention)?.se())),
            None => Ok(None),
        }
    };
    let ce = cost_effectiveness(
        fitted,
        &e1,
        &e2,
        &design.costs,
        DENOM_FLOOR,
        design.convention,
    )?;
    Ok(ReplicateEstimate {
        mu: [
            Interval::new(e1.value, se(&e1)?),
            Interval::new(e2.value, se(&e2)?),
        ],
        icer: ce.icer,
        inb: ce.inb,
    })
}

/// Generates, fits and estimates one replicate.
pub fn run_replicate(
    design: &SimDesign,
    scenarios: &[StudyScenario],
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let mut rng = design.rng(replicate as u64);
    let (ds, stats) = generate_dataset(design, &mut rng)?;
    let fitted = fit(&ds, &CoxConfig::default());
    let estimates = match fitted {
        Ok(f) => {
            let atoms = profile_atoms(design, &ds)?;
            scenarios
                .iter()
                .map(|s| estimate(design, &f, &atoms, s.scenario).map_err(|e| e.to_string()))
                .collect()
        }
        Err(e) => scenarios.iter().map(|_| Err(e.to_string())).collect(),
    };
    Ok(ReplicateOutcome {
        replicate,
        stats,
        estimates,
    })
}

/// Aggregate performance of one estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: String,
    /// `mu1`, `mu2`, `icer` or `inb`.
    pub estimand: String,
    pub truth: f64,
    pub mean: f64,
    pub rel_bias_pct: f64,
    pub mean_se: f64,
    pub empirical_sd: f64,
    pub se_rel_bias_pct: f64,
    pub coverage: f64,
    /// Replicates contributing to the row.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub replicates: usize,
    pub rows: Vec<StudyRow>,
    pub mean_censoring_rate: [f64; 2],
    pub mean_missing_treatment: f64,
    pub failures: usize,
    pub failure_rate: f64,
    pub warnings: Vec<String>,
}

/// Threshold on the per-study failure rate above which a warning is issued.
pub const FAILURE_WARNING_RATE: f64 = 0.02;

fn summarize(scenario: &str, estimand: &str, truth: f64, values: &[Interval]) -> StudyRow {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().map(|v| v.estimate).sum::<f64>() / nf;
    let sd = if n > 1 {
        (values
            .iter()
            .map(|v| (v.estimate - mean).powi(2))
            .sum::<f64>()
            / (nf - 1.0))
            .sqrt()
    } else {
        f64::NAN
    };
    let ses: Vec<f64> = values.iter().filter_map(|v| v.se).collect();
    let mean_se = if ses.is_empty() {
        f64::NAN
    } else {
        ses.iter().sum::<f64>() / ses.len() as f64
    };
    let covered: Vec<bool> = values.iter().filter_map(|v| v.covers(truth)).collect();
    let coverage = if covered.is_empty() {
        f64::NAN
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
    };
    StudyRow {
        scenario: scenario.to_string(),
        estimand: estimand.to_string(),
        truth,
        mean,
        rel_bias_pct: 100.0 * (mean - truth) / truth,
        mean_se,
        empirical_sd: sd,
        se_rel_bias_pct: 100.0 * (mean_se - sd) / sd,
        coverage,
        count: n,
    }
}

/// Runs every replicate on a pool of `threads` workers (all cores when
/// `None`) and aggregates in replicate order.
pub fn run_study(
    design: &SimDesign,
    scenarios: &[StudyScenario],
    threads: Option<usize>,
) -> Result<StudyResult> {
    design.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| CeaError::InvalidInput(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ReplicateOutcome>> = pool.install(|| {
        (0..design.replicates)
            .into_par_iter()
            .map(|r| run_replicate(design, scenarios, r))
            .collect()
    });
    let outcomes: Vec<ReplicateOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    aggregate(design, scenarios, &outcomes)
}

pub fn aggregate(
    design: &SimDesign,
    scenarios: &[StudyScenario],
    outcomes: &[ReplicateOutcome],
) -> Result<StudyResult> {
    let reps = outcomes.len();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut failures = 0;
    for (k, sc) in scenarios.iter().enumerate() {
        let theory = theoretical_values(design, sc.scenario)?;
        let ok: Vec<&ReplicateEstimate> = outcomes
            .iter()
            .filter_map(|o| o.estimates[k].as_ref().ok())
            .collect();
        failures += reps - ok.len();
        if ok.is_empty() {
            warnings.push(format!("scenario {}: every replicate failed", sc.label));
            continue;
        }
        for g in 0..2 {
            let vals: Vec<Interval> = ok.iter().map(|e| e.mu[g]).collect();
            rows.push(summarize(
                &sc.label,
                &format!("mu{}", g + 1),
                theory.mu[g],
                &vals,
            ));
        }
        let icers: Vec<Interval> = ok.iter().filter_map(|e| e.icer).collect();
        if icers.len() < ok.len() {
            warnings.push(format!(
                "scenario {}: {} replicate(s) with a degenerate ICER denominator",
                sc.label,
                ok.len() - icers.len()
            ));
        }
        if !icers.is_empty() {
            rows.push(summarize(&sc.label, "icer", theory.icer, &icers));
        }
        let inbs: Vec<Interval> = ok.iter().map(|e| e.inb).collect();
        rows.push(summarize(&sc.label, "inb", theory.inb, &inbs));
    }
    let total = (reps * scenarios.len()).max(1);
    let failure_rate = failures as f64 / total as f64;
    if failure_rate > FAILURE_WARNING_RATE {
        warnings.push(format!(
            "failure rate {:.1}% exceeds {:.0}%",
            100.0 * failure_rate,
            100.0 * FAILURE_WARNING_RATE
        ));
    }
    if reps < 50 {
        warnings.push(format!("only {reps} replicate(s); coverage is unreliable"));
    }
    let nf = reps.max(1) as f64;
    let mut cens = [0.0; 2];
    let mut missing = 0.0;
    for o in outcomes {
        cens[0] += o.stats.censoring_rate[0] / nf;
        cens[1] += o.stats.censoring_rate[1] / nf;
        missing += o.stats.missing_treatment / nf;
    }
    Ok(StudyResult {
        replicates: reps,
        rows,
        mean_censoring_rate: cens,
        mean_missing_treatment: missing,
        failures,
        failure_rate,
        warnings,
    })
}
