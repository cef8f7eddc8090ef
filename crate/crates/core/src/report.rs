//! Analysis reports and their two renderings: versioned JSON Lines and a
//! plain-text table.
//!
//! The JSON Lines form starts with `{"format":"delaycea-report","version":1}`
//! and continues with one object per record, each tagged by `kind`. Numbers
//! are written with round-trip precision, undefined values as `null`.

use serde::{Deserialize, Serialize};

use crate::error::{CeaError, Result};

pub const REPORT_FORMAT: &str = "delaycea-report";
pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_PRECISION: usize = 6;

pub const UNIT_YEARS: &str = "years";
pub const UNIT_ICER: &str = "currency per life-year";
pub const UNIT_CURRENCY: &str = "currency";
pub const UNIT_LOG_HR: &str = "log hazard ratio per covariate unit";
pub const UNIT_PROPORTION: &str = "proportion";
pub const UNIT_NATS: &str = "nats";

/// `Some(x)` for finite `x`.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub subjects: usize,
    pub records: usize,
    pub events: usize,
    pub iterations: usize,
    pub converged: bool,
    pub loglik: Option<f64>,
    pub loglik_unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: usize,
    pub records: usize,
    pub events: usize,
    pub min_delay: Option<f64>,
    pub delay_unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmstRow {
    pub scenario: String,
    pub group: usize,
    pub window_lower: Option<f64>,
    pub window_upper: Option<f64>,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    /// Post-delay part used by the cost-effectiveness measures.
    pub tail_estimate: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeaRow {
    pub scenario: String,
    pub group: usize,
    pub reference: usize,
    /// `icer` or `inb`.
    pub measure: String,
    pub theta: Option<f64>,
    pub theta_unit: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub unit: String,
}

/// One point of an `inb_vs_theta` or `icer_vs_eta` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub curve: String,
    pub scenario: String,
    pub group: usize,
    pub x: Option<f64>,
    pub x_unit: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub failures: usize,
    pub failure_rate: Option<f64>,
    pub censoring_rate_group1: Option<f64>,
    pub censoring_rate_group2: Option<f64>,
    pub missing_treatment: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub scenario: String,
    pub estimand: String,
    pub truth: Option<f64>,
    pub mean: Option<f64>,
    pub rel_bias_pct: Option<f64>,
    pub mean_se: Option<f64>,
    pub empirical_sd: Option<f64>,
    pub se_rel_bias_pct: Option<f64>,
    pub coverage: Option<f64>,
    pub count: usize,
    /// Unit of `truth`, `mean`, `mean_se` and `empirical_sd`; the `_pct`
    /// fields are percentages and `coverage` a proportion.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Message {
    message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta(Meta),
    Config(ConfigEntry),
    Fit(FitSummary),
    Group(GroupSummary),
    Coefficient(Coefficient),
    Rmst(RmstRow),
    Cea(CeaRow),
    Curve(CurvePoint),
    StudySummary(StudySummary),
    Study(StudyRecord),
    Warning(Message),
    Error(Message),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: Meta,
    pub config: Vec<ConfigEntry>,
    pub fit: Option<FitSummary>,
    pub groups: Vec<GroupSummary>,
    pub coefficients: Vec<Coefficient>,
    pub rmst: Vec<RmstRow>,
    pub cea: Vec<CeaRow>,
    pub curves: Vec<CurvePoint>,
    pub study: Option<StudySummary>,
    pub study_rows: Vec<StudyRecord>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            meta: Meta {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                status: Status::Ok,
            },
            config: Vec::new(),
            fit: None,
            groups: Vec::new(),
            coefficients: Vec::new(),
            rmst: Vec::new(),
            cea: Vec::new(),
            curves: Vec::new(),
            study: None,
            study_rows: Vec::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn echo(&mut self, key: &str, value: impl ToString) {
        self.config.push(ConfigEntry {
            key: key.into(),
            value: value.to_string(),
        });
    }

    pub fn fail(&mut self, message: impl ToString) {
        self.meta.status = Status::Failed;
        self.errors.push(message.to_string());
    }

    fn lines(&self) -> Vec<Line> {
        let mut out = vec![Line::Meta(self.meta.clone())];
        out.extend(self.config.iter().cloned().map(Line::Config));
        out.extend(self.fit.iter().cloned().map(Line::Fit));
        out.extend(self.groups.iter().cloned().map(Line::Group));
        out.extend(self.coefficients.iter().cloned().map(Line::Coefficient));
        out.extend(self.rmst.iter().cloned().map(Line::Rmst));
        out.extend(self.cea.iter().cloned().map(Line::Cea));
        out.extend(self.curves.iter().cloned().map(Line::Curve));
        out.extend(self.study.iter().cloned().map(Line::StudySummary));
        out.extend(self.study_rows.iter().cloned().map(Line::Study));
        out.extend(
            self.warnings
                .iter()
                .map(|m| Line::Warning(Message { message: m.clone() })),
        );
        out.extend(
            self.errors
                .iter()
                .map(|m| Line::Error(Message { message: m.clone() })),
        );
        out
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
        };
        let mut s = serde_json::to_string(&header).expect("header serializes");
        s.push('\n');
        for line in self.lines() {
            s.push_str(&serde_json::to_string(&line).expect("report lines serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| CeaError::Parse("empty report".into()))?;
        let header: Header = serde_json::from_str(first)
            .map_err(|e| CeaError::Parse(format!("line 1: not a report header: {e}")))?;
        if header.format != REPORT_FORMAT {
            return Err(CeaError::Parse(format!(
                "unknown report format '{}'",
                header.format
            )));
        }
        if header.version != REPORT_VERSION {
            return Err(CeaError::Parse(format!(
                "unsupported report version {}",
                header.version
            )));
        }
        let mut meta = None;
        let mut r = Report::new("");
        for (i, text) in lines {
            let line: Line = serde_json::from_str(text)
                .map_err(|e| CeaError::Parse(format!("line {}: {e}", i + 1)))?;
            match line {
                Line::Meta(m) => {
                    if meta.replace(m).is_some() {
                        return Err(CeaError::Parse(format!(
                            "line {}: second meta record",
                            i + 1
                        )));
                    }
                }
                Line::Config(c) => r.config.push(c),
                Line::Fit(f) => {
                    if r.fit.replace(f).is_some() {
                        return Err(CeaError::Parse(format!(
                            "line {}: second fit record",
                            i + 1
                        )));
                    }
                }
                Line::Group(g) => r.groups.push(g),
                Line::Coefficient(c) => r.coefficients.push(c),
                Line::Rmst(x) => r.rmst.push(x),
                Line::Cea(x) => r.cea.push(x),
                Line::Curve(x) => r.curves.push(x),
                Line::StudySummary(s) => {
                    if r.study.replace(s).is_some() {
                        return Err(CeaError::Parse(format!(
                            "line {}: second study summary",
                            i + 1
                        )));
                    }
                }
                Line::Study(x) => r.study_rows.push(x),
                Line::Warning(m) => r.warnings.push(m.message),
                Line::Error(m) => r.errors.push(m.message),
            }
        }
        r.meta = meta.ok_or_else(|| CeaError::Parse("report has no meta record".into()))?;
        Ok(r)
    }

    pub fn to_human(&self, precision: usize) -> String {
        let num = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format_sig(v, precision));
        let ci = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
            (Some(l), Some(h)) => format!(
                "({}, {})",
                format_sig(l, precision),
                format_sig(h, precision)
            ),
            _ => "-".to_string(),
        };
        let mut out = format!(
            "{} {}  {}  status: {}\n",
            self.meta.tool,
            self.meta.version,
            self.meta.command,
            match self.meta.status {
                Status::Ok => "ok",
                Status::Failed => "failed",
            }
        );
        let mut section = |title: &str, header: &[&str], rows: Vec<Vec<String>>| {
            if rows.is_empty() {
                return;
            }
            out.push('\n');
            out.push_str(title);
            out.push('\n');
            out.push_str(&table(header, &rows));
        };
        section(
            "Configuration",
            &["key", "value"],
            self.config
                .iter()
                .map(|c| vec![c.key.clone(), c.value.clone()])
                .collect(),
        );
        section(
            "Model",
            &[
                "subjects",
                "records",
                "events",
                "iterations",
                "converged",
                "loglik (nats)",
            ],
            self.fit
                .iter()
                .map(|f| {
                    vec![
                        f.subjects.to_string(),
                        f.records.to_string(),
                        f.events.to_string(),
                        f.iterations.to_string(),
                        f.converged.to_string(),
                        num(f.loglik),
                    ]
                })
                .collect(),
        );
        section(
            "Groups",
            &["group", "records", "events", "min delay (years)"],
            self.groups
                .iter()
                .map(|g| {
                    vec![
                        g.group.to_string(),
                        g.records.to_string(),
                        g.events.to_string(),
                        num(g.min_delay),
                    ]
                })
                .collect(),
        );
        section(
            "Coefficients (log hazard ratio per covariate unit)",
            &["name", "estimate", "se", "95% CI"],
            self.coefficients
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        num(c.estimate),
                        num(c.se),
                        ci(c.ci_lower, c.ci_upper),
                    ]
                })
                .collect(),
        );
        section(
            "Restricted mean survival (years)",
            &[
                "scenario",
                "group",
                "window",
                "estimate",
                "se",
                "95% CI",
                "post-delay",
            ],
            self.rmst
                .iter()
                .map(|r| {
                    vec![
                        r.scenario.clone(),
                        r.group.to_string(),
                        format!("[{}, {}]", num(r.window_lower), num(r.window_upper)),
                        num(r.estimate),
                        num(r.se),
                        ci(r.ci_lower, r.ci_upper),
                        num(r.tail_estimate),
                    ]
                })
                .collect(),
        );
        section(
            "Cost-effectiveness",
            &[
                "scenario",
                "comparison",
                "measure",
                "theta",
                "estimate",
                "se",
                "95% CI",
                "unit",
            ],
            self.cea
                .iter()
                .map(|c| {
                    vec![
                        c.scenario.clone(),
                        format!("{} vs {}", c.group, c.reference),
                        c.measure.clone(),
                        num(c.theta),
                        num(c.estimate),
                        num(c.se),
                        ci(c.ci_lower, c.ci_upper),
                        c.unit.clone(),
                    ]
                })
                .collect(),
        );
        section(
            "Curves",
            &[
                "curve", "scenario", "group", "x", "estimate", "se", "95% CI",
            ],
            self.curves
                .iter()
                .map(|c| {
                    vec![
                        c.curve.clone(),
                        c.scenario.clone(),
                        c.group.to_string(),
                        num(c.x),
                        num(c.estimate),
                        num(c.se),
                        ci(c.ci_lower, c.ci_upper),
                    ]
                })
                .collect(),
        );
        section(
            "Study design diagnostics",
            &[
                "replicates",
                "failures",
                "failure rate",
                "censoring g1",
                "censoring g2",
                "missing treatment",
            ],
            self.study
                .iter()
                .map(|s| {
                    vec![
                        s.replicates.to_string(),
                        s.failures.to_string(),
                        num(s.failure_rate),
                        num(s.censoring_rate_group1),
                        num(s.censoring_rate_group2),
                        num(s.missing_treatment),
                    ]
                })
                .collect(),
        );
        section(
            "Study performance",
            &[
                "scenario",
                "estimand",
                "truth",
                "mean",
                "bias %",
                "mean se",
                "sd",
                "se bias %",
                "coverage",
                "n",
            ],
            self.study_rows
                .iter()
                .map(|s| {
                    vec![
                        s.scenario.clone(),
                        s.estimand.clone(),
                        num(s.truth),
                        num(s.mean),
                        num(s.rel_bias_pct),
                        num(s.mean_se),
                        num(s.empirical_sd),
                        num(s.se_rel_bias_pct),
                        num(s.coverage),
                        s.count.to_string(),
                    ]
                })
                .collect(),
        );
        for (title, list) in [("Warnings", &self.warnings), ("Errors", &self.errors)] {
            if !list.is_empty() {
                out.push('\n');
                out.push_str(title);
                out.push('\n');
                for m in list {
                    out.push_str("  - ");
                    out.push_str(m);
                    out.push('\n');
                }
            }
        }
        out
    }

    /// The curve points as CSV, one row per point.
    pub fn curves_csv(&self) -> String {
        let mut s =
            String::from("curve,scenario,group,x,x_unit,estimate,se,ci_lower,ci_upper,unit\n");
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        for c in &self.curves {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.curve,
                c.scenario,
                c.group,
                opt(c.x),
                c.x_unit,
                opt(c.estimate),
                opt(c.se),
                opt(c.ci_lower),
                opt(c.ci_upper),
                c.unit
            ));
        }
        s
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut push = |cells: &mut dyn Iterator<Item = &str>| {
        let mut line = String::from(" ");
        for (cell, w) in cells.zip(&widths) {
            line.push(' ');
            line.push_str(cell);
            line.extend(std::iter::repeat(' ').take(w - cell.chars().count() + 1));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    push(&mut header.iter().copied());
    for row in rows {
        push(&mut row.iter().map(String::as_str));
    }
    out
}

/// Formats `x` with `digits` significant digits, switching to exponent
/// notation outside `[1e-4, 10^digits)` and dropping trailing zeros.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.clamp(1, 17);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    }
}
