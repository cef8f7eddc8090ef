//! CSV ingestion, specification strings and TOML configuration.
//!
//! Two CSV shapes are accepted. Counting-process files carry one row per
//! at-risk interval (`entry`, `exit`, `group`, optional `delay`); raw-history
//! files carry one row per subject (`time`, optional `switch_time` and
//! `switch_group`) and are split into intervals on the way in.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asymptotics::Convention;
use crate::data::{
    split_switcher_history, CovariateProfile, Dataset, DelaySpec, RawSubject, SubjectRecord,
};
use crate::error::{CeaError, Result, RowIssue};
use crate::rmst::Scenario;
use crate::sim::{dst_grid, DelayDraw, DelayHazard, ProfileMode, SimDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputShape {
    /// Counting-process when `entry` and `exit` columns exist, raw otherwise.
    #[default]
    Auto,
    Counting,
    Raw,
}

impl FromStr for InputShape {
    type Err = CeaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "counting" => Ok(Self::Counting),
            "raw" => Ok(Self::Raw),
            _ => Err(CeaError::Parse(format!(
                "unknown input shape '{s}' (expected auto, counting or raw)"
            ))),
        }
    }
}

/// How the event column is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventMode {
    /// Only `0` and `1`.
    #[default]
    Strict,
    /// Also `true/false`, `yes/no`, `t/f`, `y/n` in any case.
    Lenient,
}

impl FromStr for EventMode {
    type Err = CeaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "lenient" => Ok(Self::Lenient),
            _ => Err(CeaError::Parse(format!(
                "unknown event mode '{s}' (expected strict or lenient)"
            ))),
        }
    }
}

/// Column names in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub id: String,
    pub entry: String,
    pub exit: String,
    pub event: String,
    pub group: String,
    pub delay: String,
    pub time: String,
    pub switch_time: String,
    pub switch_group: String,
    /// `None` takes every column not mapped above, in file order.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            id: "id".into(),
            entry: "entry".into(),
            exit: "exit".into(),
            event: "event".into(),
            group: "group".into(),
            delay: "delay".into(),
            time: "time".into(),
            switch_time: "switch_time".into(),
            switch_group: "switch_group".into(),
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub mapping: ColumnMapping,
    pub shape: InputShape,
    pub events: EventMode,
}

/// A parsed input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
    pub shape: InputShape,
}

pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("'{t}' is not a finite number")),
    }
}

fn parse_event(s: &str, mode: EventMode) -> std::result::Result<bool, String> {
    let t = s.trim();
    match t {
        "0" => return Ok(false),
        "1" => return Ok(true),
        _ => {}
    }
    if mode == EventMode::Lenient {
        match t.to_ascii_lowercase().as_str() {
            "true" | "t" | "yes" | "y" => return Ok(true),
            "false" | "f" | "no" | "n" => return Ok(false),
            _ => {}
        }
    }
    Err(format!("event '{t}' is not 0 or 1"))
}

fn parse_group(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(g) if g >= 1 => Ok(g),
        _ => Err(format!("group '{}' is not a positive integer", s.trim())),
    }
}

/// Reads a CSV file; `eta` becomes the dataset horizon.
pub fn ingest_csv(path: &Path, options: &CsvOptions, eta: f64) -> Result<Ingested> {
    let file =
        std::fs::File::open(path).map_err(|e| CeaError::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, options, eta)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions, eta: f64) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CeaError::Parse(format!("header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(CeaError::InvalidInput("empty file".into()));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if !h.is_empty() && index.insert(h.as_str(), i).is_some() {
            return Err(CeaError::InvalidInput(format!("duplicate column '{h}'")));
        }
    }
    let m = &options.mapping;
    let has = |name: &str| index.contains_key(name);
    let shape = match options.shape {
        InputShape::Auto if has(&m.entry) && has(&m.exit) => InputShape::Counting,
        InputShape::Auto if has(&m.time) => InputShape::Raw,
        InputShape::Auto => {
            return Err(CeaError::InvalidInput(format!(
                "missing columns: need '{}' and '{}', or '{}'",
                m.entry, m.exit, m.time
            )))
        }
        s => s,
    };
    let require = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| CeaError::InvalidInput(format!("missing column '{name}'")))
    };
    let optional = |name: &str| index.get(name).copied();
    let id_col = optional(&m.id);
    let event_col = require(&m.event)?;
    let mut mapped: Vec<usize> = vec![event_col];
    mapped.extend(id_col);
    #[derive(Clone, Copy)]
    enum Cols {
        Counting {
            entry: usize,
            exit: usize,
            group: usize,
            delay: Option<usize>,
        },
        Raw {
            time: usize,
            switch: Option<usize>,
            switch_group: Option<usize>,
        },
    }
    let cols = match shape {
        InputShape::Raw => Cols::Raw {
            time: require(&m.time)?,
            switch: optional(&m.switch_time),
            switch_group: optional(&m.switch_group),
        },
        _ => Cols::Counting {
            entry: require(&m.entry)?,
            exit: require(&m.exit)?,
            group: require(&m.group)?,
            delay: optional(&m.delay),
        },
    };
    match cols {
        Cols::Raw {
            time,
            switch,
            switch_group,
        } => mapped.extend([Some(time), switch, switch_group].into_iter().flatten()),
        Cols::Counting {
            entry,
            exit,
            group,
            delay,
        } => mapped.extend(
            [Some(entry), Some(exit), Some(group), delay]
                .into_iter()
                .flatten(),
        ),
    }
    let cov_cols: Vec<usize> = match &m.covariates {
        Some(names) => names.iter().map(|n| require(n)).collect::<Result<_>>()?,
        // Columns named in the mapping stay out even when the shape does not
        // use them.
        None => {
            let reserved = [
                &m.id,
                &m.entry,
                &m.exit,
                &m.event,
                &m.group,
                &m.delay,
                &m.time,
                &m.switch_time,
                &m.switch_group,
            ];
            (0..headers.len())
                .filter(|&i| {
                    !mapped.contains(&i)
                        && !headers[i].is_empty()
                        && !reserved.contains(&&headers[i])
                })
                .collect()
        }
    };
    let covariate_names: Vec<String> = cov_cols.iter().map(|&i| headers[i].clone()).collect();

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut rows = 0usize;
    for (k, row) in rdr.records().enumerate() {
        let fallback_line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(fallback_line, |p| p.line() as usize);
                issues.push(RowIssue {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        rows += 1;
        let line = row.position().map_or(fallback_line, |p| p.line() as usize);
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if row.len() != headers.len() {
            issues.push(RowIssue {
                line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let parsed = (|| -> std::result::Result<Vec<SubjectRecord>, String> {
            let id = id_col.map_or_else(|| format!("row{line}"), |i| field(i).trim().to_string());
            let event = parse_event(field(event_col), options.events)?;
            let x = cov_cols
                .iter()
                .map(|&i| {
                    parse_number(field(i)).map_err(|e| format!("column '{}': {e}", headers[i]))
                })
                .collect::<std::result::Result<Vec<f64>, String>>()?;
            let num = |i: usize, name: &str| {
                parse_number(field(i)).map_err(|e| format!("column '{name}': {e}"))
            };
            match cols {
                Cols::Counting {
                    entry,
                    exit,
                    group,
                    delay,
                } => {
                    let entry = num(entry, &m.entry)?;
                    let exit = num(exit, &m.exit)?;
                    let group = parse_group(field(group))?;
                    let delay = match delay {
                        Some(i) if !field(i).trim().is_empty() => num(i, &m.delay)?,
                        _ => 0.0,
                    };
                    if entry < 0.0 {
                        return Err(format!("entry {entry} is negative"));
                    }
                    if entry >= exit {
                        return Err(format!("entry {entry} is not before exit {exit}"));
                    }
                    if delay < 0.0 || (group == 1 && delay != 0.0) {
                        return Err(format!("delay {delay} is invalid for group {group}"));
                    }
                    Ok(vec![SubjectRecord::new(
                        id, entry, exit, event, group, x, delay,
                    )])
                }
                Cols::Raw {
                    time,
                    switch,
                    switch_group,
                } => {
                    let end = num(time, &m.time)?;
                    let switch_time = match switch {
                        Some(i) if !field(i).trim().is_empty() => Some(num(i, &m.switch_time)?),
                        _ => None,
                    };
                    let switch_stratum = match switch_group {
                        Some(i) if !field(i).trim().is_empty() => parse_group(field(i))?,
                        _ => 2,
                    };
                    split_switcher_history(&RawSubject {
                        subject_id: id,
                        followup_end: end,
                        died: event,
                        switch_time,
                        switch_stratum,
                        covariates: x,
                    })
                    .map_err(|e| e.to_string())
                }
            }
        })();
        match parsed {
            Ok(r) => records.extend(r),
            Err(message) => issues.push(RowIssue { line, message }),
        }
    }
    if !issues.is_empty() {
        return Err(CeaError::Rows(issues));
    }
    if rows == 0 || records.is_empty() {
        return Err(CeaError::InvalidInput("file has no data rows".into()));
    }
    Ok(Ingested {
        dataset: Dataset::new(records, eta),
        covariate_names,
        shape,
    })
}

/// Writes counting-process CSV that [`read_csv`] reads back exactly.
pub fn write_csv<W: Write>(dataset: &Dataset, covariate_names: &[String], out: W) -> Result<()> {
    if covariate_names.len() != dataset.p {
        return Err(CeaError::DimensionMismatch {
            expected: dataset.p,
            found: covariate_names.len(),
        });
    }
    let mut header = vec!["id", "entry", "exit", "event", "group", "delay"];
    for name in covariate_names {
        if name.trim().is_empty() || header.contains(&name.as_str()) {
            return Err(CeaError::InvalidInput(format!(
                "covariate name '{name}' is empty or already used"
            )));
        }
        header.push(name);
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CeaError::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for r in &dataset.records {
        let mut row = vec![
            r.subject_id.clone(),
            r.entry.to_string(),
            r.exit.to_string(),
            if r.event { "1" } else { "0" }.to_string(),
            r.stratum.to_string(),
            r.delay.to_string(),
        ];
        row.extend(r.covariates.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn numbers(s: &str, sep: char) -> Result<Vec<f64>> {
    s.split(sep)
        .map(|v| parse_number(v).map_err(CeaError::Parse))
        .collect()
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Err(CeaError::Parse("empty list".into()));
    }
    numbers(s, ',')
}

/// `start:stop:step` (inclusive of `stop` up to rounding) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => parse_list(s),
        3 => {
            let v = parts
                .iter()
                .map(|p| parse_number(p).map_err(CeaError::Parse))
                .collect::<Result<Vec<f64>>>()?;
            let (start, stop, step) = (v[0], v[1], v[2]);
            if !(step > 0.0) || stop < start {
                return Err(CeaError::Parse(format!(
                    "grid '{s}' needs start <= stop and a positive step"
                )));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                return Err(CeaError::Parse(format!("grid '{s}' has {count} points")));
            }
            Ok((0..count).map(|k| start + k as f64 * step).collect())
        }
        _ => Err(CeaError::Parse(format!(
            "grid '{s}' must be start:stop:step or a comma list"
        ))),
    }
}

/// `observed`, `fixed:x1,x2,…` or `weighted:w@x1,x2;w@x1,x2;…`.
pub fn parse_profile(s: &str) -> Result<CovariateProfile> {
    let s = s.trim();
    if s == "observed" {
        return Ok(CovariateProfile::Observed);
    }
    if s == "fixed" {
        return Ok(CovariateProfile::Fixed(Vec::new()));
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        return Ok(CovariateProfile::Fixed(parse_list(rest)?));
    }
    if let Some(rest) = s.strip_prefix("weighted:") {
        let atoms = rest
            .split(';')
            .map(|atom| {
                let (w, x) = atom
                    .split_once('@')
                    .ok_or_else(|| CeaError::Parse(format!("atom '{atom}' lacks '@'")))?;
                let w = parse_number(w).map_err(CeaError::Parse)?;
                let x = if x.trim().is_empty() {
                    Vec::new()
                } else {
                    parse_list(x)?
                };
                Ok((w, x))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(CovariateProfile::Weighted(atoms));
    }
    Err(CeaError::Parse(format!(
        "unknown profile '{s}' (expected observed, fixed:… or weighted:…)"
    )))
}

/// A delay distribution as written on the command line; `Empirical` is
/// resolved against the data later.
#[derive(Debug, Clone, PartialEq)]
pub enum DelaySource {
    Spec(DelaySpec),
    Empirical,
}

/// `none`, `fixed:δ`, `empirical`, `discrete:p@δ;p@δ;…`, `grid`,
/// `grid:w1,…,w10` or `mixexp:point_mass,rate`.
pub fn parse_delays(s: &str) -> Result<DelaySource> {
    let s = s.trim();
    let spec = match s {
        "none" => DelaySpec::None,
        "empirical" => return Ok(DelaySource::Empirical),
        "grid" => dst_grid(None)?,
        _ => {
            let (kind, rest) = s
                .split_once(':')
                .ok_or_else(|| CeaError::Parse(format!("unknown delay spec '{s}'")))?;
            match kind {
                "fixed" => DelaySpec::FixedDelay(parse_number(rest).map_err(CeaError::Parse)?),
                "discrete" => DelaySpec::Discrete(
                    rest.split([';', ','])
                        .map(|atom| {
                            let (p, d) = atom.split_once('@').ok_or_else(|| {
                                CeaError::Parse(format!("atom '{atom}' lacks '@'"))
                            })?;
                            Ok((
                                parse_number(p).map_err(CeaError::Parse)?,
                                parse_number(d).map_err(CeaError::Parse)?,
                            ))
                        })
                        .collect::<Result<_>>()?,
                ),
                "grid" => dst_grid(Some(&parse_list(rest)?))?,
                "mixexp" => {
                    let v = parse_list(rest)?;
                    if v.len() != 2 {
                        return Err(CeaError::Parse("mixexp needs point_mass,rate".into()));
                    }
                    DelaySpec::MixtureExp {
                        point_mass: v[0],
                        rate: v[1],
                    }
                }
                _ => return Err(CeaError::Parse(format!("unknown delay spec '{s}'"))),
            }
        }
    };
    Ok(DelaySource::Spec(spec))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn atoms_text(atoms: &[(f64, f64)]) -> String {
    atoms
        .iter()
        .map(|(p, d)| format!("{p}@{d}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// The spec string [`parse_delays`] reads back into `spec`. Empirical lists
/// are written as equally weighted discrete atoms.
pub fn format_delays(spec: &DelaySpec) -> String {
    match spec {
        DelaySpec::None => "none".into(),
        DelaySpec::FixedDelay(d) => format!("fixed:{d}"),
        DelaySpec::Empirical(list) => {
            let w = 1.0 / list.len().max(1) as f64;
            let atoms: Vec<(f64, f64)> = list.iter().map(|&d| (w, d)).collect();
            format!("discrete:{}", atoms_text(&atoms))
        }
        DelaySpec::Discrete(atoms) => format!("discrete:{}", atoms_text(atoms)),
        DelaySpec::MixtureExp { point_mass, rate } => format!("mixexp:{point_mass},{rate}"),
    }
}

pub fn format_delay_draw(draw: &DelayDraw) -> String {
    match draw {
        DelayDraw::Uniform { low, high } => format!("uniform:{}", join(&[*low, *high])),
        DelayDraw::Atoms(atoms) => format!("discrete:{}", atoms_text(atoms)),
    }
}

pub fn format_delay_hazard(h: DelayHazard) -> &'static str {
    match h {
        DelayHazard::Switch => "switch",
        DelayHazard::Treatment2 => "treatment2",
    }
}

pub fn format_sim_profile(p: ProfileMode) -> &'static str {
    match p {
        ProfileMode::Population => "population",
        ProfileMode::Observed => "observed",
    }
}

pub fn format_convention(c: Convention) -> &'static str {
    match c {
        Convention::Min => "min",
        Convention::Max => "max",
    }
}

/// Comma-joined numbers in shortest round-trip form.
pub fn format_list(values: &[f64]) -> String {
    join(values)
}

/// `uniform:low,high` or `discrete:p@δ;…`.
pub fn parse_delay_draw(s: &str) -> Result<DelayDraw> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("uniform:") {
        let v = parse_list(rest)?;
        if v.len() != 2 {
            return Err(CeaError::Parse("uniform needs low,high".into()));
        }
        return Ok(DelayDraw::Uniform {
            low: v[0],
            high: v[1],
        });
    }
    match parse_delays(s)? {
        DelaySource::Spec(DelaySpec::Discrete(atoms)) => Ok(DelayDraw::Atoms(atoms)),
        DelaySource::Spec(DelaySpec::FixedDelay(d)) => Ok(DelayDraw::Atoms(vec![(1.0, d)])),
        _ => Err(CeaError::Parse(format!(
            "delay draw '{s}' must be uniform:…, fixed:… or discrete:…"
        ))),
    }
}

pub fn parse_convention(s: &str) -> Result<Convention> {
    match s.trim() {
        "min" => Ok(Convention::Min),
        "max" => Ok(Convention::Max),
        _ => Err(CeaError::Parse(format!(
            "unknown convention '{s}' (expected min or max)"
        ))),
    }
}

pub fn parse_delay_hazard(s: &str) -> Result<DelayHazard> {
    match s.trim() {
        "switch" => Ok(DelayHazard::Switch),
        "treatment2" => Ok(DelayHazard::Treatment2),
        _ => Err(CeaError::Parse(format!(
            "unknown delay hazard '{s}' (expected switch or treatment2)"
        ))),
    }
}

pub fn parse_sim_profile(s: &str) -> Result<ProfileMode> {
    match s.trim() {
        "population" => Ok(ProfileMode::Population),
        "observed" => Ok(ProfileMode::Observed),
        _ => Err(CeaError::Parse(format!(
            "unknown simulation profile '{s}' (expected population or observed)"
        ))),
    }
}

pub fn parse_scenario(s: &str) -> Result<Scenario> {
    s.parse()
}

/// Analysis settings read from a TOML file; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: Option<String>,
    pub shape: Option<String>,
    pub events: Option<String>,
    pub columns: Option<ColumnMapping>,
    pub eta: Option<f64>,
    pub scenario: Option<String>,
    pub r: Option<f64>,
    pub a: Option<f64>,
    pub delays: Option<String>,
    pub costs: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub profile: Option<String>,
    pub convention: Option<String>,
    pub ridge: Option<f64>,
    pub theta_grid: Option<String>,
    pub eta_grid: Option<String>,
    pub out: Option<String>,
    pub format: Option<String>,
    pub precision: Option<usize>,
}

pub fn parse_analysis_toml(text: &str) -> Result<AnalysisConfig> {
    toml::from_str(text).map_err(|e| CeaError::Parse(format!("config: {e}")))
}

/// Simulation settings read from a TOML file. Absent keys keep the
/// defaults of [`SimDesign`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub n: Option<usize>,
    pub lambda01: Option<f64>,
    pub lambda02: Option<f64>,
    /// Alternative to `lambda02`: `λ02/λ01`.
    pub hazard_ratio: Option<f64>,
    pub beta: Option<f64>,
    pub covariate_p: Option<f64>,
    pub censor_rate: Option<f64>,
    pub delay_fraction: Option<f64>,
    pub delay_draw: Option<String>,
    pub delay_hazard: Option<String>,
    pub eta: Option<f64>,
    pub r: Option<f64>,
    pub a: Option<f64>,
    pub dst_delays: Option<String>,
    pub costs: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub convention: Option<String>,
    pub scenarios: Option<Vec<String>>,
    pub out: Option<String>,
    pub format: Option<String>,
    pub precision: Option<usize>,
}

pub fn parse_design_toml(text: &str) -> Result<DesignConfig> {
    toml::from_str(text).map_err(|e| CeaError::Parse(format!("design: {e}")))
}

impl DesignConfig {
    /// Keys set in `over` replace those of `self`.
    pub fn merged(&self, over: &DesignConfig) -> DesignConfig {
        macro_rules! pick {
            ($($f:ident),*) => { DesignConfig { $($f: over.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            n,
            lambda01,
            lambda02,
            hazard_ratio,
            beta,
            covariate_p,
            censor_rate,
            delay_fraction,
            delay_draw,
            delay_hazard,
            eta,
            r,
            a,
            dst_delays,
            costs,
            theta,
            replicates,
            seed,
            profile,
            convention,
            scenarios,
            out,
            format,
            precision
        )
    }

    /// Applies the settings to the default design and validates the result.
    pub fn to_design(&self) -> Result<SimDesign> {
        let mut d = SimDesign::default();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { d.$f = v; })* };
        }
        set!(
            n,
            lambda01,
            beta,
            covariate_p,
            censor_rate,
            delay_fraction,
            eta,
            r,
            a,
            replicates,
            seed
        );
        match (self.lambda02, self.hazard_ratio) {
            (Some(_), Some(_)) => {
                return Err(CeaError::InvalidInput(
                    "set lambda02 or hazard_ratio, not both".into(),
                ))
            }
            (Some(l), None) => d.lambda02 = l,
            (None, Some(hr)) => d.lambda02 = hr * d.lambda01,
            (None, None) => {}
        }
        if let Some(s) = &self.delay_draw {
            d.delay_draw = parse_delay_draw(s)?;
        }
        if let Some(s) = &self.delay_hazard {
            d.delay_hazard = parse_delay_hazard(s)?;
        }
        if let Some(s) = &self.dst_delays {
            d.dst_delays = match parse_delays(s)? {
                DelaySource::Spec(spec) => spec,
                DelaySource::Empirical => {
                    return Err(CeaError::InvalidInput(
                        "empirical delays are not available in simulations".into(),
                    ))
                }
            };
        }
        if let Some(c) = &self.costs {
            d.costs.rates = c.clone();
        }
        if let Some(t) = self.theta {
            d.costs.theta = t;
        }
        if let Some(s) = &self.profile {
            d.profile = parse_sim_profile(s)?;
        }
        if let Some(s) = &self.convention {
            d.convention = parse_convention(s)?;
        }
        d.validate()?;
        if d.costs.rates.len() < 2 {
            return Err(CeaError::InvalidInput(
                "simulations need two cost rates".into(),
            ));
        }
        Ok(d)
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>> {
        match &self.scenarios {
            None => Ok(vec![Scenario::Strt, Scenario::Dly, Scenario::Dst]),
            Some(list) if list.is_empty() => {
                Err(CeaError::InvalidInput("scenario list is empty".into()))
            }
            Some(list) => list.iter().map(|s| parse_scenario(s)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Ingested> {
        read_csv(text.as_bytes(), &CsvOptions::default(), 10.0)
    }

    #[test]
    fn counting_file() {
        let got = read(
            "id,entry,exit,event,group,delay,x\na,0,1.5,1,1,0,1\nb,0,2,0,1,,0\nc,0.3,4,1,2,0.3,1\n",
        )
        .unwrap();
        assert_eq!(got.shape, InputShape::Counting);
        assert_eq!(got.dataset.records.len(), 3);
        assert_eq!(got.covariate_names, vec!["x"]);
        assert_eq!(
            got.dataset.records[2],
            SubjectRecord::new("c", 0.3, 4.0, true, 2, vec![1.0], 0.3)
        );
    }

    #[test]
    fn raw_file_splits_switchers() {
        let got = read("id,time,event,switch_time,age\nu,3,1,0.5,40\nv,2,0,,50\n").unwrap();
        assert_eq!(got.shape, InputShape::Raw);
        let r = &got.dataset.records;
        assert_eq!(r.len(), 3);
        assert_eq!((r[0].stratum, r[0].exit, r[0].event), (1, 0.5, false));
        assert_eq!(
            (r[1].stratum, r[1].entry, r[1].delay, r[1].event),
            (2, 0.5, 0.5, true)
        );
        assert_eq!(r[2].covariates, vec![50.0]);
    }

    #[test]
    fn bad_rows_are_collected_with_lines() {
        let err = read("id,entry,exit,event,group,x\na,0,1,yes,1,0\nb,0,1,1,1,0\nc,0,1,0,1,1;5\n")
            .unwrap_err();
        match err {
            CeaError::Rows(issues) => {
                assert_eq!(
                    issues.iter().map(|i| i.line).collect::<Vec<_>>(),
                    vec![2, 4]
                );
                assert!(issues[0].message.contains("yes"));
            }
            e => panic!("unexpected {e:?}"),
        }
        let lenient = CsvOptions {
            events: EventMode::Lenient,
            ..CsvOptions::default()
        };
        let ok = read_csv(
            "id,entry,exit,event,group\na,0,1,yes,1\n".as_bytes(),
            &lenient,
            5.0,
        );
        assert!(ok.unwrap().dataset.records[0].event);
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(read(""), Err(CeaError::InvalidInput(_))));
        assert!(matches!(
            read("id,entry,exit,event,group\n"),
            Err(CeaError::InvalidInput(_))
        ));
        let e = read("id,entry,exit,group\na,0,1,1\n").unwrap_err();
        assert!(e.to_string().contains("'event'"), "{e}");
        // Comma decimals are not numbers.
        assert!(read("id,entry,exit,event,group\na,0,\"1,5\",1,1\n").is_err());
        let e = read("id,entry,exit,event,group,x,x\na,0,1,1,1,0,1\n").unwrap_err();
        assert!(e.to_string().contains("duplicate column 'x'"), "{e}");
    }

    #[test]
    fn mapped_names_are_never_default_covariates() {
        let raw = CsvOptions {
            shape: InputShape::Raw,
            ..CsvOptions::default()
        };
        let text = "id,time,event,switch_time,group,delay,x\na,1.5,1,,1,0,2\n";
        let got = read_csv(text.as_bytes(), &raw, 10.0).unwrap();
        assert_eq!(got.covariate_names, vec!["x".to_string()]);
        let mut buf = Vec::new();
        let names = vec!["exit".to_string()];
        assert!(write_csv(&got.dataset, &names, &mut buf).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let text = "id,entry,exit,event,group,delay,x1,x2\na,0,0.1,1,1,0,0.3333333333333333,-2\nb,0.7,1e-7,0,2,0.7,1,2\n";
        assert!(read(text).is_err());
        let text = "id,entry,exit,event,group,delay,x1,x2\na,0,0.1,1,1,0,0.3333333333333333,-2\nb,0.7,12.25,0,2,0.7,1,2\n";
        let got = read(text).unwrap();
        let mut buf = Vec::new();
        write_csv(&got.dataset, &got.covariate_names, &mut buf).unwrap();
        let again = read_csv(buf.as_slice(), &CsvOptions::default(), 10.0).unwrap();
        assert_eq!(again, got);
    }

    #[test]
    fn spec_strings() {
        assert_eq!(
            parse_profile("observed").unwrap(),
            CovariateProfile::Observed
        );
        assert_eq!(
            parse_profile("fixed:1,0").unwrap(),
            CovariateProfile::Fixed(vec![1.0, 0.0])
        );
        assert_eq!(
            parse_profile("weighted:0.9@1;0.1@0").unwrap(),
            CovariateProfile::Weighted(vec![(0.9, vec![1.0]), (0.1, vec![0.0])])
        );
        assert!(parse_profile("weighted:0.9").is_err());
        assert_eq!(
            parse_delays("none").unwrap(),
            DelaySource::Spec(DelaySpec::None)
        );
        assert_eq!(parse_delays("empirical").unwrap(), DelaySource::Empirical);
        assert_eq!(
            parse_delays("discrete:0.5@0.1;0.5@0.2").unwrap(),
            DelaySource::Spec(DelaySpec::Discrete(vec![(0.5, 0.1), (0.5, 0.2)]))
        );
        assert_eq!(
            parse_delays("mixexp:0.5,2").unwrap(),
            DelaySource::Spec(DelaySpec::MixtureExp {
                point_mass: 0.5,
                rate: 2.0
            })
        );
        assert!(parse_delays("fixed:abc").is_err());
        assert_eq!(
            parse_grid("0:1:0.25").unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(parse_grid("3,1").unwrap(), vec![3.0, 1.0]);
        assert!(parse_grid("1:0:1").is_err());
    }

    #[test]
    fn formatted_specs_parse_back() {
        for spec in [
            DelaySpec::None,
            DelaySpec::FixedDelay(0.9),
            DelaySpec::Discrete(vec![(0.25, 0.1), (0.75, 1.0 / 3.0)]),
            DelaySpec::MixtureExp {
                point_mass: 0.5,
                rate: 2.0,
            },
        ] {
            assert_eq!(
                parse_delays(&format_delays(&spec)).unwrap(),
                DelaySource::Spec(spec)
            );
        }
        let draw = DelayDraw::Uniform {
            low: 0.0,
            high: 1.0,
        };
        assert_eq!(parse_delay_draw(&format_delay_draw(&draw)).unwrap(), draw);
        let draw = DelayDraw::Atoms(vec![(0.5, 0.2), (0.5, 0.4)]);
        assert_eq!(parse_delay_draw(&format_delay_draw(&draw)).unwrap(), draw);
    }

    #[test]
    fn design_config() {
        let cfg = parse_design_toml(
            "n = 500\nhazard_ratio = 0.2\ndelay_fraction = 0.5\ndelay_draw = \"uniform:0,1\"\nscenarios = [\"strt\", \"dly\"]\n",
        )
        .unwrap();
        let d = cfg.to_design().unwrap();
        assert_eq!((d.n, d.lambda02, d.delay_fraction), (500, 0.2, 0.5));
        assert_eq!(
            cfg.scenario_list().unwrap(),
            vec![Scenario::Strt, Scenario::Dly]
        );
        assert!(parse_design_toml("bogus = 1").is_err());
        let over = DesignConfig {
            n: Some(7),
            ..DesignConfig::default()
        };
        assert_eq!(cfg.merged(&over).n, Some(7));
        assert_eq!(cfg.merged(&over).hazard_ratio, Some(0.2));
    }
}
