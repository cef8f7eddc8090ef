//! Survival records in counting-process form, covariate profiles and delay
//! distributions.
//!
//! Every record describes one at-risk interval `(entry, exit]` in one stratum
//! (treatment group). A subject who switches treatment after a delay `δ`
//! contributes a stratum-1 interval `(0, δ]` and a stratum-`j` interval
//! `(δ, end]`, so the stratum-`j` risk set only picks the subject up after the
//! switch.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{CeaError, Result};

/// Tolerance on probability weights summing to one.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Risk-set entry (left truncation) time, in years.
    pub entry: f64,
    /// Observed end of this interval, in years.
    pub exit: f64,
    /// Death observed at `exit`.
    pub event: bool,
    /// Treatment group, 1-based.
    pub stratum: usize,
    pub covariates: Vec<f64>,
    /// Treatment-initiation delay; zero for records that never switched.
    pub delay: f64,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        entry: f64,
        exit: f64,
        event: bool,
        stratum: usize,
        covariates: Vec<f64>,
        delay: f64,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            entry,
            exit,
            event,
            stratum,
            covariates,
            delay,
        }
    }

    pub fn at_risk(&self, t: f64) -> bool {
        self.entry < t && t <= self.exit
    }
}

/// A subject history before counting-process splitting. Time zero is
/// eligibility for the new treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubject {
    pub subject_id: String,
    pub followup_end: f64,
    pub died: bool,
    pub switch_time: Option<f64>,
    /// Stratum entered at the switch (2 unless several new treatments exist).
    pub switch_stratum: usize,
    pub covariates: Vec<f64>,
}

/// Converts a raw switcher history into counting-process records.
///
/// A zero delay produces no stratum-1 interval at all.
pub fn split_switcher_history(raw: &RawSubject) -> Result<Vec<SubjectRecord>> {
    let end = raw.followup_end;
    if !end.is_finite() || end <= 0.0 {
        return Err(CeaError::InconsistentHistory(format!(
            "subject {}: follow-up end {} must be positive",
            raw.subject_id, end
        )));
    }
    let Some(delay) = raw.switch_time else {
        return Ok(vec![SubjectRecord::new(
            raw.subject_id.clone(),
            0.0,
            end,
            raw.died,
            1,
            raw.covariates.clone(),
            0.0,
        )]);
    };
    if !delay.is_finite() || delay < 0.0 {
        return Err(CeaError::InconsistentHistory(format!(
            "subject {}: switch time {} is negative",
            raw.subject_id, delay
        )));
    }
    if delay >= end {
        return Err(CeaError::InconsistentHistory(format!(
            "subject {}: switch time {} is not before follow-up end {}",
            raw.subject_id, delay, end
        )));
    }
    if raw.switch_stratum < 2 {
        return Err(CeaError::InconsistentHistory(format!(
            "subject {}: switch stratum must be at least 2",
            raw.subject_id
        )));
    }
    let mut out = Vec::with_capacity(2);
    if delay > 0.0 {
        out.push(SubjectRecord::new(
            raw.subject_id.clone(),
            0.0,
            delay,
            false,
            1,
            raw.covariates.clone(),
            0.0,
        ));
    }
    out.push(SubjectRecord::new(
        raw.subject_id.clone(),
        delay,
        end,
        raw.died,
        raw.switch_stratum,
        raw.covariates.clone(),
        delay,
    ));
    Ok(out)
}

/// A violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diagnostic {
    EntryNotBeforeExit {
        index: usize,
    },
    NegativeEntry {
        index: usize,
    },
    NonFiniteValue {
        index: usize,
    },
    InvalidStratum {
        index: usize,
    },
    InvalidDelay {
        index: usize,
    },
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    EmptyStratum(usize),
    EtaNotAboveDelay {
        eta: f64,
        delay: f64,
    },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::EntryNotBeforeExit { index } => {
                write!(f, "record {index}: entry is not before exit")
            }
            Diagnostic::NegativeEntry { index } => write!(f, "record {index}: negative entry"),
            Diagnostic::NonFiniteValue { index } => {
                write!(f, "record {index}: non-finite value")
            }
            Diagnostic::InvalidStratum { index } => {
                write!(f, "record {index}: stratum must be >= 1")
            }
            Diagnostic::InvalidDelay { index } => write!(f, "record {index}: invalid delay"),
            Diagnostic::DimensionMismatch {
                index,
                expected,
                found,
            } => write!(f, "record {index}: {found} covariates, expected {expected}"),
            Diagnostic::EmptyStratum(s) => write!(f, "stratum {s} has no records"),
            Diagnostic::EtaNotAboveDelay { eta, delay } => {
                write!(f, "horizon {eta} does not exceed minimum delay {delay}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SubjectRecord>,
    /// Covariate dimension.
    pub p: usize,
    /// Time horizon in years.
    pub eta: f64,
}

impl Dataset {
    /// Builds a dataset without checking invariants; see [`Dataset::validate`].
    pub fn new(records: Vec<SubjectRecord>, eta: f64) -> Self {
        let p = records.first().map_or(0, |r| r.covariates.len());
        Self { records, p, eta }
    }

    /// Builds a dataset and rejects it if any invariant fails for the strata present.
    pub fn checked(records: Vec<SubjectRecord>, eta: f64) -> Result<Self> {
        let ds = Self::new(records, eta);
        let strata = ds.strata();
        let diags = ds.validate(&strata);
        if let Some(first) = diags.first() {
            return Err(CeaError::InvalidInput(format!(
                "{} problem(s), first: {}",
                diags.len(),
                first
            )));
        }
        Ok(ds)
    }

    /// Strata present in the data, ascending.
    pub fn strata(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.records.iter().map(|r| r.stratum).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Records per stratum, `n_j`.
    pub fn n_per_stratum(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.stratum).or_insert(0) += 1;
        }
        m
    }

    pub fn n_stratum(&self, stratum: usize) -> usize {
        self.records.iter().filter(|r| r.stratum == stratum).count()
    }

    /// Number of distinct subjects, `n`.
    pub fn n_subjects(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Smallest observed delay within a stratum, `δ_j`.
    pub fn min_delay(&self, stratum: usize) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.stratum == stratum)
            .map(|r| r.delay)
            .reduce(f64::min)
    }

    /// Largest of the per-stratum minimum delays, `δ`.
    pub fn max_min_delay(&self) -> f64 {
        self.strata()
            .into_iter()
            .filter_map(|s| self.min_delay(s))
            .fold(0.0, f64::max)
    }

    /// Observed delays of the records in `stratum`.
    pub fn delays(&self, stratum: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stratum == stratum)
            .map(|r| r.delay)
            .collect()
    }

    /// Checks all invariants; `strata` lists the strata that will be analyzed.
    pub fn validate(&self, strata: &[usize]) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (index, r) in self.records.iter().enumerate() {
            if !(r.entry.is_finite() && r.exit.is_finite() && r.delay.is_finite())
                || r.covariates.iter().any(|x| !x.is_finite())
            {
                out.push(Diagnostic::NonFiniteValue { index });
                continue;
            }
            if r.entry < 0.0 {
                out.push(Diagnostic::NegativeEntry { index });
            }
            if r.entry >= r.exit {
                out.push(Diagnostic::EntryNotBeforeExit { index });
            }
            if r.stratum < 1 {
                out.push(Diagnostic::InvalidStratum { index });
            }
            if r.delay < 0.0 || (r.stratum == 1 && r.delay != 0.0) {
                out.push(Diagnostic::InvalidDelay { index });
            }
            if r.covariates.len() != self.p {
                out.push(Diagnostic::DimensionMismatch {
                    index,
                    expected: self.p,
                    found: r.covariates.len(),
                });
            }
        }
        let counts = self.n_per_stratum();
        for &s in strata {
            if counts.get(&s).copied().unwrap_or(0) == 0 {
                out.push(Diagnostic::EmptyStratum(s));
            }
        }
        let delay = self.max_min_delay();
        if !(self.eta > delay) {
            out.push(Diagnostic::EtaNotAboveDelay {
                eta: self.eta,
                delay,
            });
        }
        out
    }
}

/// Covariate distribution over which RMSTs are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateProfile {
    /// Every subject in the data, equally weighted.
    Observed,
    Fixed(Vec<f64>),
    /// `(weight, x)` atoms with weights summing to one.
    Weighted(Vec<(f64, Vec<f64>)>),
}

/// A resolved profile: weighted covariate atoms.
pub type ProfileAtoms = Vec<(f64, Vec<f64>)>;

/// Expands a profile into weighted covariate atoms.
///
/// `Observed` yields one atom per subject (records sharing a subject id count
/// once) with weight `1/n`.
pub fn resolve_profile(profile: &CovariateProfile, dataset: &Dataset) -> Result<ProfileAtoms> {
    let p = dataset.p;
    let check = |x: &Vec<f64>| {
        if x.len() != p {
            Err(CeaError::DimensionMismatch {
                expected: p,
                found: x.len(),
            })
        } else {
            Ok(())
        }
    };
    match profile {
        CovariateProfile::Observed => {
            let mut seen = HashSet::new();
            let mut xs = Vec::new();
            for r in &dataset.records {
                if seen.insert(r.subject_id.as_str()) {
                    check(&r.covariates)?;
                    xs.push(r.covariates.clone());
                }
            }
            if xs.is_empty() {
                return Err(CeaError::InvalidInput("empty dataset".into()));
            }
            let w = 1.0 / xs.len() as f64;
            Ok(xs.into_iter().map(|x| (w, x)).collect())
        }
        CovariateProfile::Fixed(x) => {
            check(x)?;
            Ok(vec![(1.0, x.clone())])
        }
        CovariateProfile::Weighted(atoms) => {
            if atoms.is_empty() {
                return Err(CeaError::InvalidInput(
                    "weighted profile has no atoms".into(),
                ));
            }
            let mut total = 0.0;
            for (w, x) in atoms {
                check(x)?;
                if !(w.is_finite() && *w >= 0.0) {
                    return Err(CeaError::InvalidInput(format!(
                        "invalid profile weight {w}"
                    )));
                }
                total += w;
            }
            if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(CeaError::InvalidInput(format!(
                    "profile weights sum to {total}, not 1"
                )));
            }
            Ok(atoms.clone())
        }
    }
}

/// Merges atoms with bit-identical covariate vectors, keeping first-seen order.
pub fn compress_atoms(atoms: &[(f64, Vec<f64>)]) -> ProfileAtoms {
    let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut out: ProfileAtoms = Vec::new();
    for (w, x) in atoms {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => out[i].0 += w,
            None => {
                index.insert(key, out.len());
                out.push((*w, x.clone()));
            }
        }
    }
    out
}

/// Distribution of treatment-initiation delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelaySpec {
    /// No delay (`δ = 0`).
    None,
    FixedDelay(f64),
    /// Observed delays, equally weighted (duplicates keep their multiplicity).
    Empirical(Vec<f64>),
    /// `(probability, δ)` atoms.
    Discrete(Vec<(f64, f64)>),
    /// Point mass at zero plus an exponential(`rate`) density for the rest.
    MixtureExp {
        point_mass: f64,
        rate: f64,
    },
}

impl DelaySpec {
    /// Empirical distribution of the delays recorded in `stratum`.
    pub fn empirical(dataset: &Dataset, stratum: usize) -> Self {
        DelaySpec::Empirical(dataset.delays(stratum))
    }

    /// Discrete atoms `(weight, δ)`; equal δ values are merged. `None` for the
    /// continuous mixture.
    pub fn atoms(&self, eta: f64) -> Result<Option<Vec<(f64, f64)>>> {
        let raw: Vec<(f64, f64)> = match self {
            DelaySpec::None => vec![(1.0, 0.0)],
            DelaySpec::FixedDelay(a) => vec![(1.0, *a)],
            DelaySpec::Empirical(list) => {
                if list.is_empty() {
                    return Err(CeaError::InvalidInput("empty delay list".into()));
                }
                let w = 1.0 / list.len() as f64;
                list.iter().map(|&d| (w, d)).collect()
            }
            DelaySpec::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(CeaError::InvalidInput("empty delay list".into()));
                }
                let total: f64 = atoms.iter().map(|a| a.0).sum();
                if atoms.iter().any(|a| !(a.0.is_finite() && a.0 >= 0.0))
                    || (total - 1.0).abs() > WEIGHT_TOLERANCE
                {
                    return Err(CeaError::InvalidInput(format!(
                        "delay probabilities must be non-negative and sum to 1 (sum = {total})"
                    )));
                }
                atoms.clone()
            }
            DelaySpec::MixtureExp { point_mass, rate } => {
                if !(0.0..=1.0).contains(point_mass) || !(rate.is_finite() && *rate > 0.0) {
                    return Err(CeaError::InvalidInput(
                        "mixture needs point mass in [0,1] and a positive rate".into(),
                    ));
                }
                return Ok(None);
            }
        };
        for &(_, d) in &raw {
            if !(d.is_finite() && d >= 0.0 && d < eta) {
                return Err(CeaError::InvalidInput(format!(
                    "delay {d} outside [0, {eta})"
                )));
            }
        }
        let mut merged: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (w, d) in raw {
            // Non-negative finite floats order the same as their bit patterns.
            merged.entry(d.to_bits()).or_insert((0.0, d)).0 += w;
        }
        Ok(Some(merged.into_values().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(end: f64, died: bool, switch: Option<f64>) -> RawSubject {
        RawSubject {
            subject_id: "s".into(),
            followup_end: end,
            died,
            switch_time: switch,
            switch_stratum: 2,
            covariates: vec![1.0],
        }
    }

    #[test]
    fn non_switcher_is_single_record() {
        let recs = split_switcher_history(&raw(3.0, true, None)).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.stratum, r.entry, r.exit, r.event), (1, 0.0, 3.0, true));
    }

    #[test]
    fn switcher_is_split_at_delay() {
        let recs = split_switcher_history(&raw(5.0, true, Some(0.9))).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(
            (recs[0].stratum, recs[0].entry, recs[0].exit, recs[0].event),
            (1, 0.0, 0.9, false)
        );
        assert_eq!(
            (
                recs[1].stratum,
                recs[1].entry,
                recs[1].exit,
                recs[1].event,
                recs[1].delay
            ),
            (2, 0.9, 5.0, true, 0.9)
        );
    }

    #[test]
    fn zero_delay_drops_empty_interval() {
        let recs = split_switcher_history(&raw(2.0, false, Some(0.0))).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(
            (
                recs[0].stratum,
                recs[0].entry,
                recs[0].exit,
                recs[0].event,
                recs[0].delay
            ),
            (2, 0.0, 2.0, false, 0.0)
        );
    }

    #[test]
    fn inconsistent_histories_rejected() {
        assert!(split_switcher_history(&raw(2.0, false, Some(2.0))).is_err());
        assert!(split_switcher_history(&raw(2.0, false, Some(-0.1))).is_err());
        assert!(split_switcher_history(&raw(-1.0, false, None)).is_err());
    }

    fn two_records() -> Dataset {
        Dataset::new(
            vec![
                SubjectRecord::new("a", 0.0, 1.0, true, 1, vec![0.0], 0.0),
                SubjectRecord::new("b", 0.0, 2.0, false, 2, vec![1.0], 0.0),
            ],
            3.0,
        )
    }

    #[test]
    fn validate_well_formed() {
        assert!(two_records().validate(&[1, 2]).is_empty());
    }

    #[test]
    fn validate_entry_equals_exit() {
        let mut ds = two_records();
        ds.records[0].entry = 1.0;
        ds.records[0].exit = 1.0;
        assert_eq!(
            ds.validate(&[1, 2]),
            vec![Diagnostic::EntryNotBeforeExit { index: 0 }]
        );
    }

    #[test]
    fn validate_empty_stratum() {
        let mut ds = two_records();
        ds.records.truncate(1);
        assert_eq!(ds.validate(&[1, 2]), vec![Diagnostic::EmptyStratum(2)]);
    }

    #[test]
    fn validate_dimension_and_eta() {
        let mut ds = two_records();
        ds.records[1].covariates = vec![1.0, 2.0];
        ds.records[1].entry = 0.5;
        ds.records[1].delay = 0.5;
        ds.eta = 0.5;
        let d = ds.validate(&[1, 2]);
        assert!(d.contains(&Diagnostic::DimensionMismatch {
            index: 1,
            expected: 1,
            found: 2
        }));
        assert!(d.contains(&Diagnostic::EtaNotAboveDelay {
            eta: 0.5,
            delay: 0.5
        }));
    }

    #[test]
    fn resolve_profiles() {
        let ds = Dataset::new(
            (0..4)
                .map(|i| {
                    SubjectRecord::new(format!("s{i}"), 0.0, 1.0, true, 1, vec![i as f64], 0.0)
                })
                .collect(),
            2.0,
        );
        let fixed = resolve_profile(&CovariateProfile::Fixed(vec![1.0]), &ds).unwrap();
        assert_eq!(fixed, vec![(1.0, vec![1.0])]);
        let obs = resolve_profile(&CovariateProfile::Observed, &ds).unwrap();
        assert_eq!(obs.len(), 4);
        assert!(obs.iter().all(|a| a.0 == 0.25));
        let atoms = vec![(0.9, vec![1.0]), (0.1, vec![0.0])];
        let w = resolve_profile(&CovariateProfile::Weighted(atoms.clone()), &ds).unwrap();
        assert_eq!(w, atoms);
        assert!(resolve_profile(&CovariateProfile::Fixed(vec![1.0, 2.0]), &ds).is_err());
        assert!(resolve_profile(
            &CovariateProfile::Weighted(vec![(0.5, vec![1.0]), (0.4, vec![0.0])]),
            &ds
        )
        .is_err());
    }

    #[test]
    fn observed_profile_counts_split_subject_once() {
        let mut recs = split_switcher_history(&raw(5.0, true, Some(0.9))).unwrap();
        recs.push(SubjectRecord::new("t", 0.0, 1.0, true, 1, vec![0.0], 0.0));
        let ds = Dataset::new(recs, 6.0);
        let obs = resolve_profile(&CovariateProfile::Observed, &ds).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(ds.n_subjects(), 2);
    }

    #[test]
    fn compress_merges_identical_vectors() {
        let atoms = vec![(0.25, vec![1.0]), (0.25, vec![0.0]), (0.5, vec![1.0])];
        assert_eq!(
            compress_atoms(&atoms),
            vec![(0.75, vec![1.0]), (0.25, vec![0.0])]
        );
    }

    #[test]
    fn delay_atoms() {
        assert_eq!(DelaySpec::None.atoms(1.0).unwrap(), Some(vec![(1.0, 0.0)]));
        let e = DelaySpec::Empirical(vec![0.5, 0.2, 0.5, 0.1]);
        assert_eq!(
            e.atoms(1.0).unwrap(),
            Some(vec![(0.25, 0.1), (0.25, 0.2), (0.5, 0.5)])
        );
        assert!(DelaySpec::Empirical(vec![]).atoms(1.0).is_err());
        assert!(DelaySpec::FixedDelay(2.0).atoms(1.0).is_err());
        assert!(DelaySpec::Discrete(vec![(0.5, 0.1)]).atoms(1.0).is_err());
        assert_eq!(
            DelaySpec::MixtureExp {
                point_mass: 0.5,
                rate: 2.0
            }
            .atoms(1.0)
            .unwrap(),
            None
        );
    }
}
