//! Incremental cost-effectiveness ratio and incremental net benefit.
//!
//! Both measures use the post-delay RMST components: the pre-delay part is
//! spent on treatment 1 in either arm and cancels from the increments.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{cov_rmst, Convention};
use crate::cox::CoxFit;
use crate::error::{CeaError, Result};
use crate::rmst::{RmstEstimate, Scenario};

/// Standard normal 97.5% quantile.
pub const Z_975: f64 = 1.959964;

/// Default lower bound on `|μ_j − μ_1|` (years) for computing an ICER.
pub const DENOM_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Cost per person-year by group; `rates[0]` is group 1.
    pub rates: Vec<f64>,
    /// Willingness to pay per life-year.
    pub theta: f64,
}

impl CostSpec {
    pub fn new(rates: Vec<f64>, theta: f64) -> Result<Self> {
        if rates.is_empty() || rates.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(CeaError::InvalidInput(
                "cost rates must be finite and non-negative".into(),
            ));
        }
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(CeaError::InvalidInput(
                "willingness to pay must be finite and non-negative".into(),
            ));
        }
        Ok(Self { rates, theta })
    }

    pub fn rate(&self, stratum: usize) -> Result<f64> {
        stratum
            .checked_sub(1)
            .and_then(|i| self.rates.get(i))
            .copied()
            .ok_or_else(|| CeaError::InvalidInput(format!("no cost rate for group {stratum}")))
    }
}

/// Post-delay RMSTs of groups 1 and `j` with their covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPair {
    pub mu1: f64,
    pub muj: f64,
    /// `[[Var μ1, Cov], [Cov, Var μj]]`; `None` when no variance is available.
    pub cov: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn new(estimate: f64, se: Option<f64>) -> Self {
        Self {
            estimate,
            se,
            lower: se.map(|s| estimate - Z_975 * s),
            upper: se.map(|s| estimate + Z_975 * s),
        }
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.lower? <= truth && truth <= self.upper?)
    }
}

pub fn icer(mu1: f64, muj: f64, c1: f64, cj: f64, floor: f64) -> Result<f64> {
    let diff = muj - mu1;
    if !(diff.abs() > floor) {
        return Err(CeaError::DegenerateDenominator { mu1, muj, diff });
    }
    Ok((cj * muj - c1 * mu1) / diff)
}

/// `(∂ICER/∂μ_1, ∂ICER/∂μ_j)`.
pub fn icer_gradient(mu1: f64, muj: f64, c1: f64, cj: f64) -> (f64, f64) {
    let diff = muj - mu1;
    let num = cj * muj - c1 * mu1;
    let d1 = (-c1 * diff + num) / (diff * diff);
    let dj = (cj * diff - num) / (diff * diff);
    (d1, dj)
}

fn quad(g: (f64, f64), cov: &[[f64; 2]; 2]) -> f64 {
    g.0 * g.0 * cov[0][0] + 2.0 * g.0 * g.1 * cov[0][1] + g.1 * g.1 * cov[1][1]
}

/// Delta-method standard error of the ICER.
pub fn icer_se(pair: &TailPair, c1: f64, cj: f64, floor: f64) -> Result<Option<f64>> {
    icer(pair.mu1, pair.muj, c1, cj, floor)?;
    Ok(pair.cov.map(|cov| {
        quad(icer_gradient(pair.mu1, pair.muj, c1, cj), &cov)
            .max(0.0)
            .sqrt()
    }))
}

/// `θ(μ_j − μ_1) − (c_j μ_j − c_1 μ_1)`.
pub fn inb(mu1: f64, muj: f64, c1: f64, cj: f64, theta: f64) -> f64 {
    (theta - cj) * muj - (theta - c1) * mu1
}

pub fn inb_se(pair: &TailPair, c1: f64, cj: f64, theta: f64) -> Option<f64> {
    let g = (-(theta - c1), theta - cj);
    pair.cov.map(|cov| quad(g, &cov).max(0.0).sqrt())
}

pub fn inb_interval(pair: &TailPair, c1: f64, cj: f64, theta: f64) -> Interval {
    Interval::new(
        inb(pair.mu1, pair.muj, c1, cj, theta),
        inb_se(pair, c1, cj, theta),
    )
}

/// INB with its interval at every `θ` of `grid`.
pub fn inb_curve(pair: &TailPair, c1: f64, cj: f64, grid: &[f64]) -> Result<Vec<(f64, Interval)>> {
    if grid.is_empty() {
        return Err(CeaError::InvalidInput(
            "empty willingness-to-pay grid".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(CeaError::InvalidInput(
            "willingness-to-pay grid must be sorted".into(),
        ));
    }
    Ok(grid
        .iter()
        .map(|&t| (t, inb_interval(pair, c1, cj, t)))
        .collect())
}

/// Builds the tail pair of two estimates of the same scenario.
pub fn tail_pair(
    fit: &CoxFit,
    est1: &RmstEstimate,
    estj: &RmstEstimate,
    convention: Convention,
) -> Result<TailPair> {
    let cov = match (&est1.influence_tail, &estj.influence_tail) {
        (Some(_), Some(_)) => {
            let v1 = cov_rmst(fit, est1, est1, true, convention)?.variance;
            let vj = cov_rmst(fit, estj, estj, true, convention)?.variance;
            let c = cov_rmst(fit, est1, estj, true, convention)?.variance;
            Some([[v1, c], [c, vj]])
        }
        _ => None,
    };
    Ok(TailPair {
        mu1: est1.value_tail,
        muj: estj.value_tail,
        cov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeReport {
    pub scenario: Scenario,
    pub stratum: usize,
    pub tails: TailPair,
    /// Currency per life-year; `None` when the denominator is degenerate.
    pub icer: Option<Interval>,
    pub theta: f64,
    /// Currency.
    pub inb: Interval,
    /// Willingness to pay at which the INB line crosses zero.
    pub crossing_theta: Option<f64>,
    pub warnings: Vec<String>,
}

/// ICER and INB of group `estj.stratum` against group 1.
pub fn cost_effectiveness(
    fit: &CoxFit,
    est1: &RmstEstimate,
    estj: &RmstEstimate,
    costs: &CostSpec,
    floor: f64,
    convention: Convention,
) -> Result<CeReport> {
    if est1.scenario != estj.scenario {
        return Err(CeaError::Precondition(
            "both estimates must use the same scenario".into(),
        ));
    }
    let c1 = costs.rate(est1.stratum)?;
    let cj = costs.rate(estj.stratum)?;
    let pair = tail_pair(fit, est1, estj, convention)?;
    let mut warnings = Vec::new();
    let icer_iv = match icer(pair.mu1, pair.muj, c1, cj, floor) {
        Ok(v) => Some(Interval::new(v, icer_se(&pair, c1, cj, floor)?)),
        Err(e @ CeaError::DegenerateDenominator { .. }) => {
            warnings.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    if pair.cov.is_none() {
        warnings.push(CeaError::UnsupportedVariance.to_string());
    }
    Ok(CeReport {
        scenario: estj.scenario,
        stratum: estj.stratum,
        tails: pair,
        icer: icer_iv,
        theta: costs.theta,
        inb: inb_interval(&pair, c1, cj, costs.theta),
        crossing_theta: icer_iv.map(|i| i.estimate),
        warnings,
    })
}
