//! Stratified Cox proportional-hazards fitting with delayed entry.
//!
//! The partial likelihood uses the Breslow tie approximation. Within each
//! stratum the risk set at time `t` is every record with `entry < t <= exit`,
//! so a record entering exactly at an event time is not at risk for it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{CeaError, Result};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxConfig {
    pub max_iter: usize,
    pub tol_score: f64,
    pub tol_beta: f64,
    /// Ridge penalty added to the information; 0 disables it.
    pub ridge: f64,
    pub max_halvings: usize,
}

impl Default for CoxConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol_score: 1e-8,
            tol_beta: 1e-10,
            ridge: 0.0,
            max_halvings: 30,
        }
    }
}

/// Breslow cumulative baseline hazard of one stratum, together with the risk
/// sums the variance kernels need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub stratum: usize,
    /// Distinct event times, strictly increasing.
    pub event_times: Vec<f64>,
    /// Deaths at each event time.
    pub deaths: Vec<f64>,
    /// `Σ_{at risk} exp(β̂ᵀx)`.
    pub risk_sum: Vec<f64>,
    /// `Σ_{at risk} x exp(β̂ᵀx)`.
    pub risk_sum_x: Vec<Vec<f64>>,
    pub jumps: Vec<f64>,
    pub cum: Vec<f64>,
    /// Records in the stratum, `n_j`.
    pub n_records: usize,
}

impl BaselineHazard {
    /// `Λ̂_0j(t)`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self.event_times.partition_point(|&e| e <= t) {
            0 => 0.0,
            k => self.cum[k - 1],
        }
    }

    pub fn as_step(&self) -> StepFunction {
        StepFunction::new(self.event_times.clone(), self.cum.clone(), 0.0)
    }

    /// Index range of event times in `(lower, upper)`.
    pub fn events_between(&self, lower: f64, upper: f64) -> std::ops::Range<usize> {
        let lo = self.event_times.partition_point(|&e| e <= lower);
        let hi = self.event_times.partition_point(|&e| e < upper);
        lo..hi.max(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Observed information (unnormalized).
    pub information: Vec<Vec<f64>>,
    /// Observed information divided by `n`, `Σ̂`.
    pub information_normalized: Vec<Vec<f64>>,
    /// Inverse of the (ridge-augmented) information, the covariance of `β̂`.
    pub information_inverse: Vec<Vec<f64>>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub score: Vec<f64>,
    /// Distinct subjects, `n`.
    pub n_total: usize,
    pub n_per_stratum: BTreeMap<usize, usize>,
    pub strata: BTreeMap<usize, BaselineHazard>,
    /// Smallest recorded delay per stratum, `δ_j`.
    pub min_delays: BTreeMap<usize, f64>,
    pub converged: bool,
    pub iterations: usize,
    pub ridge: f64,
}

impl CoxFit {
    /// `δ`, the largest per-stratum minimum delay.
    pub fn max_min_delay(&self) -> f64 {
        self.min_delays.values().copied().fold(0.0, f64::max)
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn baseline(&self, stratum: usize) -> Result<&BaselineHazard> {
        self.strata
            .get(&stratum)
            .ok_or(CeaError::EmptyStratum(stratum))
    }

    /// Standard errors of `β̂`.
    pub fn beta_se(&self) -> Vec<f64> {
        (0..self.p())
            .map(|k| self.information_inverse[k][k].max(0.0).sqrt())
            .collect()
    }

    /// `ψ_aᵀ Var(β̂) ψ_b`.
    pub fn beta_quadratic(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                s += ai * self.information_inverse[i][j] * bj;
            }
        }
        s
    }
}

/// Value, gradient and negative Hessian of the stratified log partial likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub loglik: f64,
    pub score: Vec<f64>,
    pub information: Vec<Vec<f64>>,
}

struct Centered<'a> {
    records: &'a [SubjectRecord],
    means: Vec<f64>,
    p: usize,
}

impl<'a> Centered<'a> {
    fn new(ds: &'a Dataset) -> Self {
        let p = ds.p;
        let mut means = vec![0.0; p];
        if !ds.records.is_empty() {
            for r in &ds.records {
                for (m, x) in means.iter_mut().zip(&r.covariates) {
                    *m += x;
                }
            }
            let n = ds.records.len() as f64;
            means.iter_mut().for_each(|m| *m /= n);
        }
        Self {
            records: &ds.records,
            means,
            p,
        }
    }

    fn x(&self, i: usize, k: usize) -> f64 {
        self.records[i].covariates[k] - self.means[k]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        (0..self.p).map(|k| beta[k] * self.x(i, k)).sum()
    }
}

/// Risk sums at the distinct event times of one stratum, on centered covariates.
struct StratumSweep {
    times: Vec<f64>,
    deaths: Vec<f64>,
    /// Σ over the dying records of centered x.
    death_x: Vec<Vec<f64>>,
    /// Σ over dying records of the linear predictor.
    death_eta: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<Vec<f64>>>,
}

fn sweep_stratum(c: &Centered, idx: &[usize], beta: &[f64], want_s2: bool) -> StratumSweep {
    let p = c.p;
    let eta: Vec<f64> = idx.iter().map(|&i| c.eta(i, beta)).collect();
    let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();

    let mut by_exit: Vec<usize> = (0..idx.len()).collect();
    by_exit.sort_by(|&a, &b| c.records[idx[b]].exit.total_cmp(&c.records[idx[a]].exit));
    let mut by_entry: Vec<usize> = (0..idx.len()).collect();
    by_entry.sort_by(|&a, &b| c.records[idx[b]].entry.total_cmp(&c.records[idx[a]].entry));

    // Distinct event times, descending.
    let mut event_times: Vec<f64> = idx
        .iter()
        .filter(|&&i| c.records[i].event)
        .map(|&i| c.records[i].exit)
        .collect();
    event_times.sort_by(|a, b| b.total_cmp(a));
    event_times.dedup();

    let mut out = StratumSweep {
        times: Vec::with_capacity(event_times.len()),
        deaths: Vec::with_capacity(event_times.len()),
        death_x: Vec::with_capacity(event_times.len()),
        death_eta: Vec::with_capacity(event_times.len()),
        s0: Vec::with_capacity(event_times.len()),
        s1: Vec::with_capacity(event_times.len()),
        s2: Vec::new(),
    };
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![vec![0.0; p]; if want_s2 { p } else { 0 }];
    let (mut ia, mut ib) = (0usize, 0usize);

    let accumulate =
        |local: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [Vec<f64>]| {
            let i = idx[local];
            let wi = sign * w[local];
            *s0 += wi;
            for k in 0..p {
                let xk = c.x(i, k);
                s1[k] += wi * xk;
                if want_s2 {
                    for l in 0..=k {
                        s2[k][l] += wi * xk * c.x(i, l);
                    }
                }
            }
        };

    for &t in &event_times {
        while ia < by_exit.len() && c.records[idx[by_exit[ia]]].exit >= t {
            accumulate(by_exit[ia], 1.0, &mut s0, &mut s1, &mut s2);
            ia += 1;
        }
        while ib < by_entry.len() && c.records[idx[by_entry[ib]]].entry >= t {
            accumulate(by_entry[ib], -1.0, &mut s0, &mut s1, &mut s2);
            ib += 1;
        }
        let mut d = 0.0;
        let mut dx = vec![0.0; p];
        let mut de = 0.0;
        // Records dying at t are exactly those with exit == t among the added ones.
        let mut j = ia;
        while j > 0 {
            j -= 1;
            let local = by_exit[j];
            let r = &c.records[idx[local]];
            if r.exit != t {
                break;
            }
            if r.event {
                d += 1.0;
                de += eta[local];
                for k in 0..p {
                    dx[k] += c.x(idx[local], k);
                }
            }
        }
        out.times.push(t);
        out.deaths.push(d);
        out.death_x.push(dx);
        out.death_eta.push(de);
        out.s0.push(s0);
        out.s1.push(s1.clone());
        if want_s2 {
            let mut full = vec![vec![0.0; p]; p];
            for k in 0..p {
                for l in 0..=k {
                    full[k][l] = s2[k][l];
                    full[l][k] = s2[k][l];
                }
            }
            out.s2.push(full);
        }
    }
    // Ascending time order.
    out.times.reverse();
    out.deaths.reverse();
    out.death_x.reverse();
    out.death_eta.reverse();
    out.s0.reverse();
    out.s1.reverse();
    out.s2.reverse();
    out
}

fn stratum_indices(ds: &Dataset) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        m.entry(r.stratum).or_default().push(i);
    }
    m
}

fn evaluate(c: &Centered, strata: &BTreeMap<usize, Vec<usize>>, beta: &[f64]) -> PartialLikelihood {
    let p = c.p;
    let mut ll = 0.0;
    let mut score = vec![0.0; p];
    let mut info = vec![vec![0.0; p]; p];
    for idx in strata.values() {
        let sw = sweep_stratum(c, idx, beta, true);
        for e in 0..sw.times.len() {
            let d = sw.deaths[e];
            if d == 0.0 {
                continue;
            }
            let s0 = sw.s0[e];
            ll += sw.death_eta[e] - d * s0.ln();
            for k in 0..p {
                let mk = sw.s1[e][k] / s0;
                score[k] += sw.death_x[e][k] - d * mk;
                for l in 0..p {
                    let ml = sw.s1[e][l] / s0;
                    info[k][l] += d * (sw.s2[e][k][l] / s0 - mk * ml);
                }
            }
        }
    }
    PartialLikelihood {
        loglik: ll,
        score,
        information: info,
    }
}

/// Log partial likelihood, score and observed information at `beta`.
pub fn partial_likelihood(dataset: &Dataset, beta: &[f64]) -> PartialLikelihood {
    assert_eq!(beta.len(), dataset.p, "beta has wrong dimension");
    let c = Centered::new(dataset);
    evaluate(&c, &stratum_indices(dataset), beta)
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let p = m.len();
    DMatrix::from_fn(p, p, |i, j| m[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Cholesky factorization with a relative pivot threshold; `None` when the
/// matrix is singular or not positive definite.
fn robust_cholesky(m: &[Vec<f64>]) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let p = m.len();
    let scale = (0..p).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = to_matrix(m).cholesky()?;
    let l = chol.l();
    let min_pivot = (0..p)
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-10 * scale {
        return None;
    }
    Some(chol)
}

fn penalize(mut pl: PartialLikelihood, beta: &[f64], ridge: f64) -> PartialLikelihood {
    if ridge > 0.0 {
        let p = beta.len();
        pl.loglik -= 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>();
        for k in 0..p {
            pl.score[k] -= ridge * beta[k];
            pl.information[k][k] += ridge;
        }
    }
    pl
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits the stratified Cox model by Newton iteration from `β = 0` with
/// step-halving, then computes every stratum's Breslow baseline.
pub fn fit(dataset: &Dataset, config: &CoxConfig) -> Result<CoxFit> {
    let strata = dataset.strata();
    let diags = dataset.validate(&strata);
    if let Some(d) = diags.first() {
        return Err(CeaError::InvalidInput(d.to_string()));
    }
    if !dataset.records.iter().any(|r| r.event) {
        return Err(CeaError::NoEvents);
    }
    if config.ridge < 0.0 {
        return Err(CeaError::InvalidInput("ridge must be non-negative".into()));
    }
    let p = dataset.p;
    let c = Centered::new(dataset);
    let groups = stratum_indices(dataset);
    let ridge = config.ridge;

    let mut beta = vec![0.0; p];
    let mut current = penalize(evaluate(&c, &groups, &beta), &beta, ridge);
    let mut trace = vec![current.loglik];
    let mut converged = p == 0;
    let mut iterations = 0;

    while !converged && iterations < config.max_iter {
        if max_abs(&current.score) < config.tol_score {
            converged = true;
            break;
        }
        iterations += 1;
        let chol = robust_cholesky(&current.information).ok_or(CeaError::SingularInformation)?;
        let step = chol.solve(&DVector::from_vec(current.score.clone()));

        // Near the optimum the gain is below rounding noise in the log
        // likelihood; such steps are accepted.
        let slack = 1e-12 * current.loglik.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let cand: Vec<f64> = beta
                .iter()
                .enumerate()
                .map(|(k, b)| b + scale * step[k])
                .collect();
            let eval = penalize(evaluate(&c, &groups, &cand), &cand, ridge);
            if eval.loglik.is_finite() && eval.loglik >= current.loglik - slack {
                accepted = Some((cand, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, eval)) = accepted else {
            // No uphill step left: the iterate is at the numerical optimum
            // unless the score says otherwise.
            if max_abs(&current.score) < config.tol_score.max(1e-6) {
                converged = true;
                break;
            }
            return Err(CeaError::Diverged {
                iterations,
                max_score: max_abs(&current.score),
                last_beta: beta,
            });
        };
        let rel_change = beta
            .iter()
            .zip(&cand)
            .map(|(o, n)| (n - o).abs() / (1.0 + o.abs()))
            .fold(0.0, f64::max);
        beta = cand;
        current = eval;
        trace.push(current.loglik);
        if max_abs(&current.score) < config.tol_score || rel_change < config.tol_beta {
            converged = true;
        }
    }
    if !converged {
        return Err(CeaError::Diverged {
            iterations,
            max_score: max_abs(&current.score),
            last_beta: beta,
        });
    }

    let inverse = if p == 0 {
        Vec::new()
    } else {
        let chol = robust_cholesky(&current.information).ok_or(CeaError::SingularInformation)?;
        from_matrix(&chol.inverse())
    };
    let unpenalized = if ridge > 0.0 {
        evaluate(&c, &groups, &beta)
    } else {
        current.clone()
    };
    let n_total = dataset.n_subjects();
    let normalized = unpenalized
        .information
        .iter()
        .map(|row| row.iter().map(|v| v / n_total as f64).collect())
        .collect();

    let mut baselines = BTreeMap::new();
    for (&s, idx) in &groups {
        baselines.insert(s, baseline_from_sweep(&c, s, idx, &beta));
    }

    Ok(CoxFit {
        beta,
        information: unpenalized.information,
        information_normalized: normalized,
        information_inverse: inverse,
        loglik: unpenalized.loglik,
        loglik_trace: trace,
        score: current.score,
        n_total,
        n_per_stratum: dataset.n_per_stratum(),
        strata: baselines,
        min_delays: strata
            .iter()
            .filter_map(|&s| dataset.min_delay(s).map(|d| (s, d)))
            .collect(),
        converged,
        iterations,
        ridge,
    })
}

fn baseline_from_sweep(
    c: &Centered,
    stratum: usize,
    idx: &[usize],
    beta: &[f64],
) -> BaselineHazard {
    let p = c.p;
    let sw = sweep_stratum(c, idx, beta, false);
    // Undo centering so the baseline refers to x = 0.
    let shift: f64 = (0..p).map(|k| beta[k] * c.means[k]).sum::<f64>().exp();
    let mut bh = BaselineHazard {
        stratum,
        event_times: Vec::new(),
        deaths: Vec::new(),
        risk_sum: Vec::new(),
        risk_sum_x: Vec::new(),
        jumps: Vec::new(),
        cum: Vec::new(),
        n_records: idx.len(),
    };
    let mut cum = 0.0;
    for e in 0..sw.times.len() {
        let d = sw.deaths[e];
        let s0 = sw.s0[e] * shift;
        assert!(s0 > 0.0, "empty risk set at event time {}", sw.times[e]);
        let s1: Vec<f64> = (0..p)
            .map(|k| shift * (sw.s1[e][k] + c.means[k] * sw.s0[e]))
            .collect();
        let jump = d / s0;
        cum += jump;
        bh.event_times.push(sw.times[e]);
        bh.deaths.push(d);
        bh.risk_sum.push(s0);
        bh.risk_sum_x.push(s1);
        bh.jumps.push(jump);
        bh.cum.push(cum);
    }
    bh
}

/// Breslow baseline of `stratum` at an arbitrary coefficient vector.
pub fn breslow(dataset: &Dataset, beta: &[f64], stratum: usize) -> Result<BaselineHazard> {
    if beta.len() != dataset.p {
        return Err(CeaError::DimensionMismatch {
            expected: dataset.p,
            found: beta.len(),
        });
    }
    let groups = stratum_indices(dataset);
    let idx = groups
        .get(&stratum)
        .ok_or(CeaError::EmptyStratum(stratum))?;
    let c = Centered::new(dataset);
    let bh = baseline_from_sweep(&c, stratum, idx, beta);
    if bh.event_times.is_empty() {
        return Err(CeaError::Precondition(format!(
            "stratum {stratum} has no events"
        )));
    }
    Ok(bh)
}

/// `Ŝ_j(t | x)`, optionally conditional on survival to `condition_from`.
pub fn survival(
    fit: &CoxFit,
    stratum: usize,
    x: &[f64],
    t: f64,
    condition_from: Option<f64>,
) -> Result<f64> {
    let from = condition_from.unwrap_or(0.0);
    if t < from {
        return Err(CeaError::Domain { t, from });
    }
    if x.len() != fit.p() {
        return Err(CeaError::DimensionMismatch {
            expected: fit.p(),
            found: x.len(),
        });
    }
    let bh = fit.baseline(stratum)?;
    let rel = fit.linear_predictor(x).exp();
    Ok((-rel * (bh.cumulative(t) - bh.cumulative(from))).exp())
}
