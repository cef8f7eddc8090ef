//! Variance kernels and influence-function algebra for RMST estimators.
//!
//! Every RMST estimate linearizes as
//!
//! ```text
//! μ̂ − μ ≈ −Σ_blocks Σ_k c_k (W_s(t_k) − W_s(o)) + Ψᵀ(β̂ − β)
//! ```
//!
//! where `W_s(t) = Σ_{e ≤ t} dM_s(e) / S0_s(e)` is the Breslow martingale of
//! stratum `s`. A [`Block`] stores one origin `o` with its nodes `(t_k, c_k)`;
//! an [`Influence`] collects blocks and `Ψ`. Variances and covariances are
//! bilinear forms on influences, so covariances between groups, delay atoms
//! and scenarios all reduce to [`covariance`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{BaselineHazard, CoxFit};
use crate::data::{DelaySpec, ProfileAtoms};
use crate::error::{CeaError, Result};
use crate::rmst::{rmst_dly, RmstEstimate, Scenario};

/// Reading of `V(T_p ∧ T_q)` in the martingale double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Convention {
    /// `∧ = min`, the martingale covariance `Cov(W(s), W(t)) = V(min(s, t))`.
    #[default]
    Min,
    /// Literal `∧ = max`.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub stratum: usize,
    pub origin: f64,
    /// `(t_k, c_k)` with `t_k >= origin`.
    pub nodes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Influence {
    pub blocks: Vec<Block>,
    pub psi: Vec<f64>,
}

impl Influence {
    pub fn zero(p: usize) -> Self {
        Self {
            blocks: Vec::new(),
            psi: vec![0.0; p],
        }
    }

    /// `self += w · other`.
    pub fn add_scaled(&mut self, other: &Influence, w: f64) {
        if self.psi.len() < other.psi.len() {
            self.psi.resize(other.psi.len(), 0.0);
        }
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            *a += w * b;
        }
        for b in &other.blocks {
            self.blocks.push(Block {
                stratum: b.stratum,
                origin: b.origin,
                nodes: b.nodes.iter().map(|&(t, c)| (t, w * c)).collect(),
            });
        }
    }

    pub fn scaled(&self, w: f64) -> Influence {
        let mut out = Influence::zero(self.psi.len());
        out.add_scaled(self, w);
        out
    }

    pub fn strata(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.blocks.iter().map(|b| b.stratum).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Stratum-1 cumulative quantities up to the delay `a`, used by the tail of
/// the delayed scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prefix {
    pub at: f64,
    /// `Λ̂_01(a)`.
    pub lambda: f64,
    /// `H_1(a)`.
    pub h: Vec<f64>,
}

/// Kernel arrays of one stratum on one window for one covariate profile.
///
/// Point arrays (`h`, `v`, `lambda`, `survival`, `gamma`, `phi`) are indexed
/// by the quadrature left points `grid`; event arrays (`g0`, `g1`) by the
/// events `grid[1..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub stratum: usize,
    pub n_stratum: usize,
    pub lower: f64,
    pub upper: f64,
    pub grid: Vec<f64>,
    /// `D_k = grid[k+1] − grid[k]`, with `grid[m] = upper`.
    pub widths: Vec<f64>,
    /// `S0 / n_j` at each event.
    pub g0: Vec<f64>,
    /// `S1 / n_j` at each event.
    pub g1: Vec<Vec<f64>>,
    /// `Σ_{lower < e <= t} d S1 / S0²`.
    pub h: Vec<Vec<f64>>,
    /// `n_j Σ_{lower < e <= t} d / S0²`.
    pub v: Vec<f64>,
    /// `Λ̂_0j(t) − Λ̂_0j(lower)`.
    pub lambda: Vec<f64>,
    /// Profile-averaged survival (conditional on `lower`, times `Ŝ_1(a|x)`
    /// when a prefix is present).
    pub survival: Vec<f64>,
    /// Profile average of `exp(β̂ᵀx) S`.
    pub gamma: Vec<f64>,
    /// Profile average of `x exp(β̂ᵀx) S`.
    pub phi: Vec<Vec<f64>>,
    pub prefix: Option<Prefix>,
    /// No events of the stratum fall inside the window.
    pub empty_grid: bool,
}

impl KernelSet {
    /// `Σ_k survival_k D_k`.
    pub fn integral(&self) -> f64 {
        self.survival
            .iter()
            .zip(&self.widths)
            .map(|(s, d)| s * d)
            .sum()
    }

    /// Linearization of [`KernelSet::integral`].
    pub fn influence(&self) -> Influence {
        let p = self.phi.first().map_or(0, Vec::len);
        let (pre_lambda, pre_h) = match &self.prefix {
            Some(pre) => (pre.lambda, pre.h.clone()),
            None => (0.0, vec![0.0; p]),
        };
        let mut psi = vec![0.0; p];
        let mut nodes = Vec::with_capacity(self.grid.len());
        let mut total = 0.0;
        for k in 0..self.grid.len() {
            let c = self.gamma[k] * self.widths[k];
            total += c;
            if k > 0 {
                nodes.push((self.grid[k], c));
            }
            let lam = pre_lambda + self.lambda[k];
            for (l, item) in psi.iter_mut().enumerate() {
                *item += self.widths[k]
                    * (self.gamma[k] * (pre_h[l] + self.h[k][l]) - lam * self.phi[k][l]);
            }
        }
        let mut blocks = Vec::new();
        if let Some(pre) = &self.prefix {
            if total != 0.0 && pre.at > 0.0 {
                blocks.push(Block {
                    stratum: 1,
                    origin: 0.0,
                    nodes: vec![(pre.at, total)],
                });
            }
        }
        if !nodes.is_empty() {
            blocks.push(Block {
                stratum: self.stratum,
                origin: self.lower,
                nodes,
            });
        }
        Influence { blocks, psi }
    }
}

fn cumulative_h(bh: &BaselineHazard, range: std::ops::Range<usize>, p: usize) -> Vec<f64> {
    let mut h = vec![0.0; p];
    for e in range {
        let s0 = bh.risk_sum[e];
        for (l, hl) in h.iter_mut().enumerate() {
            *hl += bh.deaths[e] * bh.risk_sum_x[e][l] / (s0 * s0);
        }
    }
    h
}

/// Builds the kernels of `stratum` on `[lower, upper]` for the profile `atoms`.
///
/// With `delay = Some(a)` the window must start at `a` and survival is
/// `Ŝ_1(a|x) Ŝ_j(t | T > a, x)`.
pub fn build_kernels(
    fit: &CoxFit,
    stratum: usize,
    atoms: &[(f64, Vec<f64>)],
    lower: f64,
    upper: f64,
    delay: Option<f64>,
) -> Result<KernelSet> {
    if !(lower < upper) {
        return Err(CeaError::Precondition(format!(
            "window lower bound {lower} must be below {upper}"
        )));
    }
    let p = fit.p();
    let bh = fit.baseline(stratum)?;
    let n_j = bh.n_records as f64;
    let base_lower = bh.cumulative(lower);

    let prefix = match delay {
        Some(a) => {
            let b1 = fit.baseline(1)?;
            let range = b1.events_between(0.0, a);
            // events_between is open at `a`; the prefix includes an event at `a`.
            let end = b1.event_times.partition_point(|&e| e <= a);
            Some(Prefix {
                at: a,
                lambda: b1.cumulative(a),
                h: cumulative_h(b1, range.start..end, p),
            })
        }
        None => None,
    };

    let range = bh.events_between(lower, upper);
    let mut grid = Vec::with_capacity(range.len() + 1);
    grid.push(lower);
    grid.extend_from_slice(&bh.event_times[range.clone()]);
    let widths: Vec<f64> = (0..grid.len())
        .map(|k| grid.get(k + 1).copied().unwrap_or(upper) - grid[k])
        .collect();

    let mut g0 = Vec::with_capacity(range.len());
    let mut g1 = Vec::with_capacity(range.len());
    let mut h = vec![vec![0.0; p]];
    let mut v = vec![0.0];
    let mut lambda = vec![0.0];
    for e in range.clone() {
        let s0 = bh.risk_sum[e];
        let d = bh.deaths[e];
        g0.push(s0 / n_j);
        g1.push(
            bh.risk_sum_x[e]
                .iter()
                .map(|x| x / n_j)
                .collect::<Vec<f64>>(),
        );
        let prev_h = h.last().unwrap().clone();
        h.push(
            (0..p)
                .map(|l| prev_h[l] + d * bh.risk_sum_x[e][l] / (s0 * s0))
                .collect(),
        );
        v.push(v.last().unwrap() + n_j * d / (s0 * s0));
        lambda.push(bh.cum[e] - base_lower);
    }

    let pre_lambda = prefix.as_ref().map_or(0.0, |pr| pr.lambda);
    let mut survival = vec![0.0; grid.len()];
    let mut gamma = vec![0.0; grid.len()];
    let mut phi = vec![vec![0.0; p]; grid.len()];
    for (w, x) in atoms {
        if x.len() != p {
            return Err(CeaError::DimensionMismatch {
                expected: p,
                found: x.len(),
            });
        }
        let rel = fit.linear_predictor(x).exp();
        // Ŝ_j(lower|x) must be positive for the conditional curve to exist.
        if (-rel * base_lower).exp() == 0.0 {
            return Err(CeaError::DegenerateConditioning { at: lower });
        }
        for k in 0..grid.len() {
            let s = (-rel * (pre_lambda + lambda[k])).exp();
            survival[k] += w * s;
            gamma[k] += w * rel * s;
            for l in 0..p {
                phi[k][l] += w * rel * x[l] * s;
            }
        }
    }

    Ok(KernelSet {
        stratum,
        n_stratum: bh.n_records,
        lower,
        upper,
        empty_grid: range.is_empty(),
        grid,
        widths,
        g0,
        g1,
        h,
        v,
        lambda,
        survival,
        gamma,
        phi,
        prefix,
    })
}

/// Covariance split into its martingale and coefficient parts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Years² (or the squared unit of the functional).
    pub variance: f64,
    /// `Σ_j n_j⁻¹ Ω_j`.
    pub martingale: f64,
    /// `n⁻¹ Ψ_aᵀ Σ̂⁻¹ Ψ_b`.
    pub beta: f64,
    /// `Ω_j` per stratum, normalized so the martingale term is `Ω_j / n_j`.
    pub omega: BTreeMap<usize, f64>,
}

impl VarianceReport {
    pub fn se(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// For each event of `bh`, the pair `(Σ_{o<e} Σ_{t>=e} c, Σ_{o<e} Σ_{t<e} c)`.
fn event_loads(bh: &BaselineHazard, blocks: &[&Block]) -> (Vec<f64>, Vec<f64>) {
    let times = &bh.event_times;
    let m = times.len();
    let rank = |t: f64| times.partition_point(|&e| e <= t);
    // Suffix accumulation keeps single-origin sums free of cancellation.
    let mut ends = vec![0.0; m + 1];
    let mut starts = vec![0.0; m + 1];
    let mut before = vec![0.0; m + 1];
    for b in blocks {
        let lo = rank(b.origin);
        for &(t, c) in &b.nodes {
            let hi = rank(t);
            if hi > lo {
                ends[hi - 1] += c;
                if lo > 0 {
                    starts[lo - 1] -= c;
                }
            }
            before[rank(t.max(b.origin))] += c;
        }
    }
    let mut after = vec![0.0; m];
    let mut acc = 0.0;
    for i in (0..m).rev() {
        acc += ends[i] + starts[i];
        after[i] = acc;
    }
    let mut prior = vec![0.0; m];
    let mut acc = 0.0;
    for i in 0..m {
        acc += before[i];
        prior[i] = acc;
    }
    (after, prior)
}

fn stratum_blocks(infl: &Influence, s: usize) -> Vec<&Block> {
    infl.blocks.iter().filter(|b| b.stratum == s).collect()
}

/// Unnormalized martingale pairing `Σ_e d_e/S0_e² · (…)` in one stratum.
fn pairing(bh: &BaselineHazard, a: &[&Block], b: &[&Block], convention: Convention) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (after_a, prior_a) = event_loads(bh, a);
    let (after_b, prior_b) = event_loads(bh, b);
    let mut total = 0.0;
    for e in 0..bh.event_times.len() {
        let s0 = bh.risk_sum[e];
        let v = bh.deaths[e] / (s0 * s0);
        total += v * match convention {
            Convention::Min => after_a[e] * after_b[e],
            Convention::Max => {
                (after_a[e] + prior_a[e]) * (after_b[e] + prior_b[e]) - prior_a[e] * prior_b[e]
            }
        };
    }
    total
}

/// `Ω_j` for every stratum shared by `a` and `b`, normalized so the
/// martingale contribution to the covariance is `Ω_j / n_j`.
pub fn omega(
    fit: &CoxFit,
    a: &Influence,
    b: &Influence,
    convention: Convention,
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for s in a.strata() {
        let bb = stratum_blocks(b, s);
        if bb.is_empty() {
            continue;
        }
        let bh = fit.baseline(s)?;
        let raw = pairing(bh, &stratum_blocks(a, s), &bb, convention);
        out.insert(s, raw * bh.n_records as f64);
    }
    Ok(out)
}

/// Reference double sum over node pairs, `Σ_p Σ_q c_p c_q [V(t_p ⋄ t_q) − V(o_a ∨ o_b)]₊`.
pub fn omega_double_sum(
    fit: &CoxFit,
    a: &Influence,
    b: &Influence,
    convention: Convention,
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for s in a.strata() {
        let bb = stratum_blocks(b, s);
        if bb.is_empty() {
            continue;
        }
        let bh = fit.baseline(s)?;
        let n_j = bh.n_records as f64;
        let mut cum_v = Vec::with_capacity(bh.event_times.len());
        let mut acc = 0.0;
        for e in 0..bh.event_times.len() {
            acc += n_j * bh.deaths[e] / (bh.risk_sum[e] * bh.risk_sum[e]);
            cum_v.push(acc);
        }
        let v_at = |t: f64| match bh.event_times.partition_point(|&e| e <= t) {
            0 => 0.0,
            k => cum_v[k - 1],
        };
        let mut total = 0.0;
        for ba in stratum_blocks(a, s) {
            for bb in &bb {
                let base = v_at(ba.origin.max(bb.origin));
                for &(tp, cp) in &ba.nodes {
                    for &(tq, cq) in &bb.nodes {
                        let t = match convention {
                            Convention::Min => tp.min(tq),
                            Convention::Max => tp.max(tq),
                        };
                        total += cp * cq * (v_at(t) - base).max(0.0);
                    }
                }
            }
        }
        out.insert(s, total);
    }
    Ok(out)
}

/// Asymptotic covariance of two linearized estimators.
pub fn covariance(
    fit: &CoxFit,
    a: &Influence,
    b: &Influence,
    convention: Convention,
) -> Result<VarianceReport> {
    let omega = omega(fit, a, b, convention)?;
    let mut martingale = 0.0;
    for (&s, &om) in &omega {
        martingale += om / fit.baseline(s)?.n_records as f64;
    }
    let beta = if fit.p() == 0 {
        0.0
    } else {
        fit.beta_quadratic(&a.psi, &b.psi)
    };
    Ok(VarianceReport {
        variance: martingale + beta,
        martingale,
        beta,
        omega,
    })
}

pub fn variance(fit: &CoxFit, a: &Influence, convention: Convention) -> Result<VarianceReport> {
    covariance(fit, a, a, convention)
}

/// `Σ_l Σ_h w_l w_h Cov(a_l, b_h)` evaluated pair by pair.
pub fn weighted_pair_sum(
    fit: &CoxFit,
    a: &[(f64, Influence)],
    b: &[(f64, Influence)],
    convention: Convention,
) -> Result<f64> {
    let terms: Vec<Result<f64>> = a
        .par_iter()
        .map(|(wa, ia)| {
            let mut s = 0.0;
            for (wb, ib) in b {
                s += wa * wb * covariance(fit, ia, ib, convention)?.variance;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

fn influence_of<'a>(est: &'a RmstEstimate, tail: bool) -> Result<&'a Influence> {
    let infl = if tail {
        &est.influence_tail
    } else {
        &est.influence
    };
    infl.as_ref().ok_or(CeaError::UnsupportedVariance)
}

/// Covariance of two RMST estimates; `tail` selects the post-delay components.
pub fn cov_rmst(
    fit: &CoxFit,
    a: &RmstEstimate,
    b: &RmstEstimate,
    tail: bool,
    convention: Convention,
) -> Result<VarianceReport> {
    covariance(
        fit,
        influence_of(a, tail)?,
        influence_of(b, tail)?,
        convention,
    )
}

pub fn var_rmst(
    fit: &CoxFit,
    est: &RmstEstimate,
    convention: Convention,
) -> Result<VarianceReport> {
    cov_rmst(fit, est, est, false, convention)
}

pub fn var_rmst_strt(
    fit: &CoxFit,
    est: &RmstEstimate,
    convention: Convention,
) -> Result<VarianceReport> {
    expect_scenario(est, Scenario::Strt)?;
    var_rmst(fit, est, convention)
}

/// Covariance of two STRT estimates, typically of different groups.
pub fn cov_strt(
    fit: &CoxFit,
    a: &RmstEstimate,
    b: &RmstEstimate,
    convention: Convention,
) -> Result<VarianceReport> {
    expect_scenario(a, Scenario::Strt)?;
    expect_scenario(b, Scenario::Strt)?;
    cov_rmst(fit, a, b, false, convention)
}

pub fn var_rmst_dly(
    fit: &CoxFit,
    est: &RmstEstimate,
    convention: Convention,
) -> Result<VarianceReport> {
    expect_scenario(est, Scenario::Dly)?;
    var_rmst(fit, est, convention)
}

/// Covariance between the DLY estimates of one group at delays `dl` and `dh`.
#[allow(clippy::too_many_arguments)]
pub fn cov_dly_pair(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    dl: f64,
    dh: f64,
    eta: f64,
    tail: bool,
    convention: Convention,
) -> Result<VarianceReport> {
    let a = rmst_dly(fit, stratum, profile, dl, eta)?;
    let b = rmst_dly(fit, stratum, profile, dh, eta)?;
    cov_rmst(fit, &a, &b, tail, convention)
}

/// Variance of a DST estimate from its merged linearization.
pub fn var_rmst_dst(
    fit: &CoxFit,
    est: &RmstEstimate,
    convention: Convention,
) -> Result<VarianceReport> {
    expect_scenario(est, Scenario::Dst)?;
    var_rmst(fit, est, convention)
}

/// `Σ_l w_l² Var_l + Σ_{l≠h} w_l w_h Cov_lh`, assembled from per-atom DLY
/// estimates. Quadratic in the number of atoms.
pub fn var_rmst_dst_pairwise(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    delays: &DelaySpec,
    eta: f64,
    tail: bool,
    convention: Convention,
) -> Result<f64> {
    let atoms = delays.atoms(eta)?.ok_or(CeaError::UnsupportedVariance)?;
    let mut parts = Vec::with_capacity(atoms.len());
    for (w, d) in atoms {
        let est = rmst_dly(fit, stratum, profile, d, eta)?;
        parts.push((w, influence_of(&est, tail)?.clone()));
    }
    weighted_pair_sum(fit, &parts, &parts, convention)
}

fn expect_scenario(est: &RmstEstimate, scenario: Scenario) -> Result<()> {
    if est.scenario != scenario {
        return Err(CeaError::Precondition(format!(
            "expected a {scenario} estimate, got {}",
            est.scenario
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::{fit as cox_fit, CoxConfig};
    use crate::data::{Dataset, SubjectRecord};

    fn na_fit() -> CoxFit {
        let recs = vec![
            SubjectRecord::new("a", 0.0, 1.0, true, 1, vec![], 0.0),
            SubjectRecord::new("b", 0.0, 2.0, true, 1, vec![], 0.0),
            SubjectRecord::new("c", 0.0, 3.0, false, 1, vec![], 0.0),
        ];
        cox_fit(&Dataset::new(recs, 3.0), &CoxConfig::default()).unwrap()
    }

    #[test]
    fn hand_kernels_on_three_subjects() {
        let f = na_fit();
        let k = build_kernels(&f, 1, &[(1.0, vec![])], 0.5, 3.0, None).unwrap();
        assert_eq!(k.grid, vec![0.5, 1.0, 2.0]);
        assert_eq!(k.widths, vec![0.5, 1.0, 1.0]);
        assert_eq!(k.g0, vec![1.0, 2.0 / 3.0]);
        // V = (1/n) Σ 1/G0²: (1/3)(1) then + (1/3)(9/4)
        assert!((k.v[1] - 3.0 * (1.0 / 9.0)).abs() < 1e-15);
        assert!((k.v[2] - 3.0 * (1.0 / 9.0 + 1.0 / 4.0)).abs() < 1e-15);
        assert!(!k.empty_grid);
        let e1 = (-1.0f64 / 3.0).exp();
        let e2 = (-5.0f64 / 6.0).exp();
        assert!((k.integral() - (0.5 + e1 + e2)).abs() < 1e-15);

        let infl = k.influence();
        let expected = (e1 + e2).powi(2) / 9.0 + e2 * e2 / 4.0;
        let v = variance(&f, &infl, Convention::Min).unwrap();
        assert!((v.variance - expected).abs() < 1e-15);
        assert_eq!(v.beta, 0.0);
        let om = omega_double_sum(&f, &infl, &infl, Convention::Min).unwrap();
        assert!((om[&1] / 3.0 - expected).abs() < 1e-15);
    }

    #[test]
    fn max_convention_matches_double_sum() {
        let f = na_fit();
        let k = build_kernels(&f, 1, &[(1.0, vec![])], 0.5, 3.0, None).unwrap();
        let infl = k.influence();
        let fast = omega(&f, &infl, &infl, Convention::Max).unwrap();
        let slow = omega_double_sum(&f, &infl, &infl, Convention::Max).unwrap();
        assert!((fast[&1] - slow[&1]).abs() < 1e-14);
        let e1 = (-1.0f64 / 3.0).exp();
        let e2 = (-5.0f64 / 6.0).exp();
        let hand = e1 * e1 / 9.0 + (2.0 * e1 * e2 + e2 * e2) * (1.0 / 9.0 + 1.0 / 4.0);
        assert!((fast[&1] / 3.0 - hand).abs() < 1e-15);
    }

    #[test]
    fn empty_window_has_zero_variance() {
        let f = na_fit();
        let k = build_kernels(&f, 1, &[(1.0, vec![])], 2.5, 3.0, None).unwrap();
        assert!(k.empty_grid);
        assert_eq!(k.integral(), 0.5);
        let v = variance(&f, &k.influence(), Convention::Min).unwrap();
        assert_eq!(v.variance, 0.0);
    }
}
