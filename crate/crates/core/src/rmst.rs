//! Restricted mean survival time under the three delay scenarios.
//!
//! Survival estimates are step functions, so every integral is computed
//! exactly as `Σ_k Ŝ(g_k) (g_{k+1} − g_k)` on the grid made of the window's
//! lower bound, the stratum's event times inside the window and `η`.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{build_kernels, Influence, KernelSet};
use crate::cox::CoxFit;
use crate::data::{compress_atoms, DelaySpec, ProfileAtoms};
use crate::error::{CeaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Strt,
    Dly,
    Dst,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Strt => "strt",
            Scenario::Dly => "dly",
            Scenario::Dst => "dst",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = CeaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strt" => Ok(Scenario::Strt),
            "dly" => Ok(Scenario::Dly),
            "dst" => Ok(Scenario::Dst),
            other => Err(CeaError::Parse(format!(
                "unknown scenario '{other}' (expected strt, dly or dst)"
            ))),
        }
    }
}

/// One delay atom of a DST estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayComponent {
    pub weight: f64,
    pub delay: f64,
    pub value: f64,
    pub value_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmstEstimate {
    pub scenario: Scenario,
    pub stratum: usize,
    /// Years.
    pub value: f64,
    /// Post-delay component in years; equals `value` for STRT.
    pub value_tail: f64,
    /// `(r or a, η)`; `(0, η)` for DST.
    pub window: (f64, f64),
    pub profile: ProfileAtoms,
    /// Quadrature left points (head grid followed by tail grid for DLY).
    pub grid: Vec<f64>,
    /// Kernels retained for variance computation (empty for DST).
    pub kernels: Vec<KernelSet>,
    /// Linearization of `value`; `None` when no variance is available.
    pub influence: Option<Influence>,
    /// Linearization of `value_tail`.
    pub influence_tail: Option<Influence>,
    pub components: Vec<DelayComponent>,
    pub diagnostics: Vec<String>,
}

fn check_window(lower: f64, eta: f64, what: &str) -> Result<()> {
    if !(lower.is_finite() && eta.is_finite() && lower >= 0.0) {
        return Err(CeaError::Precondition(format!(
            "{what} = {lower} and eta = {eta} must be finite and non-negative"
        )));
    }
    if lower >= eta {
        return Err(CeaError::Precondition(format!(
            "{what} = {lower} must be below eta = {eta}"
        )));
    }
    Ok(())
}

/// RMST on `[r, η]` conditional on survival to `r`, averaged over the profile.
pub fn rmst_strt(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    r: f64,
    eta: f64,
) -> Result<RmstEstimate> {
    check_window(r, eta, "r")?;
    let delta = fit.max_min_delay();
    if r < delta {
        return Err(CeaError::Precondition(format!(
            "r = {r} must not be below the largest minimum delay {delta}"
        )));
    }
    let atoms = compress_atoms(profile);
    let k = build_kernels(fit, stratum, &atoms, r, eta, None)?;
    let mut diagnostics = Vec::new();
    if k.empty_grid {
        diagnostics.push(format!(
            "EmptyGrid: stratum {stratum} has no events in ({r}, {eta})"
        ));
    }
    let value = k.integral();
    let infl = k.influence();
    Ok(RmstEstimate {
        scenario: Scenario::Strt,
        stratum,
        value,
        value_tail: value,
        window: (r, eta),
        profile: atoms,
        grid: k.grid.clone(),
        kernels: vec![k],
        influence: Some(infl.clone()),
        influence_tail: Some(infl),
        components: Vec::new(),
        diagnostics,
    })
}

/// RMST on `[0, η]` for subjects who stay on treatment 1 until `a` and then
/// switch to treatment `stratum`.
pub fn rmst_dly(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    a: f64,
    eta: f64,
) -> Result<RmstEstimate> {
    check_window(a, eta, "a")?;
    let atoms = compress_atoms(profile);
    let mut diagnostics = Vec::new();
    if let Some(&dj) = fit.min_delays.get(&stratum) {
        if a < dj {
            diagnostics.push(format!(
                "delay {a} is below the smallest observed delay {dj} of stratum {stratum}"
            ));
        }
    }
    let mut kernels = Vec::with_capacity(2);
    let mut grid = Vec::new();
    let mut value_head = 0.0;
    let mut influence = Influence::zero(fit.p());
    if a > 0.0 {
        let head = build_kernels(fit, 1, &atoms, 0.0, a, None)?;
        value_head = head.integral();
        influence.add_scaled(&head.influence(), 1.0);
        grid.extend_from_slice(&head.grid);
        kernels.push(head);
    }
    let tail = build_kernels(fit, stratum, &atoms, a, eta, Some(a))?;
    if tail.empty_grid {
        diagnostics.push(format!(
            "EmptyGrid: stratum {stratum} has no events in ({a}, {eta})"
        ));
    }
    let value_tail = tail.integral();
    let influence_tail = tail.influence();
    influence.add_scaled(&influence_tail, 1.0);
    grid.extend_from_slice(&tail.grid);
    kernels.push(tail);
    Ok(RmstEstimate {
        scenario: Scenario::Dly,
        stratum,
        value: value_head + value_tail,
        value_tail,
        window: (a, eta),
        profile: atoms,
        grid,
        kernels,
        influence: Some(influence),
        influence_tail: Some(influence_tail),
        components: Vec::new(),
        diagnostics,
    })
}

/// Number of Gauss–Legendre nodes used for continuous delay distributions.
pub const GAUSS_LEGENDRE_POINTS: usize = 64;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut slope = 1.0;
        for _ in 0..100 {
            // Three-term recurrence: p = P_n(x), q = P_{n-1}(x).
            let (mut p, mut q) = (1.0, 0.0);
            for k in 1..=n {
                let next = ((2 * k - 1) as f64 * x * p - (k - 1) as f64 * q) / k as f64;
                q = p;
                p = next;
            }
            slope = n as f64 * (x * p - q) / (x * x - 1.0);
            let dx = p / slope;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * slope * slope);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

/// RMST averaged over a delay distribution.
pub fn rmst_dst(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    delays: &DelaySpec,
    eta: f64,
) -> Result<RmstEstimate> {
    let atoms = compress_atoms(profile);
    let mut diagnostics = Vec::new();
    let mut components = Vec::new();
    let (mut value, mut value_tail) = (0.0, 0.0);

    let (influence, influence_tail) = match delays.atoms(eta)? {
        Some(list) => {
            let mut infl = Influence::zero(fit.p());
            let mut infl_tail = Influence::zero(fit.p());
            for (w, d) in list {
                let est = rmst_dly(fit, stratum, &atoms, d, eta)?;
                value += w * est.value;
                value_tail += w * est.value_tail;
                infl.add_scaled(est.influence.as_ref().expect("dly has influence"), w);
                infl_tail.add_scaled(est.influence_tail.as_ref().expect("dly has influence"), w);
                for msg in est.diagnostics {
                    if !diagnostics.contains(&msg) {
                        diagnostics.push(msg);
                    }
                }
                components.push(DelayComponent {
                    weight: w,
                    delay: d,
                    value: est.value,
                    value_tail: est.value_tail,
                });
            }
            (Some(infl), Some(infl_tail))
        }
        None => {
            let DelaySpec::MixtureExp { point_mass, rate } = *delays else {
                unreachable!("only the mixture has no atoms");
            };
            let mut add = |w: f64, d: f64| -> Result<()> {
                let est = rmst_dly(fit, stratum, &atoms, d, eta)?;
                value += w * est.value;
                value_tail += w * est.value_tail;
                components.push(DelayComponent {
                    weight: w,
                    delay: d,
                    value: est.value,
                    value_tail: est.value_tail,
                });
                Ok(())
            };
            if point_mass > 0.0 {
                add(point_mass, 0.0)?;
            }
            let half = 0.5 * eta;
            for (x, wq) in gauss_legendre(GAUSS_LEGENDRE_POINTS) {
                let d = half * (x + 1.0);
                let density = (1.0 - point_mass) * rate * (-rate * d).exp();
                add(half * wq * density, d)?;
            }
            // Mass beyond η: the switch never happens inside the window.
            let beyond = (1.0 - point_mass) * (-rate * eta).exp();
            if beyond > 0.0 {
                let head = build_kernels(fit, 1, &atoms, 0.0, eta, None)?;
                value += beyond * head.integral();
                components.push(DelayComponent {
                    weight: beyond,
                    delay: eta,
                    value: head.integral(),
                    value_tail: 0.0,
                });
            }
            diagnostics.push(format!("delay mass beyond eta: {beyond:.6e}"));
            (None, None)
        }
    };
    Ok(RmstEstimate {
        scenario: Scenario::Dst,
        stratum,
        value,
        value_tail,
        window: (0.0, eta),
        profile: atoms,
        grid: Vec::new(),
        kernels: Vec::new(),
        influence,
        influence_tail,
        components,
        diagnostics,
    })
}

/// Dispatches on the scenario; `lower` is `r` for STRT and `a` for DLY.
pub fn rmst(
    fit: &CoxFit,
    stratum: usize,
    profile: &ProfileAtoms,
    scenario: Scenario,
    lower: f64,
    delays: &DelaySpec,
    eta: f64,
) -> Result<RmstEstimate> {
    match scenario {
        Scenario::Strt => rmst_strt(fit, stratum, profile, lower, eta),
        Scenario::Dly => rmst_dly(fit, stratum, profile, lower, eta),
        Scenario::Dst => rmst_dst(fit, stratum, profile, delays, eta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::{fit as cox_fit, CoxConfig};
    use crate::data::{Dataset, SubjectRecord};

    fn two_strata() -> CoxFit {
        let r = |id: &str, entry, exit, event, s, delay| {
            SubjectRecord::new(id, entry, exit, event, s, vec![], delay)
        };
        let recs = vec![
            r("a", 0.0, 1.0, true, 1, 0.0),
            r("b", 0.0, 2.0, true, 1, 0.0),
            r("c", 0.0, 3.0, false, 1, 0.0),
            r("d", 0.9, 1.5, true, 2, 0.9),
            r("e", 0.9, 2.5, false, 2, 0.9),
        ];
        cox_fit(&Dataset::new(recs, 3.0), &CoxConfig::default()).unwrap()
    }

    fn unit() -> ProfileAtoms {
        vec![(1.0, vec![])]
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = gauss_legendre(GAUSS_LEGENDRE_POINTS);
        let total: f64 = q.iter().map(|n| n.1).sum();
        assert!((total - 2.0).abs() < 1e-13);
        let x126: f64 = q.iter().map(|(x, w)| w * x.powi(126)).sum();
        assert!((x126 - 2.0 / 127.0).abs() < 1e-13);
        let e: f64 = q.iter().map(|(x, w)| w * x.exp()).sum();
        assert!((e - (1f64.exp() - (-1f64).exp())).abs() < 1e-13);
        let q3 = gauss_legendre(3);
        assert!((q3[2].0 - 0.6f64.sqrt()).abs() < 1e-15);
        assert!((q3[1].1 - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn strt_hand_quadrature() {
        let ds = Dataset::new(
            vec![
                SubjectRecord::new("a", 0.0, 1.0, true, 1, vec![], 0.0),
                SubjectRecord::new("b", 0.0, 2.0, true, 1, vec![], 0.0),
                SubjectRecord::new("c", 0.0, 3.0, false, 1, vec![], 0.0),
            ],
            3.0,
        );
        let f = cox_fit(&ds, &CoxConfig::default()).unwrap();
        let est = rmst_strt(&f, 1, &unit(), 0.5, 3.0).unwrap();
        let hand = 0.5 + (-1.0f64 / 3.0).exp() + (-5.0f64 / 6.0).exp();
        assert!((est.value - hand).abs() < 1e-15);
        assert_eq!(est.value, est.value_tail);
        let empty = rmst_strt(&f, 1, &unit(), 2.2, 3.0).unwrap();
        assert!((empty.value - 0.8).abs() < 1e-15);
        assert!(empty.diagnostics[0].starts_with("EmptyGrid"));
    }

    #[test]
    fn dly_hand_quadrature() {
        let f = two_strata();
        let est = rmst_dly(&f, 2, &unit(), 0.9, 3.0).unwrap();
        // Stratum 1: jumps 1/3 at 1, 1/2 at 2. Stratum 2: one jump 1/2 at 1.5.
        let head = 0.9;
        let tail = 0.6 * 1.0 + 1.5 * (-0.5f64).exp();
        assert!((est.value - (head + tail)).abs() < 1e-15);
        assert!((est.value_tail - tail).abs() < 1e-15);
        let one = rmst_dly(&f, 1, &unit(), 0.9, 3.0).unwrap();
        let full = 1.0 + (-1.0f64 / 3.0).exp() + (-5.0f64 / 6.0).exp();
        assert!((one.value - full).abs() < 1e-15);
    }

    #[test]
    fn dly_at_zero_matches_strt() {
        let f = two_strata();
        let d = rmst_dly(&f, 1, &unit(), 0.0, 3.0).unwrap();
        let s = rmst_strt(&f, 1, &unit(), 0.0, 3.0);
        // δ = 0.9 forbids r = 0 for STRT.
        assert!(s.is_err());
        assert_eq!(d.value, d.value_tail);
    }

    #[test]
    fn strt_rejects_r_below_delay() {
        let f = two_strata();
        assert!(matches!(
            rmst_strt(&f, 2, &unit(), 0.5, 3.0),
            Err(CeaError::Precondition(_))
        ));
        assert!(rmst_strt(&f, 2, &unit(), 0.9, 3.0).is_ok());
        assert!(rmst_strt(&f, 2, &unit(), 3.0, 3.0).is_err());
    }

    #[test]
    fn dst_single_atom_equals_dly() {
        let f = two_strata();
        let d = rmst_dly(&f, 2, &unit(), 0.9, 3.0).unwrap();
        let s = rmst_dst(&f, 2, &unit(), &DelaySpec::FixedDelay(0.9), 3.0).unwrap();
        assert_eq!(s.value, d.value);
        assert_eq!(s.value_tail, d.value_tail);
        let e = rmst_dst(&f, 2, &unit(), &DelaySpec::Empirical(vec![0.9, 0.9]), 3.0).unwrap();
        assert_eq!(e.value, d.value);
    }

    #[test]
    fn mixture_without_continuous_part_is_dly_at_zero() {
        let f = two_strata();
        let m = rmst_dst(
            &f,
            1,
            &unit(),
            &DelaySpec::MixtureExp {
                point_mass: 1.0,
                rate: 1.0,
            },
            3.0,
        )
        .unwrap();
        let d = rmst_dly(&f, 1, &unit(), 0.0, 3.0).unwrap();
        assert!((m.value - d.value).abs() < 1e-15);
        assert!(m.influence.is_none());
    }
}
