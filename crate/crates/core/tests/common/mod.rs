//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use delaycea::cox::{breslow, CoxFit};
use delaycea::data::{Dataset, SubjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random dataset with `strata` groups, `p` covariates, switchers that
/// enter the higher strata after a delay, occasional ties and censoring.
pub fn random_dataset(seed: u64, n: usize, strata: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::new();
    for i in 0..n {
        let x: Vec<f64> = (0..p)
            .map(|k| {
                if k == 0 {
                    f64::from(rng.random_bool(0.5) as u8)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let group = 1 + i % strata;
        // Quarter-year rounding produces ties.
        let mut end: f64 = (rng.random_range(0.05..4.0f64) * 4.0).ceil() / 4.0;
        if rng.random_bool(0.3) {
            end = rng.random_range(0.05..4.0);
        }
        let died = rng.random_bool(0.7);
        let id = format!("s{i}");
        if group == 1 {
            recs.push(SubjectRecord::new(id, 0.0, end, died, 1, x, 0.0));
        } else {
            let delay = if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.0..0.4f64).min(end * 0.5)
            };
            if delay > 0.0 {
                recs.push(SubjectRecord::new(
                    id.clone(),
                    0.0,
                    delay,
                    false,
                    1,
                    x.clone(),
                    0.0,
                ));
            }
            recs.push(SubjectRecord::new(id, delay, end, died, group, x, delay));
        }
    }
    Dataset::new(recs, 4.5)
}

/// Log partial likelihood with Breslow ties, from explicit risk sets.
pub fn brute_loglik(ds: &Dataset, beta: &[f64]) -> f64 {
    let eta =
        |r: &SubjectRecord| -> f64 { r.covariates.iter().zip(beta).map(|(x, b)| x * b).sum() };
    let mut ll = 0.0;
    for r in ds.records.iter().filter(|r| r.event) {
        let t = r.exit;
        let denom: f64 = ds
            .records
            .iter()
            .filter(|q| q.stratum == r.stratum && q.entry < t && t <= q.exit)
            .map(|q| eta(q).exp())
            .sum();
        ll += eta(r) - denom.ln();
    }
    ll
}

/// Maximizes the one-parameter partial likelihood by grid search on
/// `[-5, 5]`, refining the grid around the best point.
pub fn grid_search_beta(ds: &Dataset) -> f64 {
    let mut lo = -5.0;
    let mut hi = 5.0;
    let mut best = 0.0;
    for _ in 0..6 {
        let steps = 1000;
        let h = (hi - lo) / steps as f64;
        let mut best_ll = f64::NEG_INFINITY;
        for k in 0..=steps {
            let b = lo + k as f64 * h;
            let ll = brute_loglik(ds, &[b]);
            if ll > best_ll {
                best_ll = ll;
                best = b;
            }
        }
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
    best
}

/// The fit with `beta` replaced and every baseline re-estimated at it.
pub fn refit_at(fit: &CoxFit, ds: &Dataset, beta: &[f64]) -> CoxFit {
    let mut out = fit.clone();
    out.beta = beta.to_vec();
    for (s, bh) in out.strata.iter_mut() {
        *bh = breslow(ds, beta, *s).unwrap();
    }
    out
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral of a right-continuous step function over `[a, b]` given all its
/// possible jump points: it is evaluated at the midpoint of every piece.
pub fn step_integral<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, jumps: &[f64]) -> f64 {
    let mut pts: Vec<f64> = jumps.iter().copied().filter(|&t| t > a && t < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2)
        .map(|w| f(0.5 * (w[0] + w[1])) * (w[1] - w[0]))
        .sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
