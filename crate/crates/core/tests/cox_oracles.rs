mod common;

use common::{brute_loglik, grid_search_beta, random_dataset, rel_err};
use delaycea::cox::{breslow, fit, partial_likelihood, survival, CoxConfig};
use delaycea::data::{Dataset, SubjectRecord};
use proptest::prelude::*;

fn eight_subjects() -> Dataset {
    let r =
        |id: &str, exit, event, x: f64| SubjectRecord::new(id, 0.0, exit, event, 1, vec![x], 0.0);
    Dataset::new(
        vec![
            r("1", 0.4, true, 1.0),
            r("2", 0.9, true, 0.0),
            r("3", 1.3, false, 1.0),
            r("4", 1.7, true, 1.0),
            r("5", 2.2, true, 0.0),
            r("6", 2.8, false, 0.0),
            r("7", 3.1, true, 0.0),
            r("8", 3.6, true, 1.0),
        ],
        4.0,
    )
}

#[test]
fn beta_matches_grid_search() {
    let ds = eight_subjects();
    let f = fit(&ds, &CoxConfig::default()).unwrap();
    let oracle = grid_search_beta(&ds);
    assert!(
        (f.beta[0] - oracle).abs() < 1e-4,
        "{} vs {oracle}",
        f.beta[0]
    );
    assert!((f.loglik - brute_loglik(&ds, &f.beta)).abs() < 1e-10);
    assert!(f.score[0].abs() < 1e-8);
}

#[test]
fn random_small_fits_match_grid_search() {
    let mut checked = 0;
    for seed in 0..40 {
        let ds = random_dataset(seed, 8, 1, 1);
        let Ok(f) = fit(&ds, &CoxConfig::default()) else {
            continue;
        };
        if f.beta[0].abs() > 4.5 {
            continue;
        }
        let oracle = grid_search_beta(&ds);
        assert!(
            (f.beta[0] - oracle).abs() < 1e-4,
            "seed {seed}: {} vs {oracle}",
            f.beta[0]
        );
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} usable datasets");
}

#[test]
fn delayed_entry_risk_set() {
    // Subject c enters at 1.5: at t = 2 the risk set is {b, c}.
    let r =
        |id: &str, entry, exit, event| SubjectRecord::new(id, entry, exit, event, 1, vec![], 0.0);
    let ds = Dataset::new(
        vec![
            r("a", 0.0, 1.0, true),
            r("b", 0.0, 2.0, true),
            r("c", 1.5, 3.0, false),
        ],
        3.0,
    );
    let bh = breslow(&ds, &[], 1).unwrap();
    assert_eq!(bh.event_times, vec![1.0, 2.0]);
    assert_eq!(bh.jumps, vec![1.0 / 2.0, 1.0 / 2.0]);
    // Entering exactly at an event time does not put a subject at risk for it.
    let ds = Dataset::new(
        vec![
            r("a", 0.0, 1.0, true),
            r("b", 0.0, 2.0, true),
            r("c", 1.0, 3.0, false),
        ],
        3.0,
    );
    let bh = breslow(&ds, &[], 1).unwrap();
    assert_eq!(bh.jumps, vec![1.0 / 2.0, 1.0 / 2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derivatives_match_finite_differences(seed in 0u64..10_000, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0) {
        let ds = random_dataset(seed, 30, 2, 2);
        let beta = [b0, b1];
        let pl = partial_likelihood(&ds, &beta);
        prop_assert!(rel_err(pl.loglik, brute_loglik(&ds, &beta)) < 1e-12);
        let h = 1e-5;
        for k in 0..2 {
            let mut up = beta;
            let mut dn = beta;
            up[k] += h;
            dn[k] -= h;
            let (pu, pd) = (partial_likelihood(&ds, &up), partial_likelihood(&ds, &dn));
            let g = (pu.loglik - pd.loglik) / (2.0 * h);
            prop_assert!((g - pl.score[k]).abs() <= 1e-5 * pl.score[k].abs().max(1.0), "score {k}: {g} vs {}", pl.score[k]);
            for l in 0..2 {
                let hess = -(pu.score[l] - pd.score[l]) / (2.0 * h);
                let info = pl.information[l][k];
                prop_assert!((hess - info).abs() <= 1e-5 * info.abs().max(1.0), "info {l}{k}: {hess} vs {info}");
            }
        }
    }

    #[test]
    fn converged_score_is_below_tolerance(seed in 0u64..10_000) {
        let ds = random_dataset(seed, 40, 2, 2);
        let cfg = CoxConfig::default();
        if let Ok(f) = fit(&ds, &cfg) {
            prop_assert!(f.score.iter().all(|s| s.abs() < cfg.tol_score), "{:?}", f.score);
            prop_assert!(f.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0)));
        }
    }

    #[test]
    fn survival_ratio_and_monotonicity(seed in 0u64..10_000, a in 0.0f64..2.0, x in 0.0f64..1.0) {
        let ds = random_dataset(seed, 40, 2, 1);
        let Ok(f) = fit(&ds, &CoxConfig::default()) else { return Ok(()); };
        let mut prev = 1.0;
        for k in 0..=40 {
            let t = 0.1 * k as f64;
            let s = survival(&f, 1, &[x], t, None).unwrap();
            prop_assert!(s <= prev + 1e-15);
            prev = s;
            let sa = survival(&f, 1, &[x], a, None).unwrap();
            if t >= a && sa > 0.0 {
                let cond = survival(&f, 1, &[x], t, Some(a)).unwrap();
                prop_assert!((cond - s / sa).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariate_shift_leaves_survival_unchanged(seed in 0u64..10_000, c in -3.0f64..3.0) {
        let ds = random_dataset(seed, 40, 2, 2);
        let cfg = CoxConfig::default();
        let Ok(f) = fit(&ds, &cfg) else { return Ok(()); };
        let mut shifted = ds.clone();
        for r in &mut shifted.records {
            r.covariates[1] += c;
        }
        let g = fit(&shifted, &cfg).unwrap();
        for k in 0..2 {
            prop_assert!((f.beta[k] - g.beta[k]).abs() < 1e-8);
        }
        for s in [1, 2] {
            for t in [0.3, 1.1, 2.6, 4.0] {
                let x = [1.0, 0.25];
                let xs = [1.0, 0.25 + c];
                let a = survival(&f, s, &x, t, None).unwrap();
                let b = survival(&g, s, &xs, t, None).unwrap();
                prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}
