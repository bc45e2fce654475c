mod common;

use common::oracles;
use mrarma::{
    scaled_round_dist, scaled_round_pmf, History, InnovationModel, IntPmf, MrarmaSpec, MrarmaStarSpec, Skellam,
};
use proptest::prelude::*;

fn coef() -> impl Strategy<Value = f64> {
    (-0.95f64..0.95).prop_filter("nonzero", |a| a.abs() > 1e-3)
}

fn rates() -> impl Strategy<Value = (f64, f64)> {
    (0.05f64..4.0, 0.05f64..4.0)
}

/// Model, history (most recent first) and innovation law.
fn case() -> impl Strategy<Value = (Vec<f64>, Vec<i64>, (f64, f64))> {
    (1usize..=3).prop_flat_map(|p| (prop::collection::vec(coef(), p), prop::collection::vec(-25i64..=25, p), rates()))
}

/// Window holding all but a negligible share of the conditional law.
fn window(innov: &Skellam, shift: f64) -> std::ops::RangeInclusive<i64> {
    let w = innov.support_window(1e-15).unwrap().widen(8);
    let s = shift.floor() as i64;
    (w.lo + s)..=(w.hi + s + 1)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scaled_round_matches_enumeration(
        alpha in (-0.999f64..0.999).prop_filter("nonzero", |a| a.abs() > 0.02),
        lo in -30i64..30,
        weights in prop::collection::vec(0.0f64..1.0, 1..25),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-3);
        let x = IntPmf::unnormalized(lo, weights).unwrap().normalized();
        let dist = scaled_round_dist(alpha, &x).unwrap();
        let reach = (alpha * lo as f64).abs().max((alpha * x.hi() as f64).abs()).ceil() as i64 + 2;
        for y in -reach..=reach {
            let got = scaled_round_pmf(alpha, &x, y).unwrap();
            let want = oracles::scaled_round_pmf(alpha, &x, y);
            prop_assert!((got - want).abs() <= 1e-14, "y={y}: {got} vs {want}");
            prop_assert!((dist.pmf(y) - want).abs() <= 1e-14);
        }
        prop_assert!((dist.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!((dist.mean() - alpha * x.mean()).abs() < 1e-10);
    }

    #[test]
    fn transition_pmf_matches_enumeration((alphas, hist, (l1, l2)) in case()) {
        let innov = Skellam::new(l1, l2).unwrap();
        let spec = MrarmaSpec::ar(alphas.clone(), innov).unwrap();
        let z = oracles::predictor(&alphas, &hist);
        let h = History::most_recent_first(&hist);
        let mut mass = 0.0;
        for x in window(&innov, z) {
            let got = spec.transition_pmf(h, x).unwrap();
            let want = oracles::transition_pmf(&alphas, &hist, &innov, x);
            prop_assert!((got - want).abs() <= 1e-14, "x={x}: {got} vs {want}");
            mass += got;
        }
        prop_assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn star_transition_matches_enumeration((alphas, hist, (l1, l2)) in case()) {
        let innov = Skellam::new(l1, l2).unwrap();
        let spec = MrarmaStarSpec::new(alphas.clone(), vec![], innov).unwrap();
        let z = oracles::predictor(&alphas, &hist);
        let h = History::most_recent_first(&hist);
        let mut mass = 0.0;
        // Each term's floor can sit one below the floor of the sum.
        let lo = *window(&innov, z - alphas.len() as f64).start();
        for x in lo..=*window(&innov, z).end() {
            let got = spec.transition_pmf_star(h, x).unwrap();
            let want = oracles::star_transition_pmf(&alphas, &hist, &innov, x);
            prop_assert!((got - want).abs() <= 1e-14, "x={x}: {got} vs {want}");
            mass += got;
        }
        prop_assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn transition_moments_and_pgf((alphas, hist, (l1, l2)) in case(), s in 0.3f64..=1.0) {
        let innov = Skellam::new(l1, l2).unwrap();
        let spec = MrarmaSpec::ar(alphas.clone(), innov).unwrap();
        let h = History::most_recent_first(&hist);
        let none = History::<f64>::empty();
        let mean = spec.cond_mean(h, none).unwrap();
        let var = spec.cond_var(h, none).unwrap();
        let w = innov.support_window(1e-15).unwrap().widen(60);
        let shift = mean.floor() as i64;
        let (mut m1, mut m2, mut g) = (0.0, 0.0, 0.0);
        for x in (w.lo + shift)..=(w.hi + shift + 1) {
            let p = spec.transition_pmf(h, x).unwrap();
            m1 += x as f64 * p;
            m2 += (x as f64 - mean).powi(2) * p;
            g += s.powi((x - shift) as i32) * p;
        }
        prop_assert!((m1 - mean).abs() < 1e-10, "{m1} vs {mean}");
        prop_assert!((m2 - var).abs() < 1e-10, "{m2} vs {var}");
        // The pgf is compared after factoring out s^shift to keep magnitudes moderate.
        let pgf = spec.cond_pgf(h, s).unwrap() / s.powi(shift as i32);
        prop_assert!((g - pgf).abs() <= 1e-9 * pgf.max(1.0), "{g} vs {pgf}");
    }

    #[test]
    fn star_with_one_term_is_the_base_model(alpha in coef(), h in -40i64..=40, (l1, l2) in rates()) {
        let innov = Skellam::new(l1, l2).unwrap();
        let base = MrarmaSpec::ar(vec![alpha], innov).unwrap();
        let star = MrarmaStarSpec::from_base(base.clone());
        let hist = [h];
        let hh = History::most_recent_first(&hist);
        for x in window(&innov, alpha * h as f64) {
            let a = base.transition_pmf(hh, x).unwrap();
            let b = star.transition_pmf_star(hh, x).unwrap();
            prop_assert!((a - b).abs() <= 1e-14);
        }
        let none = History::<f64>::empty();
        prop_assert_eq!(base.cond_var(hh, none).unwrap(), star.cond_var_star(hh, none).unwrap());
    }

    #[test]
    fn star_variance_bounds(a1 in coef(), a2 in coef(), h1 in -40i64..=40, h2 in -40i64..=40, (l1, l2) in rates()) {
        let innov = Skellam::new(l1, l2).unwrap();
        let star = MrarmaStarSpec::new(vec![a1, a2], vec![], innov).unwrap();
        let hist = [h1, h2];
        let v = star.cond_var_star(History::most_recent_first(&hist), History::<f64>::empty()).unwrap();
        let s2 = innov.variance();
        prop_assert!(v >= s2 - 1e-15 && v <= s2 + 0.5 + 1e-15);
        // Both models share the conditional mean.
        let base = MrarmaSpec::ar(vec![a1, a2], innov).unwrap();
        let hh = History::most_recent_first(&hist);
        let none = History::<f64>::empty();
        prop_assert_eq!(base.cond_mean(hh, none).unwrap(), star.cond_mean(hh, none).unwrap());
    }

    #[test]
    fn skellam_pmf_matches_defining_sum((l1, l2) in (0.01f64..30.0, 0.01f64..30.0), k in -60i64..=60) {
        let s = Skellam::new(l1, l2).unwrap();
        let want = oracles::skellam_pmf(l1, l2, k);
        let got = s.pmf(k);
        prop_assume!(want > 1e-250);
        prop_assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}
