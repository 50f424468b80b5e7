use std::sync::Arc;

use gw_invasion::invasion::{closed_search, escape_search, invade, Escape};
use gw_invasion::measures::{kl_x, main_theorem_condition};
use gw_invasion::pivot_chain::{lpe_sample, run_chain, InitialState, PivotKernel};
use gw_invasion::rng::derive_stream;
use gw_invasion::{Experiment, ExperimentConfig, NodeId, OffspringDistribution, SurvivalSolver, TreeArena};
use proptest::prelude::*;

fn arb_dist() -> impl Strategy<Value = OffspringDistribution> {
    // Mass on {1, ..., 4} with P[Z >= 2] bounded away from zero.
    (0.0f64..0.6, prop::collection::vec(0.05f64..1.0, 3)).prop_map(|(p1, w)| {
        let total: f64 = w.iter().sum();
        let mut pairs = vec![(1, p1)];
        pairs.extend(w.iter().enumerate().map(|(i, x)| (i as u32 + 2, (1.0 - p1) * x / total)));
        OffspringDistribution::from_pmf(&pairs).unwrap()
    })
}

fn unit_simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn survival_is_a_cdf_solving_its_fixed_point(d in arb_dist(), t in 0.0f64..1.0) {
        let s = SurvivalSolver::new(Arc::new(d.clone())).unwrap();
        let p_c = s.p_c();
        let p = p_c + t * (1.0 - p_c);
        let g = s.g(p).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!(s.g(p_c).unwrap().abs() < 1e-12);
        prop_assert!((s.g(1.0).unwrap() - 1.0).abs() < 1e-12);
        // 1 - g is the fixed point of z -> phi(1 - p + p z).
        let z = 1.0 - g;
        prop_assert!((d.phi(1.0 - p + p * z).unwrap() - z).abs() < 1e-10);
        let p2 = p + 0.5 * (1.0 - p);
        prop_assert!(s.g(p2).unwrap() >= g - 1e-12);
    }

    #[test]
    fn conditional_survival_is_a_probability(seed in 0u64..1000, t in 0.05f64..0.95) {
        // Each g_n is a probability, and g_0 is the annealed g.
        let d = Arc::new(OffspringDistribution::two_point(0.3).unwrap());
        let s = SurvivalSolver::new(d.clone()).unwrap();
        let p = s.p_c() + t * (1.0 - s.p_c());
        let mut a = TreeArena::replicate(d, seed, 0);
        a.realize_to_depth(NodeId::ROOT, 6).unwrap();
        for n in 0..=6 {
            let v = s.g_n(&a, NodeId::ROOT, n, p).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((s.g_n(&a, NodeId::ROOT, 0, p).unwrap() - s.g(p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn invasion_is_connected_and_heavy_steps_thin_out(seed in 0u64..10_000) {
        let d = Arc::new(OffspringDistribution::two_point(0.4).unwrap());
        let mut a = TreeArena::replicate(d, seed, 0);
        let run = invade(&mut a, 600).unwrap();
        let inv = run.invaded();
        prop_assert_eq!(inv.len(), 601);
        let mut seen = std::collections::HashSet::new();
        seen.insert(inv[0]);
        for &v in &inv[1..] {
            prop_assert!(seen.contains(&a.parent(v).unwrap()));
            prop_assert!(seen.insert(v));
        }
        let tails: Vec<f64> = (1..600).step_by(100).map(|k| run.max_weight_since(&a, k)).collect();
        prop_assert!(tails.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn searches_agree_and_grow_with_depth(seed in 0u64..10_000, depth in 1u32..12) {
        let d = Arc::new(OffspringDistribution::deterministic(2).unwrap());
        let mut a = TreeArena::replicate(d, seed, 0);
        let beta = |a: &mut TreeArena, t: u32| match escape_search(a, NodeId::ROOT, t, f64::INFINITY, None).unwrap() {
            Escape::Reached { beta, .. } => beta,
            Escape::Capped => unreachable!(),
        };
        let b = beta(&mut a, depth);
        prop_assert!(beta(&mut a, depth + 1) >= b);
        // A closed search with zero leaves is the plain truncated search.
        match closed_search(&mut a, NodeId::ROOT, depth, f64::INFINITY, &mut |_| 0.0).unwrap() {
            Escape::Reached { beta, .. } => prop_assert_eq!(beta, b),
            Escape::Capped => prop_assert!(false),
        }
        // Capping just above the value still reaches, at the value it fails.
        let reached = matches!(escape_search(&mut a, NodeId::ROOT, depth, b + 1e-12, None).unwrap(), Escape::Reached { .. });
        let capped = matches!(escape_search(&mut a, NodeId::ROOT, depth, b, None).unwrap(), Escape::Capped);
        prop_assert!(reached && capped);
    }

    #[test]
    fn kl_is_nonnegative_and_below_chi_square(p in unit_simplex(4), q in unit_simplex(4)) {
        let v = kl_x(&p, &q).unwrap();
        prop_assert!(v.x >= -1e-15);
        prop_assert!(v.x <= v.bound + 1e-12);
        prop_assert!(kl_x(&p, &p).unwrap().x.abs() < 1e-15);
    }

    #[test]
    fn condition_margin_sign_is_the_verdict(p in 0.5f64..40.0, p1 in 0.0f64..0.9, mu in 1.05f64..6.0) {
        let v = main_theorem_condition(p, p1, mu).unwrap();
        prop_assert_eq!(v.holds, v.margin > 0.0);
        let q = v.q;
        let poly = 2.0 * p * p * q * q + (3.0 * p * p + 5.0 * p) * q + (-p * p + 11.0 * p - 4.0);
        prop_assert_eq!(v.holds, poly < 0.0);
    }

    #[test]
    fn chains_are_nonincreasing_and_positive(seed in 0u64..1000, p1 in 0.0f64..0.6) {
        let d = Arc::new(OffspringDistribution::two_point(p1).unwrap());
        let k = PivotKernel::new(SurvivalSolver::new(d).unwrap()).unwrap();
        let path = run_chain(&k, InitialState::SampleFromL, 200, seed, 0, true).unwrap();
        prop_assert!(path.h.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
        let hs = path.h_star.unwrap();
        prop_assert!(hs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(hs.iter().zip(&path.h).all(|(s, h)| s >= &(h * (1.0 - 1e-12))));
    }

    #[test]
    fn lpe_paths_step_down(seed in 0u64..10_000, start in 0.1f64..50.0) {
        let path = lpe_sample(5.0, start, &mut derive_stream(seed, 4, 0)).unwrap();
        prop_assert!(path.is_nonincreasing());
        prop_assert_eq!(path.at(0.0), start);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), reps in 1u64..100_000, t in 0.51f64..0.99) {
        let mut cfg = ExperimentConfig::new(Experiment::DualDecay);
        cfg.seed = seed;
        cfg.set("replicates", &reps.to_string()).unwrap();
        cfg.set("t", &t.to_string()).unwrap();
        cfg.set("n_grid", "[5, 10]").unwrap();
        let back: ExperimentConfig = cfg.to_text().parse().unwrap();
        prop_assert_eq!(back, cfg);
    }
}
