use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sviph::elicitation::{falsify_pseudomonotone, run_all, ElicitationInput, EvalGrid, Levels};
use sviph::instances::{gen_pseudo_slcp, GeneratorParams};
use sviph::linalg::{min_eigenvalue, sym_part};
use sviph::model::InstanceFile;
use sviph::oracle::lcp_enumerate;
use sviph::pha::pha_solve_observed;
use sviph::{
    solve_scenario_subproblem, AffineMap, FeasibleSet, NewtonConfig, PhaConfig, Policy, ScenarioMap, ScenarioSpace,
    SubproblemSpec, SubproblemStatus, SviProblem, TwoStageSlcp,
};

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn tree() -> impl Strategy<Value = (ScenarioSpace, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=12)
        .prop_flat_map(|(stages, j)| {
            (
                prop::collection::vec(1usize..=3, stages),
                prop::collection::vec(prop::collection::vec(0u32..3, stages - 1), j),
                prop::collection::vec(0.05..1.0f64, j),
            )
        })
        .prop_flat_map(|(dims, paths, raw)| {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let space = ScenarioSpace::from_paths(dims, &probs, &paths).unwrap();
            let len = space.scenarios() * space.dim();
            (
                Just(space),
                prop::collection::vec(-5.0..5.0f64, len),
                prop::collection::vec(-5.0..5.0f64, len),
            )
        })
}

fn policy(space: &ScenarioSpace, v: Vec<f64>) -> Policy {
    Policy::from_flat(space.scenarios(), space.dim(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projections_split_orthogonally((space, a, b) in tree()) {
        let x = policy(&space, a);
        let y = policy(&space, b);
        let pn = space.project_nonanticipative(&x).unwrap();
        let pm = space.project_multiplier(&x).unwrap();
        prop_assert!(space.project_nonanticipative(&pn).unwrap().sub(&pn).max_abs() <= 1e-12);
        prop_assert!(pn.add(&pm).sub(&x).max_abs() <= 1e-12);
        prop_assert!(space.inner(&pn, &pm).unwrap().abs() <= 1e-10);
        let lhs = space.inner(&space.project_multiplier(&y).unwrap(), &x).unwrap();
        let rhs = space.inner(&y, &pm).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
        prop_assert_eq!(space.nonanticipativity_defect(&pn).unwrap(), 0.0);
        prop_assert!(space.multiplier_defect(&pm).unwrap() <= 1e-12);
    }

    #[test]
    fn isometry_round_trips((space, a, _b) in tree()) {
        let x = policy(&space, a);
        let v = space.to_iso(&x).unwrap();
        let back = space.from_iso(&v).unwrap();
        prop_assert!(back.sub(&x).max_abs() <= 1e-12);
        let n2: f64 = v.iter().map(|t| t * t).sum();
        prop_assert!((n2.sqrt() - space.norm(&x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn subsolver_matches_enumeration(
        n in 1usize..=5,
        seed in any::<u64>(),
        shift in 0.1..3.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = a.transpose() * &a;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let map = AffineMap::new(m.clone(), q.clone()).unwrap();
        let anchor = vec![0.0; n];
        let w = vec![0.0; n];
        let spec = SubproblemSpec {
            map: &map,
            set: &FeasibleSet::Orthant,
            w: &w,
            x_anchor: &anchor,
            r: shift,
            constant_jacobian: None,
        };
        let out = solve_scenario_subproblem(spec, &anchor, &NewtonConfig::default()).unwrap();
        prop_assert_eq!(out.status, SubproblemStatus::Converged);
        let exact = lcp_enumerate(&(&m + DMatrix::identity(n, n) * shift), &q).unwrap();
        prop_assert_eq!(exact.len(), 1);
        let d = out.x.iter().zip(exact[0].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-8, "distance {}", d);
    }

    #[test]
    fn certificates_are_sound(
        j in square(3),
        skew in square(3),
        probs in prop::collection::vec(0.1..1.0f64, 2),
        level in 0.05..5.0f64,
    ) {
        // one first-stage and two second-stage components per scenario
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let sym = &j + j.transpose();
        let m = vec![sym.clone(), &sym + (&skew - skew.transpose())];
        let q = vec![DVector::zeros(3); 2];
        let slcp = TwoStageSlcp::new(1, 2, probs, m, q).unwrap();
        let problem = slcp.to_problem();
        let input = ElicitationInput::from_problem(&problem, &EvalGrid::single(&problem)).unwrap();
        let levels = Levels { multiplicity: Some(level), pairing: Some(level), dominance: Some(level) };
        for rep in run_all(&input, &levels).unwrap() {
            if let Some(bound) = rep.level_bound {
                let p = input.split.projector();
                let lam = min_eigenvalue(&(sym_part(&input.jacobians[0]) + p * (bound + 0.01))).unwrap();
                prop_assert!(lam >= -1e-8, "{} bound {} leaves {}", rep.criterion, bound, lam);
            }
        }
    }

    #[test]
    fn criteria_ignore_scenario_order(seed in 0u64..200) {
        let slcp = gen_pseudo_slcp(&GeneratorParams::new(2, 1, 3, seed)).unwrap();
        let order = [2usize, 0, 1];
        let permuted = TwoStageSlcp::new(
            2,
            1,
            order.iter().map(|&i| slcp.probabilities()[i]).collect(),
            order.iter().map(|&i| slcp.matrix(i).clone()).collect(),
            order.iter().map(|&i| slcp.vector(i).clone()).collect(),
        )
        .unwrap();
        let levels = Levels { multiplicity: Some(1.0), pairing: Some(1.0), dominance: Some(1.0) };
        let run = |s: &TwoStageSlcp| {
            let p = s.to_problem();
            let input = ElicitationInput::from_problem(&p, &EvalGrid::single(&p)).unwrap();
            run_all(&input, &levels).unwrap()
        };
        for (a, b) in run(&slcp).iter().zip(run(&permuted).iter()) {
            prop_assert_eq!(a.applicable, b.applicable, "{}", a.criterion);
            if let (Some(x), Some(y)) = (a.level_bound, b.level_bound) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{}: {} vs {}", a.criterion, x, y);
            }
        }
    }

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), j in 1usize..5) {
        let p = GeneratorParams::new(3, 2, j, seed);
        let a = gen_pseudo_slcp(&p).unwrap().to_instance().to_json().unwrap();
        let b = gen_pseudo_slcp(&p).unwrap().to_instance().to_json().unwrap();
        prop_assert_eq!(&a, &b);
        let back = TwoStageSlcp::from_instance(&InstanceFile::from_json(&a).unwrap()).unwrap();
        prop_assert_eq!(back.to_instance().to_json().unwrap(), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn monotone_maps_are_never_flagged(a in square(3), q in prop::collection::vec(-1.0..1.0f64, 3)) {
        let m = a.transpose() * &a;
        let space = ScenarioSpace::two_stage(3, 0, &[1.0]).unwrap();
        let map: Arc<dyn ScenarioMap> = Arc::new(AffineMap::new(m, DVector::from_vec(q)).unwrap());
        let problem = SviProblem::new(space, vec![map], vec![FeasibleSet::Orthant]).unwrap();
        prop_assert!(falsify_pseudomonotone(&problem, 500, 3).unwrap().is_empty());
    }

    #[test]
    fn iterates_stay_nonanticipative(seed in 0u64..1000) {
        let mut p = GeneratorParams::new(2, 2, 4, seed);
        p.monotone_only = true;
        let problem = gen_pseudo_slcp(&p).unwrap().to_problem();
        let space = problem.space().clone();
        let mut cfg = PhaConfig::new(1.0);
        cfg.max_iter = 50;
        let mut worst = (0.0_f64, 0.0_f64);
        pha_solve_observed(&problem, &cfg, None, None, |v| {
            worst.0 = worst.0.max(space.nonanticipativity_defect(v.x).unwrap());
            worst.1 = worst.1.max(space.multiplier_defect(v.w).unwrap());
        })
        .unwrap();
        prop_assert_eq!(worst.0, 0.0);
        prop_assert!(worst.1 <= 1e-10);
    }
}
