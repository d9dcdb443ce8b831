//! Property-based invariants across the crate.

use proptest::prelude::*;
use rand::Rng;

use pacecore::mechanisms::{
    dwl, dwl_single_good_forms, moulin_exhaustive_reference, run_mechanism, MechanismKind, Reports,
};
use pacecore::model::{Allocation, Component, ComponentKind, CostFunction, DistributionSpec, Instance};
use pacecore::reduction::{feasibility_audit, simulate, SimOptions};
use pacecore::rng::stream;
use pacecore::strategies::Strategy as Bidding;
use pacecore::Real;

fn zero_one() -> CostFunction<Real> {
    CostFunction::ZeroOneSingleGood
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// IR and CC hold for every mechanism on arbitrary single-good reports,
    /// and the two algebraic DWL forms agree.
    #[test]
    fn mechanisms_respect_ir_cc_and_dwl_forms(values in proptest::collection::vec(0.0..2.0f64, 1..7)) {
        let reports = Reports::single_good(&values).unwrap();
        for kind in [MechanismKind::Proportional, MechanismKind::Moulin, MechanismKind::Potential] {
            // run_mechanism asserts IR and CC internally
            let outcome = run_mechanism(kind, &reports, &zero_one()).unwrap();
            for (i, &p) in outcome.payments.iter().enumerate() {
                if outcome.allocation.contains(i, 0, 1) {
                    prop_assert!(p <= values[i] + 1e-9);
                } else {
                    prop_assert!(p <= 1e-12);
                }
            }
            let d = dwl(kind, &reports, &zero_one()).unwrap();
            prop_assert!(d >= -1e-12);
            let (f1, f2) = dwl_single_good_forms(kind, &reports, &zero_one()).unwrap();
            prop_assert!((f1 - f2).abs() <= 1e-12);
            prop_assert!((d - f1).abs() <= 1e-12);
        }
    }

    /// The iterative Moulin shrink equals the exhaustive maximal stable set.
    #[test]
    fn moulin_shrink_equals_exhaustive(values in proptest::collection::vec(0.0..1.6f64, 1..9)) {
        let reports = Reports::single_good(&values).unwrap();
        let fast = run_mechanism(MechanismKind::Moulin, &reports, &zero_one()).unwrap().allocation;
        let slow = moulin_exhaustive_reference(&reports).unwrap();
        prop_assert_eq!(fast, slow);
    }

    /// Value scaling is exactly homogeneous: scaling beta by lambda divides
    /// every report by lambda.
    #[test]
    fn value_scaling_homogeneity(
        beta in 0.05..4.0f64,
        lambda in prop::sample::select(vec![2.0f64, 4.0, 8.0]),
        values in proptest::collection::vec(0.0..1.0f64, 1..5),
    ) {
        use pacecore::mechanisms::Bid;
        let base = Bidding::value_scaling(beta).report(&values, &[]);
        let scaled = Bidding::value_scaling(beta * lambda).report(&values, &[]);
        for (b, s) in base.iter().zip(&scaled) {
            let (Bid::Finite(b), Bid::Finite(s)) = (b, s) else { panic!() };
            prop_assert_eq!(b / lambda, *s);
        }
    }

    /// Sampled profiles stay inside the unit box and obey the cost axioms
    /// on random allocation pairs.
    #[test]
    fn sampled_rounds_stay_valid(
        seed in 0u64..1000,
        lows in proptest::collection::vec(0.0..0.5f64, 2),
        spans in proptest::collection::vec(0.0..0.5f64, 2),
    ) {
        let intervals: Vec<Vec<(f64, f64)>> = lows
            .iter()
            .zip(&spans)
            .map(|(&lo, &s)| vec![(lo, lo + s)])
            .collect();
        let inst = Instance::new(
            2,
            1,
            10,
            vec![0.25, 0.25],
            DistributionSpec {
                components: vec![Component {
                    prob: 1.0,
                    kind: ComponentKind::Box { intervals },
                    cost: zero_one(),
                }],
                eps: 1e-3,
            },
            seed,
        )
        .unwrap();
        let mut sampler = inst.sampler().unwrap();
        let mut rng = stream(seed, "prop-sample", 0);
        let mut pair_rng = stream(seed, "prop-pairs", 0);
        for _ in 0..20 {
            let vp = sampler.draw(&mut rng);
            for &v in &vp.values {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for _ in 0..10 {
                let a = Allocation(pair_rng.gen::<u64>() & 0b11);
                let b = Allocation(pair_rng.gen::<u64>() & 0b11);
                let (ca, cb) = (vp.cost.eval(a, 2, 1), vp.cost.eval(b, 2, 1));
                let cu = vp.cost.eval(a.union(b), 2, 1);
                let ci = vp.cost.eval(a.intersection(b), 2, 1);
                prop_assert!(cu + ci <= ca + cb + 1e-12);
                prop_assert!(ca <= cu + 1e-12);
            }
        }
    }

    /// Every simulation passes the exact feasibility audit, whatever the
    /// scaling profile.
    #[test]
    fn simulations_always_audit_clean(
        beta in proptest::collection::vec(0.05..3.0f64, 2),
        seed in 0u64..500,
    ) {
        let inst = Instance::new(
            2,
            1,
            300,
            vec![0.25, 0.2],
            DistributionSpec {
                components: vec![Component {
                    prob: 1.0,
                    kind: ComponentKind::Box {
                        intervals: vec![vec![(0.0, 1.0)], vec![(0.0, 1.0)]],
                    },
                    cost: zero_one(),
                }],
                eps: 1e-4,
            },
            seed,
        )
        .unwrap();
        let strategies: Vec<Bidding> = beta.iter().map(|&b| Bidding::value_scaling(b)).collect();
        for kind in [MechanismKind::Proportional, MechanismKind::Moulin] {
            let run = simulate(&inst, kind, &strategies, &SimOptions::default()).unwrap();
            prop_assert!(feasibility_audit(&run, &inst).unwrap());
            let budget: i64 = run.initial_budgets.iter().sum();
            prop_assert!(run.total_cost_credits <= budget);
        }
    }
}
