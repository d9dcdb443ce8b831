//! Canonical instance generators: the permuted-harmonic lower-bound family,
//! harmonic DWL witnesses, and symmetric smoke-test instances.

use serde::{Deserialize, Serialize};

use crate::model::{Component, ComponentKind, CostFunction, DistributionSpec, Instance};
use crate::{Error, Result};

/// Which construction of the lower-bound distribution to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundVariant {
    /// Shares `1/(2n)`, truthful scaling `beta = 1`; atoms smoothed with a
    /// perturbation well below `eps`.
    MainText,
    /// The fully smoothed construction at scaling `beta = 1 - eps`, with an
    /// explicit near-zero remainder component.
    AppendixF,
}

/// Parameters of the lower-bound family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerBoundSpec {
    pub n: usize,
    pub eps: f64,
    /// Shared-round probability for the `AppendixF` variant (must be < 1/2).
    /// The `MainText` variant pins it to 1/2.
    pub alpha_prime: Option<f64>,
    pub variant: LowerBoundVariant,
    pub horizon: u64,
    pub seed: u64,
}

/// Harmonic report vector `(1, 1/2 - eps, ..., 1/n - eps)`: the Moulin
/// mechanism allocates only agent 1 at payment 1, leaving dead-weight loss
/// `H_n - 1 - (n-1) eps`.
pub fn make_harmonic_dwl_witness(n: usize, eps: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("witness requires n >= 1".into()));
    }
    if !(eps >= 0.0) || eps >= 1.0 / (2.0 * (n * n) as f64) {
        return Err(Error::Config(format!(
            "witness eps must lie in [0, 1/(2n^2)) = [0, {})",
            1.0 / (2.0 * (n * n) as f64)
        )));
    }
    Ok((0..n)
        .map(|j| if j == 0 { 1.0 } else { 1.0 / (j + 1) as f64 - eps })
        .collect())
}

/// Build the lower-bound instance. Under truthful-rate scaling the Moulin
/// reduction spends exactly `alpha_i` per agent in expectation while the
/// grand coalition can reach per-agent utility `alpha_i (H_n - n eps)` by
/// taking the shared rounds.
pub fn make_lower_bound(spec: &LowerBoundSpec) -> Result<Instance> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::Config("lower-bound family requires n >= 2".into()));
    }
    if !(spec.eps > 0.0 && spec.eps < 1.0 / (2.0 * n as f64)) {
        return Err(Error::Config(format!(
            "lower-bound eps must lie in (0, 1/(2n) = {})",
            1.0 / (2.0 * n as f64)
        )));
    }
    match spec.variant {
        LowerBoundVariant::MainText => make_main_text(spec),
        LowerBoundVariant::AppendixF => make_appendix_f(spec),
    }
}

fn harmonic_base(n: usize, eps: f64) -> Vec<f64> {
    (0..n)
        .map(|j| if j == 0 { 1.0 - eps } else { 1.0 / (j + 1) as f64 - eps })
        .collect()
}

fn selfish_atom(n: usize, agent: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![if i == agent { 1.0 } else { 0.0 }]).collect()
}

fn make_main_text(spec: &LowerBoundSpec) -> Result<Instance> {
    let n = spec.n;
    if let Some(ap) = spec.alpha_prime {
        if (ap - 0.5).abs() > 1e-12 {
            return Err(Error::Config("main-text variant pins alpha_prime = 1/2".into()));
        }
    }
    let shares = vec![1.0 / (2.0 * n as f64); n];
    let zero_one = CostFunction::ZeroOneSingleGood;
    let mut components = vec![Component {
        prob: 0.5,
        kind: ComponentKind::PermutedAtom {
            base: harmonic_base(n, spec.eps),
        },
        cost: zero_one.clone(),
    }];
    for i in 0..n {
        components.push(Component {
            prob: 0.5 / n as f64,
            kind: ComponentKind::Atom {
                values: selfish_atom(n, i),
            },
            cost: zero_one.clone(),
        });
    }
    // smoothing well below eps keeps the construction intact while giving
    // the solver the continuity it needs
    let dist = DistributionSpec {
        components,
        eps: 1e-6,
    };
    Instance::new(n, 1, spec.horizon, shares, dist, spec.seed)
}

fn make_appendix_f(spec: &LowerBoundSpec) -> Result<Instance> {
    let n = spec.n;
    let eps = spec.eps;
    let alpha_prime = spec.alpha_prime.unwrap_or(0.45);
    if !(alpha_prime > 0.0 && alpha_prime < 0.5) {
        return Err(Error::Config("appendix-f variant requires alpha_prime in (0, 1/2)".into()));
    }
    let n_eps = n as f64 * eps;
    if n_eps >= 0.5 {
        return Err(Error::Config("appendix-f variant requires n*eps < 1/2".into()));
    }
    let selfish_prob = alpha_prime / (n as f64 * (1.0 - n_eps));
    let remainder = 1.0 - alpha_prime - n as f64 * selfish_prob;
    if remainder < 0.0 {
        return Err(Error::Config("appendix-f probabilities exceed 1; shrink alpha_prime or eps".into()));
    }
    let scale = 1.0 - eps;
    let smoothing = scale * eps;
    let zero_one = CostFunction::ZeroOneSingleGood;

    // the sup-DWL witness profile with allocated agents replaced by their
    // payments: for Moulin that is the harmonic vector itself
    let witness: Vec<f64> = (0..n).map(|j| if j == 0 { 1.0 } else { 1.0 / (j + 1) as f64 - eps }).collect();
    let shared_base: Vec<f64> = witness.iter().map(|v| (scale * (v - eps)).max(0.0)).collect();

    let mut components = vec![Component {
        prob: alpha_prime,
        kind: ComponentKind::PermutedAtom { base: shared_base },
        cost: zero_one.clone(),
    }];
    for i in 0..n {
        let intervals: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|j| {
                if j == i {
                    vec![(scale, 1.0 - smoothing)]
                } else {
                    vec![(0.0, 0.0)]
                }
            })
            .collect();
        components.push(Component {
            prob: selfish_prob,
            kind: ComponentKind::Box { intervals },
            cost: zero_one.clone(),
        });
    }
    if remainder > 0.0 {
        components.push(Component {
            prob: remainder,
            kind: ComponentKind::Box {
                intervals: vec![vec![(0.0, 0.0)]; n],
            },
            cost: zero_one.clone(),
        });
    }
    let shares = vec![alpha_prime / n as f64; n];
    let dist = DistributionSpec {
        components,
        eps: smoothing,
    };
    Instance::new(n, 1, spec.horizon, shares, dist, spec.seed)
}

/// Single agent, `V ~ Uniform[0,1]`, 0-1 cost. The Moulin pacing fixed
/// point has the closed form `C(beta) = 1 - beta`.
pub fn single_agent_uniform(share: f64, horizon: u64, seed: u64) -> Result<Instance> {
    Instance::new(
        1,
        1,
        horizon,
        vec![share],
        DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::Box {
                    intervals: vec![vec![(0.0, 1.0)]],
                },
                cost: CostFunction::ZeroOneSingleGood,
            }],
            eps: 1e-4,
        },
        seed,
    )
}

/// Two exchangeable agents with independent `Uniform[0,1]` values.
pub fn symmetric_two_agent_uniform(share_each: f64, horizon: u64, seed: u64) -> Result<Instance> {
    Instance::new(
        2,
        1,
        horizon,
        vec![share_each, share_each],
        DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::Box {
                    intervals: vec![vec![(0.0, 1.0)], vec![(0.0, 1.0)]],
                },
                cost: CostFunction::ZeroOneSingleGood,
            }],
            eps: 1e-4,
        },
        seed,
    )
}

/// Two agents with positively correlated values: a high-value regime and a
/// low-value regime mixed by round.
pub fn correlated_two_agent(shares: [f64; 2], horizon: u64, seed: u64) -> Result<Instance> {
    let zero_one = CostFunction::ZeroOneSingleGood;
    Instance::new(
        2,
        1,
        horizon,
        shares.to_vec(),
        DistributionSpec {
            components: vec![
                Component {
                    prob: 0.4,
                    kind: ComponentKind::Box {
                        intervals: vec![vec![(0.55, 0.95)], vec![(0.55, 0.95)]],
                    },
                    cost: zero_one.clone(),
                },
                Component {
                    prob: 0.6,
                    kind: ComponentKind::Box {
                        intervals: vec![vec![(0.05, 0.45)], vec![(0.05, 0.45)]],
                    },
                    cost: zero_one,
                },
            ],
            eps: 1e-4,
        },
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{dwl, run_mechanism, MechanismKind, Reports};
    use crate::model::Allocation;
    use crate::scalar::harmonic;
    use crate::Real;

    #[test]
    fn harmonic_witness_examples() {
        let zero_one = CostFunction::ZeroOneSingleGood;

        // n=2, eps=1e-3: excluded value 0.5 - eps, payment 1
        let w = make_harmonic_dwl_witness(2, 1e-3).unwrap();
        let reports = Reports::single_good(&w).unwrap();
        let d = dwl(MechanismKind::Moulin, &reports, &zero_one).unwrap();
        assert!((d - 0.499).abs() < 1e-12);

        // n=1: allocated at value 1, no exclusion
        let w = make_harmonic_dwl_witness(1, 0.0).unwrap();
        let reports = Reports::single_good(&w).unwrap();
        assert_eq!(dwl(MechanismKind::Moulin, &reports, &zero_one).unwrap(), 0.0);

        // n=5: formula to 1e-9
        let eps = 1e-4;
        let w = make_harmonic_dwl_witness(5, eps).unwrap();
        let reports = Reports::single_good(&w).unwrap();
        let d = dwl(MechanismKind::Moulin, &reports, &zero_one).unwrap();
        let expect = harmonic::<f64>(5) - 1.0 - 4.0 * eps;
        assert!((d - expect).abs() < 1e-9);

        assert!(make_harmonic_dwl_witness(3, 0.2).is_err());
    }

    #[test]
    fn main_text_instance_matches_construction() {
        let spec = LowerBoundSpec {
            n: 2,
            eps: 0.01,
            alpha_prime: None,
            variant: LowerBoundVariant::MainText,
            horizon: 1000,
            seed: 3,
        };
        let inst = make_lower_bound(&spec).unwrap();
        inst.validate().unwrap();
        assert_eq!(inst.shares, vec![0.25, 0.25]);
        let Component { prob, kind, .. } = &inst.distribution.components[0];
        assert_eq!(*prob, 0.5);
        match kind {
            ComponentKind::PermutedAtom { base } => {
                assert!((base[0] - 0.99).abs() < 1e-12);
                assert!((base[1] - 0.49).abs() < 1e-12);
            }
            other => panic!("unexpected component {other:?}"),
        }
        assert_eq!(inst.distribution.components[1].prob, 0.25);
        assert_eq!(inst.distribution.components[2].prob, 0.25);
    }

    #[test]
    fn shared_rounds_never_allocated_under_truthful_rate() {
        let spec = LowerBoundSpec {
            n: 4,
            eps: 0.01,
            alpha_prime: None,
            variant: LowerBoundVariant::MainText,
            horizon: 1000,
            seed: 3,
        };
        let inst = make_lower_bound(&spec).unwrap();
        // every permutation of the shared base, reported at beta=1, dies in
        // the Moulin shrink: the j-th largest value sits below 1/j
        let base = match &inst.distribution.components[0].kind {
            ComponentKind::PermutedAtom { base } => base.clone(),
            _ => unreachable!(),
        };
        let mut perm = base.clone();
        for rotation in 0..4 {
            perm.rotate_left(rotation.min(1));
            let reports = Reports::single_good(&perm).unwrap();
            let out = run_mechanism(MechanismKind::Moulin, &reports, &CostFunction::ZeroOneSingleGood).unwrap();
            assert!(out.allocation.is_empty(), "rotation {rotation}");
        }
    }

    #[test]
    fn grand_coalition_value_matches_formula() {
        // taking the shared rounds yields per-agent utility
        // alpha_i * (H_n - n eps)
        let n = 4;
        let eps = 0.01;
        let base = harmonic_base(n, eps);
        let total: f64 = base.iter().sum();
        let expect = harmonic::<f64>(n) - n as f64 * eps;
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn appendix_f_instance_validates() {
        let spec = LowerBoundSpec {
            n: 3,
            eps: 0.01,
            alpha_prime: Some(0.4),
            variant: LowerBoundVariant::AppendixF,
            horizon: 1000,
            seed: 5,
        };
        let inst = make_lower_bound(&spec).unwrap();
        inst.validate().unwrap();
        let total: f64 = inst.distribution.components.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // under beta = 1 - eps, shared-round reports stay strictly below the
        // witness thresholds
        let scale = 1.0 - spec.eps;
        if let ComponentKind::PermutedAtom { base } = &inst.distribution.components[0].kind {
            let witness = [1.0, 0.5 - spec.eps, 1.0 / 3.0 - spec.eps];
            for (b, w) in base.iter().zip(witness) {
                assert!((b + inst.distribution.eps) / scale <= w + 1e-12);
            }
        } else {
            panic!("expected shared permuted atom first");
        }
    }

    #[test]
    fn appendix_f_solver_recovers_smoothed_rate() {
        use crate::equilibrium::{solve_pacing, SolveConfig};
        let eps = 0.01;
        let spec = LowerBoundSpec {
            n: 2,
            eps,
            alpha_prime: Some(0.4),
            variant: LowerBoundVariant::AppendixF,
            horizon: 1_000,
            seed: 21,
        };
        let inst = make_lower_bound(&spec).unwrap();
        let cfg = SolveConfig {
            samples: 30_000,
            coarse_samples: 5_000,
            polish_sweeps: 4,
            ..SolveConfig::default()
        };
        let profile = solve_pacing(&inst, MechanismKind::Moulin, &cfg).unwrap();
        for &b in &profile.beta {
            assert!((b - (1.0 - eps)).abs() <= 0.05, "beta {b} far from 1 - eps");
        }
    }

    #[test]
    fn embedded_strategy_specs_roundtrip_and_validate() {
        use crate::model::{StrategySpec, StrategySpecKind};
        use crate::strategies::Strategy;
        let mut inst = symmetric_two_agent_uniform(0.25, 100, 1).unwrap();
        inst.strategies = Some(vec![
            StrategySpec {
                agent: 0,
                kind: StrategySpecKind::ValueScaling { beta: 0.8 },
            },
            StrategySpec {
                agent: 1,
                kind: StrategySpecKind::Truthful,
            },
        ]);
        inst.validate().unwrap();
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"kind\": \"value_scaling\""));
        assert!(text.contains("\"beta\": 0.8"));
        let back = Instance::from_json(&text).unwrap();
        let strategies = Strategy::from_instance(&back).unwrap();
        assert!(matches!(strategies[0], Strategy::ValueScaling { beta } if beta == 0.8));
        assert!(matches!(strategies[1], Strategy::Truthful));

        // incomplete coverage is rejected
        inst.strategies = Some(vec![StrategySpec {
            agent: 0,
            kind: StrategySpecKind::Truthful,
        }]);
        assert!(inst.validate().is_err());
    }

    #[test]
    fn smoke_instances_validate() {
        single_agent_uniform(0.5, 100, 1).unwrap().validate().unwrap();
        symmetric_two_agent_uniform(0.25, 100, 1).unwrap().validate().unwrap();
        correlated_two_agent([0.3, 0.2], 100, 1).unwrap().validate().unwrap();
    }

    #[test]
    fn selfish_round_is_won_solo() {
        // on agent i's selfish round under beta=1, Moulin allocates only i
        let values: Vec<Real> = vec![1.0, 1e-6, 1e-6, 1e-6];
        let reports = Reports::single_good(&values).unwrap();
        let out = run_mechanism(MechanismKind::Moulin, &reports, &CostFunction::ZeroOneSingleGood).unwrap();
        assert_eq!(out.allocation, Allocation(0b0001));
        assert_eq!(out.payments[0], 1.0);
    }
}
