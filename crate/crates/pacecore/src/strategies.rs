//! Agent bidding policies: value-scaling, truthful, lookup maps, and
//! adaptive policies for empirical best-response testing.

use std::sync::Arc;

use crate::mechanisms::{Bid, MechanismKind};
use crate::model::{Allocation, Instance};
use crate::reduction::{simulate, SimOptions};
use crate::{Error, Real, Result};

/// One round of public information: post-zeroing reports and the chosen
/// allocation. Private values of other agents are never exposed.
#[derive(Clone, Debug)]
pub struct PublicRound {
    pub reports: Vec<Bid<Real>>,
    pub allocation: Allocation,
}

/// Adaptive report rule: a function of the public history and the agent's
/// current value row.
pub trait AdaptivePolicy: Send + Sync {
    fn report(&self, history: &[PublicRound], value_row: &[Real]) -> Vec<Bid<Real>>;
}

impl<F> AdaptivePolicy for F
where
    F: Fn(&[PublicRound], &[Real]) -> Vec<Bid<Real>> + Send + Sync,
{
    fn report(&self, history: &[PublicRound], value_row: &[Real]) -> Vec<Bid<Real>> {
        self(history, value_row)
    }
}

/// A bidding policy for one agent.
#[derive(Clone)]
pub enum Strategy {
    /// Report `value / beta` componentwise; `beta = 0` reports the saturated
    /// sentinel (a bid above every threshold).
    ValueScaling { beta: f64 },
    /// Report the value unchanged.
    Truthful,
    /// Time-independent lookup: the report for a value is taken from the
    /// step table at the largest threshold not exceeding the value.
    TimeIndependentMap { steps: Vec<(f64, f64)> },
    /// Arbitrary function of public history and current value.
    Adaptive(Arc<dyn AdaptivePolicy>),
}

impl std::fmt::Debug for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::ValueScaling { beta } => write!(f, "ValueScaling(beta={beta})"),
            Strategy::Truthful => write!(f, "Truthful"),
            Strategy::TimeIndependentMap { steps } => write!(f, "TimeIndependentMap({} steps)", steps.len()),
            Strategy::Adaptive(_) => write!(f, "Adaptive(..)"),
        }
    }
}

impl Strategy {
    pub fn value_scaling(beta: f64) -> Self {
        Strategy::ValueScaling { beta }
    }

    /// Materialize the declarative form carried in instance files.
    pub fn from_spec(kind: &crate::model::StrategySpecKind) -> Self {
        match kind {
            crate::model::StrategySpecKind::ValueScaling { beta } => Strategy::value_scaling(*beta),
            crate::model::StrategySpecKind::Truthful => Strategy::Truthful,
        }
    }

    /// Per-agent strategies from an instance's embedded specs, if present.
    pub fn from_instance(instance: &Instance) -> Option<Vec<Strategy>> {
        let specs = instance.strategies.as_ref()?;
        let mut out = vec![Strategy::Truthful; instance.n];
        for spec in specs {
            out[spec.agent] = Strategy::from_spec(&spec.kind);
        }
        Some(out)
    }

    /// Whether the report can depend on history.
    pub fn is_time_independent(&self) -> bool {
        !matches!(self, Strategy::Adaptive(_))
    }

    /// Produce this strategy's report for one round.
    pub fn report(&self, value_row: &[Real], history: &[PublicRound]) -> Vec<Bid<Real>> {
        match self {
            Strategy::ValueScaling { beta } => {
                if *beta == 0.0 {
                    vec![Bid::Top; value_row.len()]
                } else {
                    value_row.iter().map(|&v| Bid::Finite(v / beta)).collect()
                }
            }
            Strategy::Truthful => value_row.iter().map(|&v| Bid::Finite(v)).collect(),
            Strategy::TimeIndependentMap { steps } => value_row
                .iter()
                .map(|&v| {
                    let mut out = 0.0;
                    for &(threshold, report) in steps {
                        if v >= threshold {
                            out = report;
                        } else {
                            break;
                        }
                    }
                    Bid::Finite(out)
                })
                .collect(),
            Strategy::Adaptive(policy) => policy.report(history, value_row),
        }
    }
}

/// Paired estimate of the per-round utility gain from a unilateral
/// deviation, with a 99% normal confidence interval.
#[derive(Clone, Debug)]
pub struct GainEstimate {
    pub mean_gain_per_round: f64,
    pub ci99_half_width: f64,
    pub replications: u64,
    pub gains: Vec<f64>,
}

impl GainEstimate {
    pub fn upper99(&self) -> f64 {
        self.mean_gain_per_round + self.ci99_half_width
    }
}

/// Estimate `U_i(alt, phi_-i, T) - U_i(phi^beta_i, phi_-i, T)` with paired
/// common-random-number replications: both arms of every replication see
/// the identical value stream.
#[allow(clippy::too_many_arguments)]
pub fn deviation_gain(
    instance: &Instance,
    kind: MechanismKind,
    baseline_beta: &[f64],
    deviator: usize,
    alt: &Strategy,
    replications: u64,
    horizon: u64,
    seed: u64,
) -> Result<GainEstimate> {
    if baseline_beta.len() != instance.n {
        return Err(Error::Config("baseline beta length must equal n".into()));
    }
    if deviator >= instance.n {
        return Err(Error::Config(format!("deviator {deviator} out of range")));
    }
    let base: Vec<Strategy> = baseline_beta.iter().map(|&b| Strategy::value_scaling(b)).collect();
    let mut deviant = base.clone();
    deviant[deviator] = alt.clone();

    let mut gains = Vec::with_capacity(replications as usize);
    for rep in 0..replications {
        let opts = SimOptions {
            horizon: Some(horizon),
            seed_override: Some(seed),
            sample_stream_index: rep,
            stride: horizon.max(1), // aggregates only; records not needed
        };
        let base_run = simulate(instance, kind, &base, &opts)?;
        let alt_run = simulate(instance, kind, &deviant, &opts)?;
        gains.push(alt_run.utilities[deviator] - base_run.utilities[deviator]);
    }
    let nrep = gains.len() as f64;
    let mean = gains.iter().sum::<f64>() / nrep;
    let var = if gains.len() > 1 {
        gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (nrep - 1.0)
    } else {
        0.0
    };
    let half = 2.5758 * (var / nrep).sqrt();
    Ok(GainEstimate {
        mean_gain_per_round: mean,
        ci99_half_width: half,
        replications,
        gains,
    })
}
