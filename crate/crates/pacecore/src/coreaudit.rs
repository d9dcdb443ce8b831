//! Approximate-core certification and refutation.
//!
//! Ex-ante: for each coalition the audit builds the weighted-threshold
//! allocation family `A^{w,S,z}` (allocate where the coalition's weighted
//! value beats `z` times the cost), tunes `z` so the policy's expected cost
//! meets the coalition's budget, and Monte-Carlo-checks the sufficient
//! inequality `(1+gamma) * weighted value of the induced policy >= weighted
//! value of the threshold policy`. Threshold policies are Pareto-optimal
//! among equal-cost policies, which is what makes the single comparison
//! sufficient. Failures are escalated to a direct per-member blocking check
//! before anything is reported as a refutation.
//!
//! Ex-post: the same family is evaluated per realized round against the
//! coalition's credit budget, yielding the measured blocking frontier
//! `delta*(gamma)` over the trace.
//!
//! Decisions demand three combined standard errors of slack; exact pathwise
//! ties resolve toward certification with a flag. Borderline coalitions are
//! reported as inconclusive, never rounded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mechanisms::{run_mechanism, Bid, MechanismKind, Reports};
use crate::model::{Allocation, CostFunction, Instance, ValueProfile};
use crate::reduction::SimulationResult;
use crate::rng::stream;
use crate::{Error, Real, Result};

/// Schema string for certificate files.
pub const CERT_SCHEMA: &str = "pacecore-cert-v1";

/// Coalitions are enumerated exhaustively up to this many agents.
pub const EXACT_COALITION_MAX_N: usize = 12;

/// Random coalitions audited beyond the exhaustive limit.
pub const SAMPLED_COALITIONS: usize = 256;

/// Monte-Carlo decisions require this many combined standard errors.
pub const SIGMA_RULE: f64 = 3.0;

/// Random simplex directions per coalition member in the ex-post search.
pub const DIRECTIONS_PER_MEMBER: usize = 32;

/// Certificate outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    Certified,
    Refuted,
    Inconclusive,
}

/// Per-coalition verdict inside a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoalitionVerdict {
    /// Inequality holds with at least `SIGMA_RULE` standard errors.
    Pass,
    /// Pathwise tie: the threshold policy coincides with the induced policy.
    Tie,
    /// A member with `beta_i = 0` already receives everything it values.
    Trivial,
    /// A verified blocking coalition.
    Blocked,
    /// Too noisy to decide.
    Inconclusive,
}

/// Half-space/threshold witness for one coalition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalfSpaceWitness {
    /// Coalition bitmask over agents.
    pub coalition: u64,
    /// Per-agent weights (zero outside the coalition).
    pub weights: Vec<f64>,
    pub z: f64,
    /// Estimated expected cost of the threshold policy.
    pub measure_estimate: f64,
    /// `(1+gamma) * E[weighted value under the induced policy]`.
    pub lhs: f64,
    /// `E[weighted value under the threshold policy]`.
    pub rhs: f64,
    pub slack: f64,
    pub stderr: f64,
    pub tie: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoalitionRecord {
    /// Coalition bitmask over agents.
    #[serde(rename = "S")]
    pub coalition: u64,
    pub verdict: CoalitionVerdict,
    /// Signed certification slack (duplicated from the witness for flat
    /// consumers of the certificate JSON).
    pub slack: Option<f64>,
    pub stderr: Option<f64>,
    pub witness: Option<HalfSpaceWitness>,
}

/// A verified blocking coalition with its witness policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockingRecord {
    pub coalition: u64,
    pub weights: Vec<f64>,
    pub z: f64,
    /// Expected (ex-ante) or realized (ex-post) cost of the witness policy.
    pub policy_cost: f64,
    pub budget: f64,
    /// Utility of each coalition member under the audited allocation.
    pub base_utilities: Vec<f64>,
    /// Utility of each member under the witness policy.
    pub alt_utilities: Vec<f64>,
    /// `min over members of (alt - (1+gamma) * base)`.
    pub min_margin: f64,
}

/// Certification output, serialized under the `pacecore-cert-v1` schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoreCertificate {
    pub schema: String,
    pub status: CertStatus,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// True when coalition enumeration was truncated to a sample.
    pub sampled: bool,
    pub coalitions: Vec<CoalitionRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocking: Option<BlockingRecord>,
    /// Coalitions whose confidence interval was too wide to decide.
    pub undecided: Vec<u64>,
}

fn coalition_list(n: usize, seed: u64) -> (Vec<u64>, bool) {
    if n <= EXACT_COALITION_MAX_N {
        return ((1..(1u64 << n)).collect(), false);
    }
    let mut rng = stream(seed, "coalition-sample", 0);
    let full = (1u64 << n) - 1;
    let mut list: Vec<u64> = (0..n).map(|i| 1u64 << i).collect();
    list.push(full);
    while list.len() < n + 1 + SAMPLED_COALITIONS {
        let mask = rng.gen::<u64>() & full;
        if mask != 0 && !list.contains(&mask) {
            list.push(mask);
        }
    }
    list.sort_unstable();
    (list, true)
}

fn members(coalition: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| coalition & (1 << i) != 0).collect()
}

/// A batch of draws with the induced allocation of `(kind, beta)`
/// precomputed per draw.
struct PolicyBatch {
    n: usize,
    m: usize,
    profiles: Vec<ValueProfile>,
    induced: Vec<Allocation>,
    /// Fast path: every component cost is the single-good 0-1 cost.
    zero_one: bool,
}

impl PolicyBatch {
    fn draw(
        instance: &Instance,
        kind: MechanismKind,
        beta: &[f64],
        samples: u64,
        seed: u64,
        label: &str,
    ) -> Result<Self> {
        let mut sampler = instance.sampler()?;
        let mut rng = stream(seed, label, 0);
        let mut profiles = Vec::with_capacity(samples as usize);
        let mut induced = Vec::with_capacity(samples as usize);
        let (n, m) = (instance.n, instance.m);
        for _ in 0..samples {
            let profile = sampler.draw(&mut rng);
            let mut bids: Vec<Bid<Real>> = Vec::with_capacity(n * m);
            for i in 0..n {
                for k in 0..m {
                    bids.push(if beta[i] == 0.0 {
                        Bid::Top
                    } else {
                        Bid::Finite(profile.value(i, k) / beta[i])
                    });
                }
            }
            let reports = Reports::new(n, m, bids)?;
            let outcome = run_mechanism(kind, &reports, &profile.cost)?;
            induced.push(outcome.allocation);
            profiles.push(profile);
        }
        let zero_one = instance
            .distribution
            .components
            .iter()
            .all(|c| matches!(c.cost, CostFunction::ZeroOneSingleGood));
        Ok(PolicyBatch {
            n,
            m,
            profiles,
            induced,
            zero_one: zero_one && m == 1,
        })
    }

    /// Coalition-weighted score of each draw (single-good fast path).
    fn scores(&self, weights: &[f64], coalition: u64) -> Vec<f64> {
        self.profiles
            .iter()
            .map(|p| {
                let mut s = 0.0;
                for i in 0..self.n {
                    if coalition & (1 << i) != 0 {
                        s += weights[i] * p.value(i, 0);
                    }
                }
                s
            })
            .collect()
    }
}

/// Threshold-policy allocation for one draw in the general setting.
fn threshold_argmax(
    profile: &ValueProfile,
    weights: &[f64],
    coalition: u64,
    z: f64,
    n: usize,
    m: usize,
) -> Allocation {
    let cells = n * m;
    let mut best_mask = 0u64;
    let mut best_val = 0.0f64;
    for mask in 0..(1u64 << cells) {
        let a = Allocation(mask);
        let mut val = 0.0;
        for i in 0..n {
            if coalition & (1 << i) == 0 {
                continue;
            }
            for k in 0..m {
                if a.contains(i, k, m) {
                    val += weights[i] * profile.value(i, k);
                }
            }
        }
        val -= z * profile.cost.eval(a, n, m);
        let better = val > best_val
            || (val == best_val
                && (mask.count_ones() > best_mask.count_ones()
                    || (mask.count_ones() == best_mask.count_ones() && mask < best_mask)));
        if better {
            best_val = val;
            best_mask = mask;
        }
    }
    Allocation(best_mask)
}

struct CoalitionOutcome {
    record: CoalitionRecord,
    blocking: Option<BlockingRecord>,
}

#[allow(clippy::too_many_arguments)]
fn audit_coalition_fast(
    coalition: u64,
    bisect: &PolicyBatch,
    check: &PolicyBatch,
    weights: &[f64],
    target: f64,
    gamma: f64,
) -> CoalitionOutcome {
    let n = bisect.n;
    let coalition_members = members(coalition, n);
    let nb = bisect.profiles.len();
    let nc = check.profiles.len();
    let kappa = (SIGMA_RULE * 0.5 / (nb as f64).sqrt()).min(0.5 * target);

    // tune z on the bisect batch: the k-th largest score is the largest z
    // whose threshold policy costs at least target - kappa
    let mut sorted = bisect.scores(weights, coalition);
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k_cert = (((target - kappa) * nb as f64).ceil() as usize).clamp(1, nb);
    let z_cert = sorted[k_cert - 1];

    // paired comparison on the check batch
    let check_scores = check.scores(weights, coalition);
    let mut diff_sum = 0.0;
    let mut diff_sq = 0.0;
    let mut rhs_sum = 0.0;
    let mut lhs_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut all_zero = true;
    for (j, profile) in check.profiles.iter().enumerate() {
        let in_threshold = check_scores[j] >= z_cert;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for &i in &coalition_members {
            let wv = weights[i] * profile.value(i, 0);
            if check.induced[j].contains(i, 0, 1) {
                lhs += wv;
            }
            if in_threshold {
                rhs += wv;
            }
        }
        if in_threshold {
            cost_sum += 1.0;
        }
        let d = (1.0 + gamma) * lhs - rhs;
        if d != 0.0 {
            all_zero = false;
        }
        diff_sum += d;
        diff_sq += d * d;
        lhs_sum += (1.0 + gamma) * lhs;
        rhs_sum += rhs;
    }
    let ncf = nc as f64;
    let mean = diff_sum / ncf;
    let var = (diff_sq / ncf - mean * mean).max(0.0);
    let stderr = (var / ncf).sqrt();
    let measure = cost_sum / ncf;
    let witness = HalfSpaceWitness {
        coalition,
        weights: weights.to_vec(),
        z: z_cert,
        measure_estimate: measure,
        lhs: lhs_sum / ncf,
        rhs: rhs_sum / ncf,
        slack: mean,
        stderr,
        tie: all_zero,
    };

    // a certificate witness must carry at least the coalition's budget in
    // measure (within sampling error); otherwise it dominates nothing
    let measure_se = (measure * (1.0 - measure) / ncf).max(0.0).sqrt();
    let measure_ok = measure >= target - kappa - SIGMA_RULE * measure_se;
    if measure_ok && (all_zero || mean >= SIGMA_RULE * stderr) {
        return CoalitionOutcome {
            record: CoalitionRecord {
                coalition,
                verdict: if all_zero { CoalitionVerdict::Tie } else { CoalitionVerdict::Pass },
                slack: Some(witness.slack),
                stderr: Some(witness.stderr),
                witness: Some(witness),
            },
            blocking: None,
        };
    }

    // candidate refutation: a threshold policy shaved below the budget by
    // kappa, so its true cost stays feasible despite sampling error, then
    // checked member by member with its own three-sigma demands. A genuine
    // block survives the shave (member value is monotone in the budget);
    // knife-edge budget ties do not, which keeps refutation sound.
    let c_ref = ((target - kappa) * nb as f64).floor() as usize;
    if c_ref >= 1 && c_ref < nb {
        let z_ref = 0.5 * (sorted[c_ref - 1] + sorted[c_ref]);
        let mut base = vec![0.0f64; coalition_members.len()];
        let mut alt = vec![0.0f64; coalition_members.len()];
        let mut gain_sum = vec![0.0f64; coalition_members.len()];
        let mut gain_sq = vec![0.0f64; coalition_members.len()];
        let mut cost = 0.0f64;
        for (j, profile) in check.profiles.iter().enumerate() {
            let in_threshold = check_scores[j] >= z_ref;
            if in_threshold {
                cost += 1.0;
            }
            for (s_idx, &i) in coalition_members.iter().enumerate() {
                let v = profile.value(i, 0);
                let b = if check.induced[j].contains(i, 0, 1) { v } else { 0.0 };
                let a = if in_threshold { v } else { 0.0 };
                base[s_idx] += b;
                alt[s_idx] += a;
                let g = a - (1.0 + gamma) * b;
                gain_sum[s_idx] += g;
                gain_sq[s_idx] += g * g;
            }
        }
        let all_members_gain = (0..coalition_members.len()).all(|s| {
            let mean_g = gain_sum[s] / ncf;
            let var_g = (gain_sq[s] / ncf - mean_g * mean_g).max(0.0);
            mean_g >= SIGMA_RULE * (var_g / ncf).sqrt() && mean_g > 0.0
        });
        let cost_mean = cost / ncf;
        let cost_se = (cost_mean * (1.0 - cost_mean) / ncf).max(0.0).sqrt();
        if all_members_gain && cost_mean <= target + SIGMA_RULE * cost_se {
            let min_margin = (0..coalition_members.len())
                .map(|s| (alt[s] - (1.0 + gamma) * base[s]) / ncf)
                .fold(f64::INFINITY, f64::min);
            return CoalitionOutcome {
                record: CoalitionRecord {
                    coalition,
                    verdict: CoalitionVerdict::Blocked,
                    slack: Some(witness.slack),
                    stderr: Some(witness.stderr),
                    witness: Some(witness),
                },
                blocking: Some(BlockingRecord {
                    coalition,
                    weights: weights.to_vec(),
                    z: z_ref,
                    policy_cost: cost_mean,
                    budget: target,
                    base_utilities: base.iter().map(|b| b / ncf).collect(),
                    alt_utilities: alt.iter().map(|a| a / ncf).collect(),
                    min_margin,
                }),
            };
        }
    }

    CoalitionOutcome {
        record: CoalitionRecord {
            coalition,
            verdict: CoalitionVerdict::Inconclusive,
            slack: Some(witness.slack),
            stderr: Some(witness.stderr),
            witness: Some(witness),
        },
        blocking: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn audit_coalition_general(
    coalition: u64,
    bisect: &PolicyBatch,
    check: &PolicyBatch,
    weights: &[f64],
    target: f64,
    gamma: f64,
) -> Result<CoalitionOutcome> {
    let (n, m) = (bisect.n, bisect.m);
    if n * m > 12 {
        return Err(Error::Size(
            "general-cost ex-ante audit limited to n*m <= 12 (per-draw enumeration)".into(),
        ));
    }
    let coalition_members = members(coalition, n);
    let nb = bisect.profiles.len() as f64;
    let kappa = (SIGMA_RULE * 0.5 / nb.sqrt()).min(0.5 * target);

    let min_cell_cost = bisect
        .profiles
        .iter()
        .flat_map(|p| (0..n * m).map(move |c| p.cost.eval(Allocation(1u64 << c), n, m)))
        .fold(f64::INFINITY, f64::min)
        .max(1e-9);
    let w_total: f64 = coalition_members.iter().map(|&i| weights[i]).sum();
    let z_hi = (w_total * m as f64) / min_cell_cost + 1.0;

    let batch_cost = |batch: &PolicyBatch, z: f64| -> f64 {
        let mut total = 0.0;
        for p in &batch.profiles {
            let a = threshold_argmax(p, weights, coalition, z, n, m);
            total += p.cost.eval(a, n, m);
        }
        total / batch.profiles.len() as f64
    };

    // largest z whose expected policy cost still meets the relaxed budget
    let mut lo = 0.0f64;
    let mut hi = z_hi;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if batch_cost(bisect, mid) >= target - kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z_cert = lo;

    let ncf = check.profiles.len() as f64;
    let mut diff_sum = 0.0;
    let mut diff_sq = 0.0;
    let mut lhs_sum = 0.0;
    let mut rhs_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut all_zero = true;
    for (j, profile) in check.profiles.iter().enumerate() {
        let alt = threshold_argmax(profile, weights, coalition, z_cert, n, m);
        cost_sum += profile.cost.eval(alt, n, m);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for &i in &coalition_members {
            for k in 0..m {
                let wv = weights[i] * profile.value(i, k);
                if check.induced[j].contains(i, k, m) {
                    lhs += wv;
                }
                if alt.contains(i, k, m) {
                    rhs += wv;
                }
            }
        }
        let d = (1.0 + gamma) * lhs - rhs;
        if d != 0.0 {
            all_zero = false;
        }
        diff_sum += d;
        diff_sq += d * d;
        lhs_sum += (1.0 + gamma) * lhs;
        rhs_sum += rhs;
    }
    let mean = diff_sum / ncf;
    let var = (diff_sq / ncf - mean * mean).max(0.0);
    let stderr = (var / ncf).sqrt();
    let measure = cost_sum / ncf;
    let witness = HalfSpaceWitness {
        coalition,
        weights: weights.to_vec(),
        z: z_cert,
        measure_estimate: measure,
        lhs: lhs_sum / ncf,
        rhs: rhs_sum / ncf,
        slack: mean,
        stderr,
        tie: all_zero,
    };
    let measure_se = (measure * (1.0 - measure).max(0.0) / ncf).max(0.0).sqrt();
    let measure_ok = measure >= target - kappa - SIGMA_RULE * measure_se;
    let verdict = if measure_ok && all_zero {
        CoalitionVerdict::Tie
    } else if measure_ok && mean >= SIGMA_RULE * stderr {
        CoalitionVerdict::Pass
    } else {
        CoalitionVerdict::Inconclusive
    };
    Ok(CoalitionOutcome {
        record: CoalitionRecord {
            coalition,
            verdict,
            slack: Some(witness.slack),
            stderr: Some(witness.stderr),
            witness: Some(witness),
        },
        blocking: None,
    })
}

/// Certify or refute ex-ante `(gamma)`-core membership of the allocation
/// policy induced by value scaling `beta` under the given mechanism.
pub fn certify_ex_ante(
    instance: &Instance,
    kind: MechanismKind,
    beta: &[f64],
    gamma: f64,
    samples: u64,
    seed: u64,
) -> Result<CoreCertificate> {
    if beta.len() != instance.n {
        return Err(Error::Config("beta length must equal n".into()));
    }
    if samples < 1_000 {
        return Err(Error::Config("ex-ante audit requires >= 1000 samples".into()));
    }
    let n = instance.n;
    let bisect = PolicyBatch::draw(instance, kind, beta, samples, seed, "cert-bisect")?;
    let check = PolicyBatch::draw(instance, kind, beta, samples, seed, "cert-check")?;
    let fast = bisect.zero_one;

    let (coalitions, sampled) = coalition_list(n, seed);
    let mut records = Vec::with_capacity(coalitions.len());
    let mut blocking: Option<BlockingRecord> = None;
    let mut undecided = Vec::new();

    for &coalition in &coalitions {
        let coalition_members = members(coalition, n);
        let target: f64 = coalition_members.iter().map(|&i| instance.shares[i]).sum();

        if coalition_members.iter().any(|&i| beta[i] == 0.0) {
            // a member already receives every good it values; the coalition
            // cannot strictly improve that member
            records.push(CoalitionRecord {
                coalition,
                verdict: CoalitionVerdict::Trivial,
                slack: None,
                stderr: None,
                witness: None,
            });
            continue;
        }
        let mut weights = vec![0.0f64; n];
        for &i in &coalition_members {
            weights[i] = 1.0 / beta[i];
        }
        let outcome = if fast {
            audit_coalition_fast(coalition, &bisect, &check, &weights, target, gamma)
        } else {
            audit_coalition_general(coalition, &bisect, &check, &weights, target, gamma)?
        };
        if outcome.record.verdict == CoalitionVerdict::Inconclusive {
            undecided.push(coalition);
        }
        if blocking.is_none() {
            if let Some(b) = outcome.blocking {
                blocking = Some(b);
            }
        }
        records.push(outcome.record);
    }

    let status = if blocking.is_some() {
        CertStatus::Refuted
    } else if undecided.is_empty() {
        CertStatus::Certified
    } else {
        CertStatus::Inconclusive
    };
    Ok(CoreCertificate {
        schema: CERT_SCHEMA.to_string(),
        status,
        gamma,
        delta: None,
        sampled,
        coalitions: records,
        blocking,
        undecided,
    })
}

/// Ex-post audit output: the measured blocking frontier over a trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExPostReport {
    pub schema: String,
    pub gamma: f64,
    pub horizon: u64,
    pub delta_grid: Vec<f64>,
    /// Per grid entry: does some coalition block at `(gamma, delta)`?
    pub blocked_at: Vec<bool>,
    /// `max over coalitions and candidates of min-member margin`, floored
    /// at zero: the allocation is certified at `(gamma, delta)` for every
    /// `delta >= delta_star`.
    pub delta_star: f64,
    pub sampled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocking: Option<BlockingRecord>,
}

impl ExPostReport {
    /// Status at a given additive tolerance.
    pub fn status_at(&self, delta: f64) -> CertStatus {
        if self.delta_star > delta {
            CertStatus::Refuted
        } else {
            CertStatus::Certified
        }
    }
}

/// Search for `(gamma, delta)`-blocking coalitions over the realized rounds
/// of a full trace. Candidate allocations come from the weighted-threshold
/// family: per direction, the policy takes the highest-score rounds the
/// coalition's credit budget affords.
pub fn audit_ex_post(
    result: &SimulationResult,
    instance: &Instance,
    gamma: f64,
    delta_grid: &[f64],
    equilibrium_beta: Option<&[f64]>,
    seed: u64,
) -> Result<ExPostReport> {
    if result.is_thinned() {
        return Err(Error::Trace("ex-post audit needs a full trace (stride 1)".into()));
    }
    if result.records.len() != result.horizon as usize {
        return Err(Error::Trace("trace is missing rounds".into()));
    }
    if result.m != 1 {
        return Err(Error::Size("ex-post audit is limited to single-good traces".into()));
    }
    let n = result.n;
    let t = result.horizon as usize;
    let zero_one = instance
        .distribution
        .components
        .iter()
        .all(|c| matches!(c.cost, CostFunction::ZeroOneSingleGood));
    if !zero_one {
        return Err(Error::Size("ex-post audit is limited to 0-1 single-good costs".into()));
    }

    let (coalitions, sampled) = coalition_list(n, seed);
    let mut best_margin = f64::NEG_INFINITY;
    let mut best: Option<BlockingRecord> = None;

    for &coalition in &coalitions {
        let coalition_members = members(coalition, n);
        let target: f64 = coalition_members.iter().map(|&i| instance.shares[i]).sum();
        let budget_rounds = ((target * t as f64) + 1e-9).floor() as usize;
        if budget_rounds == 0 {
            continue;
        }
        let budget_rounds = budget_rounds.min(t);

        // direction grid: equilibrium weights, the uniform direction, and
        // random simplex directions
        let mut directions: Vec<Vec<f64>> = Vec::new();
        if let Some(beta) = equilibrium_beta {
            if coalition_members.iter().all(|&i| beta[i] > 0.0) {
                let mut w = vec![0.0; n];
                for &i in &coalition_members {
                    w[i] = 1.0 / beta[i];
                }
                directions.push(w);
            }
        }
        let mut uniform = vec![0.0; n];
        for &i in &coalition_members {
            uniform[i] = 1.0;
        }
        directions.push(uniform);
        if coalition_members.len() > 1 {
            let mut rng = stream(seed, "expost-directions", coalition);
            for _ in 0..DIRECTIONS_PER_MEMBER * coalition_members.len() {
                let mut w = vec![0.0; n];
                let mut total = 0.0;
                for &i in &coalition_members {
                    let e = -(1.0 - rng.gen::<f64>()).ln();
                    w[i] = e;
                    total += e;
                }
                for &i in &coalition_members {
                    w[i] /= total;
                }
                directions.push(w);
            }
        }

        for weights in directions {
            // top budget_rounds rounds by weighted coalition score
            let mut order: Vec<usize> = (0..t).collect();
            let scores: Vec<f64> = result
                .records
                .iter()
                .map(|rec| {
                    coalition_members
                        .iter()
                        .map(|&i| weights[i] * rec.values[i])
                        .sum::<f64>()
                })
                .collect();
            order.select_nth_unstable_by(budget_rounds - 1, |&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then_with(|| a.cmp(&b))
            });
            let chosen = &order[..budget_rounds];

            let mut alt = vec![0.0f64; coalition_members.len()];
            for &round in chosen {
                for (s_idx, &i) in coalition_members.iter().enumerate() {
                    alt[s_idx] += result.records[round].values[i];
                }
            }
            let margin = coalition_members
                .iter()
                .enumerate()
                .map(|(s_idx, &i)| alt[s_idx] / t as f64 - (1.0 + gamma) * result.utilities[i])
                .fold(f64::INFINITY, f64::min);
            if margin > best_margin {
                best_margin = margin;
                best = Some(BlockingRecord {
                    coalition,
                    weights: weights.clone(),
                    z: scores[*chosen.last().unwrap()],
                    policy_cost: budget_rounds as f64,
                    budget: target * t as f64,
                    base_utilities: coalition_members.iter().map(|&i| result.utilities[i]).collect(),
                    alt_utilities: alt.iter().map(|a| a / t as f64).collect(),
                    min_margin: margin,
                });
            }
        }
    }

    let delta_star = best_margin.max(0.0);
    if let Some(b) = &best {
        // soundness: re-derive the witness utilities straight from the trace
        let coalition_members = members(b.coalition, n);
        let mut recomputed = vec![0.0f64; coalition_members.len()];
        let mut count = 0usize;
        let mut order: Vec<usize> = (0..t).collect();
        let scores: Vec<f64> = result
            .records
            .iter()
            .map(|rec| coalition_members.iter().map(|&i| b.weights[i] * rec.values[i]).sum::<f64>())
            .collect();
        order.sort_by(|&a, &bb| scores[bb].partial_cmp(&scores[a]).unwrap().then_with(|| a.cmp(&bb)));
        for &round in order.iter().take(b.policy_cost as usize) {
            count += 1;
            for (s_idx, &i) in coalition_members.iter().enumerate() {
                recomputed[s_idx] += result.records[round].values[i];
            }
        }
        assert_eq!(count as f64, b.policy_cost);
        for (s_idx, r) in recomputed.iter().enumerate() {
            assert!(
                (r / t as f64 - b.alt_utilities[s_idx]).abs() < 1e-9,
                "witness re-validation failed"
            );
        }
    }

    let blocked_at: Vec<bool> = delta_grid.iter().map(|&d| delta_star > d).collect();
    Ok(ExPostReport {
        schema: CERT_SCHEMA.to_string(),
        gamma,
        horizon: result.horizon,
        delta_grid: delta_grid.to_vec(),
        blocked_at,
        delta_star,
        sampled,
        blocking: if best_margin > 0.0 { best } else { None },
    })
}

/// A tiny discrete instance for the brute-force oracle: single good,
/// at most 3 agents, at most 6 support atoms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TinyInstance {
    pub shares: Vec<f64>,
    pub atoms: Vec<TinyAtom>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TinyAtom {
    pub prob: f64,
    /// Per-agent values.
    pub values: Vec<f64>,
}

impl TinyInstance {
    pub fn n(&self) -> usize {
        self.shares.len()
    }

    pub fn alpha(&self) -> f64 {
        self.shares.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.n() > 3 {
            return Err(Error::Size("oracle instances are limited to n <= 3".into()));
        }
        if self.atoms.is_empty() || self.atoms.len() > 6 {
            return Err(Error::Size("oracle instances are limited to <= 6 atoms".into()));
        }
        let total: f64 = self.atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("atom probabilities must sum to 1".into()));
        }
        for atom in &self.atoms {
            if atom.values.len() != self.n() {
                return Err(Error::Config("atom value length must equal n".into()));
            }
        }
        Ok(())
    }

    /// Expected utility per agent of an explicit atom policy.
    pub fn utilities(&self, policy: &[u64]) -> Vec<f64> {
        let n = self.n();
        let mut u = vec![0.0; n];
        for (atom, &mask) in self.atoms.iter().zip(policy) {
            for (i, slot) in u.iter_mut().enumerate() {
                if mask & (1 << i) != 0 {
                    *slot += atom.prob * atom.values[i];
                }
            }
        }
        u
    }

    /// The allocation policy induced by running `(kind, beta)` on each atom.
    pub fn induced_policy(&self, kind: MechanismKind, beta: &[f64]) -> Result<Vec<u64>> {
        let n = self.n();
        let mut policy = Vec::with_capacity(self.atoms.len());
        for atom in &self.atoms {
            let bids: Vec<Bid<Real>> = (0..n)
                .map(|i| {
                    if beta[i] == 0.0 {
                        Bid::Top
                    } else {
                        Bid::Finite(atom.values[i] / beta[i])
                    }
                })
                .collect();
            let reports = Reports::new(n, 1, bids)?;
            let outcome = run_mechanism(kind, &reports, &CostFunction::ZeroOneSingleGood)?;
            let mut mask = 0u64;
            for i in 0..n {
                if outcome.allocation.contains(i, 0, 1) {
                    mask |= 1 << i;
                }
            }
            policy.push(mask);
        }
        Ok(policy)
    }

    /// Build a samplable instance whose mixture components are the atoms.
    pub fn to_instance(&self, horizon: u64, eps: f64, seed: u64) -> Result<Instance> {
        let n = self.n();
        let components = self
            .atoms
            .iter()
            .map(|a| crate::model::Component {
                prob: a.prob,
                kind: crate::model::ComponentKind::Atom {
                    values: a.values.iter().map(|&v| vec![v]).collect(),
                },
                cost: CostFunction::ZeroOneSingleGood,
            })
            .collect();
        Instance::new(
            n,
            1,
            horizon,
            self.shares.clone(),
            crate::model::DistributionSpec { components, eps },
            seed,
        )
    }
}

/// Exhaustively decide gamma-approximate ex-ante core membership of an
/// explicit policy on a tiny instance. Candidate blocking policies are all
/// atom subsets within the coalition's budget, plus each subset completed
/// by one fractional boundary atom. Ties favor certification.
pub fn brute_force_core_oracle(tiny: &TinyInstance, policy: &[u64], gamma: f64) -> Result<bool> {
    tiny.validate()?;
    if policy.len() != tiny.atoms.len() {
        return Err(Error::Config("policy length must equal atom count".into()));
    }
    let n = tiny.n();
    let mu: f64 = tiny
        .atoms
        .iter()
        .zip(policy)
        .filter(|(_, &mask)| mask != 0)
        .map(|(a, _)| a.prob)
        .sum();
    if mu > tiny.alpha() + 1e-9 {
        return Err(Error::Config(format!(
            "policy is ex-ante infeasible: measure {mu} exceeds alpha {}",
            tiny.alpha()
        )));
    }
    let base = tiny.utilities(policy);
    let atoms = tiny.atoms.len();

    for coalition in 1u64..(1 << n) {
        let coalition_members = members(coalition, n);
        let budget: f64 = coalition_members.iter().map(|&i| tiny.shares[i]).sum();
        for subset in 0u64..(1 << atoms) {
            let mass: f64 = (0..atoms)
                .filter(|&a| subset & (1 << a) != 0)
                .map(|a| tiny.atoms[a].prob)
                .sum();
            let mut candidates: Vec<(u64, Option<(usize, f64)>)> = Vec::new();
            if mass <= budget + 1e-12 {
                candidates.push((subset, None));
                for extra in 0..atoms {
                    if subset & (1 << extra) != 0 {
                        continue;
                    }
                    let p = tiny.atoms[extra].prob;
                    if mass + p > budget + 1e-12 && p > 0.0 {
                        let fraction = ((budget - mass) / p).clamp(0.0, 1.0);
                        if fraction > 0.0 {
                            candidates.push((subset, Some((extra, fraction))));
                        }
                    }
                }
            }
            for (mask, boundary) in candidates {
                let blocked = coalition_members.iter().all(|&i| {
                    let mut alt = 0.0;
                    for a in 0..atoms {
                        if mask & (1 << a) != 0 {
                            alt += tiny.atoms[a].prob * tiny.atoms[a].values[i];
                        }
                    }
                    if let Some((a, f)) = boundary {
                        alt += f * tiny.atoms[a].prob * tiny.atoms[a].values[i];
                    }
                    alt > (1.0 + gamma) * base[i] + 1e-12
                });
                if blocked {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// The measure-constrained weighted-threshold policy on a tiny instance:
/// atoms greedily by weighted score with one fractional boundary atom.
/// Returns the fractional inclusion of each atom.
pub fn tiny_threshold_policy(tiny: &TinyInstance, weights: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..tiny.atoms.len()).collect();
    let score = |a: usize| -> f64 {
        tiny.atoms[a]
            .values
            .iter()
            .zip(weights)
            .map(|(v, w)| v * w)
            .sum()
    };
    order.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then_with(|| a.cmp(&b)));
    let mut x = vec![0.0; tiny.atoms.len()];
    let mut remaining = budget;
    for a in order {
        if remaining <= 0.0 {
            break;
        }
        let p = tiny.atoms[a].prob;
        if p <= remaining {
            x[a] = 1.0;
            remaining -= p;
        } else {
            x[a] = remaining / p;
            remaining = 0.0;
        }
    }
    x
}

/// Coalition-weighted expected value of a fractional atom policy.
pub fn tiny_policy_weighted_value(tiny: &TinyInstance, x: &[f64], weights: &[f64]) -> f64 {
    tiny.atoms
        .iter()
        .zip(x)
        .map(|(a, &frac)| {
            frac * a.prob
                * a.values
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| v * w)
                    .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::single_agent_uniform;

    #[test]
    fn single_agent_uniform_certifies_at_gamma_zero() {
        // the induced policy {v >= 0.5} is itself the measure-1/2 half-space
        let inst = single_agent_uniform(0.5, 1_000, 17).unwrap();
        let cert = certify_ex_ante(&inst, MechanismKind::Moulin, &[0.5], 0.0, 20_000, 17).unwrap();
        assert_eq!(cert.status, CertStatus::Certified, "{cert:?}");
    }

    #[test]
    fn deliberately_bad_policy_is_refuted_by_oracle() {
        // one agent, two atoms; allocating only the low-value atom is blocked
        // by the agent taking its high atom instead
        let tiny = TinyInstance {
            shares: vec![0.5],
            atoms: vec![
                TinyAtom { prob: 0.5, values: vec![0.9] },
                TinyAtom { prob: 0.5, values: vec![0.1] },
            ],
        };
        let bad_policy = vec![0b0, 0b1];
        assert!(!brute_force_core_oracle(&tiny, &bad_policy, 0.0).unwrap());
        let good_policy = vec![0b1, 0b0];
        assert!(brute_force_core_oracle(&tiny, &good_policy, 0.0).unwrap());
    }

    #[test]
    fn oracle_respects_gamma() {
        let tiny = TinyInstance {
            shares: vec![0.5],
            atoms: vec![
                TinyAtom { prob: 0.5, values: vec![0.6] },
                TinyAtom { prob: 0.5, values: vec![0.5] },
            ],
        };
        // allocating the 0.5-atom: the 0.6-atom blocks at gamma=0 but not at
        // gamma = 0.25 (0.6 <= 1.25 * 0.5 * ... per-expectation)
        let policy = vec![0b0, 0b1];
        assert!(!brute_force_core_oracle(&tiny, &policy, 0.0).unwrap());
        assert!(brute_force_core_oracle(&tiny, &policy, 0.25).unwrap());
    }

    #[test]
    fn threshold_policy_pareto_dominates_equal_measure_subsets() {
        // the greedy weighted-threshold policy attains at least the weighted
        // value of every subset policy of no larger measure
        let tiny = TinyInstance {
            shares: vec![0.3, 0.3],
            atoms: vec![
                TinyAtom { prob: 0.25, values: vec![0.9, 0.1] },
                TinyAtom { prob: 0.25, values: vec![0.2, 0.8] },
                TinyAtom { prob: 0.25, values: vec![0.5, 0.5] },
                TinyAtom { prob: 0.25, values: vec![0.1, 0.1] },
            ],
        };
        let weights = [1.0, 0.7];
        for subset in 0u64..16 {
            let mass: f64 = (0..4).filter(|&a| subset & (1 << a) != 0).map(|a| tiny.atoms[a].prob).sum();
            let x = tiny_threshold_policy(&tiny, &weights, mass);
            let subset_x: Vec<f64> = (0..4).map(|a| if subset & (1 << a) != 0 { 1.0 } else { 0.0 }).collect();
            let hv = tiny_policy_weighted_value(&tiny, &x, &weights);
            let sv = tiny_policy_weighted_value(&tiny, &subset_x, &weights);
            assert!(hv >= sv - 1e-12, "subset {subset:b}: {hv} < {sv}");
        }
    }

    #[test]
    fn expost_all_zero_reports_are_blocked() {
        use crate::reduction::{simulate, SimOptions};
        use crate::strategies::Strategy;
        let inst = single_agent_uniform(0.5, 2_000, 23).unwrap();
        let zero = Strategy::TimeIndependentMap { steps: vec![] };
        let run = simulate(&inst, MechanismKind::Moulin, &[zero], &SimOptions::default()).unwrap();
        assert_eq!(run.utilities[0], 0.0);
        let report = audit_ex_post(&run, &inst, 5.0, &[0.01], None, 23).unwrap();
        // the agent's own top rounds yield mean value near E[V | top half]/2
        assert!(report.delta_star > 0.3, "{report:?}");
        assert!(report.blocked_at[0]);
        assert_eq!(report.blocking.as_ref().unwrap().coalition, 0b1);
    }

    #[test]
    fn expost_equilibrium_trace_certifies_with_small_delta() {
        use crate::reduction::{simulate, SimOptions};
        use crate::strategies::Strategy;
        let inst = single_agent_uniform(0.5, 20_000, 29).unwrap();
        let run = simulate(
            &inst,
            MechanismKind::Moulin,
            &[Strategy::value_scaling(0.5)],
            &SimOptions::default(),
        )
        .unwrap();
        let report = audit_ex_post(&run, &inst, 0.0, &[0.05], None, 29).unwrap();
        assert!(report.delta_star < 0.05, "{}", report.delta_star);
        assert_eq!(report.status_at(0.05), CertStatus::Certified);
    }

    #[test]
    fn lower_bound_instance_refuted_just_below_its_ratio() {
        use crate::instances::{make_lower_bound, LowerBoundSpec, LowerBoundVariant};
        use crate::scalar::harmonic;
        let instance = make_lower_bound(&LowerBoundSpec {
            n: 4,
            eps: 0.01,
            alpha_prime: None,
            variant: LowerBoundVariant::MainText,
            horizon: 1_000,
            seed: 11,
        })
        .unwrap();
        // truthful-rate scaling is the analytic equilibrium of this family
        let beta = vec![0.995; 4];
        let gamma = harmonic::<f64>(4) - 1.0 - 0.1;
        let cert = certify_ex_ante(&instance, MechanismKind::Moulin, &beta, gamma, 400_000, 11).unwrap();
        assert_eq!(cert.status, CertStatus::Refuted, "{:?}", cert.undecided);
        let blocking = cert.blocking.unwrap();
        assert_eq!(blocking.coalition, 0b1111);
        // and certified comfortably above the H_n - 1 bound
        let cert = certify_ex_ante(
            &instance,
            MechanismKind::Moulin,
            &beta,
            harmonic::<f64>(4) - 1.0 + 0.1,
            100_000,
            11,
        )
        .unwrap();
        assert_eq!(cert.status, CertStatus::Certified);
    }

    #[test]
    fn threshold_policy_cost_is_monotone_in_z() {
        use crate::model::{Component, ComponentKind, DistributionSpec};
        // estimated C(A^{beta,S,z}) must be non-increasing in z (the
        // bisection precondition), probed on a mixed-cost instance
        let inst = Instance::new(
            2,
            2,
            100,
            vec![0.3, 0.3],
            DistributionSpec {
                components: vec![Component {
                    prob: 1.0,
                    kind: ComponentKind::Box {
                        intervals: vec![vec![(0.0, 1.0), (0.0, 1.0)], vec![(0.0, 1.0), (0.0, 1.0)]],
                    },
                    cost: CostFunction::ItemCoverage {
                        weights: vec![0.5, 0.4],
                        cap: 0.8,
                    },
                }],
                eps: 1e-4,
            },
            5,
        )
        .unwrap();
        let mut sampler = inst.sampler().unwrap();
        let mut rng = stream(5, "z-monotone", 0);
        let profiles: Vec<_> = (0..500).map(|_| sampler.draw(&mut rng)).collect();
        let weights = [1.0, 0.8];
        let mut prev = f64::INFINITY;
        for step in 0..12 {
            let z = step as f64 * 0.4;
            let mean_cost: f64 = profiles
                .iter()
                .map(|p| {
                    let a = threshold_argmax(p, &weights, 0b11, z, 2, 2);
                    p.cost.eval(a, 2, 2)
                })
                .sum::<f64>()
                / profiles.len() as f64;
            assert!(mean_cost <= prev + 1e-12, "cost rose at z={z}");
            prev = mean_cost;
        }
    }

    #[test]
    fn large_n_uses_sampled_coalitions() {
        use crate::model::{Component, ComponentKind, DistributionSpec};
        let n = 13;
        let inst = Instance::new(
            n,
            1,
            100,
            vec![0.05; n],
            DistributionSpec {
                components: vec![Component {
                    prob: 1.0,
                    kind: ComponentKind::Box {
                        intervals: vec![vec![(0.0, 1.0)]; n],
                    },
                    cost: CostFunction::ZeroOneSingleGood,
                }],
                eps: 1e-4,
            },
            3,
        )
        .unwrap();
        let cert = certify_ex_ante(&inst, MechanismKind::Moulin, &vec![1.0; n], 2.0, 2_000, 3).unwrap();
        assert!(cert.sampled);
        assert_eq!(cert.coalitions.len(), n + 1 + SAMPLED_COALITIONS);
    }

    #[test]
    fn expost_refuses_thinned_traces() {
        use crate::reduction::{simulate, SimOptions};
        use crate::strategies::Strategy;
        let inst = single_agent_uniform(0.5, 1_000, 31).unwrap();
        let opts = SimOptions {
            stride: 10,
            ..SimOptions::default()
        };
        let run = simulate(&inst, MechanismKind::Moulin, &[Strategy::value_scaling(0.5)], &opts).unwrap();
        assert!(matches!(
            audit_ex_post(&run, &inst, 0.0, &[0.05], None, 31),
            Err(Error::Trace(_))
        ));
    }
}
