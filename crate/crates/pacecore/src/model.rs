//! Domain types for instances: agents, shares, horizons, valuation
//! distributions, and submodular cost families, with samplers and validators.
//!
//! An [`Instance`] is the unit of configuration: `n` agents with exogenous
//! shares, `m` goods per round, a horizon, and a mixture distribution over
//! per-round `(values, cost)` draws. Instances serialize to the
//! `pacecore-instance-v1` JSON schema.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::{Error, Real, Result};

/// Schema string for instance files.
pub const INSTANCE_SCHEMA: &str = "pacecore-instance-v1";

/// Tolerance used when checking that probabilities and shares sum correctly.
pub const SUM_TOL: f64 = 1e-12;

/// Largest `n*m` for which an explicit cost table is accepted: exhaustive
/// validation enumerates every subset.
pub const EXPLICIT_TABLE_MAX_CELLS: usize = 16;

/// An allocation of goods to agents, stored as a bitmask over the `n*m`
/// cells of the agent-by-good grid. Cell `(i, k)` maps to bit `i*m + k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Allocation(pub u64);

impl Allocation {
    pub const EMPTY: Allocation = Allocation(0);

    pub fn full(n: usize, m: usize) -> Self {
        let cells = n * m;
        debug_assert!(cells <= 64);
        if cells == 64 {
            Allocation(u64::MAX)
        } else {
            Allocation((1u64 << cells) - 1)
        }
    }

    #[inline]
    pub fn bit(i: usize, k: usize, m: usize) -> u64 {
        1u64 << (i * m + k)
    }

    #[inline]
    pub fn contains(self, i: usize, k: usize, m: usize) -> bool {
        self.0 & Self::bit(i, k, m) != 0
    }

    #[inline]
    pub fn insert(&mut self, i: usize, k: usize, m: usize) {
        self.0 |= Self::bit(i, k, m);
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    /// Bits of agent `i`'s row.
    #[inline]
    pub fn row(self, i: usize, m: usize) -> u64 {
        let row_mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        (self.0 >> (i * m)) & row_mask
    }

    pub fn union(self, other: Allocation) -> Allocation {
        Allocation(self.0 | other.0)
    }

    pub fn intersection(self, other: Allocation) -> Allocation {
        Allocation(self.0 & other.0)
    }
}

/// Monotone, submodular, normalized set function on the allocation grid,
/// with range in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub enum CostFunction<S> {
    /// Indicator of a non-empty allocation; the single-good 0-1 cost.
    ZeroOneSingleGood,
    /// `min(cap, sum of weights of covered items)`; an item is covered when
    /// any agent is granted it.
    ItemCoverage { weights: Vec<S>, cap: S },
    /// `g(|A|)` for a concave increasing step table `g(1), g(2), ...`
    /// (held constant past the end of the table).
    ConcaveCardinality { table: Vec<S> },
    /// Explicit table over all `2^(n*m)` cell masks; tiny instances only.
    ExplicitTable { values: Vec<S> },
}

/// Which cost axiom a validation violation falls under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostAxiom {
    Normalized,
    Monotone,
    Submodular,
    Range,
}

/// First violated `(A, B)` pair found by validation, if any.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostViolation {
    pub axiom: CostAxiom,
    pub a: u64,
    pub b: u64,
}

/// Outcome of [`CostFunction::validate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violation: Option<CostViolation>,
}

impl ValidationReport {
    pub fn pass() -> Self {
        ValidationReport { violation: None }
    }

    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

impl<S: Scalar> CostFunction<S> {
    /// Evaluate the cost of an allocation. Deterministic; `c(empty) = 0`.
    pub fn eval(&self, a: Allocation, n: usize, m: usize) -> S {
        if a.is_empty() {
            return S::zero();
        }
        match self {
            CostFunction::ZeroOneSingleGood => S::one(),
            CostFunction::ItemCoverage { weights, cap } => {
                let mut total = S::zero();
                for (k, w) in weights.iter().enumerate().take(m) {
                    let covered = (0..n).any(|i| a.contains(i, k, m));
                    if covered {
                        total = total + *w;
                    }
                }
                if total > *cap {
                    *cap
                } else {
                    total
                }
            }
            CostFunction::ConcaveCardinality { table } => {
                let idx = (a.len() as usize).min(table.len());
                table[idx - 1]
            }
            CostFunction::ExplicitTable { values } => values[a.0 as usize],
        }
    }

    /// Validate the three cost axioms plus the `[0, 1]` range for grid
    /// dimensions `(n, m)`. Exhaustive for explicit tables (via the
    /// pairwise diminishing-returns characterization); parameter checks for
    /// the structured families, which satisfy the axioms by construction.
    pub fn validate(&self, n: usize, m: usize) -> Result<ValidationReport> {
        match self {
            CostFunction::ZeroOneSingleGood => {
                if m != 1 {
                    return Err(Error::Config(format!(
                        "zero_one_single_good requires m=1, got m={m}"
                    )));
                }
                Ok(ValidationReport::pass())
            }
            CostFunction::ItemCoverage { weights, cap } => {
                if weights.len() != m {
                    return Err(Error::Config(format!(
                        "item_coverage weight count {} != m={m}",
                        weights.len()
                    )));
                }
                if !(*cap > S::zero() && *cap <= S::one()) {
                    return Err(Error::Config("item_coverage cap must lie in (0,1]".into()));
                }
                if weights.iter().any(|w| !(*w > S::zero())) {
                    return Err(Error::Config("item_coverage weights must be positive".into()));
                }
                Ok(ValidationReport::pass())
            }
            CostFunction::ConcaveCardinality { table } => {
                if table.is_empty() {
                    return Err(Error::Config("concave_cardinality table is empty".into()));
                }
                if !(table[0] > S::zero()) {
                    return Err(Error::Config(
                        "concave_cardinality g(1) must be positive (normalization)".into(),
                    ));
                }
                if table.iter().any(|g| *g > S::one() || *g < S::zero()) {
                    return Err(Error::Config("concave_cardinality values must lie in [0,1]".into()));
                }
                let mut prev = S::zero();
                let mut prev_inc = S::infinity();
                for &g in table {
                    let inc = g - prev;
                    if inc < S::zero() {
                        return Err(Error::Config("concave_cardinality table must be non-decreasing".into()));
                    }
                    if inc > prev_inc {
                        return Err(Error::Config("concave_cardinality increments must be non-increasing".into()));
                    }
                    prev_inc = inc;
                    prev = g;
                }
                Ok(ValidationReport::pass())
            }
            CostFunction::ExplicitTable { values } => {
                let cells = n * m;
                if cells > EXPLICIT_TABLE_MAX_CELLS {
                    return Err(Error::Size(format!(
                        "explicit_table limited to n*m <= {EXPLICIT_TABLE_MAX_CELLS}, got {cells}"
                    )));
                }
                if values.len() != 1 << cells {
                    return Err(Error::Config(format!(
                        "explicit_table has {} entries, expected 2^{cells}",
                        values.len()
                    )));
                }
                Ok(validate_table(values, cells))
            }
        }
    }
}

fn validate_table<S: Scalar>(values: &[S], cells: usize) -> ValidationReport {
    let tol = S::from_config(1e-12);
    let size = 1u64 << cells;
    if values[0] != S::zero() {
        return fail(CostAxiom::Normalized, 0, 0);
    }
    for mask in 0..size {
        let c = values[mask as usize];
        if c < S::zero() || c > S::one() {
            return fail(CostAxiom::Range, mask, mask);
        }
        if mask != 0 && !(c > S::zero()) {
            return fail(CostAxiom::Normalized, mask, 0);
        }
    }
    for mask in 0..size {
        let c = values[mask as usize];
        for x in 0..cells {
            let bx = 1u64 << x;
            if mask & bx != 0 {
                continue;
            }
            if values[(mask | bx) as usize] + tol < c {
                return fail(CostAxiom::Monotone, mask, mask | bx);
            }
        }
    }
    for mask in 0..size {
        let c = values[mask as usize];
        for x in 0..cells {
            let bx = 1u64 << x;
            if mask & bx != 0 {
                continue;
            }
            for y in (x + 1)..cells {
                let by = 1u64 << y;
                if mask & by != 0 {
                    continue;
                }
                // c(A+x+y) + c(A) <= c(A+x) + c(A+y) for all A, x, y
                // is equivalent to full pairwise submodularity.
                let lhs = values[(mask | bx | by) as usize] + c;
                let rhs = values[(mask | bx) as usize] + values[(mask | by) as usize];
                if lhs > rhs + tol {
                    return fail(CostAxiom::Submodular, mask | bx, mask | by);
                }
            }
        }
    }
    ValidationReport::pass()
}

fn fail(axiom: CostAxiom, a: u64, b: u64) -> ValidationReport {
    ValidationReport {
        violation: Some(CostViolation { axiom, a, b }),
    }
}

/// Evaluate a cost function on an allocation (free-function form).
pub fn eval_cost<S: Scalar>(c: &CostFunction<S>, a: Allocation, n: usize, m: usize) -> S {
    c.eval(a, n, m)
}

/// Validate a cost function for grid dimensions `(n, m)`.
pub fn validate_cost<S: Scalar>(c: &CostFunction<S>, n: usize, m: usize) -> Result<ValidationReport> {
    c.validate(n, m)
}

/// One mixture component of a value distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Component {
    pub prob: f64,
    #[serde(flatten)]
    pub kind: ComponentKind,
    pub cost: CostFunction<Real>,
}

/// Shape of a mixture component.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    /// A fixed value matrix in `[0,1]^(n x m)`.
    Atom { values: Vec<Vec<f64>> },
    /// Independent uniform draws from per-entry intervals within `[0,1]`.
    Box { intervals: Vec<Vec<(f64, f64)>> },
    /// A base vector over agents, assigned through a uniformly random agent
    /// permutation each round. Single-good components only.
    PermutedAtom { base: Vec<f64> },
}

/// Mixture distribution over per-round `(values, cost)` draws, smoothed by
/// additive `Uniform[0, eps]` perturbation clamped to `[0, 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub components: Vec<Component>,
    pub eps: f64,
}

impl DistributionSpec {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("distribution has no components".into()));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("perturbation eps must be finite and >= 0".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Config(format!(
                "component probabilities sum to {total}, expected 1 within {SUM_TOL:e}"
            )));
        }
        for (idx, comp) in self.components.iter().enumerate() {
            if !(comp.prob >= 0.0) {
                return Err(Error::Config(format!("component {idx} has negative probability")));
            }
            match &comp.kind {
                ComponentKind::Atom { values } => {
                    check_matrix(values, n, m, idx)?;
                }
                ComponentKind::Box { intervals } => {
                    if intervals.len() != n || intervals.iter().any(|r| r.len() != m) {
                        return Err(Error::Config(format!("component {idx}: interval matrix is not {n}x{m}")));
                    }
                    for row in intervals {
                        for &(lo, hi) in row {
                            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                                return Err(Error::Config(format!(
                                    "component {idx}: interval [{lo},{hi}] not within [0,1]"
                                )));
                            }
                        }
                    }
                }
                ComponentKind::PermutedAtom { base } => {
                    if m != 1 {
                        return Err(Error::Config(format!(
                            "component {idx}: permuted_atom requires m=1, got m={m}"
                        )));
                    }
                    if base.len() != n {
                        return Err(Error::Config(format!(
                            "component {idx}: permuted_atom base length {} != n={n}",
                            base.len()
                        )));
                    }
                    if base.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::Config(format!("component {idx}: base values outside [0,1]")));
                    }
                }
            }
            let report = comp.cost.validate(n, m)?;
            if let Some(v) = report.violation {
                return Err(Error::Config(format!(
                    "component {idx}: cost violates {:?} axiom at (A={:#x}, B={:#x})",
                    v.axiom, v.a, v.b
                )));
            }
        }
        Ok(())
    }
}

fn check_matrix(values: &[Vec<f64>], n: usize, m: usize, idx: usize) -> Result<()> {
    if values.len() != n || values.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("component {idx}: value matrix is not {n}x{m}")));
    }
    for row in values {
        for &v in row {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("component {idx}: value {v} outside [0,1]")));
            }
        }
    }
    Ok(())
}

/// One round's realized valuation matrix plus the round's cost function.
#[derive(Clone, Debug)]
pub struct ValueProfile {
    /// Row-major `n x m` values in `[0, 1]`.
    pub values: Vec<Real>,
    pub m: usize,
    pub cost: Arc<CostFunction<Real>>,
}

impl ValueProfile {
    #[inline]
    pub fn n(&self) -> usize {
        self.values.len() / self.m
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> Real {
        self.values[i * self.m + k]
    }
}

/// Prepared sampler for a validated [`DistributionSpec`].
pub struct Sampler {
    n: usize,
    m: usize,
    eps: f64,
    cumulative: Vec<f64>,
    kinds: Vec<ComponentKind>,
    costs: Vec<Arc<CostFunction<Real>>>,
    perm: Vec<usize>,
}

impl Sampler {
    pub fn new(dist: &DistributionSpec, n: usize, m: usize) -> Result<Self> {
        dist.validate(n, m)?;
        let mut cumulative = Vec::with_capacity(dist.components.len());
        let mut acc = 0.0;
        for c in &dist.components {
            acc += c.prob;
            cumulative.push(acc);
        }
        Ok(Sampler {
            n,
            m,
            eps: dist.eps,
            cumulative,
            kinds: dist.components.iter().map(|c| c.kind.clone()).collect(),
            costs: dist.components.iter().map(|c| Arc::new(c.cost.clone())).collect(),
            perm: (0..n).collect(),
        })
    }

    /// Draw one i.i.d. `(values, cost)` round.
    pub fn draw(&mut self, rng: &mut Stream) -> ValueProfile {
        let u: f64 = rng.gen();
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let mut values = vec![0.0; self.n * self.m];
        match &self.kinds[idx] {
            ComponentKind::Atom { values: atom } => {
                for i in 0..self.n {
                    for k in 0..self.m {
                        values[i * self.m + k] = atom[i][k];
                    }
                }
            }
            ComponentKind::Box { intervals } => {
                for i in 0..self.n {
                    for k in 0..self.m {
                        let (lo, hi) = intervals[i][k];
                        values[i * self.m + k] = lo + rng.gen::<f64>() * (hi - lo);
                    }
                }
            }
            ComponentKind::PermutedAtom { base } => {
                self.perm.shuffle(rng);
                for i in 0..self.n {
                    values[i] = base[self.perm[i]];
                }
            }
        }
        if self.eps > 0.0 {
            for v in &mut values {
                *v = (*v + rng.gen::<f64>() * self.eps).min(1.0);
            }
        }
        ValueProfile {
            values,
            m: self.m,
            cost: Arc::clone(&self.costs[idx]),
        }
    }
}

/// Draw one round from a distribution spec (convenience wrapper; repeated
/// callers should hold a [`Sampler`]).
pub fn sample_round(dist: &DistributionSpec, n: usize, m: usize, rng: &mut Stream) -> Result<ValueProfile> {
    Ok(Sampler::new(dist, n, m)?.draw(rng))
}

/// Declarative per-agent bidding policy carried inside an instance file:
/// `{agent, kind, beta?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategySpec {
    pub agent: usize,
    #[serde(flatten)]
    pub kind: StrategySpecKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpecKind {
    ValueScaling { beta: f64 },
    Truthful,
}

/// A full experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instance {
    pub schema: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub shares: Vec<f64>,
    pub alpha_check: f64,
    pub distribution: DistributionSpec,
    /// Optional default bidding policies, one per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<StrategySpec>>,
    pub seed: u64,
}

impl Instance {
    /// Construct and validate.
    pub fn new(
        n: usize,
        m: usize,
        horizon: u64,
        shares: Vec<f64>,
        distribution: DistributionSpec,
        seed: u64,
    ) -> Result<Self> {
        let alpha_check = shares.iter().sum();
        let inst = Instance {
            schema: INSTANCE_SCHEMA.to_string(),
            n,
            m,
            horizon,
            shares,
            alpha_check,
            distribution,
            strategies: None,
            seed,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Total share `alpha = sum_i alpha_i`.
    pub fn alpha(&self) -> f64 {
        self.alpha_check
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::Config(format!(
                "unknown instance schema {:?}, expected {INSTANCE_SCHEMA:?}",
                self.schema
            )));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be >= 1".into()));
        }
        if self.n * self.m > 64 {
            return Err(Error::Size("n*m must be <= 64 (allocation bitmask width)".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon T must be >= 1".into()));
        }
        if self.shares.len() != self.n {
            return Err(Error::Config(format!(
                "{} shares for n={} agents",
                self.shares.len(),
                self.n
            )));
        }
        if self.shares.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("every share must lie in (0,1)".into()));
        }
        let total: f64 = self.shares.iter().sum();
        if (total - self.alpha_check).abs() > SUM_TOL {
            return Err(Error::Config(format!(
                "shares sum to {total} but alpha_check is {}",
                self.alpha_check
            )));
        }
        if total > 1.0 + SUM_TOL {
            return Err(Error::Config(format!("total share {total} exceeds 1")));
        }
        if let Some(specs) = &self.strategies {
            let mut seen = vec![false; self.n];
            for spec in specs {
                if spec.agent >= self.n {
                    return Err(Error::Config(format!("strategy spec targets agent {} >= n", spec.agent)));
                }
                if std::mem::replace(&mut seen[spec.agent], true) {
                    return Err(Error::Config(format!("duplicate strategy spec for agent {}", spec.agent)));
                }
                if let StrategySpecKind::ValueScaling { beta } = spec.kind {
                    if !(beta.is_finite() && beta >= 0.0) {
                        return Err(Error::Config(format!("strategy beta {beta} must be finite and >= 0")));
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Config("strategy specs must cover every agent".into()));
            }
        }
        self.distribution.validate(self.n, self.m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(&self.distribution, self.n, self.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn zero_one() -> CostFunction<Real> {
        CostFunction::ZeroOneSingleGood
    }

    fn atom_dist(values: Vec<Vec<f64>>, eps: f64) -> DistributionSpec {
        DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::Atom { values },
                cost: zero_one(),
            }],
            eps,
        }
    }

    #[test]
    fn degenerate_atom_samples_constant() {
        let dist = atom_dist(vec![vec![0.3]], 0.0);
        let mut rng = stream(1, "sample", 0);
        let mut sampler = Sampler::new(&dist, 1, 1).unwrap();
        for _ in 0..100 {
            let vp = sampler.draw(&mut rng);
            assert_eq!(vp.values, vec![0.3]);
        }
    }

    #[test]
    fn permuted_atom_is_symmetric() {
        let dist = DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::PermutedAtom { base: vec![1.0, 0.5] },
                cost: zero_one(),
            }],
            eps: 0.0,
        };
        let mut sampler = Sampler::new(&dist, 2, 1).unwrap();
        let mut rng = stream(2, "sample", 0);
        let trials = 100_000u64;
        let mut first = 0u64;
        for _ in 0..trials {
            let vp = sampler.draw(&mut rng);
            let sorted = {
                let mut s = vp.values.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                s
            };
            assert_eq!(sorted, vec![0.5, 1.0]);
            if vp.values == vec![1.0, 0.5] {
                first += 1;
            }
        }
        // exact permutation symmetry: frequency 0.5 within 3 sigma
        let p = first as f64 / trials as f64;
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * sigma, "p={p}");
    }

    #[test]
    fn unit_box_mean_is_half() {
        let dist = DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::Box {
                    intervals: vec![vec![(0.0, 1.0)]],
                },
                cost: zero_one(),
            }],
            eps: 0.0,
        };
        let mut sampler = Sampler::new(&dist, 1, 1).unwrap();
        let mut rng = stream(3, "sample", 0);
        let trials = 100_000u64;
        let mut sum = 0.0;
        for _ in 0..trials {
            sum += sampler.draw(&mut rng).values[0];
        }
        let mean = sum / trials as f64;
        let sigma = (1.0 / 12.0f64 / trials as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * sigma, "mean={mean}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let dist = DistributionSpec {
            components: vec![Component {
                prob: 1.0,
                kind: ComponentKind::Box {
                    intervals: vec![vec![(0.0, 1.0)], vec![(0.2, 0.9)]],
                },
                cost: zero_one(),
            }],
            eps: 1e-4,
        };
        let draw_seq = |seed| {
            let mut s = Sampler::new(&dist, 2, 1).unwrap();
            let mut rng = stream(seed, "sample", 0);
            (0..50).map(|_| s.draw(&mut rng).values).collect::<Vec<_>>()
        };
        assert_eq!(draw_seq(9), draw_seq(9));
        assert_ne!(draw_seq(9), draw_seq(10));
    }

    #[test]
    fn perturbed_atoms_do_not_collide() {
        let dist = atom_dist(vec![vec![0.4]], 1e-4);
        let mut sampler = Sampler::new(&dist, 1, 1).unwrap();
        let mut rng = stream(4, "sample", 0);
        let mut seen = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let v = sampler.draw(&mut rng).values[0];
            assert!((0.4..=0.4 + 1e-4).contains(&v));
            seen.push(v);
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let collisions = seen.windows(2).filter(|w| w[0] == w[1]).count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        let mut dist = atom_dist(vec![vec![0.3]], 0.0);
        dist.components[0].prob = 0.7;
        assert!(matches!(Sampler::new(&dist, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_one_cost_axioms() {
        let c = zero_one();
        assert_eq!(c.eval(Allocation::EMPTY, 3, 1), 0.0);
        assert_eq!(c.eval(Allocation(0b1), 3, 1), 1.0);
        assert_eq!(c.eval(Allocation(0b101), 3, 1), 1.0);
        assert!(c.validate(5, 1).unwrap().passed());
        assert!(c.validate(2, 2).is_err());
    }

    #[test]
    fn item_coverage_matches_enumeration_oracle() {
        let c: CostFunction<Real> = CostFunction::ItemCoverage {
            weights: vec![0.6, 0.6],
            cap: 1.0,
        };
        assert!(c.validate(2, 2).unwrap().passed());
        // direct oracle: min(cap, covered weight) over every mask
        for mask in 0..16u64 {
            let a = Allocation(mask);
            let mut covered = 0.0f64;
            for k in 0..2 {
                if (0..2).any(|i| a.contains(i, k, 2)) {
                    covered += 0.6;
                }
            }
            let expect = covered.min(1.0);
            assert!((c.eval(a, 2, 2) - expect).abs() < 1e-15);
        }
        assert_eq!(c.eval(Allocation::full(2, 2), 2, 2), 1.0);

        let c2: CostFunction<Real> = CostFunction::ItemCoverage {
            weights: vec![0.4, 0.3],
            cap: 1.0,
        };
        // allocation covering item 2 only
        let a = Allocation(Allocation::bit(0, 1, 2));
        assert!((c2.eval(a, 2, 2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn explicit_table_normalization_violation() {
        // c({cell 0}) = 0 violates "c(A)=0 iff A empty"
        let c: CostFunction<Real> = CostFunction::ExplicitTable {
            values: vec![0.0, 0.0, 0.5, 0.6],
        };
        let report = c.validate(2, 1).unwrap();
        let v = report.violation.expect("normalization violation");
        assert_eq!(v.axiom, CostAxiom::Normalized);
        assert_eq!(v.a, 1);
    }

    #[test]
    fn explicit_table_submodularity_violation() {
        // strictly supermodular: c({x,y}) > c({x}) + c({y})
        let c: CostFunction<Real> = CostFunction::ExplicitTable {
            values: vec![0.0, 0.2, 0.2, 0.9],
        };
        let report = c.validate(2, 1).unwrap();
        let v = report.violation.expect("submodularity violation");
        assert_eq!(v.axiom, CostAxiom::Submodular);
    }

    #[test]
    fn explicit_table_size_mismatch_is_config_error() {
        let c: CostFunction<Real> = CostFunction::ExplicitTable {
            values: vec![0.0, 0.5],
        };
        assert!(c.validate(2, 1).is_err());
    }

    #[test]
    fn sampled_costs_satisfy_axioms_on_random_pairs() {
        let cov: CostFunction<Real> = CostFunction::ItemCoverage {
            weights: vec![0.5, 0.25, 0.4],
            cap: 0.9,
        };
        let card: CostFunction<Real> = CostFunction::ConcaveCardinality {
            table: vec![0.5, 0.8, 0.95, 1.0, 1.0, 1.0],
        };
        let n = 2;
        let m = 3;
        let mut rng = stream(11, "cost-pairs", 0);
        for c in [&cov, &card] {
            assert!(c.validate(n, m).unwrap().passed());
            for _ in 0..200 {
                let a = Allocation(rng.gen::<u64>() & 0x3f);
                let b = Allocation(rng.gen::<u64>() & 0x3f);
                let ca = c.eval(a, n, m);
                let cb = c.eval(b, n, m);
                let cu = c.eval(a.union(b), n, m);
                let ci = c.eval(a.intersection(b), n, m);
                assert!(cu + ci <= ca + cb + 1e-12, "submodular");
                assert!(ca <= cu + 1e-12, "monotone");
                assert!((0.0..=1.0).contains(&ca), "range");
                if a.is_empty() {
                    assert_eq!(ca, 0.0, "normalized");
                } else {
                    assert!(ca > 0.0, "normalized");
                }
            }
        }
    }

    #[test]
    fn instance_roundtrips_through_json() {
        let inst = Instance::new(
            2,
            1,
            1000,
            vec![0.25, 0.25],
            DistributionSpec {
                components: vec![
                    Component {
                        prob: 0.5,
                        kind: ComponentKind::Atom {
                            values: vec![vec![0.3], vec![0.6]],
                        },
                        cost: zero_one(),
                    },
                    Component {
                        prob: 0.5,
                        kind: ComponentKind::PermutedAtom { base: vec![0.9, 0.4] },
                        cost: zero_one(),
                    },
                ],
                eps: 1e-4,
            },
            7,
        )
        .unwrap();
        let text = inst.to_json().unwrap();
        assert!(text.contains("pacecore-instance-v1"));
        assert!(text.contains("\"T\": 1000"));
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back.n, 2);
        assert_eq!(back.horizon, 1000);
        assert_eq!(back.shares, vec![0.25, 0.25]);
    }

    #[test]
    fn instance_share_sum_must_match_alpha_check() {
        let mut inst = Instance::new(
            1,
            1,
            10,
            vec![0.5],
            atom_dist(vec![vec![0.3]], 0.0),
            1,
        )
        .unwrap();
        inst.alpha_check = 0.6;
        assert!(inst.validate().is_err());
    }
}
