//! One-shot monetary mechanisms behind a common interface, plus
//! dead-weight-loss and social-cost analyzers and regularity property probes.
//!
//! Three mechanisms are provided: the proportional mechanism and the Moulin
//! mechanism for the single-good 0-1 cost setting, and the potential (VCG)
//! mechanism for arbitrary validated submodular costs. All are pure
//! functions of `(reports, cost)`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Allocation, CostFunction};
use crate::rng::{stream, Stream};
use crate::scalar::{harmonic, Scalar};
use crate::{Error, Result};

/// Exhaustive-enumeration ceiling for the potential mechanism and the
/// general dead-weight-loss maximization.
pub const ENUMERATION_MAX_CELLS: usize = 20;

/// A reported value: either a finite non-negative number or the saturated
/// sentinel that exceeds every threshold. The sentinel never enters
/// floating-point arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bid<S> {
    Finite(S),
    Top,
}

impl<S: Scalar> Bid<S> {
    #[inline]
    pub fn is_top(self) -> bool {
        matches!(self, Bid::Top)
    }

    /// Finite part; zero for the sentinel (used only where the sentinel's
    /// contribution provably cancels).
    #[inline]
    pub fn finite_or_zero(self) -> S {
        match self {
            Bid::Finite(v) => v,
            Bid::Top => S::zero(),
        }
    }

    /// Whether the bid meets a finite threshold.
    #[inline]
    pub fn at_least(self, threshold: S) -> bool {
        match self {
            Bid::Finite(v) => v >= threshold,
            Bid::Top => true,
        }
    }
}

impl<S: Scalar> Serialize for Bid<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        match self {
            Bid::Finite(v) => s.serialize_f64(v.to_report()),
            Bid::Top => s.serialize_str("top"),
        }
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Bid<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V<S>(std::marker::PhantomData<S>);
        impl<'de, S: Scalar> serde::de::Visitor<'de> for V<S> {
            type Value = Bid<S>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a non-negative number or the string \"top\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Bid<S>, E> {
                Ok(Bid::Finite(S::from_config(v)))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Bid<S>, E> {
                Ok(Bid::Finite(S::from_config(v as f64)))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Bid<S>, E> {
                Ok(Bid::Finite(S::from_config(v as f64)))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Bid<S>, E> {
                if v == "top" {
                    Ok(Bid::Top)
                } else {
                    Err(E::custom(format!("unknown bid sentinel {v:?}")))
                }
            }
        }
        d.deserialize_any(V(std::marker::PhantomData))
    }
}

/// A full `n x m` report matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Reports<S> {
    pub n: usize,
    pub m: usize,
    bids: Vec<Bid<S>>,
}

impl<S: Scalar> Reports<S> {
    pub fn new(n: usize, m: usize, bids: Vec<Bid<S>>) -> Result<Self> {
        if bids.len() != n * m {
            return Err(Error::Config(format!(
                "report matrix has {} entries, expected {n}x{m}",
                bids.len()
            )));
        }
        for (idx, b) in bids.iter().enumerate() {
            if let Bid::Finite(v) = b {
                if !(v.is_finite() && *v >= S::zero()) {
                    return Err(Error::Config(format!(
                        "report entry {idx} must be finite and non-negative, got {v}"
                    )));
                }
            }
        }
        Ok(Reports { n, m, bids })
    }

    /// All-finite reports from a row-major value matrix.
    pub fn from_values(n: usize, m: usize, values: &[S]) -> Result<Self> {
        Self::new(n, m, values.iter().map(|&v| Bid::Finite(v)).collect())
    }

    /// Single-good reports from per-agent values.
    pub fn single_good(values: &[S]) -> Result<Self> {
        Self::from_values(values.len(), 1, values)
    }

    #[inline]
    pub fn bid(&self, i: usize, k: usize) -> Bid<S> {
        self.bids[i * self.m + k]
    }

    pub fn bids(&self) -> &[Bid<S>] {
        &self.bids
    }

    pub fn set(&mut self, i: usize, k: usize, bid: Bid<S>) {
        self.bids[i * self.m + k] = bid;
    }

    /// Zero out an agent's entire row (budget-depletion rule).
    pub fn zero_agent(&mut self, i: usize) {
        for k in 0..self.m {
            self.bids[i * self.m + k] = Bid::Finite(S::zero());
        }
    }

    pub fn any_top(&self) -> bool {
        self.bids.iter().any(|b| b.is_top())
    }

    fn all_finite(&self) -> Result<()> {
        if self.any_top() {
            return Err(Error::Config("operation requires finite reports (no top sentinel)".into()));
        }
        Ok(())
    }

    /// Finite value carried by allocation `a` (top entries contribute zero).
    fn finite_value_of(&self, a: Allocation) -> S {
        let mut total = S::zero();
        let mut mask = a.0;
        while mask != 0 {
            let idx = mask.trailing_zeros() as usize;
            total = total + self.bids[idx].finite_or_zero();
            mask &= mask - 1;
        }
        total
    }

    /// Mask of cells holding the top sentinel.
    fn top_mask(&self) -> u64 {
        let mut mask = 0u64;
        for (idx, b) in self.bids.iter().enumerate() {
            if b.is_top() {
                mask |= 1u64 << idx;
            }
        }
        mask
    }
}

/// Which one-shot mechanism to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Proportional,
    Moulin,
    Potential,
}

impl MechanismKind {
    /// Per-agent payment bound (the BP constant): 1 for proportional and
    /// Moulin, `H_n` for potential.
    pub fn p_max<S: Scalar>(self, n: usize) -> S {
        match self {
            MechanismKind::Proportional | MechanismKind::Moulin => S::one(),
            MechanismKind::Potential => harmonic(n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MechanismKind::Proportional => "proportional",
            MechanismKind::Moulin => "moulin",
            MechanismKind::Potential => "potential",
        }
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proportional" | "prop" => Ok(MechanismKind::Proportional),
            "moulin" => Ok(MechanismKind::Moulin),
            "potential" => Ok(MechanismKind::Potential),
            other => Err(Error::Config(format!("unknown mechanism kind {other:?}"))),
        }
    }
}

/// Allocation and payments returned by a one-shot mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismOutcome<S> {
    pub allocation: Allocation,
    pub payments: Vec<S>,
}

impl<S: Scalar> MechanismOutcome<S> {
    pub fn total_payment(&self) -> S {
        self.payments.iter().copied().sum()
    }
}

fn require_single_good<S: Scalar>(kind: MechanismKind, reports: &Reports<S>, cost: &CostFunction<S>) -> Result<()> {
    if reports.m != 1 {
        return Err(Error::KindMismatch(format!(
            "{} mechanism requires m=1, got m={}",
            kind.as_str(),
            reports.m
        )));
    }
    if !matches!(cost, CostFunction::ZeroOneSingleGood) {
        return Err(Error::KindMismatch(format!(
            "{} mechanism requires the 0-1 single-good cost",
            kind.as_str()
        )));
    }
    Ok(())
}

/// Run a one-shot mechanism on a report matrix. Individual rationality and
/// cost covering are asserted on every call.
pub fn run_mechanism<S: Scalar>(
    kind: MechanismKind,
    reports: &Reports<S>,
    cost: &CostFunction<S>,
) -> Result<MechanismOutcome<S>> {
    let outcome = match kind {
        MechanismKind::Proportional => {
            require_single_good(kind, reports, cost)?;
            run_proportional(reports)
        }
        MechanismKind::Moulin => {
            require_single_good(kind, reports, cost)?;
            run_moulin(reports)
        }
        MechanismKind::Potential => run_potential(reports, cost)?,
    };
    assert_ir_cc(kind, reports, cost, &outcome);
    Ok(outcome)
}

fn assert_ir_cc<S: Scalar>(
    kind: MechanismKind,
    reports: &Reports<S>,
    cost: &CostFunction<S>,
    outcome: &MechanismOutcome<S>,
) {
    let tol = S::from_config(1e-9);
    for i in 0..reports.n {
        let row = outcome.allocation.row(i, reports.m);
        let p = outcome.payments[i];
        if row == 0 {
            assert!(
                p <= S::from_config(1e-12),
                "{}: IR violated, agent {i} pays {p} with empty allocation",
                kind.as_str()
            );
        } else {
            let mut row_value = S::zero();
            let mut top = false;
            for k in 0..reports.m {
                if outcome.allocation.contains(i, k, reports.m) {
                    match reports.bid(i, k) {
                        Bid::Finite(v) => row_value = row_value + v,
                        Bid::Top => top = true,
                    }
                }
            }
            assert!(
                top || p <= row_value + tol,
                "{}: IR violated, agent {i} pays {p} for value {row_value}",
                kind.as_str()
            );
        }
        assert!(p >= S::zero(), "{}: negative payment for agent {i}", kind.as_str());
    }
    let c = cost.eval(outcome.allocation, reports.n, reports.m);
    assert!(
        outcome.total_payment() + tol >= c,
        "{}: CC violated, payments {} below cost {c}",
        kind.as_str(),
        outcome.total_payment()
    );
}

fn run_proportional<S: Scalar>(reports: &Reports<S>) -> MechanismOutcome<S> {
    let n = reports.n;
    let tops: Vec<usize> = (0..n).filter(|&i| reports.bid(i, 0).is_top()).collect();
    let total: S = (0..n).map(|i| reports.bid(i, 0).finite_or_zero()).sum();

    if !tops.is_empty() {
        // Saturated bids exceed every threshold: allocate to everyone; in the
        // limit the saturated agents split the unit cost and finite agents
        // pay nothing.
        let mut payments = vec![S::zero(); n];
        let share = S::one() / S::from_config(tops.len() as f64);
        for &i in &tops {
            payments[i] = share;
        }
        return MechanismOutcome {
            allocation: Allocation::full(n, 1),
            payments,
        };
    }
    if total >= S::one() {
        let payments = (0..n).map(|i| reports.bid(i, 0).finite_or_zero() / total).collect();
        MechanismOutcome {
            allocation: Allocation::full(n, 1),
            payments,
        }
    } else {
        MechanismOutcome {
            allocation: Allocation::EMPTY,
            payments: vec![S::zero(); n],
        }
    }
}

fn run_moulin<S: Scalar>(reports: &Reports<S>) -> MechanismOutcome<S> {
    let n = reports.n;
    let mut live = Allocation::full(n, 1).0;
    let mut count = n as u32;
    loop {
        if count == 0 {
            return MechanismOutcome {
                allocation: Allocation::EMPTY,
                payments: vec![S::zero(); n],
            };
        }
        let threshold = S::one() / S::from_config(count as f64);
        let mut survivors = live;
        let mut rest = live;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            if !reports.bid(i, 0).at_least(threshold) {
                survivors &= !(1u64 << i);
            }
        }
        let new_count = survivors.count_ones();
        if new_count == count {
            let mut payments = vec![S::zero(); n];
            let mut rest = live;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                payments[i] = threshold;
            }
            return MechanismOutcome {
                allocation: Allocation(live),
                payments,
            };
        }
        live = survivors;
        count = new_count;
    }
}

/// Exhaustive reference for the Moulin allocation rule: the largest set `S`
/// with `min_{i in S} v_i >= 1/|S|`. Test oracle; exponential in `n`.
pub fn moulin_exhaustive_reference<S: Scalar>(reports: &Reports<S>) -> Result<Allocation> {
    if reports.n > 20 {
        return Err(Error::Size("exhaustive Moulin reference limited to n <= 20".into()));
    }
    let n = reports.n;
    let mut best = Allocation::EMPTY;
    for mask in 1u64..(1 << n) {
        let size = mask.count_ones();
        let threshold = S::one() / S::from_config(size as f64);
        let ok = (0..n).all(|i| mask & (1 << i) == 0 || reports.bid(i, 0).at_least(threshold));
        if ok && size > best.len() {
            best = Allocation(mask);
        }
    }
    Ok(best)
}

/// Shapley-style potential `P_c(A) = sum over nonempty I of
/// c(union of rows in I) / (|I| * C(n, |I|))`.
pub fn potential_value<S: Scalar>(
    cost: &CostFunction<S>,
    a: Allocation,
    n: usize,
    m: usize,
) -> Result<S> {
    if n > ENUMERATION_MAX_CELLS {
        return Err(Error::Size(format!("potential_value limited to n <= {ENUMERATION_MAX_CELLS}")));
    }
    Ok(PotentialTable::new(cost, n, m).value(a))
}

/// Precomputed machinery for potential evaluations over one cost function.
struct PotentialTable<'c, S> {
    cost: &'c CostFunction<S>,
    n: usize,
    m: usize,
    /// weight[s] = 1 / (s * C(n, s))
    weights: Vec<S>,
    /// Single-good fast path: potential by count of allocated agents.
    zero_one_by_agents: Option<Vec<S>>,
}

impl<'c, S: Scalar> PotentialTable<'c, S> {
    fn new(cost: &'c CostFunction<S>, n: usize, m: usize) -> Self {
        let mut binom = vec![0.0f64; n + 1];
        binom[0] = 1.0;
        for s in 1..=n {
            binom[s] = binom[s - 1] * (n - s + 1) as f64 / s as f64;
        }
        let weights: Vec<S> = (0..=n)
            .map(|s| {
                if s == 0 {
                    S::zero()
                } else {
                    S::from_config(1.0 / (s as f64 * binom[s]))
                }
            })
            .collect();
        let zero_one_by_agents = if matches!(cost, CostFunction::ZeroOneSingleGood) {
            // With the 0-1 cost, c(union of I) = 1 unless every agent in I has
            // an empty row. P_c therefore depends only on how many rows are
            // non-empty: P_c = sum_s w_s * (C(n,s) - C(e,s)) with e empty rows.
            let mut by_agents = vec![S::zero(); n + 1];
            for (r, slot) in by_agents.iter_mut().enumerate() {
                let e = n - r;
                let mut choose_e = vec![0.0f64; n + 1];
                choose_e[0] = 1.0;
                for s in 1..=n {
                    choose_e[s] = if s <= e {
                        choose_e[s - 1] * (e - s + 1) as f64 / s as f64
                    } else {
                        0.0
                    };
                }
                let mut acc = S::zero();
                for s in 1..=n {
                    acc = acc + weights[s] * S::from_config(binom[s] - choose_e[s]);
                }
                *slot = acc;
            }
            Some(by_agents)
        } else {
            None
        };
        PotentialTable {
            cost,
            n,
            m,
            weights,
            zero_one_by_agents,
        }
    }

    fn value(&self, a: Allocation) -> S {
        if a.is_empty() {
            return S::zero();
        }
        if let Some(by_agents) = &self.zero_one_by_agents {
            let r = (0..self.n).filter(|&i| a.row(i, self.m) != 0).count();
            return by_agents[r];
        }
        let rows: Vec<u64> = (0..self.n).map(|i| a.row(i, self.m) << (i * self.m)).collect();
        let subsets = 1usize << self.n;
        let mut unions = vec![0u64; subsets];
        let mut total = S::zero();
        for set in 1..subsets {
            let low = set.trailing_zeros() as usize;
            unions[set] = unions[set & (set - 1)] | rows[low];
            let c = self.cost.eval(Allocation(unions[set]), self.n, self.m);
            total = total + self.weights[set.count_ones() as usize] * c;
        }
        total
    }
}

/// Objective of the potential mechanism for allocation mask `a`:
/// finite reported value inside `a` minus `P_c(a)`.
struct PotentialObjective<'c, S> {
    table: PotentialTable<'c, S>,
    values: Vec<S>,
}

impl<'c, S: Scalar> PotentialObjective<'c, S> {
    fn eval(&self, mask: u64) -> S {
        let mut v = S::zero();
        let mut rest = mask;
        while rest != 0 {
            let idx = rest.trailing_zeros() as usize;
            v = v + self.values[idx];
            rest &= rest - 1;
        }
        v - self.table.value(Allocation(mask))
    }

    /// Argmax over subsets of `free` united with `forced`, preferring higher
    /// value, then greater cardinality, then the smaller bitmask. Values
    /// within `TIE_EPS` of the maximum count as maximizers, so exact
    /// mathematical ties keep the cardinality rule under rounding noise.
    fn argmax(&self, free: u64, forced: u64) -> (u64, S) {
        let tie_eps = S::from_config(1e-12);
        let mut best_val = self.eval(forced);
        let mut sub = free;
        loop {
            if sub != 0 {
                let val = self.eval(sub | forced);
                if val > best_val {
                    best_val = val;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
        let mut best_mask = u64::MAX;
        let mut best_card = 0u32;
        let mut sub = free;
        loop {
            let mask = sub | forced;
            if self.eval(mask) >= best_val - tie_eps {
                let card = mask.count_ones();
                if card > best_card || (card == best_card && mask < best_mask) {
                    best_card = card;
                    best_mask = mask;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
        (best_mask, best_val)
    }
}

fn run_potential<S: Scalar>(reports: &Reports<S>, cost: &CostFunction<S>) -> Result<MechanismOutcome<S>> {
    let (n, m) = (reports.n, reports.m);
    let cells = n * m;
    if cells > ENUMERATION_MAX_CELLS {
        return Err(Error::Size(format!(
            "potential mechanism limited to n*m <= {ENUMERATION_MAX_CELLS}, got {cells}"
        )));
    }
    let grid = Allocation::full(n, m).0;
    let top = reports.top_mask();
    let objective = PotentialObjective {
        table: PotentialTable::new(cost, n, m),
        values: reports.bids().iter().map(|b| b.finite_or_zero()).collect(),
    };

    // Saturated cells are forced into every maximizer; their (infinite)
    // value contribution cancels between the two VCG terms, so they are
    // carried with finite contribution zero throughout.
    let (best_mask, _) = objective.argmax(grid & !top, top);
    let allocation = Allocation(best_mask);

    let mut payments = vec![S::zero(); n];
    let realized_others = |i: usize| -> S {
        let mut v = S::zero();
        for j in 0..n {
            if j == i {
                continue;
            }
            for k in 0..m {
                if allocation.contains(j, k, m) {
                    v = v + reports.bid(j, k).finite_or_zero();
                }
            }
        }
        v - objective.table.value(allocation)
    };
    for i in 0..n {
        let row_bits: u64 = ((1u64 << m) - 1) << (i * m);
        let others_grid = grid & !row_bits;
        // welfare of others when agent i is absent: agent i's values never
        // enter; saturated cells of other agents stay forced.
        let absent_objective = PotentialObjective {
            table: PotentialTable::new(cost, n, m),
            values: reports
                .bids()
                .iter()
                .enumerate()
                .map(|(idx, b)| {
                    if row_bits & (1u64 << idx) != 0 {
                        S::zero()
                    } else {
                        b.finite_or_zero()
                    }
                })
                .collect(),
        };
        let (_, absent_val) = absent_objective.argmax(others_grid & !top, top & others_grid);
        payments[i] = absent_val - realized_others(i);
        if payments[i] < S::zero() {
            // exact-arithmetic floor: VCG externality is non-negative
            debug_assert!(payments[i] > S::from_config(-1e-9));
            payments[i] = S::zero();
        }
    }
    Ok(MechanismOutcome { allocation, payments })
}

/// Both algebraic forms of the single-good dead-weight loss:
/// `(sum v - 1)^+ - realized surplus` and
/// `(excluded value + payments - 1)^+`.
pub fn dwl_single_good_forms<S: Scalar>(
    kind: MechanismKind,
    reports: &Reports<S>,
    cost: &CostFunction<S>,
) -> Result<(S, S)> {
    reports.all_finite()?;
    if reports.m != 1 || !matches!(cost, CostFunction::ZeroOneSingleGood) {
        return Err(Error::KindMismatch(
            "single-good DWL forms require m=1 and the 0-1 cost".into(),
        ));
    }
    let outcome = run_mechanism(kind, reports, cost)?;
    let total: S = (0..reports.n).map(|i| reports.bid(i, 0).finite_or_zero()).sum();
    let surplus = reports.finite_value_of(outcome.allocation) - outcome.total_payment();
    let form1 = pos(total - S::one()) - surplus;
    let excluded: S = (0..reports.n)
        .filter(|&i| !outcome.allocation.contains(i, 0, 1))
        .map(|i| reports.bid(i, 0).finite_or_zero())
        .sum();
    let form2 = pos(excluded + outcome.total_payment() - S::one());
    Ok((form1, form2))
}

#[inline]
fn pos<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

/// General dead-weight loss: the maximum over non-empty allocations `A'` of
/// `((value(A') - c(A'))^+ - realized surplus) / c(A')`.
pub fn dwl<S: Scalar>(kind: MechanismKind, reports: &Reports<S>, cost: &CostFunction<S>) -> Result<S> {
    reports.all_finite()?;
    let (n, m) = (reports.n, reports.m);
    let outcome = run_mechanism(kind, reports, cost)?;
    let surplus = reports.finite_value_of(outcome.allocation) - outcome.total_payment();

    if m == 1 && matches!(cost, CostFunction::ZeroOneSingleGood) {
        // every non-empty allocation costs exactly 1 and value is monotone,
        // so the grand allocation maximizes the objective
        let total: S = (0..n).map(|i| reports.bid(i, 0).finite_or_zero()).sum();
        return Ok(pos(total - S::one()) - surplus);
    }

    let cells = n * m;
    if cells > ENUMERATION_MAX_CELLS {
        return Err(Error::Size(format!(
            "general DWL enumeration limited to n*m <= {ENUMERATION_MAX_CELLS}, got {cells}"
        )));
    }
    let mut best = S::neg_infinity();
    for mask in 1u64..(1u64 << cells) {
        let a = Allocation(mask);
        let c = cost.eval(a, n, m);
        let val = reports.finite_value_of(a);
        let candidate = (pos(val - c) - surplus) / c;
        if candidate > best {
            best = candidate;
        }
    }
    Ok(best)
}

/// Social cost `SC(A) = c(A) + sum of excluded agents' reported values`
/// (single-good setting).
pub fn social_cost<S: Scalar>(reports: &Reports<S>, cost: &CostFunction<S>, a: Allocation) -> Result<S> {
    reports.all_finite()?;
    if reports.m != 1 {
        return Err(Error::KindMismatch("social_cost requires m=1".into()));
    }
    let excluded: S = (0..reports.n)
        .filter(|&i| !a.contains(i, 0, 1))
        .map(|i| reports.bid(i, 0).finite_or_zero())
        .sum();
    Ok(cost.eval(a, reports.n, 1) + excluded)
}

/// Scan configuration for [`dwl_sup_scan`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanSpec {
    /// Number of random report profiles to draw.
    pub samples: u64,
    /// Upper end of the per-entry uniform report range.
    pub max_report: f64,
    /// Epsilon used in the structured harmonic witness.
    pub witness_eps: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            samples: 10_000,
            max_report: 1.5,
            witness_eps: 1e-3,
        }
    }
}

/// Result of a supremum scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanReport {
    pub mechanism: String,
    pub n: usize,
    pub m: usize,
    pub sup_estimate: f64,
    pub witness: Vec<f64>,
    pub profiles_scanned: u64,
}

/// Estimate `sup over reports of DWL` by random scan plus structured
/// witnesses (the near-tight harmonic profile is always included for
/// single-good scans).
pub fn dwl_sup_scan<S: Scalar>(
    kind: MechanismKind,
    n: usize,
    m: usize,
    cost: &CostFunction<S>,
    spec: &ScanSpec,
    seed: u64,
) -> Result<ScanReport> {
    let mut rng = stream(seed, "dwl-scan", 0);
    let mut best = S::neg_infinity();
    let mut witness: Vec<f64> = Vec::new();
    let mut scanned = 0u64;

    let consider = |values: Vec<S>, best: &mut S, witness: &mut Vec<f64>, scanned: &mut u64| -> Result<()> {
        let reports = Reports::from_values(n, m, &values)?;
        let d = dwl(kind, &reports, cost)?;
        *scanned += 1;
        if d > *best {
            *best = d;
            *witness = values.iter().map(|v| v.to_report()).collect();
        }
        Ok(())
    };

    if m == 1 {
        // structured witnesses: harmonic family and its prefixes
        for take in 1..=n {
            let mut values = vec![S::zero(); n];
            for (j, v) in values.iter_mut().enumerate().take(take) {
                let base = 1.0 / (j + 1) as f64;
                *v = S::from_config(if j == 0 { 1.0 } else { base - spec.witness_eps });
            }
            consider(values, &mut best, &mut witness, &mut scanned)?;
        }
        // all at exactly the equal-split threshold
        let equal = vec![S::from_config(1.0 / n as f64); n];
        consider(equal, &mut best, &mut witness, &mut scanned)?;
    }
    for _ in 0..spec.samples {
        let values: Vec<S> = (0..n * m)
            .map(|_| S::from_config(rng.gen::<f64>() * spec.max_report))
            .collect();
        consider(values, &mut best, &mut witness, &mut scanned)?;
    }

    Ok(ScanReport {
        mechanism: kind.as_str().to_string(),
        n,
        m,
        sup_estimate: best.to_report(),
        witness,
        profiles_scanned: scanned,
    })
}

/// Regularity axioms probed by [`regularity_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Ir,
    Cc,
    Mt1,
    Mt2,
    Mt3,
    Mt4,
    Mt5,
    Cs,
    Ps,
    Bp,
    Et,
    Sa,
    Ic,
}

impl Axiom {
    pub const ALL: [Axiom; 13] = [
        Axiom::Ir,
        Axiom::Cc,
        Axiom::Mt1,
        Axiom::Mt2,
        Axiom::Mt3,
        Axiom::Mt4,
        Axiom::Mt5,
        Axiom::Cs,
        Axiom::Ps,
        Axiom::Bp,
        Axiom::Et,
        Axiom::Sa,
        Axiom::Ic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axiom::Ir => "IR",
            Axiom::Cc => "CC",
            Axiom::Mt1 => "MT1",
            Axiom::Mt2 => "MT2",
            Axiom::Mt3 => "MT3",
            Axiom::Mt4 => "MT4",
            Axiom::Mt5 => "MT5",
            Axiom::Cs => "CS",
            Axiom::Ps => "PS",
            Axiom::Bp => "BP",
            Axiom::Et => "ET",
            Axiom::Sa => "SA",
            Axiom::Ic => "IC",
        }
    }
}

impl std::str::FromStr for Axiom {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        for ax in Axiom::ALL {
            if ax.as_str().eq_ignore_ascii_case(s) {
                return Ok(ax);
            }
        }
        Err(Error::Config(format!("unknown axiom {s:?}")))
    }
}

/// Result of a randomized axiom probe, serialized as
/// `{axiom, trials, status, witness?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub mechanism: String,
    pub axiom: String,
    pub trials: u64,
    pub status: ProbeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<serde_json::Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeStatus {
    Pass,
    Counterexample,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.status == ProbeStatus::Pass
    }
}

/// Probe configuration: grid dimensions and the cost to run against.
#[derive(Clone, Debug)]
pub struct ProbeConfig<S> {
    pub n: usize,
    pub m: usize,
    pub cost: CostFunction<S>,
}

impl<S: Scalar> ProbeConfig<S> {
    pub fn single_good(n: usize) -> Self {
        ProbeConfig {
            n,
            m: 1,
            cost: CostFunction::ZeroOneSingleGood,
        }
    }
}

fn sample_entry<S: Scalar>(rng: &mut Stream, n: usize) -> S {
    let u: f64 = rng.gen();
    if u < 0.12 {
        S::zero()
    } else if u < 0.22 {
        // sit exactly on a Moulin threshold
        let j = rng.gen_range(1..=n);
        S::from_config(1.0 / j as f64)
    } else {
        S::from_config(rng.gen::<f64>() * 1.25)
    }
}

fn sample_reports<S: Scalar>(cfg: &ProbeConfig<S>, rng: &mut Stream) -> Reports<S> {
    let values: Vec<S> = (0..cfg.n * cfg.m).map(|_| sample_entry(rng, cfg.n)).collect();
    Reports::from_values(cfg.n, cfg.m, &values).expect("sampled reports are valid")
}

/// Scale every entry down by an independent uniform factor, giving a
/// coordinatewise-dominated report matrix.
fn shrink_reports<S: Scalar>(reports: &Reports<S>, rng: &mut Stream) -> Reports<S> {
    let bids = reports
        .bids()
        .iter()
        .map(|b| match b {
            Bid::Finite(v) => Bid::Finite(*v * S::from_config(rng.gen::<f64>())),
            Bid::Top => Bid::Top,
        })
        .collect();
    Reports::new(reports.n, reports.m, bids).expect("shrunk reports are valid")
}

fn quasi_linear_utility<S: Scalar>(
    true_values: &Reports<S>,
    outcome: &MechanismOutcome<S>,
    i: usize,
) -> S {
    let mut v = S::zero();
    for k in 0..true_values.m {
        if outcome.allocation.contains(i, k, true_values.m) {
            v = v + true_values.bid(i, k).finite_or_zero();
        }
    }
    v - outcome.payments[i]
}

fn witness_json<S: Scalar>(label: &str, reports: &Reports<S>, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "case": label,
        "reports": reports.bids().iter().map(|b| match b {
            Bid::Finite(v) => serde_json::json!(v.to_report()),
            Bid::Top => serde_json::json!("top"),
        }).collect::<Vec<_>>(),
        "detail": extra,
    })
}

/// Randomized probe of one regularity axiom. Samples report pairs
/// `v' <= v` (or the structure each axiom calls for) and checks the stated
/// inequality; returns the first counterexample found, else a pass.
pub fn regularity_probe<S: Scalar>(
    kind: MechanismKind,
    axiom: Axiom,
    trials: u64,
    cfg: &ProbeConfig<S>,
    seed: u64,
) -> Result<ProbeReport> {
    if trials == 0 {
        return Err(Error::Config("probe requires trials >= 1".into()));
    }
    let mut rng = stream(seed, "regularity", axiom as u64);
    let tol = S::from_config(1e-9);
    let mut witness: Option<serde_json::Value> = None;

    'trials: for _ in 0..trials {
        let reports = sample_reports(cfg, &mut rng);
        let outcome = run_mechanism(kind, &reports, &cfg.cost)?;
        match axiom {
            Axiom::Ir => {
                for i in 0..cfg.n {
                    let p = outcome.payments[i];
                    if outcome.allocation.row(i, cfg.m) == 0 {
                        if p > S::from_config(1e-12) {
                            witness = Some(witness_json("pay-without-allocation", &reports, serde_json::json!({"agent": i, "payment": p.to_report()})));
                            break 'trials;
                        }
                    } else {
                        let row_value: S = (0..cfg.m)
                            .filter(|&k| outcome.allocation.contains(i, k, cfg.m))
                            .map(|k| reports.bid(i, k).finite_or_zero())
                            .sum();
                        if p > row_value + tol {
                            witness = Some(witness_json("pay-above-value", &reports, serde_json::json!({"agent": i, "payment": p.to_report()})));
                            break 'trials;
                        }
                    }
                }
            }
            Axiom::Cc => {
                let c = cfg.cost.eval(outcome.allocation, cfg.n, cfg.m);
                if outcome.total_payment() + tol < c {
                    witness = Some(witness_json("payments-below-cost", &reports, serde_json::json!({"cost": c.to_report()})));
                    break 'trials;
                }
            }
            Axiom::Mt1 => {
                let lower = shrink_reports(&reports, &mut rng);
                let lo = run_mechanism(kind, &lower, &cfg.cost)?;
                if lo.allocation.0 & !outcome.allocation.0 != 0 {
                    witness = Some(witness_json("allocation-not-monotone", &reports, serde_json::json!({"lower": lower.bids().iter().map(|b| b.finite_or_zero().to_report()).collect::<Vec<_>>()})));
                    break 'trials;
                }
            }
            Axiom::Mt2 => {
                let i = rng.gen_range(0..cfg.n);
                let mut mixed = reports.clone();
                for k in 0..cfg.m {
                    if let Bid::Finite(v) = mixed.bid(i, k) {
                        mixed.set(i, k, Bid::Finite(v * S::from_config(rng.gen::<f64>())));
                    }
                }
                let lo = run_mechanism(kind, &mixed, &cfg.cost)?;
                if outcome.payments[i] + tol < lo.payments[i] {
                    witness = Some(witness_json("payment-not-monotone-in-own-report", &reports, serde_json::json!({"agent": i})));
                    break 'trials;
                }
            }
            Axiom::Mt3 => {
                let lower = shrink_reports(&reports, &mut rng);
                let lo = run_mechanism(kind, &lower, &cfg.cost)?;
                for i in 0..cfg.n {
                    let hi_u = quasi_linear_utility(&reports, &outcome, i);
                    let lo_u = quasi_linear_utility(&lower, &lo, i);
                    if hi_u + tol < lo_u {
                        witness = Some(witness_json("utility-not-monotone", &reports, serde_json::json!({"agent": i})));
                        break 'trials;
                    }
                }
            }
            Axiom::Mt4 => {
                let i = rng.gen_range(0..cfg.n);
                let mut mixed = reports.clone();
                for k in 0..cfg.m {
                    if let Bid::Finite(v) = mixed.bid(i, k) {
                        mixed.set(i, k, Bid::Finite(v * S::from_config(rng.gen::<f64>())));
                    }
                }
                let lo = run_mechanism(kind, &mixed, &cfg.cost)?;
                if (outcome.payments[i] - lo.payments[i]).abs() <= tol
                    && outcome.allocation != lo.allocation
                {
                    witness = Some(witness_json("equal-payment-different-allocation", &reports, serde_json::json!({"agent": i})));
                    break 'trials;
                }
            }
            Axiom::Mt5 => {
                let i = rng.gen_range(0..cfg.n);
                let mut mixed = reports.clone();
                for k in 0..cfg.m {
                    if let Bid::Finite(v) = mixed.bid(i, k) {
                        mixed.set(i, k, Bid::Finite(v * S::from_config(rng.gen::<f64>())));
                    }
                }
                let lo = run_mechanism(kind, &mixed, &cfg.cost)?;
                if lo.allocation.row(i, cfg.m) == outcome.allocation.row(i, cfg.m)
                    && lo.allocation != outcome.allocation
                {
                    witness = Some(witness_json("same-row-different-allocation", &reports, serde_json::json!({"agent": i})));
                    break 'trials;
                }
            }
            Axiom::Cs => {
                let i = rng.gen_range(0..cfg.n);
                let k = rng.gen_range(0..cfg.m);
                let mut saturated = reports.clone();
                saturated.set(i, k, Bid::Top);
                let out = run_mechanism(kind, &saturated, &cfg.cost)?;
                if !out.allocation.contains(i, k, cfg.m) {
                    witness = Some(witness_json("saturated-report-excluded", &saturated, serde_json::json!({"agent": i, "good": k})));
                    break 'trials;
                }
            }
            Axiom::Ps => {
                let i = rng.gen_range(0..cfg.n);
                let mut raised = reports.clone();
                for k in 0..cfg.m {
                    if let Bid::Finite(v) = raised.bid(i, k) {
                        raised.set(i, k, Bid::Finite(v + S::from_config(rng.gen::<f64>())));
                    }
                }
                let hi = run_mechanism(kind, &raised, &cfg.cost)?;
                // utilities are evaluated at the lower report vector
                let low_u = quasi_linear_utility(&reports, &outcome, i);
                let mut hi_value = S::zero();
                for k in 0..cfg.m {
                    if hi.allocation.contains(i, k, cfg.m) {
                        hi_value = hi_value + reports.bid(i, k).finite_or_zero();
                    }
                }
                if low_u + tol < hi_value - hi.payments[i] {
                    witness = Some(witness_json("over-reporting-profits", &reports, serde_json::json!({"agent": i})));
                    break 'trials;
                }
            }
            Axiom::Bp => {
                let bound: S = kind.p_max(cfg.n);
                for i in 0..cfg.n {
                    if outcome.payments[i] > bound + tol {
                        witness = Some(witness_json("payment-above-bound", &reports, serde_json::json!({"agent": i, "bound": bound.to_report()})));
                        break 'trials;
                    }
                }
            }
            Axiom::Et => {
                if cfg.n < 2 {
                    continue;
                }
                let i = rng.gen_range(0..cfg.n);
                let mut j = rng.gen_range(0..cfg.n);
                if j == i {
                    j = (j + 1) % cfg.n;
                }
                let mut dup = reports.clone();
                for k in 0..cfg.m {
                    dup.set(j, k, dup.bid(i, k));
                }
                let out = run_mechanism(kind, &dup, &cfg.cost)?;
                let i_in = out.allocation.row(i, cfg.m) != 0;
                let j_in = out.allocation.row(j, cfg.m) != 0;
                if i_in != j_in || (out.payments[i] - out.payments[j]).abs() > tol {
                    witness = Some(witness_json("equal-reports-unequal-treatment", &dup, serde_json::json!({"agents": [i, j]})));
                    break 'trials;
                }
            }
            Axiom::Sa => {
                if cfg.m != 1 {
                    return Err(Error::KindMismatch("stand-alone probe requires m=1".into()));
                }
                let i = rng.gen_range(0..cfg.n);
                let mut boosted = reports.clone();
                boosted.set(i, 0, Bid::Finite(S::one() + S::from_config(rng.gen::<f64>())));
                let out = run_mechanism(kind, &boosted, &cfg.cost)?;
                if !out.allocation.contains(i, 0, 1) {
                    witness = Some(witness_json("stand-alone-excluded", &boosted, serde_json::json!({"agent": i})));
                    break 'trials;
                }
            }
            Axiom::Ic => {
                let i = rng.gen_range(0..cfg.n);
                let truthful_u = quasi_linear_utility(&reports, &outcome, i);
                // misreport grid plus random deviations
                let mut candidates: Vec<S> = (0..=4).map(|g| S::from_config(g as f64 * 0.3)).collect();
                for _ in 0..8 {
                    candidates.push(S::from_config(rng.gen::<f64>() * 1.5));
                }
                for dev in candidates {
                    let mut mis = reports.clone();
                    for k in 0..cfg.m {
                        mis.set(i, k, Bid::Finite(dev));
                    }
                    let out = run_mechanism(kind, &mis, &cfg.cost)?;
                    let mut value = S::zero();
                    for k in 0..cfg.m {
                        if out.allocation.contains(i, k, cfg.m) {
                            value = value + reports.bid(i, k).finite_or_zero();
                        }
                    }
                    if value - out.payments[i] > truthful_u + tol {
                        witness = Some(witness_json("profitable-misreport", &reports, serde_json::json!({
                            "agent": i,
                            "misreport": dev.to_report(),
                            "truthful_utility": truthful_u.to_report(),
                            "deviant_utility": (value - out.payments[i]).to_report(),
                        })));
                        break 'trials;
                    }
                }
            }
        }
    }

    Ok(ProbeReport {
        mechanism: kind.as_str().to_string(),
        axiom: axiom.as_str().to_string(),
        trials,
        status: if witness.is_some() {
            ProbeStatus::Counterexample
        } else {
            ProbeStatus::Pass
        },
        witness,
    })
}
