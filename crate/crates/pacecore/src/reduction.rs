//! The budget-ledger engine: turns a one-shot monetary mechanism into a
//! T-round non-monetary mechanism with artificial currency.
//!
//! Each agent starts with `alpha_i * T` credits. Every round the engine
//! samples `(values, cost)`, queries each strategy for a report, zeroes the
//! reports of agents whose budget has fallen below the mechanism's maximum
//! payment, runs the mechanism, enacts the allocation, and debits payments.
//!
//! Ledger arithmetic is exact: budgets and payments are integers at 1e-9
//! resolution. Initial budgets round down and payment debits round up, so
//! cost covering of the one-shot mechanism yields `total cost <= alpha * T`
//! with zero tolerance.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::mechanisms::{run_mechanism, Bid, MechanismKind, Reports};
use crate::model::{Allocation, Instance};
use crate::rng::stream;
use crate::strategies::{PublicRound, Strategy};
use crate::{Error, Real, Result};

/// Schema string for trace files.
pub const TRACE_SCHEMA: &str = "pacecore-trace-v1";

/// Integer credit units per 1.0 of artificial currency (1e-9 resolution).
pub const CREDIT_SCALE: i64 = 1_000_000_000;

/// Exact credit amounts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Credits(pub i64);

impl Credits {
    /// Round a currency amount down to whole credits (initial budgets).
    pub fn floor_units(x: f64) -> Credits {
        Credits((x * CREDIT_SCALE as f64).floor() as i64)
    }

    /// Round a currency amount up to whole credits (payment debits).
    pub fn ceil_units(x: f64) -> Credits {
        Credits((x * CREDIT_SCALE as f64).ceil() as i64)
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / CREDIT_SCALE as f64
    }
}

/// Running per-agent budget state.
#[derive(Clone, Debug)]
pub struct BudgetLedger {
    pub initial: Vec<Credits>,
    pub budgets: Vec<Credits>,
}

impl BudgetLedger {
    /// Budgets `B_i[0] = alpha_i * T`, rounded down to whole credits.
    pub fn open(shares: &[f64], horizon: u64) -> Self {
        let initial: Vec<Credits> = shares
            .iter()
            .map(|&a| Credits::floor_units(a * horizon as f64))
            .collect();
        BudgetLedger {
            budgets: initial.clone(),
            initial,
        }
    }

    /// Debit a payment; panics on overdraft, which the zeroing rule makes
    /// unreachable.
    pub fn debit(&mut self, agent: usize, amount: Credits) {
        let b = &mut self.budgets[agent];
        b.0 -= amount.0;
        assert!(b.0 >= 0, "ledger overdraft for agent {agent}");
    }
}

/// Everything observable about one executed round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    /// Realized values, row-major `n x m`.
    pub values: Vec<Real>,
    /// Post-zeroing reports as submitted to the mechanism.
    pub reports: Vec<Bid<Real>>,
    /// Allocation cell mask.
    pub alloc: u64,
    /// Payments in credits.
    pub payments_credits: Vec<i64>,
    /// Cost of the round's allocation in credits (rounded up).
    pub cost_credits: i64,
    pub budgets_after: Vec<i64>,
    /// Agents whose budget was below `p_max` before the round.
    pub depleted: Vec<bool>,
}

/// Full output of one simulation.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub n: usize,
    pub m: usize,
    pub horizon: u64,
    pub mechanism: MechanismKind,
    /// Retained records; all rounds when `stride == 1`.
    pub records: Vec<RoundRecord>,
    /// Record retention stride (1 = full trace).
    pub stride: u64,
    /// Sum over rounds of the allocation cost, in credits (exact audit form).
    pub total_cost_credits: i64,
    /// Sum over rounds of the real-valued allocation cost.
    pub total_cost: f64,
    /// `U_i = (1/T) * sum_t sum_{k in A_i[t]} V_{i,k}[t]`.
    pub utilities: Vec<Real>,
    /// Total debited credits per agent.
    pub spend_credits: Vec<i64>,
    /// First round after which an agent's budget sat below `p_max`
    /// (`T` if that never happened).
    pub depletion_times: Vec<u64>,
    pub initial_budgets: Vec<i64>,
}

impl SimulationResult {
    pub fn is_thinned(&self) -> bool {
        self.stride != 1
    }

    /// Summary CSV with one row per agent.
    pub fn summary_csv(&self, shares: &[f64]) -> String {
        let mut out = String::from("agent,share,utility,spend,depletion_time\n");
        for i in 0..self.n {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                shares[i],
                self.utilities[i],
                Credits(self.spend_credits[i]).as_units(),
                self.depletion_times[i]
            ));
        }
        out
    }

    /// Write the JSONL trace: a header line followed by one record per line.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "schema": TRACE_SCHEMA,
            "n": self.n,
            "m": self.m,
            "T": self.horizon,
            "mechanism": self.mechanism.as_str(),
            "stride": self.stride,
            "initial_budgets": self.initial_budgets,
        });
        writeln!(w, "{header}")?;
        for rec in &self.records {
            writeln!(w, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    /// Read a JSONL trace produced by [`SimulationResult::write_trace`].
    pub fn read_trace<R: BufRead>(r: R) -> Result<SimulationResult> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Trace("empty trace file".into()))??;
        let header: serde_json::Value = serde_json::from_str(&header_line)?;
        if header["schema"] != TRACE_SCHEMA {
            return Err(Error::Trace(format!("unknown trace schema {}", header["schema"])));
        }
        let n = header["n"].as_u64().ok_or_else(|| Error::Trace("missing n".into()))? as usize;
        let m = header["m"].as_u64().ok_or_else(|| Error::Trace("missing m".into()))? as usize;
        let horizon = header["T"].as_u64().ok_or_else(|| Error::Trace("missing T".into()))?;
        let stride = header["stride"].as_u64().unwrap_or(1);
        let mechanism: MechanismKind = header["mechanism"]
            .as_str()
            .ok_or_else(|| Error::Trace("missing mechanism".into()))?
            .parse()?;
        let initial_budgets: Vec<i64> = serde_json::from_value(header["initial_budgets"].clone())?;

        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<RoundRecord>(&line)?);
        }
        let mut result = SimulationResult {
            n,
            m,
            horizon,
            mechanism,
            stride,
            records,
            total_cost_credits: 0,
            total_cost: 0.0,
            utilities: vec![0.0; n],
            spend_credits: vec![0; n],
            depletion_times: vec![horizon; n],
            initial_budgets,
        };
        result.recompute_aggregates();
        Ok(result)
    }

    fn recompute_aggregates(&mut self) {
        let (n, m) = (self.n, self.m);
        self.total_cost_credits = 0;
        self.total_cost = 0.0;
        self.utilities = vec![0.0; n];
        self.spend_credits = vec![0; n];
        self.depletion_times = vec![self.horizon; n];
        let p_max = Credits::ceil_units(self.mechanism.p_max::<f64>(n));
        for rec in &self.records {
            self.total_cost_credits += rec.cost_credits;
            self.total_cost += rec.cost_credits as f64 / CREDIT_SCALE as f64;
            let alloc = Allocation(rec.alloc);
            for i in 0..n {
                for k in 0..m {
                    if alloc.contains(i, k, m) {
                        self.utilities[i] += rec.values[i * m + k];
                    }
                }
                self.spend_credits[i] += rec.payments_credits[i];
                if rec.budgets_after[i] < p_max.0 && self.depletion_times[i] == self.horizon {
                    self.depletion_times[i] = rec.t;
                }
            }
        }
        for u in &mut self.utilities {
            *u /= self.horizon as f64;
        }
    }
}

/// Options modifying a [`simulate`] run.
#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Override the instance horizon.
    pub horizon: Option<u64>,
    /// Override the instance seed.
    pub seed_override: Option<u64>,
    /// Index of the sampling substream (replications use distinct indices).
    pub sample_stream_index: u64,
    /// Keep every `stride`-th record (1 = full trace).
    pub stride: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: None,
            seed_override: None,
            sample_stream_index: 0,
            stride: 1,
        }
    }
}

/// Execute the reduction for `T` rounds.
pub fn simulate(
    instance: &Instance,
    kind: MechanismKind,
    strategies: &[Strategy],
    opts: &SimOptions,
) -> Result<SimulationResult> {
    if strategies.len() != instance.n {
        return Err(Error::Config(format!(
            "{} strategies for n={} agents",
            strategies.len(),
            instance.n
        )));
    }
    if opts.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let (n, m) = (instance.n, instance.m);
    let horizon = opts.horizon.unwrap_or(instance.horizon);
    let seed = opts.seed_override.unwrap_or(instance.seed);
    let mut sampler = instance.sampler()?;
    let mut rng = stream(seed, "sample", opts.sample_stream_index);

    let p_max = Credits::ceil_units(kind.p_max::<f64>(n));
    let mut ledger = BudgetLedger::open(&instance.shares, horizon);
    let keep_history = strategies.iter().any(|s| !s.is_time_independent());
    let mut history: Vec<PublicRound> = Vec::new();

    let mut records = Vec::new();
    let mut total_cost_credits = 0i64;
    let mut total_cost = 0.0f64;
    let mut utilities = vec![0.0f64; n];
    let mut spend_credits = vec![0i64; n];
    let mut depletion_times = vec![horizon; n];
    let mut value_row = vec![0.0f64; m];

    for t in 1..=horizon {
        let profile = sampler.draw(&mut rng);
        let depleted: Vec<bool> = (0..n).map(|i| ledger.budgets[i] < p_max).collect();

        let mut bids: Vec<Bid<Real>> = Vec::with_capacity(n * m);
        for (i, strategy) in strategies.iter().enumerate() {
            value_row.copy_from_slice(&profile.values[i * m..(i + 1) * m]);
            let row = strategy.report(&value_row, &history);
            if row.len() != m {
                return Err(Error::Strategy {
                    agent: i,
                    round: t,
                    reason: format!("report has {} entries, expected {m}", row.len()),
                });
            }
            for bid in &row {
                if let Bid::Finite(v) = bid {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(Error::Strategy {
                            agent: i,
                            round: t,
                            reason: format!("report entry {v} is negative or non-finite"),
                        });
                    }
                }
            }
            bids.extend(row);
        }
        let mut reports = Reports::new(n, m, bids)?;
        for (i, &gone) in depleted.iter().enumerate() {
            if gone {
                reports.zero_agent(i);
            }
        }

        let outcome = run_mechanism(kind, &reports, &profile.cost)?;
        let mut payments_credits = vec![0i64; n];
        for i in 0..n {
            let p = outcome.payments[i];
            if depleted[i] {
                assert!(
                    p == 0.0,
                    "depleted agent {i} charged {p} in round {t} (zeroed report must cost nothing)"
                );
                continue;
            }
            if p > 0.0 {
                let c = Credits::ceil_units(p);
                ledger.debit(i, c);
                payments_credits[i] = c.0;
                spend_credits[i] += c.0;
            }
        }

        let cost = profile.cost.eval(outcome.allocation, n, m);
        let cost_credits = Credits::ceil_units(cost).0;
        total_cost_credits += cost_credits;
        total_cost += cost;

        for i in 0..n {
            for k in 0..m {
                if outcome.allocation.contains(i, k, m) {
                    utilities[i] += profile.value(i, k);
                }
            }
            if ledger.budgets[i] < p_max && depletion_times[i] == horizon {
                depletion_times[i] = t;
            }
        }

        if keep_history {
            history.push(PublicRound {
                reports: reports.bids().to_vec(),
                allocation: outcome.allocation,
            });
        }
        if (t - 1) % opts.stride == 0 {
            records.push(RoundRecord {
                t,
                values: profile.values.clone(),
                reports: reports.bids().to_vec(),
                alloc: outcome.allocation.0,
                payments_credits: payments_credits.clone(),
                cost_credits,
                budgets_after: ledger.budgets.iter().map(|c| c.0).collect(),
                depleted,
            });
        }
    }

    for u in &mut utilities {
        *u /= horizon as f64;
    }
    Ok(SimulationResult {
        n,
        m,
        horizon,
        mechanism: kind,
        records,
        stride: opts.stride,
        total_cost_credits,
        total_cost,
        utilities,
        spend_credits,
        depletion_times,
        initial_budgets: ledger.initial.iter().map(|c| c.0).collect(),
    })
}

/// Independent re-check of the feasibility proposition and the ledger
/// identities: `total cost <= alpha * T` (in exact credits) and
/// `B_i[t] = B_i[t-1] - p_i[t]` with `B_i >= 0` throughout, with depleted
/// agents never paying. Requires a full (unthinned) trace.
pub fn feasibility_audit(result: &SimulationResult, instance: &Instance) -> Result<bool> {
    if result.is_thinned() {
        return Err(Error::Trace("feasibility audit needs a full trace (stride 1)".into()));
    }
    let n = result.n;
    let p_max = Credits::ceil_units(result.mechanism.p_max::<f64>(n));
    let mut budgets: Vec<i64> = instance
        .shares
        .iter()
        .map(|&a| Credits::floor_units(a * result.horizon as f64).0)
        .collect();
    if budgets != result.initial_budgets {
        return Ok(false);
    }
    let budget_total: i64 = budgets.iter().sum();

    let mut cost_total = 0i64;
    for rec in &result.records {
        let mut round_payment = 0i64;
        for i in 0..n {
            let was_depleted = budgets[i] < p_max.0;
            if rec.depleted[i] != was_depleted {
                return Ok(false);
            }
            if was_depleted && rec.payments_credits[i] != 0 {
                return Ok(false);
            }
            budgets[i] -= rec.payments_credits[i];
            if budgets[i] < 0 || budgets[i] != rec.budgets_after[i] {
                return Ok(false);
            }
            round_payment += rec.payments_credits[i];
        }
        // cost covering carries to credits: sum of rounded-up payments
        // dominates the rounded-up cost
        if rec.cost_credits > round_payment {
            return Ok(false);
        }
        cost_total += rec.cost_credits;
    }
    if cost_total != result.total_cost_credits {
        return Ok(false);
    }
    Ok(cost_total <= budget_total)
}
