//! Per-period wealth update rules.
//!
//! Every stepper mutates a [`PopulationState`] in place: it snapshots the current
//! wealth into `prev_wealth`, applies its rule, and advances `t` by one.
//! Wealth is absorbing at zero for every rule.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Which accumulation rule drives a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Compound,
    Simple,
    DecreasingCompound,
    /// Variant of `DecreasingCompound` that scales the net return `r` instead
    /// of the gross return `1 + r`.
    DecreasingNetCompound,
    TwoFactorNoReinvest,
    TwoFactorReinvest,
}

impl ProcessKind {
    pub fn is_two_factor(self) -> bool {
        matches!(
            self,
            ProcessKind::TwoFactorNoReinvest | ProcessKind::TwoFactorReinvest
        )
    }
}

/// How the saved share of labour income is drawn in the two-factor processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SavingPolicy {
    /// `s ~ U[0, 1]`, mean 0.5.
    #[default]
    Uniform,
    /// The same share for every agent and period.
    Constant(f64),
}

impl SavingPolicy {
    pub fn mean(self) -> f64 {
        match self {
            SavingPolicy::Uniform => 0.5,
            SavingPolicy::Constant(s) => s,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            SavingPolicy::Constant(s) if !(0.0..=1.0).contains(&s) => {
                Err(Error::config(format!("saving rate {s} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Inherited and saved parts of wealth, tracked for the two-factor processes.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthComponents {
    pub inherited: Vec<f64>,
    pub savings: Vec<f64>,
}

impl WealthComponents {
    /// Fraction of total wealth that originates from saved labour income.
    pub fn savings_share(&self) -> Option<f64> {
        let saved: f64 = self.savings.iter().sum();
        let total = saved + self.inherited.iter().sum::<f64>();
        (total > 0.0).then(|| saved / total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    /// Number of completed periods; the initial endowment is period 0.
    pub t: usize,
    pub wealth: Vec<f64>,
    /// Wealth at the start of the current period, `None` before the first step.
    pub prev_wealth: Option<Vec<f64>>,
    pub components: Option<WealthComponents>,
    /// Per-period labour income, identical across agents.
    pub labour_income: f64,
}

impl PopulationState {
    pub fn new(agents: usize, initial_wealth: f64) -> Self {
        PopulationState {
            t: 0,
            wealth: vec![initial_wealth; agents],
            prev_wealth: None,
            components: None,
            labour_income: 0.0,
        }
    }

    /// Initial state for the two-factor processes: everything starts as inherited wealth.
    pub fn with_components(agents: usize, initial_wealth: f64, labour_income: f64) -> Self {
        PopulationState {
            components: Some(WealthComponents {
                inherited: vec![initial_wealth; agents],
                savings: vec![0.0; agents],
            }),
            labour_income,
            ..PopulationState::new(agents, initial_wealth)
        }
    }

    pub fn len(&self) -> usize {
        self.wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wealth.is_empty()
    }

    pub fn total_wealth(&self) -> f64 {
        self.wealth.iter().sum()
    }

    pub fn prev_total_wealth(&self) -> Option<f64> {
        self.prev_wealth.as_ref().map(|w| w.iter().sum())
    }

    fn begin_period(&mut self) {
        match &mut self.prev_wealth {
            Some(prev) => prev.copy_from_slice(&self.wealth),
            None => self.prev_wealth = Some(self.wealth.clone()),
        }
    }

    /// Add a per-agent net transfer (subsidy minus tax) after the dynamics step.
    /// Tracked components receive the transfer pro rata to their current size.
    pub fn apply_transfers(&mut self, net: &[f64]) -> Result<()> {
        check_len("net transfers", self.len(), net.len())?;
        if let Some(c) = &mut self.components {
            for i in 0..net.len() {
                let w = c.inherited[i] + c.savings[i];
                if w > 0.0 {
                    let inh_share = c.inherited[i] / w;
                    c.inherited[i] += net[i] * inh_share;
                    c.savings[i] += net[i] * (1.0 - inh_share);
                } else {
                    c.inherited[i] += net[i];
                }
            }
        }
        for (w, d) in self.wealth.iter_mut().zip(net) {
            *w = (*w + d).max(0.0);
        }
        Ok(())
    }
}

/// Running sum of returns for the simple-return process.
///
/// Wealth is `stake * (1 + sum_returns) + transfers`, where `transfers`
/// accumulates fiscal net transfers. An agent whose wealth reaches zero is
/// absorbed: its stake drops to zero and its return sum stops moving.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeReturnLedger {
    pub stake: Vec<f64>,
    pub sum_returns: Vec<f64>,
    pub transfers: Vec<f64>,
    pub absorbed: Vec<bool>,
}

impl CumulativeReturnLedger {
    pub fn new(initial_wealth: &[f64]) -> Self {
        let n = initial_wealth.len();
        CumulativeReturnLedger {
            stake: initial_wealth.to_vec(),
            sum_returns: vec![0.0; n],
            transfers: vec![0.0; n],
            absorbed: vec![false; n],
        }
    }

    pub fn book_transfers(&mut self, net: &[f64]) -> Result<()> {
        check_len("ledger transfers", self.transfers.len(), net.len())?;
        for (acc, d) in self.transfers.iter_mut().zip(net) {
            *acc += d;
        }
        Ok(())
    }

    pub fn absorbed_count(&self) -> usize {
        self.absorbed.iter().filter(|&&a| a).count()
    }
}

/// `W <- (1 + r) W`.
pub fn step_compound(state: &mut PopulationState, returns: &[f64]) -> Result<()> {
    check_len("returns", state.len(), returns.len())?;
    state.begin_period();
    for (w, r) in state.wealth.iter_mut().zip(returns) {
        debug_assert!(*r >= -1.0);
        *w *= 1.0 + r;
    }
    state.t += 1;
    Ok(())
}

/// Returns accumulate additively on the initial stake; gains are never reinvested.
pub fn step_simple(
    state: &mut PopulationState,
    ledger: &mut CumulativeReturnLedger,
    returns: &[f64],
) -> Result<()> {
    check_len("returns", state.len(), returns.len())?;
    check_len("ledger", state.len(), ledger.stake.len())?;
    state.begin_period();
    let mut newly_absorbed = 0usize;
    for (i, &r) in returns.iter().enumerate() {
        if !ledger.absorbed[i] {
            ledger.sum_returns[i] += r;
        }
        let w = ledger.stake[i] * (1.0 + ledger.sum_returns[i]) + ledger.transfers[i];
        if w <= 0.0 && !ledger.absorbed[i] {
            ledger.absorbed[i] = true;
            ledger.stake[i] = 0.0;
            ledger.transfers[i] = 0.0;
            newly_absorbed += 1;
            state.wealth[i] = 0.0;
        } else {
            state.wealth[i] = w.max(0.0);
        }
    }
    if newly_absorbed > 0 {
        log::debug!(
            "simple process: {newly_absorbed} agent(s) absorbed at zero in period {}",
            state.t + 1
        );
    }
    state.t += 1;
    Ok(())
}

/// Outcome of scaling returns against aggregate wealth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjustment {
    Applied,
    /// Total wealth was not positive; every gross return was set to zero.
    Degenerate,
}

/// Divide every gross return by `ln(1 + total_wealth)` (natural log), clamping
/// the adjusted gross return at zero.
pub fn apply_decreasing_adjustment(returns: &mut [f64], total_wealth: f64) -> Adjustment {
    if !(total_wealth > 0.0) {
        log::warn!("decreasing returns: total wealth {total_wealth} is not positive; all gross returns set to 0");
        returns.iter_mut().for_each(|r| *r = -1.0);
        return Adjustment::Degenerate;
    }
    let divisor = total_wealth.ln_1p();
    for r in returns.iter_mut() {
        *r = ((1.0 + *r) / divisor - 1.0).max(-1.0);
    }
    Adjustment::Applied
}

/// Divide every net return by `ln(1 + total_wealth)`, so that gains and losses
/// shrink toward zero as aggregate wealth grows. Adjusted returns are clamped
/// at total loss.
pub fn apply_decreasing_net_adjustment(returns: &mut [f64], total_wealth: f64) -> Adjustment {
    if !(total_wealth > 0.0) {
        log::warn!("decreasing net returns: total wealth {total_wealth} is not positive; all gross returns set to 0");
        returns.iter_mut().for_each(|r| *r = -1.0);
        return Adjustment::Degenerate;
    }
    let divisor = total_wealth.ln_1p();
    for r in returns.iter_mut() {
        *r = (*r / divisor).max(-1.0);
    }
    Adjustment::Applied
}

/// Compound step with returns first scaled against current aggregate wealth.
/// The very first period (`t == 0 -> 1`) is left unadjusted.
pub fn step_decreasing(state: &mut PopulationState, returns: &mut [f64]) -> Result<Adjustment> {
    decreasing_with(state, returns, apply_decreasing_adjustment)
}

/// As [`step_decreasing`] with [`apply_decreasing_net_adjustment`].
pub fn step_decreasing_net(state: &mut PopulationState, returns: &mut [f64]) -> Result<Adjustment> {
    decreasing_with(state, returns, apply_decreasing_net_adjustment)
}

fn decreasing_with(
    state: &mut PopulationState,
    returns: &mut [f64],
    adjust: fn(&mut [f64], f64) -> Adjustment,
) -> Result<Adjustment> {
    check_len("returns", state.len(), returns.len())?;
    let outcome = if state.t == 0 {
        Adjustment::Applied
    } else {
        adjust(returns, state.total_wealth())
    };
    step_compound(state, returns)?;
    Ok(outcome)
}

/// Two-factor update with constant labour income `Y0 = state.labour_income`.
///
/// Without reinvestment the inherited part compounds while savings pile up
/// additively; with reinvestment the whole stock compounds before this
/// period's savings are added.
pub fn step_two_factor(
    state: &mut PopulationState,
    returns: &[f64],
    saving_rates: &[f64],
    reinvest: bool,
) -> Result<()> {
    check_len("returns", state.len(), returns.len())?;
    check_len("saving rates", state.len(), saving_rates.len())?;
    if let Some(bad) = saving_rates.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::config(format!("saving rate {bad} outside [0, 1]")));
    }
    let y0 = state.labour_income;
    state.begin_period();
    let c = state
        .components
        .as_mut()
        .ok_or_else(|| Error::Shape("two-factor step needs tracked wealth components".into()))?;
    check_len("components", c.inherited.len(), returns.len())?;
    for i in 0..returns.len() {
        let gross = 1.0 + returns[i];
        let saved = saving_rates[i] * y0;
        c.inherited[i] *= gross;
        c.savings[i] = if reinvest {
            c.savings[i] * gross + saved
        } else {
            c.savings[i] + saved
        };
        state.wealth[i] = c.inherited[i] + c.savings[i];
    }
    state.t += 1;
    Ok(())
}

/// Initial capital whose mean yield equals mean saved labour income.
pub fn fair_initial_wealth(mean_saving: f64, mean_return: f64, labour_income: f64) -> Result<f64> {
    if !(mean_return > 0.0) {
        return Err(Error::config(format!(
            "fair initial wealth needs a positive mean return, got {mean_return}"
        )));
    }
    Ok(mean_saving * labour_income / mean_return)
}
