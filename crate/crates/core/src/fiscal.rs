//! Levy on positive within-period wealth gains and redistribution of the proceeds.
//!
//! Two levies (proportional, progressive) cross two redistributions (uniform
//! public service, regressive welfare transfer), giving four regimes. The levy
//! base is the pre-redistribution gain of the current period; subsidies paid
//! in a period are never taxed in that same period.

use serde::{Deserialize, Serialize};

use crate::dynamics::PopulationState;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevyMode {
    /// Every agent pays `rate` on its gain.
    Proportional,
    /// Rate rises linearly from 0 (smallest gain) to `rate` (largest gain).
    Progressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redistribution {
    PublicService,
    Welfare,
}

/// One cell of the levy x redistribution table. `rate` is the flat rate for a
/// proportional levy and the top rate for a progressive one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxPolicy {
    pub levy: LevyMode,
    pub rate: f64,
    pub redistribution: Redistribution,
}

impl TaxPolicy {
    pub fn new(levy: LevyMode, rate: f64, redistribution: Redistribution) -> Self {
        TaxPolicy {
            levy,
            rate,
            redistribution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "tax rate {} outside [0, 1]",
                self.rate
            )));
        }
        Ok(())
    }
}

/// What the fiscal stage did in one period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiscalRecord {
    pub tax_base: Vec<f64>,
    pub tax: Vec<f64>,
    pub subsidy: Vec<f64>,
    /// Statutory rate applied to each agent's base.
    pub rates: Vec<f64>,
    pub total_base: f64,
    pub total_tax: f64,
    pub total_subsidy: f64,
    /// `sum(tax) / sum(base)`, zero when there is no base.
    pub aggregate_rate: f64,
    pub mean_individual_rate: f64,
    /// Mean over agents with positive pre-fiscal wealth of `subsidy / wealth`.
    pub mean_redistribution_rate: f64,
    /// Tax paid by the richest half over wealth held by the poorest half (pre-fiscal).
    pub top50_levy_ratio: Option<f64>,
}

impl FiscalRecord {
    pub fn conservation_error(&self) -> f64 {
        let scale = self.total_tax.abs().max(f64::MIN_POSITIVE);
        (self.total_subsidy - self.total_tax).abs() / scale
    }
}

/// Positive part of the within-period wealth change; `None` before the first period.
pub fn tax_base(state: &PopulationState) -> Option<Vec<f64>> {
    let prev = state.prev_wealth.as_ref()?;
    Some(
        state
            .wealth
            .iter()
            .zip(prev)
            .map(|(w, p)| (w - p).max(0.0))
            .collect(),
    )
}

pub fn levy_proportional(base: &[f64], tau: f64) -> Vec<f64> {
    base.iter().map(|b| b * tau).collect()
}

/// Per-agent progressive rates `tau_max * (b - min) / (max - min)`; all zero on a flat base.
pub fn progressive_rates(base: &[f64], tau_max: f64) -> Vec<f64> {
    let (lo, hi) = base
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| {
            (lo.min(b), hi.max(b))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; base.len()];
    }
    base.iter().map(|b| tau_max * ((b - lo) / range)).collect()
}

pub fn levy_progressive(base: &[f64], tau_max: f64) -> Vec<f64> {
    base.iter()
        .zip(progressive_rates(base, tau_max))
        .map(|(b, r)| b * r)
        .collect()
}

/// Equal split of the total levy.
pub fn redistribute_uniform(taxes: &[f64]) -> Vec<f64> {
    if taxes.is_empty() {
        return Vec::new();
    }
    let each = taxes.iter().sum::<f64>() / taxes.len() as f64;
    vec![each; taxes.len()]
}

/// Subsidy shrinking with the recipient's share of the total base:
/// `(1 - b_i / sum b) * sum(tax) / (N - 1)`.
pub fn redistribute_regressive(taxes: &[f64], base: &[f64]) -> Result<Vec<f64>> {
    check_len("tax base", taxes.len(), base.len())?;
    let n = taxes.len();
    if n < 2 {
        return Err(Error::config(
            "welfare redistribution needs at least two agents",
        ));
    }
    let total_base: f64 = base.iter().sum();
    if !(total_base > 0.0) {
        return Ok(vec![0.0; n]);
    }
    let pool = taxes.iter().sum::<f64>() / (n - 1) as f64;
    Ok(base
        .iter()
        .map(|b| ((1.0 - b / total_base) * pool).max(0.0))
        .collect())
}

/// Levy and redistribute in place. Before the first period there is no base
/// and the state is left untouched.
pub fn apply_fiscal(state: &mut PopulationState, policy: &TaxPolicy) -> Result<FiscalRecord> {
    let n = state.len();
    let Some(base) = tax_base(state) else {
        return Ok(FiscalRecord {
            tax_base: vec![0.0; n],
            tax: vec![0.0; n],
            subsidy: vec![0.0; n],
            rates: vec![0.0; n],
            ..FiscalRecord::default()
        });
    };

    let rates = match policy.levy {
        LevyMode::Proportional => vec![policy.rate; n],
        LevyMode::Progressive => progressive_rates(&base, policy.rate),
    };
    let tax: Vec<f64> = base.iter().zip(&rates).map(|(b, r)| b * r).collect();
    let subsidy = match policy.redistribution {
        Redistribution::PublicService => redistribute_uniform(&tax),
        Redistribution::Welfare => redistribute_regressive(&tax, &base)?,
    };

    let total_base: f64 = base.iter().sum();
    let total_tax: f64 = tax.iter().sum();
    let total_subsidy: f64 = subsidy.iter().sum();
    let aggregate_rate = if total_base > 0.0 {
        total_tax / total_base
    } else {
        0.0
    };
    let mean_individual_rate = if n > 0 {
        rates.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };

    let (mut redistribution_sum, mut holders) = (0.0, 0usize);
    for (w, s) in state.wealth.iter().zip(&subsidy) {
        if *w > 0.0 {
            redistribution_sum += s / w;
            holders += 1;
        }
    }
    let mean_redistribution_rate = if holders > 0 {
        redistribution_sum / holders as f64
    } else {
        0.0
    };
    let top50_levy_ratio = top_half_levy_ratio(&state.wealth, &tax);

    let net: Vec<f64> = subsidy.iter().zip(&tax).map(|(s, t)| s - t).collect();
    for (i, (w, d)) in state.wealth.iter().zip(&net).enumerate() {
        assert!(
            w + d >= -1e-9 * w.abs().max(1.0),
            "fiscal stage drove agent {i} negative: {w} + {d}"
        );
    }
    state.apply_transfers(&net)?;

    let record = FiscalRecord {
        tax_base: base,
        tax,
        subsidy,
        rates,
        total_base,
        total_tax,
        total_subsidy,
        aggregate_rate,
        mean_individual_rate,
        mean_redistribution_rate,
        top50_levy_ratio,
    };
    debug_assert!(record.total_tax == 0.0 || record.conservation_error() < 1e-9);
    Ok(record)
}

/// Tax paid by the `N/2` richest agents over the wealth of the remaining agents.
/// Ties in wealth are split by agent index.
fn top_half_levy_ratio(wealth: &[f64], tax: &[f64]) -> Option<f64> {
    let n = wealth.len();
    if n < 2 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let bottom = n - n / 2;
    // Ascending by (wealth, index): the first `bottom` entries are the poorer half.
    idx.select_nth_unstable_by(bottom - 1, |&a, &b| {
        wealth[a].total_cmp(&wealth[b]).then(a.cmp(&b))
    });
    let bottom_wealth: f64 = idx[..bottom].iter().map(|&i| wealth[i]).sum();
    let top_tax: f64 = idx[bottom..].iter().map(|&i| tax[i]).sum();
    (bottom_wealth > 0.0).then(|| top_tax / bottom_wealth)
}
