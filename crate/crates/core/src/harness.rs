//! Experiment orchestration: configuration, replication ensembles, sweeps,
//! rank persistence and persistent output.
//!
//! Replication `k` of every scenario draws from the streams keyed `(k, block)`
//! under the configuration's single `base_seed`, so all scenarios of one
//! configuration (and all sweep cells) see common random numbers. Replications
//! run in parallel on the ambient rayon pool; results are merged in
//! replication order, so the thread count never changes the output.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    step_compound, step_decreasing, step_decreasing_net, step_simple, step_two_factor,
    CumulativeReturnLedger, PopulationState, ProcessKind, SavingPolicy,
};
use crate::error::{Error, Result};
use crate::fiscal::{apply_fiscal, LevyMode, Redistribution, TaxPolicy};
use crate::metrics::{
    aggregate_growth, decile_map, decile_shares_sorted, gini_sorted, normalized_ranks,
    sorted_ascending, theil, top_share_sorted, weighted_mobility, CohortTracker, Persistence,
};
use crate::returns::{Channel, ReturnSpec, StreamSet, RNG_ALGORITHM};

fn default_labour_income() -> f64 {
    1.0
}

fn default_stride() -> usize {
    10
}

fn default_horizon() -> usize {
    1000
}

/// One economic process with its return distribution and optional fiscal regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub process: ProcessKind,
    pub returns: ReturnSpec,
    #[serde(default)]
    pub saving: SavingPolicy,
    #[serde(default = "default_labour_income")]
    pub labour_income: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tax: Option<TaxPolicy>,
}

impl Scenario {
    pub fn new(id: impl Into<String>, process: ProcessKind, returns: ReturnSpec) -> Self {
        Scenario {
            id: id.into(),
            process,
            returns,
            saving: SavingPolicy::Uniform,
            labour_income: default_labour_income(),
            tax: None,
        }
    }

    pub fn with_tax(mut self, tax: TaxPolicy) -> Self {
        self.tax = Some(tax);
        self
    }

    pub fn with_saving(mut self, saving: SavingPolicy) -> Self {
        self.saving = saving;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains([',', '\n', '"']) {
            return Err(Error::config(format!("invalid scenario id {:?}", self.id)));
        }
        self.returns.validate()?;
        self.saving.validate()?;
        if !(self.labour_income >= 0.0 && self.labour_income.is_finite()) {
            return Err(Error::config(format!(
                "labour income {} must be a finite non-negative amount",
                self.labour_income
            )));
        }
        if let Some(tax) = &self.tax {
            tax.validate()?;
        }
        Ok(())
    }
}

const BASELINE: ReturnSpec = ReturnSpec::Normal {
    mu: 0.05,
    sigma: 0.05,
};
const GAMMA: ReturnSpec = ReturnSpec::Gamma {
    shape: 0.25,
    scale: 0.2,
};
const CONSTANT: ReturnSpec = ReturnSpec::Constant { rate: 0.05 };

/// Names accepted by [`named_scenario`].
pub const SCENARIO_NAMES: &[&str] = &[
    "compound",
    "compound_gamma",
    "compound_constant",
    "simple",
    "simple_gamma",
    "simple_constant",
    "decreasing",
    "decreasing_net",
    "two_factor",
    "two_factor_reinvest",
    "two_factor_no_saving",
    "prop_ps",
    "prop_welfare",
    "prog_ps",
    "prog_welfare",
];

/// Built-in scenarios at the reference calibration: `N(0.05, 0.05)` or
/// `Gamma(0.25, 0.2)` returns, flat tax 0.05, progressive top rate 0.10.
pub fn named_scenario(name: &str) -> Option<Scenario> {
    use ProcessKind::*;
    let tax = |levy, redistribution| {
        let rate = match levy {
            LevyMode::Proportional => 0.05,
            LevyMode::Progressive => 0.10,
        };
        Scenario::new(name, Compound, BASELINE).with_tax(TaxPolicy::new(levy, rate, redistribution))
    };
    let s = match name {
        "compound" => Scenario::new(name, Compound, BASELINE),
        "compound_gamma" => Scenario::new(name, Compound, GAMMA),
        "compound_constant" => Scenario::new(name, Compound, CONSTANT),
        "simple" => Scenario::new(name, Simple, BASELINE),
        "simple_gamma" => Scenario::new(name, Simple, GAMMA),
        "simple_constant" => Scenario::new(name, Simple, CONSTANT),
        "decreasing" => Scenario::new(name, DecreasingCompound, BASELINE),
        "decreasing_net" => Scenario::new(name, DecreasingNetCompound, BASELINE),
        "two_factor" => Scenario::new(name, TwoFactorNoReinvest, BASELINE),
        "two_factor_reinvest" => Scenario::new(name, TwoFactorReinvest, BASELINE),
        "two_factor_no_saving" => Scenario::new(name, TwoFactorNoReinvest, BASELINE)
            .with_saving(SavingPolicy::Constant(0.0)),
        "prop_ps" => tax(LevyMode::Proportional, Redistribution::PublicService),
        "prop_welfare" => tax(LevyMode::Proportional, Redistribution::Welfare),
        "prog_ps" => tax(LevyMode::Progressive, Redistribution::PublicService),
        "prog_welfare" => tax(LevyMode::Progressive, Redistribution::Welfare),
        _ => return None,
    };
    Some(s)
}

/// Grids of normal-return parameters; every `(mu, sigma)` pair is one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SweepGrid {
    /// `start, start + step, ..., end` inclusive, rounded to kill accumulation error.
    pub fn range(start: f64, end: f64, step: f64) -> Vec<f64> {
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| ((start + step * k as f64) * 1e12).round() / 1e12)
            .collect()
    }

    pub fn cells(&self) -> usize {
        self.mu.len() * self.sigma.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistenceSpec {
    /// Periods at which the top percentile is selected.
    pub selections: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenarios run side by side under one seed.
    pub scenarios: Vec<Scenario>,
    /// Number of agents.
    pub n: usize,
    pub t_max: usize,
    pub replications: usize,
    pub base_seed: u64,
    /// Initial wealth of every agent.
    pub w0: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence: Option<PersistenceSpec>,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 1000 agents, 2000 periods, 20 replications.
    pub fn desk(scenarios: Vec<Scenario>) -> Self {
        ExperimentConfig {
            scenarios,
            n: 1000,
            t_max: 2000,
            replications: 20,
            base_seed: 20_190_236,
            w0: 10.0,
            record_stride: default_stride(),
            sweep: None,
            persistence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::config(format!(
                "n = {} but at least 10 agents are required",
                self.n
            )));
        }
        if self.t_max < 2 {
            return Err(Error::config(format!(
                "t_max = {} must be at least 2",
                self.t_max
            )));
        }
        if self.replications < 1 || self.replications > u32::MAX as usize {
            return Err(Error::config("replications must be at least 1"));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::config(format!("w0 = {} must be positive", self.w0)));
        }
        if self.record_stride < 1 {
            return Err(Error::config("record_stride must be at least 1"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("at least one scenario is required"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::config(format!("duplicate scenario id {:?}", s.id)));
            }
        }
        if let Some(grid) = &self.sweep {
            if grid.mu.is_empty() || grid.sigma.is_empty() {
                return Err(Error::config("sweep grids must be non-empty"));
            }
            for (&mu, &sigma) in grid.mu.iter().zip(grid.sigma.iter().cycle()) {
                ReturnSpec::Normal { mu, sigma }.validate()?;
            }
            for &sigma in &grid.sigma {
                ReturnSpec::Normal { mu: 0.0, sigma }.validate()?;
            }
        }
        if let Some(p) = &self.persistence {
            if p.selections.is_empty() || p.horizon == 0 {
                return Err(Error::config(
                    "persistence needs at least one selection period and a positive horizon",
                ));
            }
            if let Some(&last) = p.selections.iter().max() {
                if last + p.horizon > self.t_max {
                    return Err(Error::config(format!(
                        "persistence selection at t = {last} plus horizon {} exceeds t_max = {}",
                        p.horizon, self.t_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Periods at which metrics are recorded: multiples of the stride plus `t_max`.
    pub fn recorded_periods(&self) -> Vec<usize> {
        (1..=self.t_max)
            .filter(|t| t.is_multiple_of(self.record_stride) || *t == self.t_max)
            .collect()
    }

    fn records_at(&self, t: usize) -> bool {
        t > 0 && (t.is_multiple_of(self.record_stride) || t == self.t_max)
    }
}

/// Built-in configuration files, addressable by name from the CLI.
pub const PRESETS: &[(&str, &str)] = &[
    ("desk.json", include_str!("../presets/desk.json")),
    ("paper.json", include_str!("../presets/paper.json")),
    (
        "paper-compare.json",
        include_str!("../presets/paper-compare.json"),
    ),
    (
        "paper-sweep.json",
        include_str!("../presets/paper-sweep.json"),
    ),
    (
        "paper-persistence.json",
        include_str!("../presets/paper-persistence.json"),
    ),
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name || n.trim_end_matches(".json") == name)
        .map(|(_, text)| serde_json::from_str(text).expect("built-in preset parses"))
}

/// Read a configuration from a file, or from a built-in preset of that name
/// when no such file exists. A `manifest.json` written by [`write_outputs`] is
/// accepted as well.
pub fn load_config(path_or_preset: &str) -> Result<ExperimentConfig> {
    let path = Path::new(path_or_preset);
    if !path.exists() {
        if let Some(cfg) = preset(path_or_preset) {
            return Ok(cfg);
        }
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, serde_json::Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("config") {
        Some(inner) => ExperimentConfig::deserialize(inner),
        None => ExperimentConfig::deserialize(&value),
    }
}

/// Measurements of one replication at one recorded period.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub t: usize,
    pub gini: f64,
    pub theil: f64,
    pub top1_share: f64,
    pub decile_shares: [f64; 10],
    pub mobility: f64,
    pub growth: Option<f64>,
    pub total_wealth: f64,
    pub mean_tax_rate: f64,
    pub mean_individual_tax_rate: f64,
    pub mean_redistribution_rate: f64,
    pub top50_levy_ratio: Option<f64>,
    pub savings_share: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct FiscalSnapshot {
    aggregate_rate: f64,
    individual_rate: f64,
    redistribution_rate: f64,
    top50_levy_ratio: Option<f64>,
}

/// Everything one replication produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replication: usize,
    pub records: Vec<MetricsRecord>,
    /// Mean of per-period aggregate growth over all periods.
    pub time_mean_growth: Option<f64>,
    /// Worst relative gap between total subsidy and total tax over all periods.
    pub max_conservation_error: f64,
    /// Agents at zero wealth at the end of the run.
    pub absorbed: usize,
}

/// Process-specific mutable state of one replication.
struct Replica<'a> {
    scenario: &'a Scenario,
    state: PopulationState,
    ledger: Option<CumulativeReturnLedger>,
    return_streams: StreamSet,
    saving_streams: Option<StreamSet>,
    returns: Vec<f64>,
    savings: Vec<f64>,
}

impl<'a> Replica<'a> {
    fn new(cfg: &'a ExperimentConfig, scenario: &'a Scenario, replication: u32) -> Self {
        let n = cfg.n;
        let state = if scenario.process.is_two_factor() {
            PopulationState::with_components(n, cfg.w0, scenario.labour_income)
        } else {
            PopulationState::new(n, cfg.w0)
        };
        let ledger = (scenario.process == ProcessKind::Simple)
            .then(|| CumulativeReturnLedger::new(&state.wealth));
        let saving_streams = (scenario.process.is_two_factor()
            && scenario.saving == SavingPolicy::Uniform)
            .then(|| StreamSet::new(cfg.base_seed, Channel::Saving, replication, n));
        Replica {
            scenario,
            state,
            ledger,
            return_streams: StreamSet::new(cfg.base_seed, Channel::Returns, replication, n),
            saving_streams,
            returns: vec![0.0; n],
            savings: vec![0.0; n],
        }
    }

    /// Draw returns, apply the process, then the fiscal stage.
    fn step(&mut self) -> Result<Option<crate::fiscal::FiscalRecord>> {
        self.return_streams
            .fill_returns(&self.scenario.returns, &mut self.returns);
        match self.scenario.process {
            ProcessKind::Compound => step_compound(&mut self.state, &self.returns)?,
            ProcessKind::Simple => {
                let ledger = self.ledger.as_mut().expect("simple process keeps a ledger");
                step_simple(&mut self.state, ledger, &self.returns)?
            }
            ProcessKind::DecreasingCompound => {
                step_decreasing(&mut self.state, &mut self.returns)?;
            }
            ProcessKind::DecreasingNetCompound => {
                step_decreasing_net(&mut self.state, &mut self.returns)?;
            }
            ProcessKind::TwoFactorNoReinvest | ProcessKind::TwoFactorReinvest => {
                match (&mut self.saving_streams, self.scenario.saving) {
                    (Some(streams), _) => streams.fill_saving_rates(&mut self.savings),
                    (None, SavingPolicy::Constant(s)) => self.savings.fill(s),
                    (None, SavingPolicy::Uniform) => unreachable!("uniform saving owns streams"),
                }
                let reinvest = self.scenario.process == ProcessKind::TwoFactorReinvest;
                step_two_factor(&mut self.state, &self.returns, &self.savings, reinvest)?
            }
        }
        let Some(policy) = &self.scenario.tax else {
            return Ok(None);
        };
        let record = apply_fiscal(&mut self.state, policy)?;
        if let Some(ledger) = &mut self.ledger {
            let net: Vec<f64> = record
                .subsidy
                .iter()
                .zip(&record.tax)
                .map(|(s, t)| s - t)
                .collect();
            ledger.book_transfers(&net)?;
        }
        Ok(Some(record))
    }

    fn measure(&self, fiscal: &FiscalSnapshot) -> Result<MetricsRecord> {
        let state = &self.state;
        let sorted = sorted_ascending(&state.wealth);
        let total_wealth: f64 = sorted.iter().sum();
        let prev = state
            .prev_wealth
            .as_ref()
            .expect("metrics are only recorded after a step");
        let mobility = weighted_mobility(&decile_map(prev)?, &decile_map(&state.wealth)?)?;
        let growth = aggregate_growth(total_wealth, prev.iter().sum());
        Ok(MetricsRecord {
            t: state.t,
            gini: gini_sorted(&sorted),
            theil: theil(&state.wealth),
            top1_share: top_share_sorted(&sorted, 0.01),
            decile_shares: decile_shares_sorted(&sorted),
            mobility,
            growth,
            total_wealth,
            mean_tax_rate: fiscal.aggregate_rate,
            mean_individual_tax_rate: fiscal.individual_rate,
            mean_redistribution_rate: fiscal.redistribution_rate,
            top50_levy_ratio: fiscal.top50_levy_ratio,
            savings_share: state.components.as_ref().and_then(|c| c.savings_share()),
        })
    }
}

/// Run one replication of `scenario`, calling `observe` with the state at
/// period 0 and after every completed period.
pub fn run_replication(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    replication: usize,
    observe: &mut dyn FnMut(&PopulationState),
) -> Result<ReplicationResult> {
    let mut replica = Replica::new(cfg, scenario, replication as u32);
    let mut records = Vec::with_capacity(cfg.t_max / cfg.record_stride + 1);
    let (mut growth_sum, mut growth_count) = (0.0, 0usize);
    let mut max_conservation_error: f64 = 0.0;
    let no_tax = FiscalSnapshot {
        top50_levy_ratio: Some(0.0),
        ..FiscalSnapshot::default()
    };
    observe(&replica.state);
    for _ in 0..cfg.t_max {
        let fiscal = replica.step()?;
        let state = &replica.state;
        if let Some(g) = state
            .prev_total_wealth()
            .and_then(|prev| aggregate_growth(state.total_wealth(), prev))
        {
            growth_sum += g;
            growth_count += 1;
        }
        if let Some(f) = &fiscal {
            if f.total_tax > 0.0 {
                max_conservation_error = max_conservation_error.max(f.conservation_error());
            }
        }
        observe(state);
        if cfg.records_at(state.t) {
            let snapshot = match &fiscal {
                Some(f) => FiscalSnapshot {
                    aggregate_rate: f.aggregate_rate,
                    individual_rate: f.mean_individual_rate,
                    redistribution_rate: f.mean_redistribution_rate,
                    top50_levy_ratio: f.top50_levy_ratio,
                },
                None => no_tax.clone(),
            };
            records.push(replica.measure(&snapshot)?);
        }
    }
    Ok(ReplicationResult {
        replication,
        records,
        time_mean_growth: (growth_count > 0).then(|| growth_sum / growth_count as f64),
        max_conservation_error,
        absorbed: replica.state.wealth.iter().filter(|w| **w == 0.0).count(),
    })
}

/// Mean and population standard deviation of one quantity across replications.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Replications that contributed a value.
    pub count: usize,
}

impl Stat {
    /// Replications without a value are skipped; `None` when none has one.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let present: Vec<f64> = values.into_iter().flatten().collect();
        if present.is_empty() {
            return None;
        }
        // Deviations are taken from the first value so that identical inputs
        // give an exactly zero spread and an exact mean.
        let n = present.len() as f64;
        let origin = present[0];
        let shift = present.iter().map(|x| x - origin).sum::<f64>() / n;
        let var = present
            .iter()
            .map(|x| (x - origin - shift).powi(2))
            .sum::<f64>()
            / n;
        let mean = origin + shift;
        Some(Stat {
            mean,
            std: var.sqrt(),
            count: present.len(),
        })
    }

    fn of_all(values: impl IntoIterator<Item = f64>) -> Stat {
        Stat::of(values.into_iter().map(Some)).unwrap_or_default()
    }
}

/// Ensemble statistics at one recorded period.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub t: usize,
    pub gini: Stat,
    pub mobility: Stat,
    pub theil: Stat,
    pub top1_share: Stat,
    pub growth: Option<Stat>,
    pub total_wealth: Stat,
    pub mean_tax_rate: Stat,
    pub mean_individual_tax_rate: Stat,
    pub mean_redistribution_rate: Stat,
    pub top50_levy_ratio: Option<Stat>,
    pub savings_share: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub scenario: Scenario,
    pub replications: usize,
    pub rows: Vec<EnsembleRow>,
    pub time_mean_growth: Option<Stat>,
    pub max_conservation_error: f64,
    pub per_replication: Vec<ReplicationResult>,
}

impl EnsembleResult {
    fn merge(scenario: Scenario, reps: Vec<ReplicationResult>) -> Self {
        let periods = reps.first().map_or(0, |r| r.records.len());
        let rows = (0..periods)
            .map(|k| {
                let at = |f: &dyn Fn(&MetricsRecord) -> f64| {
                    Stat::of_all(reps.iter().map(|r| f(&r.records[k])))
                };
                let maybe = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
                    Stat::of(reps.iter().map(|r| f(&r.records[k])))
                };
                EnsembleRow {
                    t: reps[0].records[k].t,
                    gini: at(&|m| m.gini),
                    mobility: at(&|m| m.mobility),
                    theil: at(&|m| m.theil),
                    top1_share: at(&|m| m.top1_share),
                    growth: maybe(&|m| m.growth),
                    total_wealth: at(&|m| m.total_wealth),
                    mean_tax_rate: at(&|m| m.mean_tax_rate),
                    mean_individual_tax_rate: at(&|m| m.mean_individual_tax_rate),
                    mean_redistribution_rate: at(&|m| m.mean_redistribution_rate),
                    top50_levy_ratio: maybe(&|m| m.top50_levy_ratio),
                    savings_share: maybe(&|m| m.savings_share),
                }
            })
            .collect();
        EnsembleResult {
            time_mean_growth: Stat::of(reps.iter().map(|r| r.time_mean_growth)),
            max_conservation_error: reps
                .iter()
                .map(|r| r.max_conservation_error)
                .fold(0.0, f64::max),
            replications: reps.len(),
            scenario,
            rows,
            per_replication: reps,
        }
    }

    pub fn series(&self, f: impl Fn(&EnsembleRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &EnsembleRow {
        self.rows
            .last()
            .expect("t_max >= 2 guarantees a recorded period")
    }
}

/// Run every scenario of `cfg` over all replications.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<EnsembleResult>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.replications).map(move |k| (s, k)))
        .collect();
    let mut results = jobs
        .par_iter()
        .map(|&(s, k)| run_replication(cfg, &cfg.scenarios[s], k, &mut |_| {}))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok(cfg
        .scenarios
        .iter()
        .map(|s| {
            let reps: Vec<_> = results.by_ref().take(cfg.replications).collect();
            EnsembleResult::merge(s.clone(), reps)
        })
        .collect())
}

/// Run one scenario of `cfg` (by id) over all replications.
pub fn run_scenario(cfg: &ExperimentConfig, scenario_id: &str) -> Result<EnsembleResult> {
    let scenario = cfg
        .scenarios
        .iter()
        .find(|s| s.id == scenario_id)
        .ok_or_else(|| Error::config(format!("unknown scenario id {scenario_id:?}")))?;
    let single = ExperimentConfig {
        scenarios: vec![scenario.clone()],
        ..cfg.clone()
    };
    Ok(run_experiment(&single)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub mu: f64,
    pub sigma: f64,
    pub gini_final: Stat,
    pub mobility_final: Stat,
    pub time_mean_growth: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    /// Row-major: `mu` outer, `sigma` inner.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, mu: f64, sigma: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.mu == mu && c.sigma == sigma)
    }
}

/// Replace the first scenario's returns with `N(mu, sigma)` for every grid cell.
/// All cells share the base seed.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep requires `sweep` grids in the configuration"))?;
    let base = &cfg.scenarios[0];
    let cells: Vec<(f64, f64)> = grid
        .mu
        .iter()
        .flat_map(|&mu| grid.sigma.iter().map(move |&sigma| (mu, sigma)))
        .collect();
    let scenarios: Vec<Scenario> = cells
        .iter()
        .map(|&(mu, sigma)| Scenario {
            id: format!("{}_mu{mu}_sigma{sigma}", base.id),
            returns: ReturnSpec::Normal { mu, sigma },
            ..base.clone()
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|c| (0..cfg.replications).map(move |k| (c, k)))
        .collect();
    let finals = jobs
        .par_iter()
        .map(|&(c, k)| {
            run_replication(cfg, &scenarios[c], k, &mut |_| {}).map(|mut r| {
                let last = r.records.pop().expect("recorded final period");
                (last.gini, last.mobility, r.time_mean_growth)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = cells
        .iter()
        .zip(finals.chunks(cfg.replications))
        .map(|(&(mu, sigma), reps)| SweepCell {
            mu,
            sigma,
            gini_final: Stat::of_all(reps.iter().map(|r| r.0)),
            mobility_final: Stat::of_all(reps.iter().map(|r| r.1)),
            time_mean_growth: Stat::of(reps.iter().map(|r| r.2)),
        })
        .collect();
    Ok(SweepResult { cells })
}

/// Persistence cohorts of every replication for one selection period.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceOutcome {
    pub t_sel: usize,
    /// `(replication, cohort)` in replication order.
    pub cohorts: Vec<(usize, Persistence)>,
    /// Mean over replications of the cohort-mean normalised rank, offsets `1..=horizon`.
    pub mean_trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersistenceResult {
    pub outcomes: Vec<PersistenceOutcome>,
}

/// Follow top-percentile cohorts of the first scenario. Ranks are computed
/// only inside the tracking windows; no trajectory is stored.
pub fn run_persistence(cfg: &ExperimentConfig) -> Result<PersistenceResult> {
    cfg.validate()?;
    let spec = cfg
        .persistence
        .as_ref()
        .ok_or_else(|| Error::config("persistence requires a `persistence` section"))?;
    let scenario = &cfg.scenarios[0];
    let mut selections = spec.selections.clone();
    selections.sort_unstable();
    selections.dedup();

    let per_rep = (0..cfg.replications)
        .into_par_iter()
        .map(|k| {
            let mut pending = selections.clone().into_iter().peekable();
            let mut active: Vec<CohortTracker> = Vec::new();
            run_replication(cfg, scenario, k, &mut |state| {
                let t = state.t;
                if active.iter().any(|c| c.wants(t)) {
                    let ranks = normalized_ranks(&state.wealth);
                    for c in active.iter_mut().filter(|c| c.wants(t)) {
                        c.observe(t, &ranks);
                    }
                }
                while pending.peek() == Some(&t) {
                    pending.next();
                    active.push(CohortTracker::select(t, &state.wealth, spec.horizon));
                }
            })?;
            Ok(active
                .into_iter()
                .map(CohortTracker::finish)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let outcomes = selections
        .iter()
        .enumerate()
        .map(|(j, &t_sel)| {
            let cohorts: Vec<(usize, Persistence)> = per_rep
                .iter()
                .enumerate()
                .map(|(k, ps)| (k, ps[j].clone()))
                .collect();
            let reps = cohorts.len() as f64;
            let mean_trajectory = (0..spec.horizon)
                .map(|d| {
                    cohorts
                        .iter()
                        .map(|(_, p)| p.mean_trajectory[d])
                        .sum::<f64>()
                        / reps
                })
                .collect();
            PersistenceOutcome {
                t_sel,
                cohorts,
                mean_trajectory,
            }
        })
        .collect();
    Ok(PersistenceResult { outcomes })
}

/// Provenance written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub rng: String,
    /// Base of the logarithm in the aggregate-wealth return adjustment.
    pub log_base: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: ExperimentConfig) -> Self {
        Manifest {
            tool: "wealthsim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            rng: RNG_ALGORITHM.into(),
            log_base: "natural".into(),
            config,
        }
    }
}

/// Everything one invocation writes.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub manifest: Manifest,
    pub ensembles: Vec<EnsembleResult>,
    pub sweep: Option<SweepResult>,
    pub persistence: Option<PersistenceResult>,
    /// Also emit one row per replication in `timeseries.csv`.
    pub per_replication: bool,
}

pub const TIMESERIES_HEADER: &str = "scenario_id,replication,t,gini_mean,gini_std,mobility_mean,mobility_std,theil_mean,top1_mean,growth_mean,total_wealth_mean,mean_tax_rate,mean_redistribution_rate,top50_levy_ratio,mean_individual_tax_rate,savings_share_mean";
pub const SWEEP_HEADER: &str =
    "mu,sigma,gini_final,mobility_final,gini_final_std,mobility_final_std,growth_mean,growth_std";
pub const PERSISTENCE_HEADER: &str = "t_sel,agent_id,avg_norm_rank,dt,mean_norm_rank,replication";

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn timeseries_csv(ensembles: &[EnsembleResult], per_replication: bool) -> String {
    let mut out = String::from(TIMESERIES_HEADER);
    out.push('\n');
    for e in ensembles {
        let id = &e.scenario.id;
        for row in &e.rows {
            let _ = writeln!(
                out,
                "{id},ensemble,{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                row.t,
                num(row.gini.mean),
                num(row.gini.std),
                num(row.mobility.mean),
                num(row.mobility.std),
                num(row.theil.mean),
                num(row.top1_share.mean),
                opt(row.growth.map(|s| s.mean)),
                num(row.total_wealth.mean),
                num(row.mean_tax_rate.mean),
                num(row.mean_redistribution_rate.mean),
                opt(row.top50_levy_ratio.map(|s| s.mean)),
                num(row.mean_individual_tax_rate.mean),
                opt(row.savings_share.map(|s| s.mean)),
            );
        }
        if per_replication {
            for rep in &e.per_replication {
                for m in &rep.records {
                    let _ = writeln!(
                        out,
                        "{id},{},{},{},0.0,{},0.0,{},{},{},{},{},{},{},{},{}",
                        rep.replication,
                        m.t,
                        num(m.gini),
                        num(m.mobility),
                        num(m.theil),
                        num(m.top1_share),
                        opt(m.growth),
                        num(m.total_wealth),
                        num(m.mean_tax_rate),
                        num(m.mean_redistribution_rate),
                        opt(m.top50_levy_ratio),
                        num(m.mean_individual_tax_rate),
                        opt(m.savings_share),
                    );
                }
            }
        }
    }
    out
}

pub fn sweep_csv(sweep: Option<&SweepResult>) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in sweep.map(|s| s.cells.as_slice()).unwrap_or_default() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(c.mu),
            num(c.sigma),
            num(c.gini_final.mean),
            num(c.mobility_final.mean),
            num(c.gini_final.std),
            num(c.mobility_final.std),
            opt(c.time_mean_growth.map(|s| s.mean)),
            opt(c.time_mean_growth.map(|s| s.std)),
        );
    }
    out
}

/// Agent rows (`t_sel, agent_id, avg_norm_rank`) followed by trajectory rows
/// (`t_sel, dt, mean_norm_rank`) in one table; unused cells are empty.
pub fn persistence_csv(persistence: Option<&PersistenceResult>) -> String {
    let mut out = String::from(PERSISTENCE_HEADER);
    out.push('\n');
    let outcomes = persistence
        .map(|p| p.outcomes.as_slice())
        .unwrap_or_default();
    for o in outcomes {
        for (rep, cohort) in &o.cohorts {
            for (agent, avg) in &cohort.agents {
                let _ = writeln!(out, "{},{agent},{},,,{rep}", o.t_sel, num(*avg));
            }
        }
    }
    for o in outcomes {
        for (d, m) in o.mean_trajectory.iter().enumerate() {
            let _ = writeln!(out, "{},,,{},{},", o.t_sel, d + 1, num(*m));
        }
    }
    out
}

/// Write `timeseries.csv`, `sweep.csv`, `persistence.csv` and `manifest.json`
/// into `out_dir`, creating it if needed. Returns the written paths.
pub fn write_outputs(outputs: &Outputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let manifest = serde_json::to_string_pretty(&outputs.manifest).expect("manifest serialises");
    let files = [
        (
            "timeseries.csv",
            timeseries_csv(&outputs.ensembles, outputs.per_replication),
        ),
        ("sweep.csv", sweep_csv(outputs.sweep.as_ref())),
        (
            "persistence.csv",
            persistence_csv(outputs.persistence.as_ref()),
        ),
        ("manifest.json", manifest + "\n"),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
