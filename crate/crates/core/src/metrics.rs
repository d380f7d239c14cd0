//! Inequality, mobility, persistence and growth measures over wealth snapshots.
//!
//! All functions are pure. Functions with a `_sorted` suffix expect wealth in
//! ascending order and skip the sort.

use std::collections::BTreeMap;

use crate::error::{check_len, Error, Result};

/// Small-sample Gini index on wealth of any order.
pub fn gini(wealth: &[f64]) -> f64 {
    gini_sorted(&sorted_ascending(wealth))
}

/// `G = [(N + 1) - 2 * sum_k (N + 1 - k) w_k / sum_k w_k] / (N - 1)`, `w` ascending.
/// Zero total wealth (or fewer than two agents) gives 0.
pub fn gini_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0) {
        log::debug!("gini: zero total wealth, reported as perfect equality");
        return 0.0;
    }
    if sorted[0] == sorted[n - 1] {
        return 0.0;
    }
    let nf = n as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, w)| (nf - k as f64) * w)
        .sum();
    ((nf + 1.0) - 2.0 * weighted / total) / (nf - 1.0)
}

/// Theil T index, `(1/N) sum (w/mu) ln(w/mu)`, with zero holdings contributing nothing.
pub fn theil(wealth: &[f64]) -> f64 {
    let n = wealth.len();
    let total: f64 = wealth.iter().sum();
    if n == 0 || !(total > 0.0) {
        return 0.0;
    }
    let mean = total / n as f64;
    let t = wealth
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| {
            let x = w / mean;
            x * x.ln()
        })
        .sum::<f64>()
        / n as f64;
    t.max(0.0)
}

/// Share of total wealth held by the `ceil(p N)` richest agents (at least one).
pub fn top_share(wealth: &[f64], p: f64) -> f64 {
    top_share_sorted(&sorted_ascending(wealth), p)
}

pub fn top_share_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    if n == 0 || !(total > 0.0) {
        return 0.0;
    }
    let k = ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[n - k..].iter().sum::<f64>() / total
}

/// Wealth share of each decile block, poorest first.
pub fn decile_shares_sorted(sorted: &[f64]) -> [f64; 10] {
    let mut shares = [0.0; 10];
    let total: f64 = sorted.iter().sum();
    if sorted.len() < 10 || !(total > 0.0) {
        return shares;
    }
    let sizes = decile_sizes(sorted.len());
    let mut start = 0;
    for (j, size) in sizes.iter().enumerate() {
        shares[j] = sorted[start..start + size].iter().sum::<f64>() / total;
        start += size;
    }
    shares
}

/// Sizes of ten contiguous blocks covering `n` agents; the first `n % 10` get one extra.
pub fn decile_sizes(n: usize) -> [usize; 10] {
    let (base, extra) = (n / 10, n % 10);
    std::array::from_fn(|j| base + usize::from(j < extra))
}

/// Decile membership and per-decile median wealth at one period.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileMap {
    /// Decile of each agent, 1 (poorest) to 10 (richest).
    pub assignment: Vec<u8>,
    /// Median wealth of deciles 1..=10.
    pub medians: [f64; 10],
}

impl DecileMap {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn median_of(&self, decile: u8) -> f64 {
        self.medians[usize::from(decile) - 1]
    }
}

/// Agent indices ordered by ascending wealth, ties broken by index.
pub fn ascending_order(wealth: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..wealth.len()).collect();
    idx.sort_by(|&a, &b| wealth[a].total_cmp(&wealth[b]).then(a.cmp(&b)));
    idx
}

pub fn decile_map(wealth: &[f64]) -> Result<DecileMap> {
    let n = wealth.len();
    if n < 10 {
        return Err(Error::config(format!(
            "decile map needs at least 10 agents, got {n}"
        )));
    }
    let order = ascending_order(wealth);
    let mut assignment = vec![0u8; n];
    let mut medians = [0.0; 10];
    let mut start = 0;
    for (j, size) in decile_sizes(n).into_iter().enumerate() {
        let block = &order[start..start + size];
        for &i in block {
            assignment[i] = j as u8 + 1;
        }
        let mid = size / 2;
        medians[j] = if size % 2 == 1 {
            wealth[block[mid]]
        } else {
            0.5 * (wealth[block[mid - 1]] + wealth[block[mid]])
        };
        start += size;
    }
    Ok(DecileMap {
        assignment,
        medians,
    })
}

/// Mean decile-median displacement between two periods, normalised by the gap
/// between the top and bottom decile medians. Both positions are valued at the
/// current period's medians; a zero gap yields zero mobility.
pub fn weighted_mobility(prev: &DecileMap, now: &DecileMap) -> Result<f64> {
    check_len("decile maps", now.len(), prev.len())?;
    let gap = (now.medians[9] - now.medians[0]).abs();
    if !(gap > 0.0) || now.is_empty() {
        return Ok(0.0);
    }
    let moved: f64 = prev
        .assignment
        .iter()
        .zip(&now.assignment)
        .filter(|(a, b)| a != b)
        .map(|(&a, &b)| (now.median_of(a) - now.median_of(b)).abs())
        .sum();
    Ok(moved / gap / now.len() as f64)
}

/// Trailing moving average; the first `window - 1` points average what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let span = &series[(i + 1).saturating_sub(window)..=i];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Relative change of total wealth; `None` when the previous total is zero.
pub fn aggregate_growth(total_now: f64, total_prev: f64) -> Option<f64> {
    (total_prev != 0.0).then(|| (total_now - total_prev) / total_prev)
}

/// `rank / N` for each agent, rank 1 being the richest. Ties go to the lower index.
pub fn normalized_ranks(wealth: &[f64]) -> Vec<f64> {
    let n = wealth.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| wealth[b].total_cmp(&wealth[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    for (pos, &i) in idx.iter().enumerate() {
        ranks[i] = (pos + 1) as f64 / n as f64;
    }
    ranks
}

/// Number of agents in the top percentile: `max(1, floor(N / 100))`.
pub fn top_percentile_count(n: usize) -> usize {
    (n / 100).max(1)
}

/// Agents in the top percentile, richest first.
pub fn top_percentile(wealth: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..wealth.len()).collect();
    idx.sort_by(|&a, &b| wealth[b].total_cmp(&wealth[a]).then(a.cmp(&b)));
    idx.truncate(top_percentile_count(wealth.len()));
    idx
}

/// Wealth snapshots keyed by period.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryStore {
    snapshots: BTreeMap<usize, Vec<f64>>,
}

impl TrajectoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: usize, wealth: Vec<f64>) {
        self.snapshots.insert(t, wealth);
    }

    pub fn get(&self, t: usize) -> Option<&[f64]> {
        self.snapshots.get(&t).map(Vec::as_slice)
    }

    pub fn last_period(&self) -> Option<usize> {
        self.snapshots.keys().next_back().copied()
    }
}

/// Rank persistence of one top-percentile cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Persistence {
    pub t_sel: usize,
    /// `(agent, time-averaged normalised rank)` over offsets `1..=horizon`.
    pub agents: Vec<(usize, f64)>,
    /// Cohort-mean normalised rank at offsets `1..=horizon`.
    pub mean_trajectory: Vec<f64>,
}

/// Select the top percentile at `t_sel` and follow its normalised ranks for
/// the next `horizon` periods.
pub fn rank_persistence(
    store: &TrajectoryStore,
    t_sel: usize,
    horizon: usize,
) -> Result<Persistence> {
    let t_max = store.last_period().unwrap_or(0);
    if t_sel + horizon > t_max {
        return Err(Error::Runtime(format!(
            "persistence window {t_sel}+{horizon} runs past the last recorded period {t_max}"
        )));
    }
    let at = |t: usize| {
        store
            .get(t)
            .ok_or_else(|| Error::Runtime(format!("no wealth snapshot recorded for period {t}")))
    };
    let mut tracker = CohortTracker::select(t_sel, at(t_sel)?, horizon);
    for t in (t_sel + 1)..=(t_sel + horizon) {
        tracker.observe(t, &normalized_ranks(at(t)?));
    }
    Ok(tracker.finish())
}

/// Online form of [`rank_persistence`]: fed one snapshot per period, so the
/// caller never has to keep the whole trajectory.
#[derive(Debug, Clone)]
pub struct CohortTracker {
    t_sel: usize,
    horizon: usize,
    cohort: Vec<usize>,
    rank_sums: Vec<f64>,
    mean_trajectory: Vec<f64>,
}

impl CohortTracker {
    pub fn select(t_sel: usize, wealth: &[f64], horizon: usize) -> Self {
        let cohort = top_percentile(wealth);
        CohortTracker {
            t_sel,
            horizon,
            rank_sums: vec![0.0; cohort.len()],
            cohort,
            mean_trajectory: Vec::with_capacity(horizon),
        }
    }

    pub fn t_sel(&self) -> usize {
        self.t_sel
    }

    /// Whether period `t` falls inside the tracking window.
    pub fn wants(&self, t: usize) -> bool {
        t > self.t_sel && t <= self.t_sel + self.horizon
    }

    pub fn is_complete(&self) -> bool {
        self.mean_trajectory.len() == self.horizon
    }

    /// Record the cohort's positions at period `t`, given [`normalized_ranks`] of that period.
    pub fn observe(&mut self, t: usize, ranks: &[f64]) {
        debug_assert!(self.wants(t));
        debug_assert_eq!(t - self.t_sel, self.mean_trajectory.len() + 1);
        let mut sum = 0.0;
        for (slot, &agent) in self.cohort.iter().enumerate() {
            let r = ranks[agent];
            self.rank_sums[slot] += r;
            sum += r;
        }
        self.mean_trajectory.push(sum / self.cohort.len() as f64);
    }

    pub fn finish(self) -> Persistence {
        let h = self.mean_trajectory.len().max(1) as f64;
        Persistence {
            t_sel: self.t_sel,
            agents: self
                .cohort
                .iter()
                .zip(&self.rank_sums)
                .map(|(&a, s)| (a, s / h))
                .collect(),
            mean_trajectory: self.mean_trajectory,
        }
    }
}

pub(crate) fn sorted_ascending(wealth: &[f64]) -> Vec<f64> {
    let mut v = wealth.to_vec();
    v.sort_by(f64::total_cmp);
    v
}
