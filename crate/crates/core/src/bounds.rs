//! Escape-probability bound, its Monte Carlo check, evaluation metrics and
//! the prompt-source ablation harness.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::env::TabularMdp;
use crate::error::{invalid, Error, Result};
use crate::lyapunov::LyapunovTable;
use crate::math;
use crate::occupancy::{average_over_moves, EnergyTable};
use crate::rng::{self, tag};
use crate::sas::{self, SasConfig};
use crate::world_model::{ContextPolicy, LearnedKernel, Prompt};

pub const DEFAULT_COST_THRESHOLDS: [f64; 3] = [20.0, 40.0, 80.0];
pub const DEFAULT_COST_EPSILON: f64 = 1e-3;
pub const DEFAULT_BAND_PERCENTILES: (f64, f64) = (5.0, 95.0);
pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_REGION_PERCENTILES: (f64, f64) = (10.0, 95.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub l: f64,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub e_mean: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > self.c1) {
            return Err(invalid!("band needs 0 < c1 < c2, got ({}, {})", self.c1, self.c2));
        }
        if !(self.kappa > 0.0 && self.l > 0.0) || self.t == 0 {
            return Err(invalid!("kappa, l and t must be positive"));
        }
        if !(self.e_mean >= 0.0) {
            return Err(invalid!("mean energy must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub params: BoundParams,
    pub term1: f64,
    pub term2: f64,
    pub total: f64,
    /// `e_mean / c2 >= 1`: the first term does not decay.
    pub vacuous_first_term: bool,
}

pub fn thm2_rhs(p: &BoundParams) -> Result<BoundReport> {
    p.validate()?;
    let ratio = p.e_mean / p.c2;
    let term1 = math::powf(ratio, (p.n * p.t) as f64);
    let gap = p.c2 - p.c1;
    let term2 = math::exp(-2.0 * p.m as f64 * p.kappa * p.kappa * gap * gap / (p.t as f64 * p.l * p.l));
    Ok(BoundReport { params: *p, term1, term2, total: term1 + term2, vacuous_first_term: ratio >= 1.0 })
}

/// Energies of every dataset step.
pub fn dataset_energies(energy: &EnergyTable, dataset: &OfflineDataset) -> Vec<f64> {
    dataset.trajectories.iter().flat_map(|t| energy.along(t)).collect()
}

pub fn mean_energy(energy: &EnergyTable, dataset: &OfflineDataset) -> Result<f64> {
    let e = dataset_energies(energy, dataset);
    if e.is_empty() {
        return Err(invalid!("dataset has no steps"));
    }
    Ok(math::mean_std(&e).0)
}

/// Nearest-rank percentiles of dataset step energies.
pub fn default_band(energy: &EnergyTable, dataset: &OfflineDataset, low_pct: f64, high_pct: f64) -> Result<(f64, f64)> {
    let e = dataset_energies(energy, dataset);
    match (math::nearest_rank(&e, low_pct), math::nearest_rank(&e, high_pct)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(invalid!("dataset has no steps")),
    }
}

/// Largest `|G(s_t, a_t) - G(s_{t+1}, a_{t+1})|` over consecutive dataset steps.
pub fn observed_lipschitz(g: &LyapunovTable, dataset: &OfflineDataset) -> f64 {
    dataset
        .trajectories
        .iter()
        .flat_map(|t| {
            let vals: Vec<f64> = t.pairs().map(|(s, a)| g.get(s, a)).collect();
            vals.windows(2).map(|w| (w[0] - w[1]).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Some step energy lies outside `[c1, c2]`.
pub fn escapes(energies: &[f64], c1: f64, c2: f64) -> bool {
    energies.iter().any(|e| *e < c1 || *e > c2)
}

pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if n == 0 {
        return 0.0;
    }
    math::sqrt(p * (1.0 - p) / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeCell {
    pub n: usize,
    pub m: usize,
    pub runs: usize,
    /// Runs whose selected imagined trajectory left the band.
    pub imagined_escapes: usize,
    /// Runs whose deployed true-environment trajectory left the band.
    pub deployed_escapes: usize,
}

impl EscapeCell {
    pub fn frequency(&self) -> f64 {
        self.imagined_escapes as f64 / self.runs.max(1) as f64
    }

    pub fn deployed_frequency(&self) -> f64 {
        self.deployed_escapes as f64 / self.runs.max(1) as f64
    }
}

/// Everything needed to run selection and deployment for one start state.
#[derive(Clone, Copy, Debug)]
pub struct Setup<'a> {
    pub mdp: &'a TabularMdp,
    pub dataset: &'a OfflineDataset,
    pub kernel: &'a LearnedKernel,
    pub policy: &'a ContextPolicy,
    pub energy: &'a EnergyTable,
    pub g: &'a LyapunovTable,
    pub s1: usize,
}

/// Seed of run `index` under a top-level seed; shared by every grid cell and
/// method so comparisons use common random numbers.
pub fn run_seed(seed: u64, kind: u64, index: usize) -> u64 {
    rng::stream(seed, &[kind, index as u64]).next_u64()
}

/// Escape counts for one `(n, m)` cell over `runs` independent selections.
pub fn empirical_escape(
    setup: &Setup<'_>,
    band: (f64, f64),
    n: usize,
    m: usize,
    base: &SasConfig,
    runs: usize,
    seed: u64,
) -> Result<EscapeCell> {
    let mut cell = EscapeCell { n, m, runs, imagined_escapes: 0, deployed_escapes: 0 };
    for r in 0..runs {
        let cfg = SasConfig { n, m, seed: run_seed(seed, tag::ESCAPE, r), ..*base };
        let report = sas::run_sas(setup.kernel, setup.policy, setup.energy, setup.g, setup.s1, &cfg)?;
        if escapes(&setup.energy.along(report.best_trajectory()), band.0, band.1) {
            cell.imagined_escapes += 1;
        }
        let mut deploy_rng = rng::stream(cfg.seed, &[tag::DEPLOY]);
        let ep = sas::deploy(setup.policy, &report.prompt, setup.mdp, setup.s1, cfg.horizon, &mut deploy_rng)?;
        if escapes(&setup.energy.along(&ep.trajectory), band.0, band.1) {
            cell.deployed_escapes += 1;
        }
    }
    Ok(cell)
}

pub fn normalized_reward(raw: f64, r_min: f64, r_max: f64) -> Result<f64> {
    if !(r_max > r_min) {
        return Err(Error::Degenerate(alloc::format!("reward range [{r_min}, {r_max}] is empty")));
    }
    Ok((raw - r_min) / (r_max - r_min))
}

pub fn normalized_cost(raw: f64, kappa_threshold: f64, epsilon: f64) -> Result<f64> {
    if !(kappa_threshold >= 0.0) || !(epsilon > 0.0) {
        return Err(invalid!("need threshold >= 0 and epsilon > 0"));
    }
    Ok((raw + epsilon) / (kappa_threshold + epsilon))
}

/// Fraction of episodes that incurred any cost.
pub fn failure_rate(cost_returns: &[f64]) -> f64 {
    if cost_returns.is_empty() {
        return 0.0;
    }
    cost_returns.iter().filter(|c| **c > 0.0).count() as f64 / cost_returns.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub normalized_reward: f64,
    pub normalized_cost: f64,
    pub failure_rate: f64,
    pub mean_reward_return: f64,
    pub mean_cost_return: f64,
    pub episodes: usize,
}

pub fn metric_report(rewards: &[f64], costs: &[f64], r_range: (f64, f64), kappa_threshold: f64, epsilon: f64) -> Result<MetricReport> {
    if rewards.len() != costs.len() || rewards.is_empty() {
        return Err(invalid!("need matching, non-empty reward and cost lists"));
    }
    let mean_reward_return = math::mean_std(rewards).0;
    let mean_cost_return = math::mean_std(costs).0;
    Ok(MetricReport {
        normalized_reward: normalized_reward(mean_reward_return, r_range.0, r_range.1)?,
        normalized_cost: normalized_cost(mean_cost_return, kappa_threshold, epsilon)?,
        failure_rate: failure_rate(costs),
        mean_reward_return,
        mean_cost_return,
        episodes: rewards.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Backbone,
    Rand,
    Maxmax,
    Sas,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Backbone, Method::Rand, Method::Maxmax, Method::Sas];

    pub fn name(self) -> &'static str {
        match self {
            Method::Backbone => "backbone",
            Method::Rand => "rand",
            Method::Maxmax => "maxmax",
            Method::Sas => "sas",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub method: Method,
    pub seed: u64,
    pub episode: usize,
    pub prompt_len: usize,
    pub reward_return: f64,
    pub cost_return: f64,
    pub failed: bool,
}

/// Prompt for one method. Every method draws from its own streams under the
/// episode seed, so adding or removing a method leaves the others unchanged.
pub fn method_prompt(setup: &Setup<'_>, method: Method, cfg: &SasConfig) -> Result<Prompt> {
    match method {
        Method::Backbone => Ok(Prompt::none()),
        Method::Rand => {
            let mut r = rng::stream(cfg.seed, &[tag::RANDOM_PROMPT]);
            sas::baseline_random_prompt(setup.dataset, cfg.k, &mut r)
        }
        Method::Maxmax => sas::baseline_maxmax(setup.kernel, setup.policy, setup.energy, setup.s1, cfg),
        Method::Sas => Ok(sas::run_sas(setup.kernel, setup.policy, setup.energy, setup.g, setup.s1, cfg)?.prompt),
    }
}

/// All methods on `episodes` episodes of one seed. Deployment noise is shared
/// across methods within an episode.
pub fn evaluate_seed(setup: &Setup<'_>, base: &SasConfig, seed: u64, episodes: usize) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(episodes * Method::ALL.len());
    for e in 0..episodes {
        let cfg = SasConfig { seed: run_seed(seed, tag::EVAL, e), ..*base };
        for method in Method::ALL {
            let prompt = method_prompt(setup, method, &cfg)?;
            let mut deploy_rng = rng::stream(cfg.seed, &[tag::DEPLOY]);
            let ep = sas::deploy(setup.policy, &prompt, setup.mdp, setup.s1, cfg.horizon, &mut deploy_rng)?;
            out.push(Episode {
                method,
                seed,
                episode: e,
                prompt_len: prompt.len(),
                reward_return: ep.reward_return,
                cost_return: ep.cost_return,
                failed: ep.failed,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub failure_mean: f64,
    pub failure_std: f64,
    pub seeds: usize,
    pub episodes_per_seed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub r_min: f64,
    pub r_max: f64,
    pub cost_thresholds: Vec<f64>,
    pub epsilon: f64,
}

/// Per-method means and standard deviations over seeds × cost thresholds.
/// `per_seed[i]` holds the episodes of seed `i`.
pub fn summarize(per_seed: &[Vec<Episode>], settings: &MetricSettings) -> Result<Vec<AblationRow>> {
    if settings.cost_thresholds.is_empty() {
        return Err(invalid!("need at least one cost threshold"));
    }
    Method::ALL
        .iter()
        .map(|&method| {
            let (mut rewards, mut costs, mut failures) = (vec![], vec![], vec![]);
            let mut episodes_per_seed = 0;
            for eps in per_seed {
                let mine: Vec<&Episode> = eps.iter().filter(|e| e.method == method).collect();
                episodes_per_seed = mine.len();
                let r: Vec<f64> = mine.iter().map(|e| e.reward_return).collect();
                let c: Vec<f64> = mine.iter().map(|e| e.cost_return).collect();
                for &kappa in &settings.cost_thresholds {
                    let m = metric_report(&r, &c, (settings.r_min, settings.r_max), kappa, settings.epsilon)?;
                    rewards.push(m.normalized_reward);
                    costs.push(m.normalized_cost);
                    failures.push(m.failure_rate);
                }
            }
            let (reward_mean, reward_std) = math::mean_std(&rewards);
            let (cost_mean, cost_std) = math::mean_std(&costs);
            let (failure_mean, failure_std) = math::mean_std(&failures);
            Ok(AblationRow {
                method,
                reward_mean,
                reward_std,
                cost_mean,
                cost_std,
                failure_mean,
                failure_std,
                seeds: per_seed.len(),
                episodes_per_seed,
            })
        })
        .collect()
}

pub fn ablation_harness(
    setup: &Setup<'_>,
    base: &SasConfig,
    seeds: &[u64],
    episodes: usize,
    settings: &MetricSettings,
) -> Result<Vec<AblationRow>> {
    let per_seed = seeds.iter().map(|s| evaluate_seed(setup, base, *s, episodes)).collect::<Result<Vec<_>>>()?;
    summarize(&per_seed, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileRegions {
    pub low_value: f64,
    pub high_value: f64,
    /// Per-state action-averaged `G`.
    pub averaged: Vec<f64>,
    pub invalid_states: Vec<usize>,
    pub roa_states: Vec<usize>,
}

/// States whose movement-averaged `G` is strictly above the high percentile
/// (invalid) or strictly below the low one (region of attraction).
pub fn percentile_regions(g: &LyapunovTable, low_pct: f64, high_pct: f64) -> Result<PercentileRegions> {
    if !(0.0 <= low_pct && low_pct < high_pct && high_pct <= 100.0) {
        return Err(invalid!("need 0 <= low < high <= 100"));
    }
    let averaged = average_over_moves(&g.values, g.n_states, g.n_actions)?;
    regions_from_values(averaged, low_pct, high_pct)
}

pub fn regions_from_values(averaged: Vec<f64>, low_pct: f64, high_pct: f64) -> Result<PercentileRegions> {
    let (Some(low_value), Some(high_value)) = (math::nearest_rank(&averaged, low_pct), math::nearest_rank(&averaged, high_pct))
    else {
        return Err(invalid!("empty table"));
    };
    let invalid_states = (0..averaged.len()).filter(|&s| averaged[s] > high_value).collect();
    let roa_states = (0..averaged.len()).filter(|&s| averaged[s] < low_value).collect();
    Ok(PercentileRegions { low_value, high_value, averaged, invalid_states, roa_states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BoundParams {
        BoundParams { c1: 1.0, c2: 2.0, kappa: 1.0, l: 1.0, n: 5, m: 5, t: 3, e_mean: 1.0 }
    }

    #[test]
    fn bound_arithmetic() {
        let r = thm2_rhs(&params()).unwrap();
        assert!((r.term1 - 3.0517578125e-5).abs() < 1e-15);
        assert!((r.term2 - (-10.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((r.term2 - 0.035674).abs() < 1e-6);
        assert!(!r.vacuous_first_term);
        let v = thm2_rhs(&BoundParams { e_mean: 2.5, ..params() }).unwrap();
        assert!(v.vacuous_first_term);
        assert!(thm2_rhs(&BoundParams { c1: 2.0, ..params() }).is_err());
        assert!(thm2_rhs(&BoundParams { c1: 0.0, ..params() }).is_err());
        let big = thm2_rhs(&BoundParams { n: 200, m: 200, ..params() }).unwrap();
        assert!(big.total < 1e-40);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalized_reward(3.0, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(normalized_reward(1.0, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(normalized_reward(2.0, 1.0, 3.0).unwrap(), 0.5);
        assert!(matches!(normalized_reward(1.0, 2.0, 2.0), Err(Error::Degenerate(_))));
        assert_eq!(normalized_cost(20.0, 20.0, 1e-3).unwrap(), 1.0);
        assert_eq!(normalized_cost(0.0, 0.0, 0.5).unwrap(), 1.0);
        assert!(normalized_cost(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn failure_is_any_cost() {
        assert_eq!(failure_rate(&[0.0, 1.0, 0.0, 3.0]), 0.5);
        assert_eq!(failure_rate(&[0.0, 0.0]), 0.0);
        assert_eq!(failure_rate(&[]), 0.0);
    }

    #[test]
    fn escape_band() {
        assert!(!escapes(&[1.0, 1.5, 2.0], 1.0, 2.0));
        assert!(escapes(&[1.0, 2.1], 1.0, 2.0));
        assert!(escapes(&[1.0, 2.0], 1.5, 1.5));
        assert!(!escapes(&[1.5, 1.5], 1.5, 1.5));
    }

    #[test]
    fn constant_table_has_empty_regions() {
        let r = regions_from_values(vec![2.0; 9], 10.0, 95.0).unwrap();
        assert!(r.invalid_states.is_empty() && r.roa_states.is_empty());
        let r = regions_from_values((0..100).map(|i| i as f64).collect(), 10.0, 95.0).unwrap();
        assert_eq!((r.low_value, r.high_value), (9.0, 94.0));
        assert_eq!((r.roa_states.len(), r.invalid_states.len()), (9, 5));
        assert!(regions_from_values(vec![1.0], 50.0, 50.0).is_ok());
    }
}
