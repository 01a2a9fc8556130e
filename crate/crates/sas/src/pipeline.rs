//! End-to-end steps shared by the command line and the tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sas_core::bounds::{self, AblationRow, BoundParams, BoundReport, EscapeCell, Method, MetricReport, MetricSettings, Setup};
use sas_core::dataset::{self, OfflineDataset, SafePlanner};
use sas_core::env::TabularMdp;
use sas_core::lyapunov::{self, GVariant, LyapunovTable};
use sas_core::model::{self, FittedModel};
use sas_core::occupancy::{self, StochasticPolicy};
use sas_core::rng::{self, tag};
use sas_core::sas::{self, SasReport};
use sas_core::skill::{self, ConcentrationPoint};

use crate::config::{Auto, RunConfig};
use crate::error::{AppError, AppResult};

pub fn generate_dataset(cfg: &RunConfig, mdp: &TabularMdp, seed: Option<u64>) -> AppResult<OfflineDataset> {
    let d = &cfg.dataset;
    let seed = seed.unwrap_or(d.seed);
    // Each trajectory has its own stream, so generation parallelizes freely.
    let plan = dataset::plan_generation(mdp, &d.mix, d.n_traj, d.horizon, seed)?;
    let planner = SafePlanner::new(mdp);
    let trajectories = (0..d.n_traj).into_par_iter().map(|i| plan.trajectory(mdp, &planner, i)).collect();
    Ok(OfflineDataset { meta: plan.meta, trajectories })
}

pub fn fit(cfg: &RunConfig, mdp: &TabularMdp, dataset: &OfflineDataset) -> AppResult<FittedModel> {
    if dataset.meta.n_states != sas_core::env::Dynamics::n_states(mdp) {
        return Err(AppError::Runtime("dataset does not match the configured layout".into()));
    }
    Ok(model::fit_model(mdp, dataset, &cfg.model, cfg.sas.horizon)?)
}

pub fn g_table(variant: GVariant, model: &FittedModel) -> &LyapunovTable {
    match variant {
        GVariant::LdmFixedPoint => &model.g_ldm,
        GVariant::LiteralEq6 => &model.g_literal,
    }
}

pub fn setup<'a>(cfg: &RunConfig, mdp: &'a TabularMdp, dataset: &'a OfflineDataset, model: &'a FittedModel) -> Setup<'a> {
    Setup {
        mdp,
        dataset,
        kernel: &model.kernel,
        policy: &model.policy,
        energy: &model.energy,
        g: g_table(cfg.sas.g_variant, model),
        s1: mdp.start_state(),
    }
}

/// Runs prompt selection from the layout start and deploys the final prompt
/// in the true environment.
pub fn align(cfg: &RunConfig, mdp: &TabularMdp, model: &FittedModel, seed: Option<u64>) -> AppResult<SasReport> {
    let mut sc = cfg.sas.sas();
    if let Some(s) = seed {
        sc.seed = s;
    }
    let g = g_table(cfg.sas.g_variant, model);
    let s1 = mdp.start_state();
    let mut report = sas::run_sas(&model.kernel, &model.policy, &model.energy, g, s1, &sc)?;
    let mut rng = rng::stream(sc.seed, &[tag::DEPLOY]);
    let episode = sas::deploy(&model.policy, &report.prompt, mdp, s1, sc.horizon, &mut rng)?;
    report.attach_deployment(&episode, &model.energy);
    Ok(report)
}

/// Occupancy-feasibility level `-log(d / (c_max * D_conc))` with `D_conc`
/// measured for the safe planner's policy against the data occupancy.
pub fn invariant_level(cfg: &RunConfig, mdp: &TabularMdp, model: &FittedModel) -> AppResult<(f64, f64)> {
    let planner = SafePlanner::new(mdp);
    let actions: Vec<usize> = planner.greedy.iter().map(|a| a.id()).collect();
    let policy = StochasticPolicy::deterministic(&actions, sas_core::env::NUM_ACTIONS)?;
    let target =
        occupancy::exact_occupancy(mdp, &mdp.initial_distribution(), &policy, mdp.gamma(), cfg.dataset.horizon)?;
    let d_conc = occupancy::concentrability(&target, &model.occupancy)?;
    Ok((lyapunov::feasibility_level(cfg.budget, mdp.c_max(), d_conc), d_conc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub cost_threshold: f64,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub r_min: f64,
    pub r_max: f64,
    pub rows: Vec<AblationRow>,
    /// Pooled over every seed and episode, per method and threshold.
    pub pooled: Vec<MethodMetrics>,
}

pub fn metric_settings(cfg: &RunConfig, dataset: &OfflineDataset) -> MetricSettings {
    let stats = dataset::dataset_stats(dataset);
    MetricSettings {
        r_min: stats.min_return,
        r_max: stats.max_return,
        cost_thresholds: cfg.eval.cost_thresholds.clone(),
        epsilon: cfg.eval.epsilon,
    }
}

pub fn evaluate(cfg: &RunConfig, mdp: &TabularMdp, dataset: &OfflineDataset, model: &FittedModel) -> AppResult<Evaluation> {
    let setup = setup(cfg, mdp, dataset, model);
    let base = cfg.sas.sas();
    let per_seed = cfg
        .eval
        .seeds
        .par_iter()
        .map(|s| bounds::evaluate_seed(&setup, &base, *s, cfg.eval.episodes))
        .collect::<Result<Vec<_>, _>>()?;
    let settings = metric_settings(cfg, dataset);
    let rows = bounds::summarize(&per_seed, &settings)?;
    let mut pooled = Vec::new();
    for method in Method::ALL {
        let eps: Vec<_> = per_seed.iter().flatten().filter(|e| e.method == method).collect();
        let r: Vec<f64> = eps.iter().map(|e| e.reward_return).collect();
        let c: Vec<f64> = eps.iter().map(|e| e.cost_return).collect();
        for &kappa in &settings.cost_thresholds {
            let metrics = bounds::metric_report(&r, &c, (settings.r_min, settings.r_max), kappa, settings.epsilon)?;
            pooled.push(MethodMetrics { method, cost_threshold: kappa, metrics });
        }
    }
    Ok(Evaluation { r_min: settings.r_min, r_max: settings.r_max, rows, pooled })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub m: usize,
    pub runs: usize,
    pub empirical: f64,
    pub sigma: f64,
    pub deployed: f64,
    pub term1: f64,
    pub term2: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub l: f64,
    pub e_mean: f64,
    pub t: usize,
    pub rows: Vec<BoundRow>,
}

/// Band, mean energy and `L`, with `auto` entries filled from the data.
pub fn bound_inputs(cfg: &RunConfig, dataset: &OfflineDataset, model: &FittedModel) -> AppResult<(f64, f64, f64, f64)> {
    let (lo, hi) = bounds::DEFAULT_BAND_PERCENTILES;
    let (auto_c1, auto_c2) = bounds::default_band(&model.energy, dataset, lo, hi)?;
    let c1 = match cfg.bound.c1 {
        Auto::Auto => auto_c1,
        Auto::Value(v) => v,
    };
    let c2 = match cfg.bound.c2 {
        Auto::Auto => auto_c2,
        Auto::Value(v) => v,
    };
    let l = match cfg.bound.l {
        Auto::Auto => bounds::observed_lipschitz(g_table(cfg.sas.g_variant, model), dataset),
        Auto::Value(v) => v,
    };
    Ok((c1, c2, l, bounds::mean_energy(&model.energy, dataset)?))
}

pub fn bound_report(cfg: &RunConfig, dataset: &OfflineDataset, model: &FittedModel, n: usize, m: usize) -> AppResult<BoundReport> {
    let (c1, c2, l, e_mean) = bound_inputs(cfg, dataset, model)?;
    let p = BoundParams { c1, c2, kappa: cfg.bound.kappa, l, n, m, t: cfg.sas.horizon, e_mean };
    p.validate().map_err(|e| AppError::Config(format!("bound: {e}")))?;
    Ok(bounds::thm2_rhs(&p)?)
}

pub fn bound_check(
    cfg: &RunConfig,
    mdp: &TabularMdp,
    dataset: &OfflineDataset,
    model: &FittedModel,
    grid: &[usize],
) -> AppResult<BoundCheck> {
    let (c1, c2, l, e_mean) = bound_inputs(cfg, dataset, model)?;
    let setup = setup(cfg, mdp, dataset, model);
    let base = cfg.sas.sas();
    let cells: Vec<(usize, usize)> = grid.iter().flat_map(|n| grid.iter().map(move |m| (*n, *m))).collect();
    let results = cells
        .par_iter()
        .map(|&(n, m)| -> AppResult<(EscapeCell, BoundReport)> {
            let cell = bounds::empirical_escape(&setup, (c1, c2), n, m, &base, cfg.bound.runs, cfg.bound.seed)?;
            Ok((cell, bound_report(cfg, dataset, model, n, m)?))
        })
        .collect::<AppResult<Vec<_>>>()?;
    let rows = results
        .into_iter()
        .map(|(cell, b)| BoundRow {
            n: cell.n,
            m: cell.m,
            runs: cell.runs,
            empirical: cell.frequency(),
            sigma: bounds::binomial_sigma(b.total, cell.runs),
            deployed: cell.deployed_frequency(),
            term1: b.term1,
            term2: b.term2,
            total: b.total,
        })
        .collect();
    Ok(BoundCheck { c1, c2, kappa: cfg.bound.kappa, l, e_mean, t: cfg.sas.horizon, rows })
}

/// Concentration of the posterior over action-preference skills, with
/// prompts generated under the learned kernel from the layout start.
pub fn concentration(cfg: &RunConfig, mdp: &TabularMdp, model: &FittedModel) -> AppResult<Vec<ConcentrationPoint>> {
    use sas_core::env::Action;
    let family = skill::preference_family(
        sas_core::env::Dynamics::n_states(mdp),
        &[Action::PosX, Action::PosY, Action::NegX],
        cfg.skill.strength,
        0,
    )?;
    Ok(skill::concentration_curve(&family, &model.kernel, mdp.start_state(), &cfg.skill.ks, cfg.skill.n_prompts, cfg.skill.seed)?)
}

/// Runs `f` on a pool with the requested number of threads, or on the
/// global pool when unset.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> AppResult<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| AppError::Runtime(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
