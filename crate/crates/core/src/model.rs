//! Fitting every learned table from a dataset in one pass.

use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::env::{Action, TabularMdp};
use crate::error::{invalid, Result};
use crate::lyapunov::{self, LyapunovTable};
use crate::occupancy::{self, EnergyTable, OccupancyTable};
use crate::world_model::{fit_kernel, fit_policy_with, ContextPolicy, LearnedKernel, PolicyFit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Context length of the sequence policy.
    pub order: usize,
    /// Additive smoothing of transition counts; 0 keeps the data support.
    pub smoothing: f64,
    pub self_prompting: bool,
    /// Added to every occupancy entry before taking the energy.
    pub energy_smoothing: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            order: crate::world_model::DEFAULT_ORDER,
            smoothing: 0.0,
            self_prompting: true,
            energy_smoothing: occupancy::DEFAULT_SMOOTHING,
            tolerance: lyapunov::DEFAULT_TOLERANCE,
            max_iterations: lyapunov::DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing >= 0.0) || !(self.energy_smoothing > 0.0) {
            return Err(invalid!("smoothing must be >= 0 and energy smoothing > 0"));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(invalid!("tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub kernel: LearnedKernel,
    pub policy: ContextPolicy,
    /// Normalized dataset occupancy with smoothing.
    pub occupancy: OccupancyTable,
    pub energy: EnergyTable,
    pub g_ldm: LyapunovTable,
    pub g_literal: LyapunovTable,
}

/// Fits kernel, policy, occupancy, energy and both `G` tables. The literal
/// table's baseline is computed from the layout's start over `horizon` steps.
pub fn fit_model(mdp: &TabularMdp, dataset: &OfflineDataset, cfg: &ModelConfig, horizon: usize) -> Result<FittedModel> {
    cfg.validate()?;
    dataset.validate()?;
    let kernel = fit_kernel(dataset, cfg.smoothing)?;
    let policy = fit_policy_with(dataset, PolicyFit { order: cfg.order, self_prompting: cfg.self_prompting })?;
    let (ns, na) = (dataset.meta.n_states, dataset.meta.n_actions);
    let occ = occupancy::empirical_occupancy(&dataset.trajectories, ns, na, mdp.gamma(), 0.0)?.normalized()?;
    let mut occupancy = occ.clone();
    occupancy.values.iter_mut().for_each(|v| *v += cfg.energy_smoothing);
    let occupancy = occupancy.normalized()?;
    let mut energy = occupancy::energy(&occupancy)?.with_equilibrium(mdp.goal_state(), Action::Stay.id());
    energy.smoothing_epsilon = cfg.energy_smoothing;
    let g_ldm = lyapunov::ldm_fixed_point(&energy, &kernel, mdp.gamma(), cfg.tolerance, cfg.max_iterations)?;
    let g_literal = lyapunov::g_sas_exact(&energy, &kernel, &[mdp.start_state()], horizon)?;
    Ok(FittedModel { kernel, policy, occupancy, energy, g_ldm, g_literal })
}
