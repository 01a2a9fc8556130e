//! Two-loop prompt selection, its ablation baselines, and deployment in the
//! true environment.
//!
//! Loop 1 imagines `n` unprompted rollouts and keeps the one whose worst-step
//! energy is smallest; the `k` pairs ending at its worst step become a
//! proposal prompt. Loop 2 imagines `m` rollouts conditioned on that proposal
//! and keeps the one with the most descent steps of `G`; the final prompt is
//! the `k` pairs ending at its worst step.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, Trajectory};
use crate::env::{Dynamics, TabularMdp};
use crate::error::{invalid, Result};
use crate::lyapunov::{self, GVariant, LyapunovTable};
use crate::math;
use crate::occupancy::EnergyTable;
use crate::rng::{self, tag};
use crate::world_model::{imagine, rollout, ContextPolicy, LearnedKernel, Prompt, PromptSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SasConfig {
    fn default() -> Self {
        Self { n: 5, m: 5, k: 5, horizon: 30, seed: 0 }
    }
}

impl SasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(invalid!("n and m must be at least 1"));
        }
        if self.k == 0 || self.k > self.horizon {
            return Err(invalid!("prompt length {} must be in [1, horizon={}]", self.k, self.horizon));
        }
        Ok(())
    }
}

/// Inclusive window `[t - k + 1, t]`, truncated at the first step.
pub fn window(t: usize, k: usize) -> (usize, usize) {
    ((t + 1).saturating_sub(k), t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop1Record {
    pub trajectory: Trajectory,
    pub max_energy: f64,
    pub argmax_t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop2Record {
    pub trajectory: Trajectory,
    pub max_energy: f64,
    pub argmax_t: usize,
    /// Number of steps with `G(s_t, a_t) >= G(s_{t+1}, a_{t+1})`.
    pub v: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub trajectory: Trajectory,
    pub energies: Vec<f64>,
    pub reward_return: f64,
    pub cost_return: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SasReport {
    pub config: SasConfig,
    pub s1: usize,
    pub g_variant: GVariant,
    pub loop1: Vec<Loop1Record>,
    pub i_star: usize,
    pub proposal: Prompt,
    pub proposal_window: (usize, usize),
    pub loop2: Vec<Loop2Record>,
    pub j_star: usize,
    pub prompt: Prompt,
    pub prompt_window: (usize, usize),
    /// Set when a window was truncated because its end came before step `k - 1`.
    pub short_prompt: bool,
    pub deployment: Option<Deployment>,
}

fn descent_count(traj: &Trajectory, g: &LyapunovTable) -> Result<usize> {
    if traj.len() < 2 {
        return Ok(0);
    }
    Ok(lyapunov::observables(traj, g)?.v_count())
}

fn check_inputs(kernel: &LearnedKernel, policy: &ContextPolicy, energy: &EnergyTable, s1: usize) -> Result<()> {
    if policy.n_states() != kernel.n_states() || energy.n_states != kernel.n_states() {
        return Err(invalid!("model, policy and energy disagree on the state count"));
    }
    if s1 >= kernel.n_states() {
        return Err(invalid!("start state {s1} out of range"));
    }
    Ok(())
}

fn loop1(
    kernel: &LearnedKernel,
    policy: &ContextPolicy,
    energy: &EnergyTable,
    s1: usize,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Loop1Record>> {
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, &[tag::SAS_LOOP1, i as u64]);
            let trajectory = imagine(kernel, policy, s1, horizon, None, &mut rng)?;
            let (max_energy, argmax_t) = lyapunov::max_energy(energy, &trajectory);
            Ok(Loop1Record { trajectory, max_energy, argmax_t })
        })
        .collect()
}

pub fn run_sas(
    kernel: &LearnedKernel,
    policy: &ContextPolicy,
    energy: &EnergyTable,
    g: &LyapunovTable,
    s1: usize,
    cfg: &SasConfig,
) -> Result<SasReport> {
    cfg.validate()?;
    check_inputs(kernel, policy, energy, s1)?;

    let loop1 = loop1(kernel, policy, energy, s1, cfg.n, cfg.horizon, cfg.seed)?;
    let maxima: Vec<f64> = loop1.iter().map(|r| r.max_energy).collect();
    let i_star = math::argmin_first(&maxima).unwrap_or(0);
    let proposal_window = window(loop1[i_star].argmax_t, cfg.k);
    let proposal =
        Prompt::from_window(&loop1[i_star].trajectory, proposal_window.0, proposal_window.1, PromptSource::Sas);

    let loop2 = (0..cfg.m)
        .map(|j| {
            let mut rng = rng::stream(cfg.seed, &[tag::SAS_LOOP2, j as u64]);
            let trajectory = imagine(kernel, policy, s1, cfg.horizon, Some(&proposal), &mut rng)?;
            let (max_energy, argmax_t) = lyapunov::max_energy(energy, &trajectory);
            let v = descent_count(&trajectory, g)?;
            Ok(Loop2Record { trajectory, max_energy, argmax_t, v })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = loop2.iter().map(|r| r.v as f64).collect();
    let j_star = math::argmax_first(&scores).unwrap_or(0);
    let prompt_window = window(loop2[j_star].argmax_t, cfg.k);
    let prompt = Prompt::from_window(&loop2[j_star].trajectory, prompt_window.0, prompt_window.1, PromptSource::Sas);

    let short_prompt = proposal.len() < cfg.k || prompt.len() < cfg.k;
    Ok(SasReport {
        config: *cfg,
        s1,
        g_variant: g.variant,
        loop1,
        i_star,
        proposal,
        proposal_window,
        loop2,
        j_star,
        prompt,
        prompt_window,
        short_prompt,
        deployment: None,
    })
}

/// Loop 1 with the adversarial choice `argmax_i` of the worst-step energy.
/// Shares loop 1's random streams, so it sees the same rollouts as SAS.
pub fn baseline_maxmax(
    kernel: &LearnedKernel,
    policy: &ContextPolicy,
    energy: &EnergyTable,
    s1: usize,
    cfg: &SasConfig,
) -> Result<Prompt> {
    cfg.validate()?;
    check_inputs(kernel, policy, energy, s1)?;
    let records = loop1(kernel, policy, energy, s1, cfg.n, cfg.horizon, cfg.seed)?;
    let maxima: Vec<f64> = records.iter().map(|r| r.max_energy).collect();
    let i = math::argmax_first(&maxima).unwrap_or(0);
    let (start, end) = window(records[i].argmax_t, cfg.k);
    Ok(Prompt::from_window(&records[i].trajectory, start, end, PromptSource::Maxmax))
}

/// A uniformly random `k`-pair segment of a uniformly random trajectory
/// among those with at least `k` steps.
pub fn baseline_random_prompt<R: Rng + ?Sized>(dataset: &OfflineDataset, k: usize, rng: &mut R) -> Result<Prompt> {
    if k == 0 {
        return Err(invalid!("prompt length must be at least 1"));
    }
    let eligible: Vec<&Trajectory> = dataset.trajectories.iter().filter(|t| t.len() >= k).collect();
    if eligible.is_empty() {
        return Err(invalid!("no trajectory has at least {k} steps"));
    }
    let traj = eligible[rng::below(rng, eligible.len())];
    let start = rng::below(rng, traj.len() - k + 1);
    Ok(Prompt::from_window(traj, start, start + k - 1, PromptSource::Random))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub reward_return: f64,
    pub cost_return: f64,
    pub failed: bool,
}

/// Rolls the prompt-conditioned policy out in the true environment. An
/// episode fails when it incurs any cost.
pub fn deploy<R: Rng + ?Sized>(
    policy: &ContextPolicy,
    prompt: &Prompt,
    mdp: &TabularMdp,
    s1: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<EpisodeResult> {
    if s1 >= mdp.n_states() || policy.n_states() != mdp.n_states() {
        return Err(invalid!("start state or policy does not match the environment"));
    }
    let trajectory = rollout(mdp, Some(mdp), policy, s1, horizon, &prompt.pairs, rng);
    let reward_return = trajectory.reward_return();
    let cost_return = trajectory.cost_return();
    Ok(EpisodeResult { trajectory, reward_return, cost_return, failed: cost_return > 0.0 })
}

impl SasReport {
    pub fn attach_deployment(&mut self, episode: &EpisodeResult, energy: &EnergyTable) {
        self.deployment = Some(Deployment {
            energies: energy.along(&episode.trajectory),
            trajectory: episode.trajectory.clone(),
            reward_return: episode.reward_return,
            cost_return: episode.cost_return,
            failed: episode.failed,
        });
    }

    /// The imagined rollout whose window became the final prompt.
    pub fn best_trajectory(&self) -> &Trajectory {
        &self.loop2[self.j_star].trajectory
    }
}
