//! Heterogeneous offline datasets generated by scripted behavior policies.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Action, Dynamics, Signals, TabularMdp, NUM_ACTIONS};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

/// Edge-weight multiplier for entering a hazard cell when planning.
pub const HAZARD_WEIGHT: f64 = 100.0;
pub const EXPERT_EPSILON: f64 = 0.05;
pub const MEDIUM_EPSILON: f64 = 0.3;
pub const POLICY_NAMES: [&str; 3] = ["expert", "medium", "random"];

/// A sequence of `T` steps: `T + 1` states, `T` actions, rewards and costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The `(state, action)` pair at step `t` (0-based).
    #[inline]
    pub fn pair(&self, t: usize) -> (usize, usize) {
        (self.states[t], self.actions[t])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.iter().copied().zip(self.actions.iter().copied())
    }

    pub fn reward_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Undiscounted cost return.
    pub fn cost_return(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Checks the length relations and that at least one step exists.
    pub fn validate_shape(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(invalid!("trajectory has no steps"));
        }
        let t = self.actions.len();
        if self.states.len() != t + 1 {
            return Err(invalid!(
                "trajectory has {} states for {} actions (expected {})",
                self.states.len(),
                t,
                t + 1
            ));
        }
        if self.rewards.len() != t || self.costs.len() != t {
            return Err(invalid!(
                "trajectory has {} rewards and {} costs for {} actions",
                self.rewards.len(),
                self.costs.len(),
                t
            ));
        }
        Ok(())
    }

    /// Checks indices and that every step has positive kernel probability.
    pub fn validate_against<D: Dynamics + ?Sized>(&self, dynamics: &D) -> Result<()> {
        self.validate_shape()?;
        let (ns, na) = (dynamics.n_states(), dynamics.n_actions());
        for t in 0..self.len() {
            let (s, a, s2) = (self.states[t], self.actions[t], self.states[t + 1]);
            if s >= ns || s2 >= ns || a >= na {
                return Err(invalid!("step {t} references ({s}, {a}, {s2}) outside {ns}x{na}"));
            }
            if !(dynamics.row(s, a)[s2] > 0.0) {
                return Err(invalid!("step {t}: transition {s} -{a}-> {s2} has zero probability"));
            }
        }
        Ok(())
    }
}

/// A named behavior policy and its share of the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub policy: String,
    pub fraction: f64,
}

impl MixEntry {
    pub fn new(policy: &str, fraction: f64) -> Self {
        Self { policy: policy.to_string(), fraction }
    }
}

/// Provenance header of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub mdp_digest: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub mix: Vec<MixEntry>,
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    /// Checks non-emptiness, trajectory shapes and index ranges.
    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(invalid!("dataset has no trajectories"));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            t.validate_shape().map_err(|e| invalid!("trajectory {i}: {e}"))?;
            if t.states.iter().any(|s| *s >= self.meta.n_states)
                || t.actions.iter().any(|a| *a >= self.meta.n_actions)
            {
                return Err(invalid!("trajectory {i} has an index outside the declared state/action sets"));
            }
        }
        Ok(())
    }

    /// Total number of `(state, action)` steps.
    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// SHA-256 hex digest of the MDP's canonical description.
pub fn mdp_digest(mdp: &TabularMdp) -> String {
    hex_digest(mdp.canonical_description().as_bytes())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in hash.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Shortest hazard-penalized paths to the goal.
///
/// Entering a cell costs 1, or [`HAZARD_WEIGHT`] for a hazard cell. The greedy
/// action minimizes entry weight plus remaining distance, ties to the lowest
/// action id; the goal and unreachable cells map to `Stay`.
#[derive(Clone, Debug)]
pub struct SafePlanner {
    pub dist: Vec<f64>,
    pub greedy: Vec<Action>,
}

impl SafePlanner {
    pub fn new(mdp: &TabularMdp) -> Self {
        let n = mdp.n_states();
        let weight = |s: usize| if mdp.is_hazard(s) { HAZARD_WEIGHT } else { 1.0 };
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[mdp.goal_state()] = 0.0;
        // dense Dijkstra on the reversed move graph; grids here are tiny
        loop {
            let mut u = None;
            for s in 0..n {
                if !done[s] && dist[s].is_finite() && u.is_none_or(|v: usize| dist[s] < dist[v]) {
                    u = Some(s);
                }
            }
            let Some(u) = u else { break };
            done[u] = true;
            for p in 0..n {
                if done[p] || mdp.is_wall(p) || p == mdp.goal_state() {
                    continue;
                }
                for a in Action::MOVES {
                    if mdp.intended_next(p, a) == u && p != u {
                        let cand = dist[u] + weight(u);
                        if cand < dist[p] {
                            dist[p] = cand;
                        }
                    }
                }
            }
        }
        let greedy = (0..n)
            .map(|s| {
                if s == mdp.goal_state() || !dist[s].is_finite() {
                    return Action::Stay;
                }
                let mut best = (Action::Stay, f64::INFINITY);
                for a in Action::MOVES {
                    let next = mdp.intended_next(s, a);
                    if next == s {
                        continue;
                    }
                    let v = weight(next) + dist[next];
                    if v < best.1 {
                        best = (a, v);
                    }
                }
                best.0
            })
            .collect();
        Self { dist, greedy }
    }
}

/// The scripted behavior policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Behavior {
    /// Greedy on the safe planner with epsilon-uniform exploration.
    EpsilonGreedy(f64),
    Random,
}

impl Behavior {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "expert" => Ok(Behavior::EpsilonGreedy(EXPERT_EPSILON)),
            "medium" => Ok(Behavior::EpsilonGreedy(MEDIUM_EPSILON)),
            "random" => Ok(Behavior::Random),
            other => Err(Error::Config(format!(
                "unknown behavior policy '{other}'; valid policies: {}",
                POLICY_NAMES.join(", ")
            ))),
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, planner: &SafePlanner, state: usize, rng: &mut R) -> usize {
        match *self {
            Behavior::Random => rng::below(rng, NUM_ACTIONS),
            Behavior::EpsilonGreedy(eps) => {
                if rng::uniform(rng) < eps {
                    rng::below(rng, NUM_ACTIONS)
                } else {
                    planner.greedy[state].id()
                }
            }
        }
    }

    /// Exact action distribution at `state`.
    pub fn action_probs(&self, planner: &SafePlanner, state: usize) -> [f64; NUM_ACTIONS] {
        match *self {
            Behavior::Random => [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS],
            Behavior::EpsilonGreedy(eps) => {
                let mut p = [eps / NUM_ACTIONS as f64; NUM_ACTIONS];
                p[planner.greedy[state].id()] += 1.0 - eps;
                p
            }
        }
    }
}

/// Splits `n` items by `fractions` with the largest-remainder rule (ties to
/// the earlier entry).
pub fn apportion(fractions: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - libm::floor(quotas[i]);
        let rj = quotas[j] - libm::floor(quotas[j]);
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Rolls out one behavior episode of `horizon` steps from the start cell.
pub fn rollout_behavior<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    planner: &SafePlanner,
    behavior: Behavior,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
    };
    let mut s = mdp.start_state();
    traj.states.push(s);
    for _ in 0..horizon {
        let a = behavior.act(planner, s, rng);
        let tr = mdp.step(s, a, rng).expect("behavior actions are valid");
        traj.actions.push(a);
        traj.rewards.push(tr.reward);
        traj.costs.push(tr.cost);
        traj.states.push(tr.next_state);
        s = tr.next_state;
    }
    traj
}

/// Validated generation request; the per-policy trajectory counts are fixed
/// here so generation itself can be split across workers.
#[derive(Clone, Debug)]
pub struct GenerationPlan {
    pub behaviors: Vec<Behavior>,
    /// Behavior index for every trajectory index.
    pub assignment: Vec<usize>,
    pub meta: DatasetMeta,
}

pub fn plan_generation(
    mdp: &TabularMdp,
    mix: &[MixEntry],
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<GenerationPlan> {
    if mix.is_empty() {
        return Err(Error::Config("behavior mix is empty".to_string()));
    }
    if n_traj == 0 || horizon == 0 {
        return Err(Error::Config("n_traj and horizon must be positive".to_string()));
    }
    let total: f64 = mix.iter().map(|m| m.fraction).sum();
    if (total - 1.0).abs() > 1e-9 || mix.iter().any(|m| !(m.fraction >= 0.0)) {
        return Err(Error::Config(format!("behavior fractions must be non-negative and sum to 1 (got {total})")));
    }
    let behaviors = mix
        .iter()
        .map(|m| Behavior::from_name(&m.policy))
        .collect::<Result<Vec<_>>>()?;
    let fractions: Vec<f64> = mix.iter().map(|m| m.fraction).collect();
    let counts = apportion(&fractions, n_traj);
    let assignment = counts
        .iter()
        .enumerate()
        .flat_map(|(i, c)| core::iter::repeat_n(i, *c))
        .collect();
    Ok(GenerationPlan {
        behaviors,
        assignment,
        meta: DatasetMeta {
            mdp_digest: mdp_digest(mdp),
            n_states: mdp.n_states(),
            n_actions: NUM_ACTIONS,
            mix: mix.to_vec(),
            n_traj,
            horizon,
            seed,
        },
    })
}

impl GenerationPlan {
    /// Generates trajectory `index` from its own stream.
    pub fn trajectory(&self, mdp: &TabularMdp, planner: &SafePlanner, index: usize) -> Trajectory {
        let mut rng = rng::stream(self.meta.seed, &[tag::DATASET, index as u64]);
        let behavior = self.behaviors[self.assignment[index]];
        rollout_behavior(mdp, planner, behavior, self.meta.horizon, &mut rng)
    }
}

/// Generates a dataset sequentially; identical to any index-ordered parallel
/// evaluation of [`GenerationPlan::trajectory`].
pub fn generate(
    mdp: &TabularMdp,
    mix: &[MixEntry],
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let plan = plan_generation(mdp, mix, n_traj, horizon, seed)?;
    let planner = SafePlanner::new(mdp);
    let trajectories = (0..n_traj).map(|i| plan.trajectory(mdp, &planner, i)).collect();
    Ok(OfflineDataset { meta: plan.meta, trajectories })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_traj: usize,
    pub max_cost_return: f64,
    pub mean_cost_return: f64,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    /// Row-major `[state][action]` visit counts.
    pub visit_counts: Vec<u64>,
}

pub fn dataset_stats(dataset: &OfflineDataset) -> DatasetStats {
    let na = dataset.meta.n_actions;
    let mut visit_counts = vec![0u64; dataset.meta.n_states * na];
    let mut max_cost_return = f64::NEG_INFINITY;
    let mut min_return = f64::INFINITY;
    let mut max_return = f64::NEG_INFINITY;
    let (mut sum_ret, mut sum_cost) = (0.0, 0.0);
    for t in &dataset.trajectories {
        for (s, a) in t.pairs() {
            visit_counts[s * na + a] += 1;
        }
        let (r, c) = (t.reward_return(), t.cost_return());
        max_cost_return = max_cost_return.max(c);
        min_return = min_return.min(r);
        max_return = max_return.max(r);
        sum_ret += r;
        sum_cost += c;
    }
    let n = dataset.trajectories.len();
    DatasetStats {
        n_traj: n,
        max_cost_return,
        mean_cost_return: sum_cost / n as f64,
        mean_return: sum_ret / n as f64,
        min_return,
        max_return,
        visit_counts,
    }
}

/// Fraction of dataset steps taken from a hazard cell.
pub fn hazard_step_fraction(mdp: &TabularMdp, dataset: &OfflineDataset) -> f64 {
    let hits = dataset
        .trajectories
        .iter()
        .flat_map(|t| t.states[..t.len()].iter())
        .filter(|s| mdp.is_hazard(**s))
        .count();
    hits as f64 / dataset.n_steps() as f64
}

/// Convenience constructor for a trajectory with costs and rewards from `mdp`.
pub fn trajectory_from_pairs<S: Signals + ?Sized>(signals: &S, states: Vec<usize>, actions: Vec<usize>) -> Trajectory {
    let rewards = states.iter().zip(&actions).map(|(s, a)| signals.reward(*s, *a)).collect();
    let costs = states.iter().zip(&actions).map(|(s, a)| signals.cost(*s, *a)).collect();
    Trajectory { states, actions, rewards, costs }
}
