//! Discounted occupancy measures, the energy landscape derived from them,
//! concentrability and the occupancy-based feasible region.
//!
//! Occupancies follow the unnormalized convention: a table truncated at
//! horizon `T` has total mass `(1 - gamma^T) / (1 - gamma)`. Energies are
//! `-log` of a table; callers choose whether to normalize first.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::env::{Action, Dynamics, Signals, STOCHASTIC_TOL};
use crate::error::{invalid, Error, Result};
use crate::math;

/// Additive smoothing applied to empirical occupancies before taking logs.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// A stochastic Markov policy `pi(a | s)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(invalid!("policy has {} entries, expected {}", probs.len(), n_states * n_actions));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(invalid!("policy row {s} is not a distribution (sum {sum})"));
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// One-hot rows from a state-to-action map.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(invalid!("action {a} at state {s} out of range"));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states: actions.len(), n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Unnormalized,
    Normalized,
}

/// Per-`(state, action)` discounted visitation, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
    pub normalization: Normalization,
}

impl OccupancyTable {
    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Rescales to a probability distribution over pairs.
    pub fn normalized(&self) -> Result<OccupancyTable> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::Domain(alloc::string::String::from("occupancy table has zero mass")));
        }
        Ok(OccupancyTable {
            values: self.values.iter().map(|v| v / total).collect(),
            normalization: Normalization::Normalized,
            ..self.clone()
        })
    }
}

/// `(1 - gamma^T) / (1 - gamma)`: the mass of an unnormalized table.
pub fn truncated_mass(gamma: f64, horizon: usize) -> f64 {
    (1.0 - math::powf(gamma, horizon as f64)) / (1.0 - gamma)
}

/// Exact occupancy by forward dynamic programming on the kernel.
pub fn exact_occupancy<D: Dynamics + ?Sized>(
    dynamics: &D,
    initial: &[f64],
    policy: &StochasticPolicy,
    gamma: f64,
    horizon: usize,
) -> Result<OccupancyTable> {
    let (ns, na) = (dynamics.n_states(), dynamics.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(invalid!("policy shape does not match the dynamics"));
    }
    if initial.len() != ns {
        return Err(invalid!("initial distribution has {} entries for {ns} states", initial.len()));
    }
    if horizon == 0 {
        return Err(invalid!("horizon must be at least 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid!("gamma {gamma} not in (0, 1)"));
    }
    let mut values = vec![0.0; ns * na];
    let mut dist = initial.to_vec();
    let mut next = vec![0.0; ns];
    let mut discount = 1.0;
    for _ in 0..horizon {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            for (a, p) in policy.row(s).iter().enumerate() {
                let mass = dist[s] * p;
                if mass == 0.0 {
                    continue;
                }
                values[s * na + a] += discount * mass;
                for (s2, q) in dynamics.row(s, a).iter().enumerate() {
                    next[s2] += mass * q;
                }
            }
        }
        core::mem::swap(&mut dist, &mut next);
        discount *= gamma;
    }
    Ok(OccupancyTable {
        n_states: ns,
        n_actions: na,
        values,
        gamma,
        horizon,
        normalization: Normalization::Unnormalized,
    })
}

/// Monte Carlo occupancy from rollouts of a common horizon, plus additive
/// smoothing.
pub fn empirical_occupancy(
    rollouts: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    smoothing_epsilon: f64,
) -> Result<OccupancyTable> {
    let Some(first) = rollouts.first() else {
        return Err(invalid!("empirical occupancy needs at least one rollout"));
    };
    let horizon = first.len();
    if rollouts.iter().any(|r| r.len() != horizon) {
        return Err(invalid!("rollouts must share a common horizon"));
    }
    if !(smoothing_epsilon >= 0.0) {
        return Err(invalid!("smoothing must be non-negative"));
    }
    let mut values = vec![0.0; n_states * n_actions];
    for r in rollouts {
        let mut discount = 1.0;
        for (s, a) in r.pairs() {
            if s >= n_states || a >= n_actions {
                return Err(invalid!("rollout pair ({s}, {a}) outside the table"));
            }
            values[s * n_actions + a] += discount;
            discount *= gamma;
        }
    }
    let n = rollouts.len() as f64;
    values.iter_mut().for_each(|v| *v = *v / n + smoothing_epsilon);
    Ok(OccupancyTable {
        n_states,
        n_actions,
        values,
        gamma,
        horizon,
        normalization: Normalization::Unnormalized,
    })
}

/// `E(s, a) = -log rho(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub smoothing_epsilon: f64,
}

impl EnergyTable {
    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowers the equilibrium pair to the table minimum so it is the unique
    /// lowest-energy point (ties included).
    pub fn with_equilibrium(mut self, state: usize, action: usize) -> Self {
        let m = self.min();
        self.values[state * self.n_actions + action] = m;
        self
    }

    /// Energies along a trajectory's steps.
    pub fn along(&self, traj: &Trajectory) -> Vec<f64> {
        traj.pairs().map(|(s, a)| self.get(s, a)).collect()
    }
}

pub fn energy(occ: &OccupancyTable) -> Result<EnergyTable> {
    if let Some(i) = occ.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(alloc::format!(
            "occupancy of pair ({}, {}) is zero; apply smoothing before taking the energy",
            i / occ.n_actions,
            i % occ.n_actions
        )));
    }
    Ok(EnergyTable {
        n_states: occ.n_states,
        n_actions: occ.n_actions,
        values: occ.values.iter().map(|v| -math::ln(*v)).collect(),
        smoothing_epsilon: 0.0,
    })
}

/// Smallest `D >= 1` with `target <= D * data` after normalizing both tables.
pub fn concentrability(target: &OccupancyTable, data: &OccupancyTable) -> Result<f64> {
    if target.n_states != data.n_states || target.n_actions != data.n_actions {
        return Err(invalid!("occupancy tables have different supports"));
    }
    if data.values.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid!("data occupancy must be strictly positive"));
    }
    let t = target.normalized()?;
    let d = data.normalized()?;
    let ratio = t
        .values
        .iter()
        .zip(&d.values)
        .map(|(a, b)| a / b)
        .fold(1.0, f64::max);
    Ok(ratio)
}

/// Pairs whose occupancy clears `d / (c_max * d_conc)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub n_actions: usize,
    pub members: Vec<bool>,
    pub threshold: f64,
}

impl FeasibleRegion {
    #[inline]
    pub fn contains(&self, state: usize, action: usize) -> bool {
        self.members[state * self.n_actions + action]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn feasible_region(occ: &OccupancyTable, budget: f64, c_max: f64, d_conc: f64) -> Result<FeasibleRegion> {
    if !(budget > 0.0) || !(c_max > 0.0) || !(d_conc >= 1.0) {
        return Err(invalid!("need d > 0, c_max > 0 and d_conc >= 1 (got {budget}, {c_max}, {d_conc})"));
    }
    let threshold = budget / (c_max * d_conc);
    Ok(FeasibleRegion {
        n_actions: occ.n_actions,
        members: occ.values.iter().map(|v| *v >= threshold).collect(),
        threshold,
    })
}

/// Outcome of the density-to-cost sufficiency check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmdpCheck {
    /// `J_C = sum rho * c`.
    pub j_c: f64,
    /// `d - J_C`.
    pub margin: f64,
    /// Cost level `d (1 - gamma)` separating low- and high-cost pairs.
    pub cost_threshold: f64,
    pub high_cost_pairs: usize,
    /// Every high-cost pair has `rho <= d / c_max`.
    pub antecedent: bool,
    /// `J_C <= d`.
    pub conclusion: bool,
    /// The implication `antecedent => conclusion`.
    pub holds: bool,
}

/// Checks the occupancy-cap condition on high-cost pairs against the
/// constraint value it is meant to guarantee.
pub fn verify_cmdp_sufficiency<S: Signals + ?Sized>(
    signals: &S,
    c_max: f64,
    occ: &OccupancyTable,
    budget: f64,
) -> CmdpCheck {
    let cost_threshold = budget * (1.0 - occ.gamma);
    let mut j_c = 0.0;
    let mut high_cost_pairs = 0;
    let mut antecedent = true;
    for s in 0..occ.n_states {
        for a in 0..occ.n_actions {
            let c = signals.cost(s, a);
            let rho = occ.get(s, a);
            j_c += rho * c;
            if c >= cost_threshold && c > 0.0 {
                high_cost_pairs += 1;
                if rho > budget / c_max {
                    antecedent = false;
                }
            }
        }
    }
    let conclusion = j_c <= budget;
    CmdpCheck {
        j_c,
        margin: budget - j_c,
        cost_threshold,
        high_cost_pairs,
        antecedent,
        conclusion,
        holds: !antecedent || conclusion,
    }
}

/// Per-state mean over the four movement actions.
pub fn action_averaged_occupancy(occ: &OccupancyTable) -> Result<Vec<f64>> {
    average_over_moves(&occ.values, occ.n_states, occ.n_actions)
}

pub(crate) fn average_over_moves(values: &[f64], n_states: usize, n_actions: usize) -> Result<Vec<f64>> {
    if n_actions < Action::MOVES.len() {
        return Err(invalid!("table lacks the four movement actions"));
    }
    Ok((0..n_states)
        .map(|s| Action::MOVES.iter().map(|a| values[s * n_actions + a.id()]).sum::<f64>() / 4.0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TabularKernel;

    fn self_loop() -> TabularKernel {
        TabularKernel::new(1, 1, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_sum_on_self_loop() {
        let occ = exact_occupancy(&self_loop(), &[1.0], &StochasticPolicy::uniform(1, 1), 0.5, 3).unwrap();
        assert!((occ.get(0, 0) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn two_chain() {
        let k = TabularKernel::new(2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let occ = exact_occupancy(&k, &[1.0, 0.0], &StochasticPolicy::uniform(2, 1), 0.9, 2).unwrap();
        assert!((occ.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((occ.get(1, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn non_stochastic_policy_rejected() {
        assert!(StochasticPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(StochasticPolicy::new(1, 2, vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn empirical_single_rollout() {
        let r = Trajectory { states: vec![0, 1], actions: vec![0], rewards: vec![0.0], costs: vec![0.0] };
        let occ = empirical_occupancy(core::slice::from_ref(&r), 2, 1, 0.9, 0.0).unwrap();
        assert_eq!(occ.get(0, 0), 1.0);
        assert_eq!(occ.get(1, 0), 0.0);
        let twice = empirical_occupancy(&[r.clone(), r], 2, 1, 0.9, 0.0).unwrap();
        assert_eq!(occ, twice);
        assert!(empirical_occupancy(&[], 2, 1, 0.9, 0.0).is_err());
    }

    #[test]
    fn energy_values_and_zero_entries() {
        let mut occ = empirical_occupancy(
            &[Trajectory { states: vec![0, 0], actions: vec![0], rewards: vec![0.0], costs: vec![0.0] }],
            1,
            2,
            0.9,
            0.0,
        )
        .unwrap();
        assert!(matches!(energy(&occ), Err(Error::Domain(_))));
        occ.values = vec![1.0, libm::exp(-2.0)];
        let e = energy(&occ).unwrap();
        assert_eq!(e.get(0, 0), 0.0);
        assert!((e.get(0, 1) - 2.0).abs() < 1e-15);
    }

    fn table(values: Vec<f64>) -> OccupancyTable {
        OccupancyTable {
            n_states: values.len(),
            n_actions: 1,
            values,
            gamma: 0.9,
            horizon: 1,
            normalization: Normalization::Normalized,
        }
    }

    #[test]
    fn concentrability_cases() {
        let a = table(vec![0.25, 0.25, 0.5]);
        assert_eq!(concentrability(&a, &a).unwrap(), 1.0);
        let target = table(vec![0.5, 0.25, 0.25]);
        let data = table(vec![0.25, 0.25, 0.5]);
        assert_eq!(concentrability(&target, &data).unwrap(), 2.0);
        assert!(concentrability(&table(vec![1.0]), &data).is_err());
    }

    #[test]
    fn feasible_region_threshold() {
        let occ = table(vec![0.05, 0.1, 0.3]);
        let r = feasible_region(&occ, 0.1, 1.0, 1.0).unwrap();
        assert!((r.threshold - 0.1).abs() < 1e-15);
        assert_eq!(r.members, vec![false, true, true]);
        let r2 = feasible_region(&occ, 0.1, 1.0, 2.0).unwrap();
        assert!((r2.threshold - 0.05).abs() < 1e-15);
        assert_eq!(r2.members, vec![true, true, true]);
        assert!(feasible_region(&occ, 0.1, 1.0, 0.5).is_err());
    }

    #[test]
    fn action_average() {
        let occ = OccupancyTable {
            n_states: 1,
            n_actions: 5,
            values: vec![1.0, 2.0, 3.0, 4.0, 100.0],
            gamma: 0.9,
            horizon: 1,
            normalization: Normalization::Unnormalized,
        };
        assert_eq!(action_averaged_occupancy(&occ).unwrap(), vec![2.5]);
    }
}
