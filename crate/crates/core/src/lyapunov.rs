//! Lyapunov machinery over `(state, action)` energies.
//!
//! Two tables are produced. The *literal* table is `baseline - E(s, a)`,
//! where `baseline` is the smallest achievable worst-step energy along a
//! horizon-`T` path from the test start. The *LDM* table is the fixed point
//! of `G <- max{E, gamma * E_{s'}[min_a' G(s', a')]}`; its sub-level sets are
//! the ones whose invariance is checked.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::env::Dynamics;
use crate::error::{invalid, Error, Result};
use crate::occupancy::EnergyTable;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GVariant {
    LiteralEq6,
    LdmFixedPoint,
}

impl GVariant {
    pub fn name(self) -> &'static str {
        match self {
            GVariant::LiteralEq6 => "literal_eq6",
            GVariant::LdmFixedPoint => "ldm_fixed_point",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub variant: GVariant,
    /// Min-max energy baseline; only set for the literal variant.
    pub baseline: Option<f64>,
}

impl LyapunovTable {
    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn try_get(&self, state: usize, action: usize) -> Result<f64> {
        if state >= self.n_states || action >= self.n_actions {
            return Err(Error::Lookup(alloc::format!(
                "pair ({state}, {action}) outside the {}x{} table",
                self.n_states,
                self.n_actions
            )));
        }
        Ok(self.get(state, action))
    }

    /// `min_a G(s, a)`.
    pub fn state_min(&self, state: usize) -> f64 {
        self.values[state * self.n_actions..(state + 1) * self.n_actions]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_shapes<D: Dynamics + ?Sized>(energy: &EnergyTable, kernel: &D) -> Result<()> {
    if energy.n_states != kernel.n_states() || energy.n_actions != kernel.n_actions() {
        return Err(invalid!("energy table and kernel disagree on shape"));
    }
    if energy.values.iter().any(|e| !e.is_finite()) {
        return Err(invalid!("energy table has non-finite entries"));
    }
    Ok(())
}

/// One application of the LDM backup.
pub fn ldm_backup<D: Dynamics + ?Sized>(g: &[f64], energy: &EnergyTable, kernel: &D, gamma: f64) -> Vec<f64> {
    let (ns, na) = (energy.n_states, energy.n_actions);
    let mins: Vec<f64> = (0..ns)
        .map(|s| g[s * na..(s + 1) * na].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let expected: f64 = kernel.row(s, a).iter().zip(&mins).map(|(p, m)| p * m).sum();
            out[s * na + a] = energy.get(s, a).max(gamma * expected);
        }
    }
    out
}

/// Sup-norm residual `|T G - G|`.
pub fn ldm_residual<D: Dynamics + ?Sized>(g: &LyapunovTable, energy: &EnergyTable, kernel: &D, gamma: f64) -> f64 {
    ldm_backup(&g.values, energy, kernel, gamma)
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Iterates the LDM backup from `G = E` until the sup-norm change drops
/// below `tol`.
pub fn ldm_fixed_point<D: Dynamics + ?Sized>(
    energy: &EnergyTable,
    kernel: &D,
    gamma: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<LyapunovTable> {
    check_shapes(energy, kernel)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid!("gamma {gamma} not in (0, 1)"));
    }
    let mut g = energy.values.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = ldm_backup(&g, energy, kernel, gamma);
        residual = next.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        g = next;
        if residual < tol {
            return Ok(LyapunovTable {
                n_states: energy.n_states,
                n_actions: energy.n_actions,
                values: g,
                variant: GVariant::LdmFixedPoint,
                baseline: None,
            });
        }
    }
    Err(Error::Numerical {
        message: alloc::format!("LDM iteration did not converge in {max_iterations} sweeps"),
        residual,
    })
}

/// `W_T(s)`: the smallest worst-step energy over `T`-pair paths from `s`,
/// where both the action and a positive-probability successor are chosen.
pub fn min_max_energy<D: Dynamics + ?Sized>(energy: &EnergyTable, kernel: &D, horizon: usize) -> Vec<f64> {
    let (ns, na) = (energy.n_states, energy.n_actions);
    let mut w = vec![f64::NEG_INFINITY; ns];
    for _ in 0..horizon {
        let prev = w.clone();
        for (s, ws) in w.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for a in 0..na {
                let cont = kernel
                    .row(s, a)
                    .iter()
                    .zip(&prev)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(_, v)| *v)
                    .fold(f64::INFINITY, f64::min);
                best = best.min(energy.get(s, a).max(cont));
            }
            *ws = best;
        }
    }
    w
}

/// `baseline - E(s, a)` for an explicit baseline.
pub fn literal_table(energy: &EnergyTable, baseline: f64) -> LyapunovTable {
    LyapunovTable {
        n_states: energy.n_states,
        n_actions: energy.n_actions,
        values: energy.values.iter().map(|e| baseline - e).collect(),
        variant: GVariant::LiteralEq6,
        baseline: Some(baseline),
    }
}

/// Literal table with the exact min-max baseline over the given start states.
pub fn g_sas_exact<D: Dynamics + ?Sized>(
    energy: &EnergyTable,
    kernel: &D,
    starts: &[usize],
    horizon: usize,
) -> Result<LyapunovTable> {
    check_shapes(energy, kernel)?;
    if starts.is_empty() || horizon == 0 {
        return Err(invalid!("need at least one start state and a positive horizon"));
    }
    if let Some(s) = starts.iter().find(|s| **s >= energy.n_states) {
        return Err(invalid!("start state {s} out of range"));
    }
    let w = min_max_energy(energy, kernel, horizon);
    let baseline = starts.iter().map(|s| w[*s]).fold(f64::INFINITY, f64::min);
    Ok(literal_table(energy, baseline))
}

/// Worst-step energy of a trajectory and the first step attaining it.
pub fn max_energy(energy: &EnergyTable, traj: &Trajectory) -> (f64, usize) {
    let e = energy.along(traj);
    let t = crate::math::argmax_first(&e).unwrap_or(0);
    (e.get(t).copied().unwrap_or(f64::NEG_INFINITY), t)
}

/// Sampled baseline: the minimum over `n` sampled rollouts of their worst-step
/// energy. `sample(i)` produces rollout `i`.
pub fn g_sas_sampled<F>(energy: &EnergyTable, n: usize, mut sample: F) -> Result<f64>
where
    F: FnMut(usize) -> Trajectory,
{
    if n == 0 {
        return Err(invalid!("need at least one rollout"));
    }
    Ok((0..n).map(|i| max_energy(energy, &sample(i)).0).fold(f64::INFINITY, f64::min))
}

/// The sub-level set `{G <= level}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSet {
    pub n_actions: usize,
    pub members: Vec<bool>,
    pub level: f64,
}

impl InvariantSet {
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

    pub fn is_subset_of(&self, other: &InvariantSet) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !*a || *b)
    }
}

pub fn invariant_set(g: &LyapunovTable, level: f64) -> InvariantSet {
    InvariantSet {
        n_actions: g.n_actions,
        members: g.values.iter().map(|v| *v <= level).collect(),
        level,
    }
}

/// The invariant-set level implied by the occupancy feasibility threshold,
/// `-log(d / (c_max * d_conc))`.
pub fn feasibility_level(budget: f64, c_max: f64, d_conc: f64) -> f64 {
    -crate::math::ln(budget / (c_max * d_conc))
}

/// `argmin_a G(s, a)` per state, ties to the lowest action id.
pub fn greedy_policy(g: &LyapunovTable) -> Result<Vec<usize>> {
    if g.variant != GVariant::LdmFixedPoint {
        return Err(invalid!("greedy control requires the LDM fixed-point table"));
    }
    Ok((0..g.n_states)
        .map(|s| crate::math::argmin_first(&g.values[s * g.n_actions..(s + 1) * g.n_actions]).unwrap_or(0))
        .collect())
}

/// Per-step Lyapunov indicators along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSequence {
    /// `G(s_t, a_t) > 0`, one per step.
    pub u: Vec<bool>,
    /// `G(s_t, a_t) - G(s_{t+1}, a_{t+1}) >= 0`, one per consecutive pair.
    pub v: Vec<bool>,
}

impl ObservableSequence {
    pub fn v_count(&self) -> usize {
        self.v.iter().filter(|x| **x).count()
    }
}

pub fn observables(traj: &Trajectory, g: &LyapunovTable) -> Result<ObservableSequence> {
    if traj.len() < 2 {
        return Err(invalid!("observables need a trajectory of at least two steps"));
    }
    let values = traj
        .pairs()
        .map(|(s, a)| g.try_get(s, a))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ObservableSequence {
        u: values.iter().map(|v| *v > 0.0).collect(),
        v: values.windows(2).map(|w| w[0] - w[1] >= 0.0).collect(),
    })
}

/// `(sum u + sum v) / T`, the indicator log-likelihood up to a constant.
pub fn trajectory_score(obs: &ObservableSequence) -> f64 {
    if obs.u.is_empty() {
        return 0.0;
    }
    let hits = obs.u.iter().filter(|x| **x).count() + obs.v_count();
    hits as f64 / obs.u.len() as f64
}

/// Human-readable variant list for configuration errors.
pub fn variant_from_name(name: &str) -> Result<GVariant> {
    match name {
        "ldm" | "ldm_fixed_point" => Ok(GVariant::LdmFixedPoint),
        "literal" | "literal_eq6" => Ok(GVariant::LiteralEq6),
        other => Err(Error::Config(String::from("unknown G variant '") + other + "'; valid: ldm_fixed_point, literal_eq6")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TabularKernel;

    fn energy(values: Vec<f64>, n_actions: usize) -> EnergyTable {
        EnergyTable { n_states: values.len() / n_actions, n_actions, values, smoothing_epsilon: 0.0 }
    }

    fn traj(pairs: &[(usize, usize)]) -> Trajectory {
        let mut states: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        states.push(*states.last().unwrap());
        Trajectory {
            states,
            actions: pairs.iter().map(|p| p.1).collect(),
            rewards: vec![0.0; pairs.len()],
            costs: vec![0.0; pairs.len()],
        }
    }

    #[test]
    fn absorbing_self_loop_keeps_energy() {
        let k = TabularKernel::new(1, 1, vec![1.0]).unwrap();
        let g = ldm_fixed_point(&energy(vec![2.5], 1), &k, 0.9, 1e-12, 10_000).unwrap();
        assert!((g.values[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn chain_fixed_point_algebra() {
        // A -> B, B absorbing
        let k = TabularKernel::new(2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let g = ldm_fixed_point(&energy(vec![1.0, 3.0], 1), &k, 0.9, 1e-12, 10_000).unwrap();
        assert!((g.get(1, 0) - 3.0).abs() < 1e-12);
        assert!((g.get(0, 0) - 2.7).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let k = TabularKernel::new(2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        match ldm_fixed_point(&energy(vec![1.0, 3.0], 1), &k, 0.9, 0.0, 1) {
            Err(Error::Numerical { residual, .. }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn literal_table_identities() {
        let e = energy(vec![1.0, 2.0, 3.0, 2.0], 2);
        let t = literal_table(&e, 2.0);
        for i in 0..4 {
            assert_eq!(t.values[i] + e.values[i], 2.0);
        }
        assert_eq!(t.get(0, 1), 0.0);
        let flat = literal_table(&energy(vec![4.0; 6], 3), 4.0);
        assert!(flat.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampled_baseline() {
        let e = energy(vec![1.0, 5.0, 2.0, 7.0], 2);
        let a = traj(&[(0, 0), (1, 0)]);
        let b = traj(&[(0, 1), (1, 1)]);
        assert_eq!(g_sas_sampled(&e, 1, |_| b.clone()).unwrap(), 7.0);
        assert_eq!(g_sas_sampled(&e, 2, |i| if i == 0 { b.clone() } else { a.clone() }).unwrap(), 2.0);
        for n in 1..5 {
            assert_eq!(g_sas_sampled(&e, n, |_| a.clone()).unwrap(), 2.0);
        }
        assert!(g_sas_sampled(&e, 0, |_| a.clone()).is_err());
    }

    #[test]
    fn invariant_set_levels() {
        let g = LyapunovTable {
            n_states: 2,
            n_actions: 2,
            values: vec![0.5, 1.5, 2.5, 3.5],
            variant: GVariant::LdmFixedPoint,
            baseline: None,
        };
        assert_eq!(invariant_set(&g, 3.5).len(), 4);
        assert!(invariant_set(&g, 0.1).is_empty());
        assert!(invariant_set(&g, 1.0).is_subset_of(&invariant_set(&g, 2.6)));
    }

    #[test]
    fn greedy_ties_to_lowest_action() {
        let g = LyapunovTable {
            n_states: 2,
            n_actions: 3,
            values: vec![1.0, 1.0, 1.0, 3.0, 2.0, 2.0],
            variant: GVariant::LdmFixedPoint,
            baseline: None,
        };
        assert_eq!(greedy_policy(&g).unwrap(), vec![0, 1]);
        let single = LyapunovTable { n_states: 2, n_actions: 1, values: vec![4.0, 2.0], ..g.clone() };
        assert_eq!(greedy_policy(&single).unwrap(), vec![0, 0]);
        let lit = LyapunovTable { variant: GVariant::LiteralEq6, ..g };
        assert!(greedy_policy(&lit).is_err());
    }

    #[test]
    fn observables_and_score() {
        let g = LyapunovTable {
            n_states: 4,
            n_actions: 1,
            values: vec![1.0, 1.0, 2.0, 3.0],
            variant: GVariant::LiteralEq6,
            baseline: Some(0.0),
        };
        let flat = observables(&traj(&[(0, 0), (1, 0), (0, 0)]), &g).unwrap();
        assert!(flat.v.iter().all(|v| *v));
        let rising = observables(&traj(&[(1, 0), (2, 0), (3, 0)]), &g).unwrap();
        assert!(rising.v.iter().all(|v| !*v));
        assert!(observables(&traj(&[(0, 0)]), &g).is_err());
        assert!(matches!(observables(&traj(&[(0, 0), (9, 0)]), &g), Err(Error::Lookup(_))));

        let all = ObservableSequence { u: vec![true; 10], v: vec![true; 9] };
        assert!((trajectory_score(&all) - 1.9).abs() < 1e-15);
        let none = ObservableSequence { u: vec![false; 10], v: vec![false; 9] };
        assert_eq!(trajectory_score(&none), 0.0);
    }

    #[test]
    fn feasibility_level_is_negative_log_threshold() {
        assert!((feasibility_level(0.1, 1.0, 1.0) - core::f64::consts::LN_10).abs() < 1e-12);
    }
}
