//! Count-based world model: a learned transition kernel plus a prompt-
//! conditioned back-off sequence policy over `(state, action)` pairs.
//!
//! The policy's context window is the last `k` pairs. A prompt is injected by
//! pre-filling the window, so an empty prompt reproduces the unconditioned
//! rollout exactly.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, Trajectory};
use crate::env::{Dynamics, Signals, TabularKernel};
use crate::error::{invalid, Result};
use crate::rng;

/// A `(state, action)` pair.
pub type Pair = (usize, usize);

/// Default context length in pairs.
pub const DEFAULT_ORDER: usize = 4;

/// Maximum-likelihood transition counts with additive smoothing.
///
/// `P(s' | s, a) = (n(s,a,s') + smoothing) / (n(s,a) + smoothing * |S|)`. A
/// pair that was never observed under zero smoothing keeps the agent in
/// place.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedKernel {
    counts: Vec<u64>,
    smoothing: f64,
    probs: TabularKernel,
}

impl LearnedKernel {
    pub fn from_counts(n_states: usize, n_actions: usize, counts: Vec<u64>, smoothing: f64) -> Result<Self> {
        if counts.len() != n_states * n_actions * n_states {
            return Err(invalid!("kernel count table has the wrong size"));
        }
        if !(smoothing >= 0.0) || !smoothing.is_finite() {
            return Err(invalid!("smoothing must be finite and non-negative"));
        }
        let mut probs = vec![0.0; counts.len()];
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let row = &counts[base..base + n_states];
                let total: u64 = row.iter().sum();
                let out = &mut probs[base..base + n_states];
                if total == 0 && smoothing == 0.0 {
                    out[s] = 1.0;
                    continue;
                }
                let denom = total as f64 + smoothing * n_states as f64;
                for (o, c) in out.iter_mut().zip(row) {
                    *o = (*c as f64 + smoothing) / denom;
                }
            }
        }
        Ok(Self {
            counts,
            smoothing,
            probs: TabularKernel::new(n_states, n_actions, probs)?,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn probabilities(&self) -> &TabularKernel {
        &self.probs
    }
}

impl Dynamics for LearnedKernel {
    fn n_states(&self) -> usize {
        self.probs.n_states()
    }
    fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }
    #[inline]
    fn row(&self, state: usize, action: usize) -> &[f64] {
        self.probs.row(state, action)
    }
}

pub fn fit_kernel(dataset: &OfflineDataset, smoothing: f64) -> Result<LearnedKernel> {
    dataset.validate()?;
    let (ns, na) = (dataset.meta.n_states, dataset.meta.n_actions);
    let mut counts = vec![0u64; ns * na * ns];
    for t in &dataset.trajectories {
        for i in 0..t.len() {
            counts[(t.states[i] * na + t.actions[i]) * ns + t.states[i + 1]] += 1;
        }
    }
    LearnedKernel::from_counts(ns, na, counts, smoothing)
}

/// Fitting options for [`ContextPolicy`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFit {
    pub order: usize,
    /// Also count each trajectory's own segments as prompts placed before its
    /// first step, so that prompted contexts have support in the tables.
    pub self_prompting: bool,
}

impl Default for PolicyFit {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, self_prompting: true }
    }
}

/// A k-order back-off action model keyed by `(last j pairs, current state)`.
///
/// Lookup tries `j = min(k, window)` down to 1 and finally the per-state
/// action marginal; states never seen in data get a uniform distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextPolicy {
    order: usize,
    n_states: usize,
    n_actions: usize,
    /// `tables[j]` maps `[state, s_1, a_1, .., s_j, a_j]` to action counts.
    tables: Vec<BTreeMap<Vec<usize>, Vec<u64>>>,
}

/// One stored context, used for persistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub state: usize,
    /// Oldest pair first.
    pub window: Vec<Pair>,
    pub counts: Vec<u64>,
}

/// Serializable form of a [`ContextPolicy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextPolicyDoc {
    pub order: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub entries: Vec<ContextEntry>,
}

fn key(state: usize, window: &[Pair]) -> Vec<usize> {
    let mut k = Vec::with_capacity(1 + 2 * window.len());
    k.push(state);
    for &(s, a) in window {
        k.push(s);
        k.push(a);
    }
    k
}

impl ContextPolicy {
    fn empty(order: usize, n_states: usize, n_actions: usize) -> Self {
        Self {
            order,
            n_states,
            n_actions,
            tables: (0..=order).map(|_| BTreeMap::new()).collect(),
        }
    }

    fn count(&mut self, window: &[Pair], state: usize, action: usize) {
        let na = self.n_actions;
        self.tables[window.len()]
            .entry(key(state, window))
            .or_insert_with(|| vec![0; na])[action] += 1;
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of stored contexts per order.
    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(BTreeMap::len).collect()
    }

    /// Action distribution for `state` given the most recent pairs in
    /// `window` (oldest first), and the order that answered.
    pub fn lookup(&self, window: &[Pair], state: usize) -> (Vec<f64>, usize) {
        let longest = self.order.min(window.len());
        for j in (0..=longest).rev() {
            if let Some(c) = self.tables[j].get(&key(state, &window[window.len() - j..])) {
                let total: u64 = c.iter().sum();
                return (c.iter().map(|x| *x as f64 / total as f64).collect(), j);
            }
        }
        (vec![1.0 / self.n_actions as f64; self.n_actions], 0)
    }

    pub fn distribution(&self, window: &[Pair], state: usize) -> Vec<f64> {
        self.lookup(window, state).0
    }

    pub fn to_doc(&self) -> ContextPolicyDoc {
        let mut entries = Vec::new();
        for table in &self.tables {
            for (k, counts) in table {
                entries.push(ContextEntry {
                    state: k[0],
                    window: k[1..].chunks(2).map(|c| (c[0], c[1])).collect(),
                    counts: counts.clone(),
                });
            }
        }
        ContextPolicyDoc {
            order: self.order,
            n_states: self.n_states,
            n_actions: self.n_actions,
            entries,
        }
    }

    pub fn from_doc(doc: &ContextPolicyDoc) -> Result<Self> {
        let mut p = Self::empty(doc.order, doc.n_states, doc.n_actions);
        for e in &doc.entries {
            if e.window.len() > doc.order
                || e.state >= doc.n_states
                || e.counts.len() != doc.n_actions
                || e.counts.iter().all(|c| *c == 0)
                || e.window.iter().any(|(s, a)| *s >= doc.n_states || *a >= doc.n_actions)
            {
                return Err(invalid!("malformed context entry for state {}", e.state));
            }
            p.tables[e.window.len()].insert(key(e.state, &e.window), e.counts.clone());
        }
        Ok(p)
    }
}

/// Plain k-order fit (no self-prompting).
pub fn fit_policy(dataset: &OfflineDataset, order: usize) -> Result<ContextPolicy> {
    fit_policy_with(dataset, PolicyFit { order, self_prompting: false })
}

pub fn fit_policy_with(dataset: &OfflineDataset, fit: PolicyFit) -> Result<ContextPolicy> {
    dataset.validate()?;
    let k = fit.order;
    let mut policy = ContextPolicy::empty(k, dataset.meta.n_states, dataset.meta.n_actions);
    let mut context: Vec<Pair> = Vec::with_capacity(2 * k + 1);
    for traj in &dataset.trajectories {
        let pairs: Vec<Pair> = traj.pairs().collect();
        for t in 0..pairs.len() {
            let window = &pairs[t.saturating_sub(k)..t];
            for j in 0..=window.len() {
                policy.count(&window[window.len() - j..], pairs[t].0, pairs[t].1);
            }
        }
        if !fit.self_prompting || k == 0 {
            continue;
        }
        // Each segment of up to k pairs, placed before step 0, conditions the
        // first k steps. Only suffixes that still reach into the segment are
        // counted; the rest duplicate the plain counts above.
        for end in 0..pairs.len() {
            let segment = &pairs[(end + 1).saturating_sub(k)..=end];
            for t in 0..k.min(pairs.len()) {
                context.clear();
                context.extend_from_slice(segment);
                context.extend_from_slice(&pairs[..t]);
                let window = &context[context.len().saturating_sub(k)..];
                for j in (t + 1)..=window.len() {
                    policy.count(&window[window.len() - j..], pairs[t].0, pairs[t].1);
                }
            }
        }
    }
    Ok(policy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Sas,
    Random,
    Maxmax,
    None,
}

/// A contiguous segment of `(state, action)` pairs injected as context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub pairs: Vec<Pair>,
    pub source: PromptSource,
}

impl Prompt {
    pub fn none() -> Self {
        Self { pairs: Vec::new(), source: PromptSource::None }
    }

    /// Pairs `[start, end]` (inclusive, 0-based) of a trajectory.
    pub fn from_window(traj: &Trajectory, start: usize, end: usize, source: PromptSource) -> Self {
        Self { pairs: (start..=end).map(|t| traj.pair(t)).collect(), source }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Autoregressive rollout of `policy` under `dynamics` from `s1`.
///
/// The window starts as the last `k` prompt pairs. Rewards and costs come
/// from `signals` when given (the true environment) and are zero otherwise
/// (imagination under a learned model).
pub fn rollout<D, R>(
    dynamics: &D,
    signals: Option<&dyn Signals>,
    policy: &ContextPolicy,
    s1: usize,
    horizon: usize,
    prompt: &[Pair],
    rng: &mut R,
) -> Trajectory
where
    D: Dynamics + ?Sized,
    R: Rng + ?Sized,
{
    let k = policy.order();
    let mut window: Vec<Pair> = prompt[prompt.len().saturating_sub(k)..].to_vec();
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
    };
    let mut s = s1;
    traj.states.push(s);
    for _ in 0..horizon {
        let dist = policy.distribution(&window, s);
        let a = rng::sample_index(&dist, rng).expect("policy rows are distributions");
        let next = rng::sample_index(dynamics.row(s, a), rng).expect("kernel rows are distributions");
        let (r, c) = signals.map_or((0.0, 0.0), |sig| (sig.reward(s, a), sig.cost(s, a)));
        traj.actions.push(a);
        traj.rewards.push(r);
        traj.costs.push(c);
        traj.states.push(next);
        if k > 0 {
            if window.len() == k {
                window.remove(0);
            }
            window.push((s, a));
        }
        s = next;
    }
    traj
}

/// Imagined trajectory under the learned kernel, optionally prompted.
pub fn imagine<R: Rng + ?Sized>(
    kernel: &LearnedKernel,
    policy: &ContextPolicy,
    s1: usize,
    horizon: usize,
    prompt: Option<&Prompt>,
    rng: &mut R,
) -> Result<Trajectory> {
    if s1 >= kernel.n_states() {
        return Err(invalid!("start state {s1} out of range"));
    }
    if horizon == 0 {
        return Err(invalid!("horizon must be at least 1"));
    }
    let pairs = prompt.map_or(&[][..], |p| &p.pairs[..]);
    Ok(rollout(kernel, None, policy, s1, horizon, pairs, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, MixEntry};

    fn dataset(trajs: Vec<(Vec<usize>, Vec<usize>)>, n_states: usize, n_actions: usize) -> OfflineDataset {
        OfflineDataset {
            meta: DatasetMeta {
                mdp_digest: "test".into(),
                n_states,
                n_actions,
                mix: vec![MixEntry::new("expert", 1.0)],
                n_traj: trajs.len(),
                horizon: 0,
                seed: 0,
            },
            trajectories: trajs
                .into_iter()
                .map(|(states, actions)| {
                    let t = actions.len();
                    Trajectory { states, actions, rewards: vec![0.0; t], costs: vec![0.0; t] }
                })
                .collect(),
        }
    }

    #[test]
    fn single_transition_kernel() {
        let d = dataset(vec![(vec![0, 1], vec![0])], 2, 1);
        let k = fit_kernel(&d, 0.0).unwrap();
        assert_eq!(k.row(0, 0), &[0.0, 1.0]);
        // unseen pair with zero smoothing stays in place
        assert_eq!(k.row(1, 0), &[0.0, 1.0]);
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let d = dataset(vec![(vec![0, 1, 1], vec![0, 0])], 3, 1);
        let k = fit_kernel(&d, 1e9).unwrap();
        for p in k.row(0, 0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn order_zero_is_state_marginal() {
        let d = dataset(vec![(vec![0, 0, 0, 0, 0], vec![0, 1, 1, 1])], 1, 2);
        let p = fit_policy(&d, 0).unwrap();
        assert_eq!(p.distribution(&[], 0), vec![0.25, 0.75]);
        assert_eq!(p.distribution(&[(0, 0), (0, 0)], 0), vec![0.25, 0.75]);
    }

    #[test]
    fn deterministic_context_is_one_hot_and_backs_off() {
        // after (0, 1) the action at state 1 is always 0; after (2, 0) it is 1
        let d = dataset(vec![(vec![0, 1, 1], vec![1, 0]), (vec![2, 1, 1], vec![0, 1])], 3, 2);
        let p = fit_policy(&d, 2).unwrap();
        assert_eq!(p.distribution(&[(0, 1)], 1), vec![1.0, 0.0]);
        assert_eq!(p.distribution(&[(2, 0)], 1), vec![0.0, 1.0]);
        // unseen longer context equals the shorter answer
        assert_eq!(p.lookup(&[(2, 1), (0, 1)], 1), (vec![1.0, 0.0], 1));
        // fully unseen context falls to the state marginal
        let (marg, j) = p.lookup(&[(2, 1)], 1);
        assert_eq!(j, 0);
        assert_eq!(marg, p.distribution(&[], 1));
    }

    #[test]
    fn deterministic_rollout_ignores_seed() {
        let d = dataset(vec![(vec![0, 1, 2, 2], vec![0, 0, 0])], 3, 1);
        let k = fit_kernel(&d, 0.0).unwrap();
        let p = fit_policy(&d, 2).unwrap();
        let a = imagine(&k, &p, 0, 5, None, &mut rng::stream(1, &[])).unwrap();
        let b = imagine(&k, &p, 0, 5, None, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states, vec![0, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn prompt_forces_first_action() {
        // context (1, 0) before state 0 is always followed by action 1
        let d = dataset(
            vec![(vec![0, 0, 0], vec![0, 0]), (vec![1, 0, 0], vec![0, 1])],
            2,
            2,
        );
        let k = fit_kernel(&d, 0.0).unwrap();
        let p = fit_policy(&d, 1).unwrap();
        let prompt = Prompt { pairs: vec![(1, 0)], source: PromptSource::Sas };
        for seed in 0..20 {
            let t = imagine(&k, &p, 0, 1, Some(&prompt), &mut rng::stream(seed, &[])).unwrap();
            assert_eq!(t.actions[0], 1);
        }
    }

    #[test]
    fn self_prompting_leaves_unprompted_contexts_alone() {
        let d = dataset(
            vec![(vec![0, 1, 2, 0, 1], vec![0, 1, 0, 1]), (vec![0, 2, 1, 0, 0], vec![1, 1, 0, 0])],
            3,
            2,
        );
        let plain = fit_policy(&d, 2).unwrap();
        let aug = fit_policy_with(&d, PolicyFit { order: 2, self_prompting: true }).unwrap();
        // the state marginal only ever receives unprompted counts
        for s in 0..3 {
            assert_eq!(plain.lookup(&[], s), aug.lookup(&[], s));
        }
        assert!(aug.table_sizes()[2] >= plain.table_sizes()[2]);
        // a segment of trajectory 0 placed before its start selects its first action
        let seg = [(0, 0), (1, 1)];
        assert_eq!(aug.distribution(&seg, 0), vec![1.0, 0.0]);
    }

    #[test]
    fn doc_round_trip() {
        let d = dataset(vec![(vec![0, 1, 2, 0, 1], vec![0, 1, 0, 1])], 3, 2);
        let p = fit_policy_with(&d, PolicyFit { order: 3, self_prompting: true }).unwrap();
        assert_eq!(ContextPolicy::from_doc(&p.to_doc()).unwrap(), p);
    }

    #[test]
    fn long_prompt_is_truncated_to_order() {
        let d = dataset(vec![(vec![0, 1, 0, 1, 0], vec![0, 0, 0, 0])], 2, 1);
        let k = fit_kernel(&d, 0.0).unwrap();
        let p = fit_policy(&d, 2).unwrap();
        let long = Prompt { pairs: vec![(0, 0); 7], source: PromptSource::Random };
        let short = Prompt { pairs: vec![(0, 0); 2], source: PromptSource::Random };
        let a = imagine(&k, &p, 0, 4, Some(&long), &mut rng::stream(3, &[])).unwrap();
        let b = imagine(&k, &p, 0, 4, Some(&short), &mut rng::stream(3, &[])).unwrap();
        assert_eq!(a, b);
    }
}
