//! Posterior over a finite family of high-level policies given a prompt.
//!
//! Each skill assigns the prompt a log-likelihood (policy terms plus model
//! transition terms). The posterior weight of skill `θ` is
//! `exp(K * r_K(θ)) * prior(θ)`, computed in log space.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{Action, Dynamics};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::occupancy::StochasticPolicy;
use crate::rng::{self, tag};
use crate::world_model::{ContextPolicy, Pair};

/// Stand-in for `log 0`.
pub const IMPOSSIBLE: f64 = -1e18;

#[derive(Clone, Debug)]
pub enum Skill {
    Context(ContextPolicy),
    Tabular(StochasticPolicy),
}

impl Skill {
    pub fn n_states(&self) -> usize {
        match self {
            Skill::Context(p) => p.n_states(),
            Skill::Tabular(p) => p.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Skill::Context(p) => p.n_actions(),
            Skill::Tabular(p) => p.n_actions(),
        }
    }

    /// Action distribution given the preceding pairs.
    pub fn action_probs(&self, history: &[Pair], state: usize) -> Vec<f64> {
        match self {
            Skill::Context(p) => {
                let start = history.len().saturating_sub(p.order());
                p.distribution(&history[start..], state)
            }
            Skill::Tabular(p) => p.row(state).to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkillFamily {
    pub names: Vec<String>,
    pub skills: Vec<Skill>,
    pub prior: Vec<f64>,
    pub true_index: usize,
}

impl SkillFamily {
    pub fn validate(&self) -> Result<()> {
        let n = self.skills.len();
        if n == 0 || self.prior.len() != n || self.names.len() != n {
            return Err(invalid!("skills, names and prior must be non-empty and of equal length"));
        }
        if self.true_index >= n {
            return Err(invalid!("true skill index {} out of range", self.true_index));
        }
        if self.prior.iter().any(|p| !(*p >= 0.0)) || (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid!("prior must be a probability vector"));
        }
        let (ns, na) = (self.skills[0].n_states(), self.skills[0].n_actions());
        if self.skills.iter().any(|s| s.n_states() != ns || s.n_actions() != na) {
            return Err(invalid!("skills disagree on shape"));
        }
        Ok(())
    }

    /// Every pair of skills differs on the empty-history distribution of at
    /// least one state.
    pub fn is_distinguishable(&self) -> bool {
        let ns = self.skills[0].n_states();
        let rows: Vec<Vec<Vec<f64>>> =
            self.skills.iter().map(|sk| (0..ns).map(|s| sk.action_probs(&[], s)).collect()).collect();
        (0..rows.len()).all(|i| (i + 1..rows.len()).all(|j| rows[i] != rows[j]))
    }
}

/// `sum_t log pi(a_t | pairs before t) + sum_t log P(s_{t+1} | s_t, a_t)`,
/// where the last transition is only scored when `next` is given.
pub fn prompt_log_likelihood<D: Dynamics + ?Sized>(
    prompt: &[Pair],
    skill: &Skill,
    kernel: &D,
    next: Option<usize>,
) -> f64 {
    let mut total = 0.0;
    for (t, &(s, a)) in prompt.iter().enumerate() {
        if s >= skill.n_states() || a >= skill.n_actions() {
            return IMPOSSIBLE;
        }
        let p = skill.action_probs(&prompt[..t], s)[a];
        let succ = prompt.get(t + 1).map(|p| p.0).or(if t + 1 == prompt.len() { next } else { None });
        let q = succ.map_or(1.0, |s2| kernel.row(s, a).get(s2).copied().unwrap_or(0.0));
        if p <= 0.0 || q <= 0.0 {
            return IMPOSSIBLE;
        }
        total += math::ln(p) + math::ln(q);
    }
    total
}

/// `(log p(prompt | θ) - log p(prompt | θ*)) / K`.
pub fn r_k<D: Dynamics + ?Sized>(prompt: &[Pair], skill: &Skill, true_skill: &Skill, kernel: &D) -> f64 {
    let ll = prompt_log_likelihood(prompt, skill, kernel, None);
    let ll_star = prompt_log_likelihood(prompt, true_skill, kernel, None);
    if ll <= IMPOSSIBLE {
        return IMPOSSIBLE;
    }
    if ll_star <= IMPOSSIBLE {
        return -IMPOSSIBLE;
    }
    if prompt.is_empty() {
        return 0.0;
    }
    (ll - ll_star) / prompt.len() as f64
}

/// Normalized `exp(log p(prompt | θ) + log prior(θ))`; impossible skills get 0.
pub fn posterior<D: Dynamics + ?Sized>(prompt: &[Pair], family: &SkillFamily, kernel: &D) -> Result<Vec<f64>> {
    family.validate()?;
    let logw: Vec<f64> = family
        .skills
        .iter()
        .zip(&family.prior)
        .map(|(skill, prior)| {
            let ll = prompt_log_likelihood(prompt, skill, kernel, None);
            if ll <= IMPOSSIBLE || *prior <= 0.0 {
                f64::NEG_INFINITY
            } else {
                ll + math::ln(*prior)
            }
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Degenerate(String::from("prompt is impossible under every skill")));
    }
    let w: Vec<f64> = logw.iter().map(|l| if l.is_finite() { math::exp(l - top) } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// A `k`-pair prompt generated by `skill` under `kernel` from `s1`.
pub fn sample_prompt<D: Dynamics + ?Sized, R: Rng + ?Sized>(
    skill: &Skill,
    kernel: &D,
    s1: usize,
    k: usize,
    rng: &mut R,
) -> Vec<Pair> {
    let mut pairs = Vec::with_capacity(k);
    let mut s = s1;
    for _ in 0..k {
        let a = rng::sample_index(&skill.action_probs(&pairs, s), rng).expect("skill rows are distributions");
        pairs.push((s, a));
        s = rng::sample_index(kernel.row(s, a), rng).expect("kernel rows are distributions");
    }
    pairs
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationPoint {
    pub k: usize,
    pub mean_mass: f64,
    pub std: f64,
    /// Posterior mass on the true skill per sampled prompt.
    pub masses: Vec<f64>,
}

/// Mean posterior mass on the true skill for each prompt length. Prompt `i`
/// is sampled once at the longest length and truncated, so samples are
/// paired across lengths.
pub fn concentration_curve<D: Dynamics + ?Sized>(
    family: &SkillFamily,
    kernel: &D,
    s1: usize,
    ks: &[usize],
    n_prompts: usize,
    seed: u64,
) -> Result<Vec<ConcentrationPoint>> {
    family.validate()?;
    if ks.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid!("prompt lengths must be sorted ascending"));
    }
    if s1 >= kernel.n_states() {
        return Err(invalid!("start state {s1} out of range"));
    }
    let k_max = ks.last().copied().unwrap_or(0);
    let truth = &family.skills[family.true_index];
    let prompts: Vec<Vec<Pair>> = (0..n_prompts)
        .map(|i| sample_prompt(truth, kernel, s1, k_max, &mut rng::stream(seed, &[tag::SKILL, i as u64])))
        .collect();
    ks.iter()
        .map(|&k| {
            let masses = prompts
                .iter()
                .map(|p| Ok(posterior(&p[..k], family, kernel)?[family.true_index]))
                .collect::<Result<Vec<f64>>>()?;
            let (mean_mass, std) = math::mean_std(&masses);
            Ok(ConcentrationPoint { k, mean_mass, std, masses })
        })
        .collect()
}

/// Skills that each favour one action with probability `strength` and spread
/// the rest uniformly, on every state. Uniform prior.
pub fn preference_family(n_states: usize, preferred: &[Action], strength: f64, true_index: usize) -> Result<SkillFamily> {
    let na = crate::env::NUM_ACTIONS;
    if !(strength > 0.0 && strength < 1.0) {
        return Err(invalid!("strength {strength} not in (0, 1)"));
    }
    let rest = (1.0 - strength) / (na - 1) as f64;
    let skills = preferred
        .iter()
        .map(|act| {
            let mut row = vec![rest; na];
            row[act.id()] = strength;
            StochasticPolicy::new(n_states, na, row.repeat(n_states)).map(Skill::Tabular)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = skills.len();
    let family = SkillFamily {
        names: preferred.iter().map(|a| String::from("prefer_") + a.name()).collect(),
        skills,
        prior: vec![1.0 / n as f64; n],
        true_index,
    };
    family.validate()?;
    Ok(family)
}
