mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use sas_core::bounds::{self, BoundParams, MetricSettings, Setup};
use sas_core::dataset::{self, generate, MixEntry, OfflineDataset};
use sas_core::env::{default_layouts, Action, Dynamics, TabularMdp, NUM_ACTIONS};
use sas_core::lyapunov;
use sas_core::math;
use sas_core::model::{fit_model, FittedModel, ModelConfig};
use sas_core::occupancy::StochasticPolicy;
use sas_core::rng;
use sas_core::sas::{self, window, SasConfig};
use sas_core::skill::{self, Skill, SkillFamily};
use sas_core::world_model::{imagine, rollout, Prompt};

struct Fixture {
    mdp: TabularMdp,
    data: OfflineDataset,
    model: FittedModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mdp = default_layouts("two-paths").unwrap();
        let mix = [MixEntry::new("expert", 0.4), MixEntry::new("medium", 0.4), MixEntry::new("random", 0.2)];
        let data = generate(&mdp, &mix, 120, 20, 11).unwrap();
        let model = fit_model(&mdp, &data, &ModelConfig::default(), 20).unwrap();
        Fixture { mdp, data, model }
    })
}

fn setup(f: &Fixture) -> Setup<'_> {
    Setup {
        mdp: &f.mdp,
        dataset: &f.data,
        kernel: &f.model.kernel,
        policy: &f.model.policy,
        energy: &f.model.energy,
        g: &f.model.g_ldm,
        s1: f.mdp.start_state(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn empty_prompt_is_the_unconditioned_rollout(seed in any::<u64>(), horizon in 1usize..25) {
        let f = fixture();
        let s1 = f.mdp.start_state();
        let a = imagine(&f.model.kernel, &f.model.policy, s1, horizon, Some(&Prompt::none()), &mut rng::stream(seed, &[3])).unwrap();
        let b = rollout(&f.model.kernel, None, &f.model.policy, s1, horizon, &[], &mut rng::stream(seed, &[3]));
        let c = imagine(&f.model.kernel, &f.model.policy, s1, horizon, None, &mut rng::stream(seed, &[3])).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        for (t, (s, act)) in a.pairs().enumerate() {
            prop_assert!(f.model.kernel.row(s, act)[a.states[t + 1]] > 0.0);
        }
    }

    #[test]
    fn sas_report_is_reproducible_from_its_rollouts(
        seed in any::<u64>(), n in 1usize..6, m in 1usize..6, k_raw in 1usize..8, horizon in 2usize..25,
    ) {
        let f = fixture();
        let k = k_raw.min(horizon);
        let cfg = SasConfig { n, m, k, horizon, seed };
        let g = &f.model.g_ldm;
        let rep = sas::run_sas(&f.model.kernel, &f.model.policy, &f.model.energy, g, f.mdp.start_state(), &cfg).unwrap();
        prop_assert_eq!(rep.loop1.len(), n);
        prop_assert_eq!(rep.loop2.len(), m);

        let maxima: Vec<f64> = rep
            .loop1
            .iter()
            .map(|r| {
                let e = f.model.energy.along(&r.trajectory);
                let t = math::argmax_first(&e).unwrap();
                assert_eq!((e[t], t), (r.max_energy, r.argmax_t));
                e[t]
            })
            .collect();
        prop_assert_eq!(math::argmin_first(&maxima), Some(rep.i_star));
        prop_assert!(maxima.iter().all(|x| *x >= maxima[rep.i_star]));
        let src = &rep.loop1[rep.i_star];
        prop_assert_eq!(rep.proposal_window, window(src.argmax_t, k));
        let (a, b) = rep.proposal_window;
        prop_assert_eq!(&rep.proposal.pairs[..], &src.trajectory.pairs().collect::<Vec<_>>()[a..=b]);

        let vs: Vec<usize> = rep
            .loop2
            .iter()
            .map(|r| {
                let vals: Vec<f64> = r.trajectory.pairs().map(|(s, a)| g.get(s, a)).collect();
                vals.windows(2).filter(|w| w[0] - w[1] >= 0.0).count()
            })
            .collect();
        prop_assert_eq!(vs.clone(), rep.loop2.iter().map(|r| r.v).collect::<Vec<_>>());
        let best = *vs.iter().max().unwrap();
        prop_assert_eq!(vs.iter().position(|v| *v == best), Some(rep.j_star));
        let src = &rep.loop2[rep.j_star];
        prop_assert_eq!(rep.prompt_window, window(src.argmax_t, k));
        let (a, b) = rep.prompt_window;
        prop_assert_eq!(&rep.prompt.pairs[..], &src.trajectory.pairs().collect::<Vec<_>>()[a..=b]);
        prop_assert_eq!(rep.short_prompt, rep.proposal.len() < k || rep.prompt.len() < k);
    }

    #[test]
    fn posterior_is_a_distribution(
        rows in prop::collection::vec(prop::collection::vec(0.05f64..1.0, NUM_ACTIONS), 2..5),
        seed in any::<u64>(),
        k in 0usize..30,
    ) {
        let f = fixture();
        let ns = f.mdp.n_states();
        let skills: Vec<Skill> = rows
            .iter()
            .map(|r| {
                let row = common::rows(r, NUM_ACTIONS);
                Skill::Tabular(StochasticPolicy::new(ns, NUM_ACTIONS, row.repeat(ns)).unwrap())
            })
            .collect();
        let n = skills.len();
        let family = SkillFamily {
            names: (0..n).map(|i| format!("s{i}")).collect(),
            skills,
            prior: vec![1.0 / n as f64; n],
            true_index: 0,
        };
        let prompt = skill::sample_prompt(&family.skills[0], f.mdp.kernel(), f.mdp.start_state(), k, &mut rng::stream(seed, &[9]));
        let post = skill::posterior(&prompt, &family, f.mdp.kernel()).unwrap();
        prop_assert!(post.iter().all(|p| *p >= 0.0));
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(skill::r_k(&prompt, &family.skills[0], &family.skills[0], f.mdp.kernel()), 0.0);
    }

    #[test]
    fn bound_decreases_in_samples_and_grows_in_t_and_l(
        c1 in 0.5f64..5.0, gap in 0.5f64..5.0, frac in 0.05f64..0.95,
        l in 0.5f64..5.0, n in 1usize..6, m in 1usize..20, t in 1usize..8,
    ) {
        let c2 = c1 + gap;
        let p = BoundParams { c1, c2, kappa: 1.0, l, n, m, t, e_mean: frac * c2 };
        let r = bounds::thm2_rhs(&p).unwrap();
        let more_n = bounds::thm2_rhs(&BoundParams { n: n + 1, ..p }).unwrap();
        let more_m = bounds::thm2_rhs(&BoundParams { m: m + 1, ..p }).unwrap();
        let more_t = bounds::thm2_rhs(&BoundParams { t: t + 1, ..p }).unwrap();
        let more_l = bounds::thm2_rhs(&BoundParams { l: l * 1.5, ..p }).unwrap();
        // Each term decreases strictly; the sum can round to equal when one
        // term is far below the other's precision.
        prop_assert!(more_n.term1 < r.term1 && more_n.term2 == r.term2);
        prop_assert!(more_m.term2 < r.term2 && more_m.term1 == r.term1);
        prop_assert!(more_n.total <= r.total && more_m.total <= r.total);
        prop_assert!(more_t.term2 > r.term2);
        prop_assert!(more_l.term2 > r.term2);
        prop_assert!(!r.vacuous_first_term);
    }
}

#[test]
fn harness_is_deterministic() {
    let f = fixture();
    let base = SasConfig { n: 3, m: 3, k: 5, horizon: 20, seed: 0 };
    let stats = dataset::dataset_stats(&f.data);
    let settings = MetricSettings {
        r_min: stats.min_return,
        r_max: stats.max_return,
        cost_thresholds: vec![20.0, 40.0],
        epsilon: 1e-3,
    };
    let a = bounds::ablation_harness(&setup(f), &base, &[1, 2], 4, &settings).unwrap();
    let b = bounds::ablation_harness(&setup(f), &base, &[1, 2], 4, &settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
}

#[test]
fn concentration_rises_for_a_distinguishable_family() {
    let f = fixture();
    let family = skill::preference_family(f.mdp.n_states(), &[Action::PosX, Action::PosY, Action::NegX], 0.6, 0).unwrap();
    assert!(family.is_distinguishable());
    let curve = skill::concentration_curve(&family, &f.model.kernel, f.mdp.start_state(), &[1, 5, 10, 50], 100, 4).unwrap();
    for w in curve.windows(2) {
        let band = 2.0 * (w[0].std / 10.0 + w[1].std / 10.0);
        assert!(w[1].mean_mass + band >= w[0].mean_mass, "{:?}", (w[0].k, w[1].k));
    }
    assert!(curve.last().unwrap().mean_mass >= 0.99);
}

#[test]
fn greedy_refuses_literal_tables() {
    let f = fixture();
    assert!(lyapunov::greedy_policy(&f.model.g_literal).is_err());
    assert!(lyapunov::greedy_policy(&f.model.g_ldm).is_ok());
}
