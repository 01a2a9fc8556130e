mod common;

use proptest::prelude::*;

use sas_core::env::{Dynamics, TabularKernel};
use sas_core::lyapunov::{self, GVariant};
use sas_core::occupancy::{self, Normalization, OccupancyTable};
use sas_core::rng;

fn table(ns: usize, na: usize, values: Vec<f64>) -> OccupancyTable {
    OccupancyTable { n_states: ns, n_actions: na, values, gamma: 0.9, horizon: 10, normalization: Normalization::Normalized }
}

fn uniform_initial(ns: usize) -> Vec<f64> {
    vec![1.0 / ns as f64; ns]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_mass_is_truncated_geometric(
        (kernel, policy) in (2usize..6, 1usize..4).prop_flat_map(|(ns, na)| (common::kernel(ns, na), common::policy(ns, na))),
        gamma in 0.05f64..0.995,
        horizon in 1usize..60,
    ) {
        let occ = occupancy::exact_occupancy(&kernel, &uniform_initial(kernel.n_states()), &policy, gamma, horizon).unwrap();
        let expected = (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
        prop_assert!((occ.total() - expected).abs() <= 1e-9, "{} vs {}", occ.total(), expected);
        prop_assert!(occ.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn feasible_region_grows_with_d_conc_and_shrinks_with_budget(
        values in prop::collection::vec(0.0f64..1.0, 12),
        d in 0.01f64..1.0,
        d_up in 0.0f64..1.0,
        conc in 1.0f64..5.0,
        conc_up in 0.0f64..5.0,
        c_max in 0.1f64..3.0,
    ) {
        let occ = table(4, 3, values);
        let base = occupancy::feasible_region(&occ, d, c_max, conc).unwrap();
        let wider = occupancy::feasible_region(&occ, d, c_max, conc + conc_up).unwrap();
        let tighter = occupancy::feasible_region(&occ, d + d_up, c_max, conc).unwrap();
        for i in 0..12 {
            prop_assert!(!base.members[i] || wider.members[i]);
            prop_assert!(!tighter.members[i] || base.members[i]);
        }
    }

    #[test]
    fn concentrability_floor(
        target in prop::collection::vec(0.0f64..1.0, 8),
        data in prop::collection::vec(0.01f64..1.0, 8),
    ) {
        prop_assume!(target.iter().sum::<f64>() > 0.0);
        let t = table(4, 2, target.clone());
        let d = table(4, 2, data.clone());
        let c = occupancy::concentrability(&t, &d).unwrap();
        prop_assert!(c >= 1.0);
        let (zt, zd): (f64, f64) = (target.iter().sum(), data.iter().sum());
        let dominated = target.iter().zip(&data).all(|(a, b)| a / zt <= b / zd);
        prop_assert_eq!(c == 1.0, dominated);
        let scan = target.iter().zip(&data).map(|(a, b)| (a / zt) / (b / zd)).fold(1.0, f64::max);
        prop_assert!((c - scan).abs() <= 1e-12 * scan);
    }

    #[test]
    fn ldm_backup_is_monotone(
        (kernel, energy, g, bump) in (2usize..6, 1usize..4).prop_flat_map(|(ns, na)| (
            common::kernel(ns, na),
            common::energy(ns, na),
            prop::collection::vec(0.0f64..20.0, ns * na),
            prop::collection::vec(0.0f64..5.0, ns * na),
        )),
        gamma in 0.1f64..0.99,
    ) {
        let higher: Vec<f64> = g.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let lo = lyapunov::ldm_backup(&g, &energy, &kernel, gamma);
        let hi = lyapunov::ldm_backup(&higher, &energy, &kernel, gamma);
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn ldm_fixed_point_converges_above_energy(
        (kernel, energy) in (2usize..6, 1usize..4).prop_flat_map(|(ns, na)| (common::kernel(ns, na), common::energy(ns, na))),
        gamma in 0.1f64..0.95,
    ) {
        let g = lyapunov::ldm_fixed_point(&energy, &kernel, gamma, 1e-10, 100_000).unwrap();
        prop_assert_eq!(g.variant, GVariant::LdmFixedPoint);
        prop_assert!(lyapunov::ldm_residual(&g, &energy, &kernel, gamma) <= 1e-8);
        for (gv, e) in g.values.iter().zip(&energy.values) {
            prop_assert!(gv >= e);
        }
    }

    #[test]
    fn greedy_transitions_do_not_increase_g(
        (kernel, energy) in (2usize..6, 1usize..4).prop_flat_map(|(ns, na)| (common::kernel(ns, na), common::energy(ns, na))),
        gamma in 0.1f64..0.95,
        seed in any::<u64>(),
    ) {
        let g = lyapunov::ldm_fixed_point(&energy, &kernel, gamma, 1e-12, 100_000).unwrap();
        let greedy = lyapunov::greedy_policy(&g).unwrap();
        let (ns, na) = (kernel.n_states(), kernel.n_actions());
        let min_g: Vec<f64> = (0..ns).map(|s| g.get(s, greedy[s])).collect();
        let mut r = rng::stream(seed, &[1]);
        let samples = 2000;
        for s in 0..ns {
            let a = greedy[s];
            let draws: Vec<f64> = (0..samples)
                .map(|_| gamma * min_g[rng::sample_index(kernel.row(s, a), &mut r).unwrap()])
                .collect();
            let mean = draws.iter().sum::<f64>() / samples as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples as f64;
            let band = 4.0 * (var / samples as f64).sqrt() + 1e-9;
            prop_assert!(mean <= g.get(s, a) + band, "state {s}: {mean} > {} + {band}", g.get(s, a));
        }
        prop_assert_eq!(greedy.len(), ns);
        prop_assert!(greedy.iter().all(|a| *a < na));
    }

    // Dyadic inputs make the floating-point identity exact; general inputs
    // are checked to within rounding of the subtraction.
    #[test]
    fn literal_table_plus_energy_is_baseline(
        raw in prop::collection::vec(0i32..10_240, 1..24),
        raw_baseline in -5_120i32..15_360,
        energy in (1usize..6, 1usize..4).prop_flat_map(|(ns, na)| common::energy(ns, na)),
        baseline in -5.0f64..15.0,
    ) {
        let dyadic = occupancy::EnergyTable {
            n_states: raw.len(),
            n_actions: 1,
            values: raw.iter().map(|v| *v as f64 / 1024.0).collect(),
            smoothing_epsilon: 0.0,
        };
        let b = raw_baseline as f64 / 1024.0;
        let g = lyapunov::literal_table(&dyadic, b);
        for (gv, e) in g.values.iter().zip(&dyadic.values) {
            prop_assert_eq!(gv + e, b);
        }
        let g = lyapunov::literal_table(&energy, baseline);
        for (gv, e) in g.values.iter().zip(&energy.values) {
            prop_assert!((gv + e - baseline).abs() <= 4.0 * f64::EPSILON * baseline.abs().max(*e));
        }
    }
}

#[test]
fn literal_baseline_is_exact_min_max_over_paths() {
    // Deterministic 3-state chain with a choice at state 0.
    let mut p = vec![0.0; 3 * 2 * 3];
    let mut set = |s: usize, a: usize, s2: usize| p[(s * 2 + a) * 3 + s2] = 1.0;
    set(0, 0, 1);
    set(0, 1, 2);
    set(1, 0, 1);
    set(1, 1, 1);
    set(2, 0, 2);
    set(2, 1, 2);
    let kernel = TabularKernel::new(3, 2, p).unwrap();
    let energy = occupancy::EnergyTable {
        n_states: 3,
        n_actions: 2,
        values: vec![1.0, 2.0, 5.0, 4.0, 0.5, 3.0],
        smoothing_epsilon: 0.0,
    };
    // Via state 1 the worst step is at least 4; via state 2 it is 2.
    let g = lyapunov::g_sas_exact(&energy, &kernel, &[0], 3).unwrap();
    assert_eq!(g.baseline, Some(2.0));
    assert_eq!(lyapunov::min_max_energy(&energy, &kernel, 1), vec![1.0, 4.0, 0.5]);
}
