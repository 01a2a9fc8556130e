#![allow(dead_code)]

use proptest::prelude::*;

use sas_core::env::TabularKernel;
use sas_core::occupancy::{EnergyTable, StochasticPolicy};

/// Normalizes non-negative weights into rows of length `width`.
pub fn rows(weights: &[f64], width: usize) -> Vec<f64> {
    weights
        .chunks(width)
        .flat_map(|row| {
            let z: f64 = row.iter().sum();
            row.iter().map(move |w| w / z).collect::<Vec<_>>()
        })
        .collect()
}

/// Row weights with some exact zeros, always leaving each row a positive entry.
fn weights(n_rows: usize, width: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.05f64..1.0], n_rows * width).prop_map(move |mut w| {
        for r in 0..n_rows {
            if w[r * width..(r + 1) * width].iter().all(|x| *x == 0.0) {
                w[r * width + r % width] = 1.0;
            }
        }
        w
    })
}

pub fn kernel(ns: usize, na: usize) -> impl Strategy<Value = TabularKernel> {
    weights(ns * na, ns).prop_map(move |w| TabularKernel::new(ns, na, rows(&w, ns)).unwrap())
}

pub fn policy(ns: usize, na: usize) -> impl Strategy<Value = StochasticPolicy> {
    weights(ns, na).prop_map(move |w| StochasticPolicy::new(ns, na, rows(&w, na)).unwrap())
}

pub fn energy(ns: usize, na: usize) -> impl Strategy<Value = EnergyTable> {
    prop::collection::vec(0.0f64..10.0, ns * na).prop_map(move |values| EnergyTable {
        n_states: ns,
        n_actions: na,
        values,
        smoothing_epsilon: 0.0,
    })
}

/// A small MDP shape and a kernel on it.
pub fn sized_kernel() -> impl Strategy<Value = TabularKernel> {
    (2usize..6, 1usize..4).prop_flat_map(|(ns, na)| kernel(ns, na))
}
