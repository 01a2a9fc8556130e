//! Row types for the CSV outputs.

use serde::{Deserialize, Serialize};

use sas_core::bounds::{self, PercentileRegions};
use sas_core::dataset::Trajectory;
use sas_core::env::{Action, Dynamics, TabularMdp};
use sas_core::lyapunov::{self, LyapunovTable};
use sas_core::model::FittedModel;
use sas_core::occupancy;
use sas_core::skill::ConcentrationPoint;

use crate::error::AppResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub x: u32,
    pub y: u32,
    pub action: String,
    pub occupancy: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GRow {
    pub x: u32,
    pub y: u32,
    pub action: String,
    pub g_value: f64,
    pub variant: String,
    pub in_invariant_set: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub x: u32,
    pub y: u32,
    /// One of `free`, `wall`, `hazard`, `goal`, `start`.
    pub kind: String,
    pub occupancy: f64,
    pub g_value: f64,
    /// `roa`, `invalid` or empty.
    pub region: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: u32,
    pub y: u32,
    pub action: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub k: usize,
    pub mean_mass: f64,
    pub std: f64,
}

fn action_name(a: usize) -> String {
    Action::from_id(a).map_or_else(|| a.to_string(), |a| a.name().to_string())
}

pub fn occupancy_rows(mdp: &TabularMdp, model: &FittedModel) -> Vec<OccupancyRow> {
    let na = model.energy.n_actions;
    (0..mdp.n_states())
        .flat_map(|s| {
            let (x, y) = mdp.coords(s);
            (0..na).map(move |a| OccupancyRow {
                x,
                y,
                action: action_name(a),
                occupancy: model.occupancy.get(s, a),
                energy: model.energy.get(s, a),
            })
        })
        .collect()
}

pub fn g_rows(mdp: &TabularMdp, tables: &[&LyapunovTable], level: f64) -> Vec<GRow> {
    let mut rows = Vec::new();
    for g in tables {
        let set = lyapunov::invariant_set(g, level);
        for s in 0..mdp.n_states() {
            let (x, y) = mdp.coords(s);
            for a in 0..g.n_actions {
                rows.push(GRow {
                    x,
                    y,
                    action: action_name(a),
                    g_value: g.get(s, a),
                    variant: g.variant.name().to_string(),
                    in_invariant_set: set.contains(s, a) as u8,
                });
            }
        }
    }
    rows
}

pub fn state_rows(mdp: &TabularMdp, model: &FittedModel, regions: &PercentileRegions) -> AppResult<Vec<StateRow>> {
    let occ = occupancy::action_averaged_occupancy(&model.occupancy)?;
    Ok((0..mdp.n_states())
        .map(|s| {
            let (x, y) = mdp.coords(s);
            let kind = if mdp.is_wall(s) {
                "wall"
            } else if s == mdp.goal_state() {
                "goal"
            } else if mdp.is_hazard(s) {
                "hazard"
            } else if s == mdp.start_state() {
                "start"
            } else {
                "free"
            };
            let region = if regions.roa_states.contains(&s) {
                "roa"
            } else if regions.invalid_states.contains(&s) {
                "invalid"
            } else {
                ""
            };
            StateRow { x, y, kind: kind.into(), occupancy: occ[s], g_value: regions.averaged[s], region: region.into() }
        })
        .collect())
}

pub fn regions(g: &LyapunovTable, low_pct: f64, high_pct: f64) -> AppResult<PercentileRegions> {
    Ok(bounds::percentile_regions(g, low_pct, high_pct)?)
}

pub fn trajectory_rows(mdp: &TabularMdp, traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let (x, y) = mdp.coords(*s);
            TrajectoryRow { t, x, y, action: traj.actions.get(t).map_or_else(String::new, |a| action_name(*a)) }
        })
        .collect()
}

pub fn concentration_rows(points: &[ConcentrationPoint]) -> Vec<ConcentrationRow> {
    points.iter().map(|p| ConcentrationRow { k: p.k, mean_mass: p.mean_mass, std: p.std }).collect()
}
