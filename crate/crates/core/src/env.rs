//! The discrete CMDP test-bed: a 2-D gridworld with hazards, walls, an
//! absorbing goal and a slip-noise transition kernel.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Default discount when a layout does not set one.
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_C_MAX: f64 = 1.0;
pub const DEFAULT_SLIP_PROB: f64 = 0.0;
/// Row-sum tolerance for every probability kernel in the crate.
pub const STOCHASTIC_TOL: f64 = 1e-12;

pub const NUM_ACTIONS: usize = 5;

/// Grid actions. The discriminant is the action id used in every table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    PosX = 0,
    NegX = 1,
    PosY = 2,
    NegY = 3,
    Stay = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::PosX, Action::NegX, Action::PosY, Action::NegY, Action::Stay];
    /// The four movement actions (stay excluded).
    pub const MOVES: [Action; 4] = [Action::PosX, Action::NegX, Action::PosY, Action::NegY];

    #[inline]
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::PosX => (1, 0),
            Action::NegX => (-1, 0),
            Action::PosY => (0, 1),
            Action::NegY => (0, -1),
            Action::Stay => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::PosX => "+x",
            Action::NegX => "-x",
            Action::PosY => "+y",
            Action::NegY => "-y",
            Action::Stay => "stay",
        }
    }
}

/// Exact access to a finite transition kernel.
pub trait Dynamics {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Next-state distribution for `(state, action)`; callers guarantee the
    /// indices are in range.
    fn row(&self, state: usize, action: usize) -> &[f64];
}

/// Per-step reward and cost signals.
pub trait Signals {
    fn reward(&self, state: usize, action: usize) -> f64;
    fn cost(&self, state: usize, action: usize) -> f64;
}

/// A dense row-stochastic kernel `P[s][a][s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularKernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularKernel {
    /// Validates shape and row-stochasticity.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid!("kernel needs at least one state and one action"));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(invalid!(
                "kernel has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            ));
        }
        let kernel = Self { n_states, n_actions, probs };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = kernel.row(s, a);
                if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(invalid!("kernel row ({s}, {a}) has a negative or non-finite entry"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(invalid!("kernel row ({s}, {a}) sums to {sum}"));
                }
            }
        }
        Ok(kernel)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl Dynamics for TabularKernel {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    #[inline]
    fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.probs[start..start + self.n_states]
    }
}

/// A grid coordinate `(x, y)`.
pub type Coord = (u32, u32);

/// Declarative description of a gridworld, as read from a layout file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLayout {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub hazards: Vec<Coord>,
    /// Blocked cells; moving into one leaves the agent in place.
    #[serde(default)]
    pub walls: Vec<Coord>,
    pub goal: Coord,
    pub start: Coord,
    #[serde(default = "default_slip")]
    pub slip_prob: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_c_max")]
    pub c_max: f64,
}

fn default_slip() -> f64 {
    DEFAULT_SLIP_PROB
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_c_max() -> f64 {
    DEFAULT_C_MAX
}

/// One sampled environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    pub cost: f64,
}

/// The gridworld CMDP. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    layout: GridLayout,
    hazard: Vec<bool>,
    wall: Vec<bool>,
    kernel: TabularKernel,
}

pub const LAYOUT_NAMES: [&str; 3] = ["corridor", "two-paths", "ring"];

/// Built-in layouts.
///
/// * `corridor`: 8x1 chain, goal at (7,0), hazard at (3,0), start at (4,0).
/// * `two-paths`: 7x5 grid whose middle block is walled off, leaving an upper
///   and a lower route of equal length from (0,2) to (6,2); hazards line the
///   lower route.
/// * `ring`: 5x5 loop around a walled 3x3 core from (0,0) to (4,4) with one
///   hazardous arc.
pub fn layout(name: &str) -> Result<GridLayout> {
    let base = |width, height, start, goal| GridLayout {
        width,
        height,
        hazards: Vec::new(),
        walls: Vec::new(),
        goal,
        start,
        slip_prob: DEFAULT_SLIP_PROB,
        gamma: DEFAULT_GAMMA,
        c_max: DEFAULT_C_MAX,
    };
    let block = |x0: u32, x1: u32, y0: u32, y1: u32| {
        let mut cells = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                cells.push((x, y));
            }
        }
        cells
    };
    match name {
        "corridor" => {
            let mut l = base(8, 1, (4, 0), (7, 0));
            l.hazards = vec![(3, 0)];
            Ok(l)
        }
        "two-paths" => {
            let mut l = base(7, 5, (0, 2), (6, 2));
            l.walls = block(1, 5, 1, 3);
            l.hazards = (1..=5).map(|x| (x, 0)).collect();
            Ok(l)
        }
        "ring" => {
            let mut l = base(5, 5, (0, 0), (4, 4));
            l.walls = block(1, 3, 1, 3);
            l.hazards = vec![(2, 0), (3, 0), (4, 0), (4, 1), (4, 2)];
            Ok(l)
        }
        other => Err(Error::Config(format!(
            "unknown layout '{other}'; valid layouts: {}",
            LAYOUT_NAMES.join(", ")
        ))),
    }
}

/// Builds one of the named layouts as a validated MDP.
pub fn default_layouts(name: &str) -> Result<TabularMdp> {
    TabularMdp::new(layout(name)?)
}

impl TabularMdp {
    pub fn new(layout: GridLayout) -> Result<Self> {
        if layout.width == 0 || layout.height == 0 {
            return Err(Error::Config(String::from("grid dimensions must be positive")));
        }
        if !(0.0..1.0).contains(&layout.slip_prob) {
            return Err(Error::Config(format!("slip_prob {} not in [0, 1)", layout.slip_prob)));
        }
        if !(layout.gamma > 0.0 && layout.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0, 1)", layout.gamma)));
        }
        if !(layout.c_max > 0.0) || !layout.c_max.is_finite() {
            return Err(Error::Config(format!("c_max {} must be positive", layout.c_max)));
        }
        let inside = |c: Coord| c.0 < layout.width && c.1 < layout.height;
        for (what, cells) in [("hazard", &layout.hazards), ("wall", &layout.walls)] {
            if let Some(c) = cells.iter().find(|c| !inside(**c)) {
                return Err(Error::Config(format!("{what} cell {c:?} outside the grid")));
            }
        }
        for (what, c) in [("goal", layout.goal), ("start", layout.start)] {
            if !inside(c) {
                return Err(Error::Config(format!("{what} cell {c:?} outside the grid")));
            }
            if layout.walls.contains(&c) {
                return Err(Error::Config(format!("{what} cell {c:?} is a wall")));
            }
        }
        if layout.hazards.contains(&layout.goal) {
            return Err(Error::Config(String::from("goal cell must not be a hazard")));
        }
        if let Some(c) = layout.hazards.iter().find(|c| layout.walls.contains(c)) {
            return Err(Error::Config(format!("cell {c:?} is both hazard and wall")));
        }

        let n = (layout.width * layout.height) as usize;
        let idx = |c: Coord| (c.1 * layout.width + c.0) as usize;
        let mut hazard = vec![false; n];
        let mut wall = vec![false; n];
        layout.hazards.iter().for_each(|c| hazard[idx(*c)] = true);
        layout.walls.iter().for_each(|c| wall[idx(*c)] = true);

        let mut mdp = Self {
            layout,
            hazard,
            wall,
            kernel: TabularKernel {
                n_states: n,
                n_actions: NUM_ACTIONS,
                probs: Vec::new(),
            },
        };
        let mut probs = vec![0.0; n * NUM_ACTIONS * n];
        for s in 0..n {
            for a in Action::ALL {
                let row = &mut probs[(s * NUM_ACTIONS + a.id()) * n..][..n];
                if s == mdp.goal_state() {
                    row[s] = 1.0;
                    continue;
                }
                let slip = mdp.layout.slip_prob;
                row[mdp.intended_next(s, a)] += 1.0 - slip;
                if slip > 0.0 {
                    for other in Action::ALL.iter().filter(|b| **b != a) {
                        row[mdp.intended_next(s, *other)] += slip / 4.0;
                    }
                }
            }
        }
        mdp.kernel = TabularKernel::new(n, NUM_ACTIONS, probs)?;
        Ok(mdp)
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }
    pub fn width(&self) -> u32 {
        self.layout.width
    }
    pub fn height(&self) -> u32 {
        self.layout.height
    }
    pub fn gamma(&self) -> f64 {
        self.layout.gamma
    }
    pub fn c_max(&self) -> f64 {
        self.layout.c_max
    }
    pub fn slip_prob(&self) -> f64 {
        self.layout.slip_prob
    }
    pub fn kernel(&self) -> &TabularKernel {
        &self.kernel
    }

    #[inline]
    pub fn cell(&self, c: Coord) -> usize {
        (c.1 * self.layout.width + c.0) as usize
    }

    #[inline]
    pub fn coords(&self, state: usize) -> Coord {
        let w = self.layout.width as usize;
        ((state % w) as u32, (state / w) as u32)
    }

    pub fn goal_state(&self) -> usize {
        self.cell(self.layout.goal)
    }
    pub fn start_state(&self) -> usize {
        self.cell(self.layout.start)
    }
    pub fn is_hazard(&self, state: usize) -> bool {
        self.hazard[state]
    }
    pub fn is_wall(&self, state: usize) -> bool {
        self.wall[state]
    }

    /// Point mass on the start cell.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_states()];
        p[self.start_state()] = 1.0;
        p
    }

    /// Deterministic successor of `action`, clamped at edges and walls.
    pub fn intended_next(&self, state: usize, action: Action) -> usize {
        let (x, y) = self.coords(state);
        let (dx, dy) = action.delta();
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.layout.width as i64 || ny >= self.layout.height as i64 {
            return state;
        }
        let next = self.cell((nx as u32, ny as u32));
        if self.wall[next] {
            state
        } else {
            next
        }
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states() {
            return Err(invalid!("state {state} outside the {}-cell grid", self.n_states()));
        }
        if action >= NUM_ACTIONS {
            return Err(invalid!("unknown action id {action}"));
        }
        Ok(())
    }

    /// Exact next-state distribution.
    pub fn kernel_row(&self, state: usize, action: usize) -> Result<&[f64]> {
        self.check(state, action)?;
        Ok(self.kernel.row(state, action))
    }

    /// Samples one transition from the kernel row.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<Transition> {
        self.check(state, action)?;
        let next_state = rng::sample_index(self.kernel.row(state, action), rng)
            .expect("kernel rows are stochastic");
        Ok(Transition {
            state,
            action,
            next_state,
            reward: self.reward(state, action),
            cost: self.cost(state, action),
        })
    }

    /// Canonical text rendering used for provenance digests.
    pub fn canonical_description(&self) -> String {
        let l = &self.layout;
        format!(
            "grid {}x{} start {:?} goal {:?} hazards {:?} walls {:?} slip {:?} gamma {:?} c_max {:?}",
            l.width, l.height, l.start, l.goal, l.hazards, l.walls, l.slip_prob, l.gamma, l.c_max
        )
    }
}

impl Dynamics for TabularMdp {
    fn n_states(&self) -> usize {
        self.kernel.n_states
    }
    fn n_actions(&self) -> usize {
        NUM_ACTIONS
    }
    #[inline]
    fn row(&self, state: usize, action: usize) -> &[f64] {
        self.kernel.row(state, action)
    }
}

impl Signals for TabularMdp {
    /// 1 per step at the absorbing goal, 0 elsewhere.
    fn reward(&self, state: usize, _action: usize) -> f64 {
        if state == self.goal_state() {
            1.0
        } else {
            0.0
        }
    }

    /// `c_max` while standing in a hazard cell, 0 elsewhere.
    fn cost(&self, state: usize, _action: usize) -> f64 {
        if self.hazard[state] {
            self.layout.c_max
        } else {
            0.0
        }
    }
}
