//! Grid wildfire with firefighting units.
//!
//! Cells are numbered row-major, `id = row * width + col`, with `col`
//! increasing east and `row` increasing south. A wind direction `[x, y]` uses
//! x east and y north, so `[-1, 0]` is a wind blowing towards the west.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contagion::{
    self, csv_err, Edge, EpochConfig, Histogram, Mode, NodeParams, NodeState, PropagationGraph, SystemState,
};
use crate::error::{Error, Result};
use crate::policy::{BaselineKind, Scenario};
use crate::rng::{self, PolicyRng};

/// Overall speed-up of spread per unit of wind speed.
pub const WIND_GAIN: f64 = 1.0;
/// Directional sensitivity of spread to the wind.
pub const WIND_SPREAD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    Four,
    #[default]
    Eight,
}

/// Generator parameters for a grid location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    pub width: usize,
    pub height: usize,
    pub neighborhood: Neighborhood,
    /// Direction the wind blows towards; omitted for calm air.
    pub wind_dir: Option<[f64; 2]>,
    /// Fraction of the typical maximum wind speed, in `[0, 1]`.
    pub wind_speed: f64,
    /// Normalized average vegetation coefficient in `[0, 1]`.
    pub navegc: f64,
    /// Relative spread of the per-cell vegetation product around its mean.
    pub vegetation_noise: f64,
    pub kappa: f64,
    /// Burning cells burn out at this rate per unit time.
    pub burn_rate: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            neighborhood: Neighborhood::Eight,
            wind_dir: None,
            wind_speed: 0.0,
            navegc: 1.0,
            vegetation_noise: 0.25,
            kappa: 0.1,
            burn_rate: 0.25,
        }
    }
}

impl GridParams {
    pub fn preset(index: usize) -> Option<Self> {
        match index {
            1 => Some(Self { wind_dir: Some([-1.0, 0.0]), wind_speed: 0.3, navegc: 1.0, ..Self::default() }),
            2 => Some(Self { wind_dir: None, wind_speed: 0.0, navegc: 0.75, ..Self::default() }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub neighborhood: Neighborhood,
    pub wind_dir: Option<[f64; 2]>,
    pub wind_speed: f64,
    pub vegetation: Vec<f64>,
    pub density: Vec<f64>,
    pub kappa: f64,
    pub burn_rate: f64,
}

impl GridSpec {
    /// A grid where every cell has unit factors (`v = dens = 0`).
    pub fn uniform(width: usize, height: usize, kappa: f64) -> Result<Self> {
        let spec = Self {
            width,
            height,
            neighborhood: Neighborhood::Eight,
            wind_dir: None,
            wind_speed: 0.0,
            vegetation: vec![0.0; width * height],
            density: vec![0.0; width * height],
            kappa,
            burn_rate: GridParams::default().burn_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Draws per-cell factors whose product `(1+v)(1+dens)` averages roughly
    /// `4 * navegc`, clamped to `[1, 4]`; type and density share the product
    /// equally.
    pub fn generate(params: &GridParams, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&params.navegc) {
            return Err(Error::Config(format!("navegc {} outside [0, 1]", params.navegc)));
        }
        if !(params.vegetation_noise >= 0.0) {
            return Err(Error::Config("vegetation_noise must be non-negative".into()));
        }
        let n = params.width * params.height;
        let mut rng = rng::policy_rng(seed);
        let mut vegetation = Vec::with_capacity(n);
        for _ in 0..n {
            let jitter = params.vegetation_noise * (2.0 * rng.random::<f64>() - 1.0);
            let c = (4.0 * params.navegc * (1.0 + jitter)).clamp(1.0, 4.0);
            vegetation.push(c.sqrt() - 1.0);
        }
        let spec = Self {
            width: params.width,
            height: params.height,
            neighborhood: params.neighborhood,
            wind_dir: params.wind_dir,
            wind_speed: params.wind_speed,
            density: vegetation.clone(),
            vegetation,
            kappa: params.kappa,
            burn_rate: params.burn_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn center(&self) -> usize {
        self.cell(self.height / 2, self.width / 2)
    }

    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }

    pub fn adjacent(&self, p: usize, k: usize) -> bool {
        if p == k || p >= self.cell_count() || k >= self.cell_count() {
            return false;
        }
        let (rp, cp) = self.coords(p);
        let (rk, ck) = self.coords(k);
        let (dr, dc) = (rp.abs_diff(rk), cp.abs_diff(ck));
        match self.neighborhood {
            Neighborhood::Four => dr + dc == 1,
            Neighborhood::Eight => dr <= 1 && dc <= 1,
        }
    }

    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.coords(p);
        let rows = r.saturating_sub(1)..=(r + 1).min(self.height - 1);
        rows.flat_map(move |rr| {
            let cols = c.saturating_sub(1)..=(c + 1).min(self.width - 1);
            cols.map(move |cc| self.cell(rr, cc))
        })
        .filter(move |&k| self.adjacent(p, k))
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        let n = self.cell_count();
        if self.vegetation.len() != n || self.density.len() != n {
            return Err(Error::Config("per-cell factors must cover every cell".into()));
        }
        if self.vegetation.iter().chain(&self.density).any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("vegetation factors must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.wind_speed) {
            return Err(Error::Config(format!("wind speed {} outside [0, 1]", self.wind_speed)));
        }
        if let Some([x, y]) = self.wind_dir {
            if !(x.is_finite() && y.is_finite()) || x.hypot(y) == 0.0 {
                return Err(Error::Config("wind direction must be a non-zero vector".into()));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Config("kappa must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.burn_rate) {
            return Err(Error::Config(format!("burn rate {} outside [0, 1]", self.burn_rate)));
        }
        let gust = if self.wind_dir.is_some() { (WIND_GAIN * self.wind_speed).exp() } else { 1.0 };
        for p in 0..n {
            let w = self.kappa * (1.0 + self.vegetation[p]) * (1.0 + self.density[p]) * gust;
            if w > 1.0 {
                return Err(Error::Config(format!("cell {p} has spread probability {w} above 1")));
            }
        }
        Ok(())
    }

    /// Wind factor for spread from `k` into `p`:
    /// `exp(V (WIND_GAIN + WIND_SPREAD (cos(theta) - 1)))` with `V` the wind
    /// speed and `theta` the angle between the spread direction and the wind.
    /// Calm air gives 1; wind speeds up downwind spread and slows spread
    /// against it.
    fn wind_factor(&self, p: usize, k: usize) -> f64 {
        let Some([wx, wy]) = self.wind_dir else { return 1.0 };
        if self.wind_speed == 0.0 {
            return 1.0;
        }
        let (rp, cp) = self.coords(p);
        let (rk, ck) = self.coords(k);
        let dx = cp as f64 - ck as f64;
        let dy = rk as f64 - rp as f64;
        let cos = (dx * wx + dy * wy) / (dx.hypot(dy) * wx.hypot(wy));
        (self.wind_speed * (WIND_GAIN + WIND_SPREAD * (cos - 1.0))).exp()
    }
}

/// Probability per unit time that burning cell `k` ignites its neighbor `p`.
pub fn spread_probability(p: usize, k: usize, spec: &GridSpec) -> Result<f64> {
    if !spec.adjacent(p, k) {
        return Err(Error::Contract(format!("cells {p} and {k} are not adjacent")));
    }
    Ok(spec.kappa * (1.0 + spec.vegetation[p]) * (1.0 + spec.density[p]) * spec.wind_factor(p, k))
}

pub fn build_graph(spec: &GridSpec) -> Result<PropagationGraph> {
    spec.validate()?;
    let n = spec.cell_count();
    let params = vec![NodeParams { death: spec.burn_rate, recovery: 0.0 }; n];
    let mut edges = Vec::new();
    for p in 0..n {
        for k in spec.neighbors(p) {
            let rate = spread_probability(p, k, spec)?;
            if rate > 0.0 {
                edges.push(Edge { target: p, source: k, rate });
            }
        }
    }
    PropagationGraph::new(Mode::Wildfire, params, edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct UnitState {
    pub positions: Vec<usize>,
    pub max_step: usize,
}

/// Moves every unit to its target and extinguishes the burning cells the
/// units end up on. Units beyond `targets.len()` stay put. Returns the moved
/// units and the deduplicated extinguish actions.
pub fn move_and_extinguish(
    spec: &GridSpec,
    cells: &SystemState,
    units: &UnitState,
    targets: &[usize],
) -> Result<(UnitState, Vec<usize>)> {
    if targets.len() > units.positions.len() {
        return Err(Error::RejectedAction(format!("{} targets for {} units", targets.len(), units.positions.len())));
    }
    let mut positions = units.positions.clone();
    for (unit, &target) in targets.iter().enumerate() {
        if target >= spec.cell_count() {
            return Err(Error::RejectedAction(format!("target cell {target} outside the grid")));
        }
        let dist = spec.chebyshev(positions[unit], target);
        if dist > units.max_step {
            return Err(Error::RejectedAction(format!(
                "unit {unit} cannot move {dist} cells (limit {})",
                units.max_step
            )));
        }
        positions[unit] = target;
    }
    let burning: BTreeSet<usize> =
        positions.iter().copied().filter(|&p| cells.states.get(p) == Some(&NodeState::Infected)).collect();
    Ok((UnitState { positions, max_step: units.max_step }, burning.into_iter().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub extinguish: f64,
    pub spread: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { extinguish: 1.0, spread: 1.0 }
    }
}

/// Cells that were vulnerable in `prev` and caught fire by `next`.
pub fn newly_ignited(prev: &SystemState, next: &SystemState) -> usize {
    prev.states
        .iter()
        .zip(&next.states)
        .filter(|(a, b)| **a == NodeState::Susceptible && matches!(b, NodeState::Infected | NodeState::Dead))
        .count()
}

pub fn wildfire_reward(prev: &SystemState, next: &SystemState, extinguished: usize, weights: &RewardWeights) -> f64 {
    weights.extinguish * extinguished as f64 - weights.spread * newly_ignited(prev, next) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WildfireState {
    pub cells: SystemState,
    pub units: UnitState,
}

#[derive(Debug, Clone)]
pub struct WildfireScenario {
    pub spec: GridSpec,
    pub graph: PropagationGraph,
    pub epoch: EpochConfig,
    pub weights: RewardWeights,
    pub max_step: usize,
    pub initial_fires: usize,
}

impl WildfireScenario {
    pub fn new(spec: GridSpec, dt: f64, weights: RewardWeights, max_step: usize, initial_fires: usize) -> Result<Self> {
        let graph = build_graph(&spec)?;
        let epoch = EpochConfig::from_dt(dt, 0)?;
        graph.validate_dt(epoch.dt())?;
        if initial_fires > spec.cell_count() {
            return Err(Error::Config(format!("{initial_fires} fires exceed {} cells", spec.cell_count())));
        }
        Ok(Self { spec, graph, epoch, weights, max_step, initial_fires })
    }

    /// Staging cell where newly allocated units appear.
    pub fn staging_cell(&self) -> usize {
        self.spec.center()
    }

    /// Ignites `initial_fires` distinct cells chosen uniformly; no units.
    pub fn initial_state(&self, seed: u64) -> WildfireState {
        let n = self.spec.cell_count();
        let mut cells = SystemState::uniform(n, NodeState::Susceptible);
        let mut rng = rng::policy_rng(seed);
        for p in rand::seq::index::sample(&mut rng, n, self.initial_fires) {
            cells.states[p] = NodeState::Infected;
        }
        WildfireState { cells, units: UnitState { positions: Vec::new(), max_step: self.max_step } }
    }

    fn nearest_burning(&self, cells: &SystemState, from: usize, skip: &BTreeSet<usize>) -> Option<usize> {
        cells
            .states
            .iter()
            .enumerate()
            .filter(|(p, s)| **s == NodeState::Infected && !skip.contains(p))
            .map(|(p, _)| (self.spec.chebyshev(from, p), p))
            .min()
            .map(|(_, p)| p)
    }

    /// Cell reached by moving at most `max_step` from `from` towards `to`.
    pub fn step_towards(&self, from: usize, to: usize) -> usize {
        let (r0, c0) = self.spec.coords(from);
        let (r1, c1) = self.spec.coords(to);
        let m = self.max_step as isize;
        let r = r0 as isize + (r1 as isize - r0 as isize).clamp(-m, m);
        let c = c0 as isize + (c1 as isize - c0 as isize).clamp(-m, m);
        self.spec.cell(r as usize, c as usize)
    }

    fn reachable(&self, from: usize) -> Vec<usize> {
        let (r, c) = self.spec.coords(from);
        let m = self.max_step;
        let mut out = Vec::new();
        for rr in r.saturating_sub(m)..=(r + m).min(self.spec.height - 1) {
            for cc in c.saturating_sub(m)..=(c + m).min(self.spec.width - 1) {
                out.push(self.spec.cell(rr, cc));
            }
        }
        out
    }

    fn full_targets(&self, state: &WildfireState, action: &[usize]) -> Vec<usize> {
        let mut t = state.units.positions.clone();
        let n = action.len().min(t.len());
        t[..n].copy_from_slice(&action[..n]);
        t
    }

    /// Appends one per-epoch CSV row: epoch, burning, burnt, extinguished,
    /// unit positions separated by `;`.
    pub fn write_epoch_csv<W: Write>(rows: &[WildfireState], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "burning", "burnt", "extinguished", "units"]).map_err(csv_err)?;
        for s in rows {
            let units: Vec<String> = s.units.positions.iter().map(|p| p.to_string()).collect();
            out.write_record([
                s.cells.epoch.to_string(),
                s.cells.count(NodeState::Infected).to_string(),
                s.cells.count(NodeState::Dead).to_string(),
                s.cells.count(NodeState::Treated).to_string(),
                units.join(";"),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl Scenario for WildfireScenario {
    type State = WildfireState;
    /// Target cell per unit; missing entries mean "stay".
    type Action = Vec<usize>;

    fn mode(&self) -> Mode {
        Mode::Wildfire
    }

    /// Matches the unit roster to the budget: surplus units are withdrawn,
    /// new ones start at the staging cell.
    fn prepare(&self, state: &WildfireState, budget: usize) -> WildfireState {
        let mut s = state.clone();
        s.units.max_step = self.max_step;
        s.units.positions.resize(budget, self.staging_cell());
        s
    }

    fn step(&self, state: &WildfireState, action: &Vec<usize>, seed: u64) -> Result<(WildfireState, f64)> {
        let (units, extinguish) = move_and_extinguish(&self.spec, &state.cells, &state.units, action)?;
        let next = contagion::step_epoch(&self.graph, &state.cells, &extinguish, &self.epoch.with_seed(seed))?;
        let reward = wildfire_reward(&state.cells, &next, extinguish.len(), &self.weights);
        Ok((WildfireState { cells: next, units }, reward))
    }

    fn check_action(&self, state: &WildfireState, action: &Vec<usize>, budget: usize) -> Result<()> {
        if state.units.positions.len() > budget {
            return Err(Error::RejectedAction(format!(
                "{} units deployed with budget {budget}",
                state.units.positions.len()
            )));
        }
        move_and_extinguish(&self.spec, &state.cells, &state.units, action).map(|_| ())
    }

    fn baseline_action(
        &self,
        kind: BaselineKind,
        state: &WildfireState,
        _budget: usize,
        rng: &mut PolicyRng,
    ) -> Result<Vec<usize>> {
        match kind {
            BaselineKind::None => Ok(Vec::new()),
            BaselineKind::Random => Ok(state
                .units
                .positions
                .iter()
                .map(|&p| {
                    let options = self.reachable(p);
                    options[rng.random_range(0..options.len())]
                })
                .collect()),
            BaselineKind::NearestFire => {
                // units in roster order claim distinct fires; once every fire
                // is claimed the rest head for their nearest one
                let mut claimed = BTreeSet::new();
                Ok(state
                    .units
                    .positions
                    .iter()
                    .map(|&p| {
                        let fire = self
                            .nearest_burning(&state.cells, p, &claimed)
                            .or_else(|| self.nearest_burning(&state.cells, p, &BTreeSet::new()));
                        match fire {
                            Some(f) => {
                                claimed.insert(f);
                                self.step_towards(p, f)
                            }
                            None => p,
                        }
                    })
                    .collect())
            }
            BaselineKind::OldFirst => Err(Error::Config("old_first is a pandemic policy".into())),
        }
    }

    fn histogram(&self, state: &WildfireState) -> Histogram {
        state.cells.histogram()
    }

    fn is_quiescent(&self, state: &WildfireState) -> bool {
        !state.cells.has_active()
    }

    /// The base action (key 0) plus, for each of the `k` burning cells closest
    /// to the units, the base action with the closest unit retargeted towards
    /// that cell (key `cell + 1`).
    fn rollout_candidates(
        &self,
        state: &WildfireState,
        _budget: usize,
        base: &Vec<usize>,
        k: usize,
    ) -> Vec<(usize, Vec<usize>)> {
        let base_full = self.full_targets(state, base);
        let mut out = vec![(0, base_full.clone())];
        if state.units.positions.is_empty() {
            return out;
        }
        let mut fires: Vec<(usize, usize, usize)> = state
            .cells
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == NodeState::Infected)
            .map(|(p, _)| {
                let (d, unit) = state
                    .units
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(u, &pos)| (self.spec.chebyshev(pos, p), u))
                    .min()
                    .expect("at least one unit");
                (d, p, unit)
            })
            .collect();
        fires.sort_unstable();
        let mut seen = BTreeSet::from([base_full.clone()]);
        for (_, fire, unit) in fires.into_iter().take(k) {
            let mut action = base_full.clone();
            action[unit] = self.step_towards(state.units.positions[unit], fire);
            if seen.insert(action.clone()) {
                out.push((fire + 1, action));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(width: usize, height: usize, max_step: usize) -> WildfireScenario {
        let spec = GridSpec::uniform(width, height, 0.1).unwrap();
        WildfireScenario::new(spec, 0.25, RewardWeights::default(), max_step, 0).unwrap()
    }

    #[test]
    fn calm_unit_factors_give_kappa() {
        let spec = GridSpec::uniform(4, 4, 0.1).unwrap();
        for p in 0..16 {
            for k in spec.neighbors(p).collect::<Vec<_>>() {
                assert_eq!(spread_probability(p, k, &spec).unwrap(), 0.1);
            }
        }
        assert!(matches!(spread_probability(0, 15, &spec), Err(Error::Contract(_))));
    }

    #[test]
    fn westward_wind_favors_spread_west() {
        let params = GridParams::preset(1).unwrap();
        let spec = GridSpec::generate(&params, 5).unwrap();
        let p = spec.cell(8, 8);
        let east = spec.cell(8, 9);
        let west = spec.cell(8, 7);
        // fire at `east` spreading into p travels west (downwind)
        let downwind = spread_probability(p, east, &spec).unwrap();
        let upwind = spread_probability(p, west, &spec).unwrap();
        assert!(downwind > upwind);
    }

    #[test]
    fn doubling_vegetation_factor_doubles_probability() {
        let mut spec = GridSpec::uniform(3, 3, 0.1).unwrap();
        spec.wind_dir = Some([0.0, 1.0]);
        spec.wind_speed = 0.5;
        let before = spread_probability(4, 1, &spec).unwrap();
        spec.vegetation[4] = 1.0;
        let after = spread_probability(4, 1, &spec).unwrap();
        assert!((after - 2.0 * before).abs() < 1e-15);
    }

    #[test]
    fn neighborhoods() {
        let mut spec = GridSpec::uniform(3, 3, 0.1).unwrap();
        assert_eq!(spec.neighbors(4).count(), 8);
        assert_eq!(spec.neighbors(0).count(), 3);
        spec.neighborhood = Neighborhood::Four;
        assert_eq!(spec.neighbors(4).collect::<Vec<_>>(), vec![1, 3, 5, 7]);
    }

    #[test]
    fn unit_on_burning_cell_extinguishes_it() {
        let s = scenario(3, 3, 1);
        let mut cells = SystemState::uniform(9, NodeState::Susceptible);
        cells.states[4] = NodeState::Infected;
        let state = WildfireState { cells, units: UnitState { positions: vec![4], max_step: 1 } };
        let (next, reward) = s.step(&state, &vec![4], 1).unwrap();
        assert_eq!(next.cells.states[4], NodeState::Treated);
        assert_eq!(reward, 1.0);
    }

    #[test]
    fn moves_beyond_range_are_rejected() {
        let spec = GridSpec::uniform(4, 4, 0.1).unwrap();
        let cells = SystemState::uniform(16, NodeState::Susceptible);
        let units = UnitState { positions: vec![0], max_step: 0 };
        assert!(matches!(move_and_extinguish(&spec, &cells, &units, &[1]), Err(Error::RejectedAction(_))));
        assert!(move_and_extinguish(&spec, &cells, &units, &[0]).is_ok());
        let units = UnitState { positions: vec![0], max_step: 1 };
        assert!(move_and_extinguish(&spec, &cells, &units, &[5]).is_ok());
        assert!(move_and_extinguish(&spec, &cells, &units, &[10]).is_err());
        assert!(move_and_extinguish(&spec, &cells, &units, &[99]).is_err());
    }

    #[test]
    fn two_units_on_one_fire_emit_one_action() {
        let spec = GridSpec::uniform(3, 3, 0.1).unwrap();
        let mut cells = SystemState::uniform(9, NodeState::Susceptible);
        cells.states[4] = NodeState::Infected;
        let units = UnitState { positions: vec![3, 5], max_step: 1 };
        let (moved, actions) = move_and_extinguish(&spec, &cells, &units, &[4, 4]).unwrap();
        assert_eq!(moved.positions, vec![4, 4]);
        assert_eq!(actions, vec![4]);
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        let prev = SystemState::uniform(5, NodeState::Susceptible);
        let mut next = prev.clone();
        next.states[0] = NodeState::Infected;
        next.states[1] = NodeState::Infected;
        next.states[2] = NodeState::Dead;
        assert_eq!(wildfire_reward(&prev, &next, 2, &w), -1.0);
        assert_eq!(wildfire_reward(&prev, &prev, 0, &w), 0.0);
    }

    #[test]
    fn nearest_fire_steps_towards_fire() {
        let s = scenario(5, 5, 1);
        let mut cells = SystemState::uniform(25, NodeState::Susceptible);
        cells.states[s.spec.cell(0, 4)] = NodeState::Infected;
        let state = WildfireState { cells, units: UnitState { positions: vec![s.spec.cell(4, 0)], max_step: 1 } };
        let mut rng = rng::policy_rng(0);
        let a = s.baseline_action(BaselineKind::NearestFire, &state, 1, &mut rng).unwrap();
        assert_eq!(a, vec![s.spec.cell(3, 1)]);
        assert!(s.baseline_action(BaselineKind::OldFirst, &state, 1, &mut rng).is_err());
    }

    #[test]
    fn prepare_matches_budget() {
        let s = scenario(5, 5, 1);
        let st = s.initial_state(0);
        let p = s.prepare(&st, 3);
        assert_eq!(p.units.positions, vec![12; 3]);
        assert_eq!(s.prepare(&p, 1).units.positions, vec![12]);
    }
}
