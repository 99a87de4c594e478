//! Stochastic multi-agent propagation over a weighted contact graph.
//!
//! One decision epoch is split into `1/dt` sub-intervals. In each
//! sub-interval every directed edge `(p, k)` realizes a contact independently
//! with probability `w_{p,k} * dt`; a susceptible `p` that contacts an infected
//! `k` becomes infected. Infected nodes die with probability `d_p * dt` and (in
//! pandemic mode) recover with probability `r_p * dt`. Updates are synchronous:
//! every transition in a sub-interval is evaluated against the state at its
//! start, and infection is resolved before death and recovery.
//!
//! Actions (vaccinate a susceptible node, extinguish a burning cell) take
//! effect at the start of sub-interval 0, before that sub-interval's
//! transitions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Per-node status.
///
/// Codes are shared by both propagation modes: in wildfire mode `Susceptible`
/// is a vulnerable cell, `Infected` is on fire, `Dead` is burnt and `Treated`
/// is extinguished. `Recovered` only exists in pandemic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum NodeState {
    Susceptible = 0,
    Infected = 1,
    Dead = 2,
    Treated = 3,
    Recovered = 4,
}

impl NodeState {
    pub const ALL: [NodeState; 5] =
        [NodeState::Susceptible, NodeState::Infected, NodeState::Dead, NodeState::Treated, NodeState::Recovered];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_absorbing(self) -> bool {
        matches!(self, NodeState::Dead | NodeState::Treated | NodeState::Recovered)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pandemic,
    Wildfire,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pandemic => "pandemic",
            Mode::Wildfire => "wildfire",
        }
    }

    /// Whether `state` is a legal code in this mode.
    pub fn allows(self, state: NodeState) -> bool {
        !(self == Mode::Wildfire && state == NodeState::Recovered)
    }
}

/// Death (burn-out) and recovery rates per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeParams {
    pub death: f64,
    pub recovery: f64,
}

/// Directed contact: `target` can catch the contagion from `source` at
/// `rate` contacts per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target: usize,
    pub source: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct PropagationGraph {
    mode: Mode,
    params: Vec<NodeParams>,
    edges: Vec<Edge>,
    // Spread lists indexed by source: who can catch from node k.
    spread_offsets: Vec<usize>,
    spread_targets: Vec<u32>,
    spread_rates: Vec<f64>,
    in_degree: Vec<usize>,
    max_rate_sum: f64,
}

impl PropagationGraph {
    pub fn new(mode: Mode, params: Vec<NodeParams>, mut edges: Vec<Edge>) -> Result<Self> {
        let n = params.len();
        for (p, np) in params.iter().enumerate() {
            let ok = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
            if !ok(np.death) || !ok(np.recovery) {
                return Err(Error::Config(format!("node {p}: rates must lie in [0, 1]")));
            }
            if np.death + np.recovery > 1.0 + 1e-12 {
                return Err(Error::Config(format!("node {p}: death + recovery exceeds 1")));
            }
            if mode == Mode::Wildfire && np.recovery != 0.0 {
                return Err(Error::Config(format!("node {p}: wildfire cells cannot recover")));
            }
        }
        edges.sort_by_key(|e| (e.source, e.target));
        for w in edges.windows(2) {
            if w[0].source == w[1].source && w[0].target == w[1].target {
                return Err(Error::Config(format!("duplicate edge ({}, {})", w[0].target, w[0].source)));
            }
        }
        let mut rate_sum = vec![0.0; n];
        let mut in_degree = vec![0; n];
        let mut spread_offsets = vec![0usize; n + 1];
        for e in &edges {
            if e.target >= n || e.source >= n {
                return Err(Error::Config(format!("edge ({}, {}) references a missing node", e.target, e.source)));
            }
            if e.target == e.source {
                return Err(Error::Config(format!("self-loop on node {}", e.target)));
            }
            if !(e.rate.is_finite() && (0.0..=1.0).contains(&e.rate)) {
                return Err(Error::Config(format!(
                    "edge ({}, {}): rate {} outside [0, 1]",
                    e.target, e.source, e.rate
                )));
            }
            rate_sum[e.target] += e.rate;
            in_degree[e.target] += 1;
            spread_offsets[e.source + 1] += 1;
        }
        for i in 0..n {
            spread_offsets[i + 1] += spread_offsets[i];
        }
        // edges are sorted by source, so the CSR arrays follow edge order
        let spread_targets = edges.iter().map(|e| e.target as u32).collect();
        let spread_rates = edges.iter().map(|e| e.rate).collect();
        let max_rate_sum = rate_sum.iter().copied().fold(0.0, f64::max);
        Ok(Self { mode, params, edges, spread_offsets, spread_targets, spread_rates, in_degree, max_rate_sum })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn node_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self, p: usize) -> NodeParams {
        self.params[p]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of nodes `p` can catch the contagion from.
    pub fn degree(&self, p: usize) -> usize {
        self.in_degree[p]
    }

    /// Nodes that can catch the contagion from `k`, with their rates.
    pub fn spread_from(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.spread_offsets[k]..self.spread_offsets[k + 1];
        self.spread_targets[r.clone()].iter().zip(&self.spread_rates[r]).map(|(&p, &w)| (p as usize, w))
    }

    /// Largest `sum_k w_{p,k}` over nodes.
    pub fn max_rate_sum(&self) -> f64 {
        self.max_rate_sum
    }

    /// Checks that every node's no-contact probability `1 - sum_k w_{p,k} dt`
    /// is non-negative.
    pub fn validate_dt(&self, dt: f64) -> Result<()> {
        if self.max_rate_sum * dt > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "dt = {dt} too coarse: a node's contact probabilities sum to {:.4}",
                self.max_rate_sum * dt
            )));
        }
        Ok(())
    }

    /// Serializes the graph in the `sdnum-graph 1` text format.
    ///
    /// ```text
    /// sdnum-graph 1
    /// mode pandemic
    /// nodes 2
    /// node 0 0.01 0.07142857142857142
    /// node 1 0.1 0.07142857142857142
    /// edge 0 1 0.02
    /// edge 1 0 0.02
    /// ```
    ///
    /// `node <id> <death> <recovery>` and `edge <target> <source> <rate>`;
    /// floats are written in shortest round-trip form. Lines starting with `#`
    /// are comments.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sdnum-graph 1")?;
        writeln!(w, "mode {}", self.mode.as_str())?;
        writeln!(w, "nodes {}", self.node_count())?;
        for (p, np) in self.params.iter().enumerate() {
            writeln!(w, "node {p} {} {}", np.death, np.recovery)?;
        }
        let mut edges = self.edges.clone();
        edges.sort_by_key(|e| (e.target, e.source));
        for e in edges {
            writeln!(w, "edge {} {} {}", e.target, e.source, e.rate)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("graph text is ASCII")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut header = false;
        let mut mode = None;
        let mut count: Option<usize> = None;
        let mut params: Vec<Option<NodeParams>> = Vec::new();
        let mut edges = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Parse { line: line_no, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !header {
                if fields != ["sdnum-graph", "1"] {
                    return Err(bad(format!("expected 'sdnum-graph 1', found '{line}'")));
                }
                header = true;
                continue;
            }
            match fields[0] {
                "mode" if fields.len() == 2 => {
                    mode = Some(match fields[1] {
                        "pandemic" => Mode::Pandemic,
                        "wildfire" => Mode::Wildfire,
                        other => return Err(bad(format!("unknown mode '{other}'"))),
                    });
                }
                "nodes" if fields.len() == 2 => {
                    let n = parse_field::<usize>(fields[1], line_no)?;
                    count = Some(n);
                    params = vec![None; n];
                }
                "node" if fields.len() == 4 => {
                    let n = count.ok_or_else(|| bad("node record before 'nodes'".into()))?;
                    let id = parse_field::<usize>(fields[1], line_no)?;
                    if id >= n {
                        return Err(bad(format!("node id {id} out of range")));
                    }
                    if params[id].is_some() {
                        return Err(bad(format!("node {id} defined twice")));
                    }
                    params[id] = Some(NodeParams {
                        death: parse_field(fields[2], line_no)?,
                        recovery: parse_field(fields[3], line_no)?,
                    });
                }
                "edge" if fields.len() == 4 => edges.push(Edge {
                    target: parse_field(fields[1], line_no)?,
                    source: parse_field(fields[2], line_no)?,
                    rate: parse_field(fields[3], line_no)?,
                }),
                _ => return Err(bad(format!("unrecognized record '{line}'"))),
            }
        }
        let mode = mode.ok_or(Error::Parse { line: 0, message: "missing mode".into() })?;
        let params = params
            .into_iter()
            .enumerate()
            .map(|(p, np)| np.ok_or(Error::Parse { line: 0, message: format!("node {p} missing") }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mode, params, edges)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, message: format!("invalid number '{s}'") })
}

/// Sub-interval count and trajectory key for stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochConfig {
    subintervals: u32,
    pub seed: u64,
}

const MAX_SUBINTERVALS: u32 = 1 << 20;

impl EpochConfig {
    /// `dt` must be the reciprocal of a positive integer.
    pub fn from_dt(dt: f64, seed: u64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0 && dt <= 1.0) {
            return Err(Error::Config(format!("dt = {dt} must lie in (0, 1]")));
        }
        let inv = (1.0 / dt).round();
        if ((1.0 / dt) - inv).abs() > 1e-9 * inv || inv > MAX_SUBINTERVALS as f64 {
            return Err(Error::Config(format!("1/dt must be a positive integer, got dt = {dt}")));
        }
        Ok(Self { subintervals: inv as u32, seed })
    }

    pub fn with_subintervals(subintervals: u32, seed: u64) -> Result<Self> {
        if subintervals == 0 || subintervals > MAX_SUBINTERVALS {
            return Err(Error::Config(format!("invalid sub-interval count {subintervals}")));
        }
        Ok(Self { subintervals, seed })
    }

    pub fn subintervals(&self) -> u32 {
        self.subintervals
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.subintervals as f64
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub states: Vec<NodeState>,
    pub epoch: u64,
}

pub type Histogram = [usize; 5];

impl SystemState {
    pub fn uniform(n: usize, state: NodeState) -> Self {
        Self { states: vec![state; n], epoch: 0 }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn count(&self, state: NodeState) -> usize {
        self.states.iter().filter(|&&s| s == state).count()
    }

    pub fn histogram(&self) -> Histogram {
        count_by_state(self)
    }

    pub fn has_active(&self) -> bool {
        self.states.contains(&NodeState::Infected)
    }
}

pub fn count_by_state(state: &SystemState) -> Histogram {
    let mut h = [0; 5];
    for s in &state.states {
        h[*s as usize] += 1;
    }
    h
}

fn check_state(graph: &PropagationGraph, state: &SystemState) -> Result<()> {
    if state.len() != graph.node_count() {
        return Err(Error::Contract(format!("state has {} nodes, graph has {}", state.len(), graph.node_count())));
    }
    if graph.mode() == Mode::Wildfire && state.states.contains(&NodeState::Recovered) {
        return Err(Error::Contract("recovered code in a wildfire state".into()));
    }
    Ok(())
}

fn apply_actions(graph: &PropagationGraph, states: &mut [NodeState], actions: &[usize]) -> Result<()> {
    let required = match graph.mode() {
        Mode::Pandemic => NodeState::Susceptible,
        Mode::Wildfire => NodeState::Infected,
    };
    for &p in actions {
        if p >= states.len() {
            return Err(Error::RejectedAction(format!("node {p} does not exist")));
        }
    }
    for &p in actions {
        match states[p] {
            s if s == required => states[p] = NodeState::Treated,
            // duplicate entry for a node already treated by this action set
            NodeState::Treated if actions.iter().filter(|&&q| q == p).count() > 1 => {}
            s => {
                return Err(Error::RejectedAction(format!(
                    "cannot act on node {p} in state {s:?} ({} mode)",
                    graph.mode().as_str()
                )))
            }
        }
    }
    Ok(())
}

#[inline]
fn draw_counter(epoch: u64, sub: u32) -> u64 {
    (epoch << 20) | sub as u64
}

/// Synchronous transition of `cur` into `next` for one sub-interval.
fn transition(
    graph: &PropagationGraph,
    cur: &[NodeState],
    next: &mut Vec<NodeState>,
    stream: Stream,
    counter: u64,
    dt: f64,
) {
    next.clear();
    next.extend_from_slice(cur);
    let pandemic = graph.mode() == Mode::Pandemic;
    for (k, &s) in cur.iter().enumerate() {
        if s != NodeState::Infected {
            continue;
        }
        for (p, w) in graph.spread_from(k) {
            if cur[p] == NodeState::Susceptible
                && next[p] == NodeState::Susceptible
                && stream.uniform(counter, p as u64, (k as u64) << 1) < w * dt
            {
                next[p] = NodeState::Infected;
            }
        }
        let np = graph.params[k];
        let u = stream.uniform(counter, k as u64, ((k as u64) << 1) | 1);
        if u < np.death * dt {
            next[k] = NodeState::Dead;
        } else if pandemic && u < (np.death + np.recovery) * dt {
            next[k] = NodeState::Recovered;
        }
    }
}

/// Advances `state` by one sub-interval.
///
/// `actions` lists nodes with `a_{p,t} = 1`; they must be empty unless
/// `sub_index == 0`. Randomness is keyed by `(config.seed, state.epoch,
/// sub_index, node, neighbor)`.
pub fn step_subinterval(
    graph: &PropagationGraph,
    state: &SystemState,
    actions: &[usize],
    sub_index: u32,
    config: &EpochConfig,
) -> Result<SystemState> {
    check_state(graph, state)?;
    graph.validate_dt(config.dt())?;
    if sub_index >= config.subintervals() {
        return Err(Error::Contract(format!(
            "sub-interval {sub_index} out of range for {} sub-intervals",
            config.subintervals()
        )));
    }
    if sub_index != 0 && !actions.is_empty() {
        return Err(Error::Contract("actions only apply at sub-interval 0".into()));
    }
    let mut cur = state.states.clone();
    apply_actions(graph, &mut cur, actions)?;
    let mut next = Vec::with_capacity(cur.len());
    transition(graph, &cur, &mut next, Stream::new(config.seed), draw_counter(state.epoch, sub_index), config.dt());
    Ok(SystemState { states: next, epoch: state.epoch })
}

/// Advances `state` by one decision epoch (all `1/dt` sub-intervals) and
/// increments the epoch counter.
pub fn step_epoch(
    graph: &PropagationGraph,
    state: &SystemState,
    actions: &[usize],
    config: &EpochConfig,
) -> Result<SystemState> {
    check_state(graph, state)?;
    graph.validate_dt(config.dt())?;
    let stream = Stream::new(config.seed);
    let dt = config.dt();
    let mut cur = state.states.clone();
    apply_actions(graph, &mut cur, actions)?;
    let mut next = Vec::with_capacity(cur.len());
    for i in 0..config.subintervals() {
        transition(graph, &cur, &mut next, stream, draw_counter(state.epoch, i), dt);
        std::mem::swap(&mut cur, &mut next);
        // nothing left to change once no node is active
        if !cur.contains(&NodeState::Infected) {
            break;
        }
    }
    Ok(SystemState { states: cur, epoch: state.epoch + 1 })
}

/// Writes `(epoch, histogram)` rows as CSV.
pub fn write_trajectory_csv<W: Write>(rows: &[(u64, Histogram)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "susceptible", "infected", "dead", "treated", "recovered"]).map_err(csv_err)?;
    for (epoch, h) in rows {
        let mut rec = vec![epoch.to_string()];
        rec.extend(h.iter().map(|c| c.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
