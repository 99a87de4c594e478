//! Vaccine allocation on an age-stratified social graph.
//!
//! Graph construction: teens are grouped into families of one or two, each
//! with two adult parents; all teens form a clique (school contacts); adults
//! and elderly are linked Erdos-Renyi style; components are then bridged so
//! the graph is connected. Every edge carries the same contact rate.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contagion::{
    self, Edge, EpochConfig, Histogram, Mode, NodeParams, NodeState, PropagationGraph, SystemState,
};
use crate::error::{Error, Result};
use crate::policy::{BaselineKind, Scenario};
use crate::rng::{self, PolicyRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeGroup {
    Teen,
    Adult,
    Elderly,
}

impl AgeGroup {
    /// Exponent of the mortality ratio relative to teens (1 : 10 : 100 by default).
    fn mortality_rank(self) -> i32 {
        match self {
            AgeGroup::Teen => 0,
            AgeGroup::Adult => 1,
            AgeGroup::Elderly => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Teen => "teen",
            AgeGroup::Adult => "adult",
            AgeGroup::Elderly => "elderly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicSpec {
    pub n_teen: usize,
    pub n_adult: usize,
    pub n_elderly: usize,
    pub er_edge_prob: f64,
    /// Families hold one or two teens (uniformly) up to this many.
    pub max_teens_per_family: usize,
    pub adults_per_family: usize,
}

impl DemographicSpec {
    pub fn new(n_teen: usize, n_adult: usize, n_elderly: usize, er_edge_prob: f64) -> Self {
        Self { n_teen, n_adult, n_elderly, er_edge_prob, max_teens_per_family: 2, adults_per_family: 2 }
    }

    pub fn node_count(&self) -> usize {
        self.n_teen + self.n_adult + self.n_elderly
    }
}

/// Location presets: teen, adult and elderly counts with the reported
/// elderly average degree (EAD) and non-teen average degree (AD).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationPreset {
    pub name: &'static str,
    pub teen: usize,
    pub adult: usize,
    pub elderly: usize,
    pub ead: f64,
    pub ad: f64,
}

pub const LOCATION_PRESETS: [LocationPreset; 5] = [
    LocationPreset { name: "Loc.1", teen: 20, adult: 50, elderly: 30, ead: 7.56, ad: 8.24 },
    LocationPreset { name: "Loc.2", teen: 30, adult: 60, elderly: 10, ead: 6.7, ad: 7.97 },
    LocationPreset { name: "Loc.3", teen: 20, adult: 60, elderly: 20, ead: 8.55, ad: 8.3 },
    LocationPreset { name: "Loc.4", teen: 20, adult: 60, elderly: 20, ead: 8.7, ad: 9.05 },
    LocationPreset { name: "Loc.5", teen: 30, adult: 60, elderly: 10, ead: 7.3, ad: 7.48 },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiseaseParams {
    /// Contacts per unit time along each edge.
    pub contact_rate: f64,
    pub teen_mortality: f64,
    /// Adult mortality over teen mortality, and elderly over adult.
    pub mortality_ratio: f64,
    /// Recovery rate per unit time (inverse mean infectious period).
    pub recovery_rate: f64,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        Self { contact_rate: 0.02, teen_mortality: 0.001, mortality_ratio: 10.0, recovery_rate: 1.0 / 14.0 }
    }
}

impl DiseaseParams {
    pub fn mortality(&self, group: AgeGroup) -> f64 {
        self.teen_mortality * self.mortality_ratio.powi(group.mortality_rank())
    }
}

#[derive(Debug, Clone)]
pub struct SocialGraph {
    pub graph: PropagationGraph,
    pub groups: Vec<AgeGroup>,
}

impl SocialGraph {
    fn average_degree_where(&self, keep: impl Fn(AgeGroup) -> bool) -> f64 {
        let (sum, n) = self
            .groups
            .iter()
            .enumerate()
            .filter(|(_, g)| keep(**g))
            .fold((0usize, 0usize), |(s, n), (p, _)| (s + self.graph.degree(p), n + 1));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    /// Average degree of the elderly nodes.
    pub fn elderly_average_degree(&self) -> f64 {
        self.average_degree_where(|g| g == AgeGroup::Elderly)
    }

    /// Average degree of all non-teen nodes.
    pub fn non_teen_average_degree(&self) -> f64 {
        self.average_degree_where(|g| g != AgeGroup::Teen)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.groups.len();
        let mut uf = UnionFind::new(n);
        for e in self.graph.edges() {
            uf.union(e.source, e.target);
        }
        (0..n).all(|p| uf.find(p) == uf.find(0))
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller id as root so component order is stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Builds a connected social graph. Node ids are teens first, then adults,
/// then elderly.
pub fn generate_social_graph(spec: &DemographicSpec, disease: &DiseaseParams, seed: u64) -> Result<SocialGraph> {
    let n = spec.node_count();
    if n == 0 {
        return Err(Error::Config("a social graph needs at least one node".into()));
    }
    if !(0.0..=1.0).contains(&spec.er_edge_prob) {
        return Err(Error::Config(format!("edge probability {} outside [0, 1]", spec.er_edge_prob)));
    }
    if spec.max_teens_per_family == 0 {
        return Err(Error::Config("families need room for at least one teen".into()));
    }
    let mut rng = rng::policy_rng(seed);
    let teens: Vec<usize> = (0..spec.n_teen).collect();
    let adults: Vec<usize> = (spec.n_teen..spec.n_teen + spec.n_adult).collect();
    let elderly: Vec<usize> = (spec.n_teen + spec.n_adult..n).collect();
    let mut groups = vec![AgeGroup::Teen; spec.n_teen];
    groups.extend(std::iter::repeat_n(AgeGroup::Adult, spec.n_adult));
    groups.extend(std::iter::repeat_n(AgeGroup::Elderly, spec.n_elderly));

    let mut links: BTreeSet<(usize, usize)> = BTreeSet::new();
    let link = |a: usize, b: usize, links: &mut BTreeSet<(usize, usize)>| {
        if a != b {
            links.insert((a.min(b), a.max(b)));
        }
    };

    // families
    let mut shuffled_teens = teens.clone();
    shuffled_teens.shuffle(&mut rng);
    let mut shuffled_adults = adults.clone();
    shuffled_adults.shuffle(&mut rng);
    let mut parents = shuffled_adults.iter().copied();
    let mut rest = &shuffled_teens[..];
    while !rest.is_empty() {
        let size = rng.random_range(1..=spec.max_teens_per_family.min(rest.len()));
        let (kids, tail) = rest.split_at(size);
        rest = tail;
        let family: Vec<usize> = parents.by_ref().take(spec.adults_per_family).collect();
        for (i, &a) in family.iter().enumerate() {
            for &t in kids {
                link(a, t, &mut links);
            }
            for &b in &family[i + 1..] {
                link(a, b, &mut links);
            }
        }
    }

    // school clique
    for (i, &a) in teens.iter().enumerate() {
        for &b in &teens[i + 1..] {
            link(a, b, &mut links);
        }
    }

    // Erdos-Renyi over adults and elderly; pair draws are keyed so the edge
    // set grows monotonically with the edge probability.
    let pool: Vec<usize> = adults.iter().chain(&elderly).copied().collect();
    let pair_stream = Stream::new(rng::derive(seed, 0xe5));
    for (i, &a) in pool.iter().enumerate() {
        for &b in &pool[i + 1..] {
            if pair_stream.uniform(a as u64, b as u64, 0) < spec.er_edge_prob {
                link(a, b, &mut links);
            }
        }
    }

    // bridge components onto the one containing node 0
    let mut uf = UnionFind::new(n);
    for &(a, b) in &links {
        uf.union(a, b);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        let r = uf.find(p);
        members[r].push(p);
    }
    let mut connected: Vec<usize> = members[uf.find(0)].clone();
    for comp in members.iter().filter(|m| !m.is_empty()) {
        if uf.find(comp[0]) == uf.find(0) {
            continue;
        }
        let a = *comp.choose(&mut rng).expect("non-empty component");
        let b = *connected.choose(&mut rng).expect("non-empty main component");
        link(a, b, &mut links);
        uf.union(a, b);
        connected.extend_from_slice(comp);
    }

    let params =
        groups.iter().map(|&g| NodeParams { death: disease.mortality(g), recovery: disease.recovery_rate }).collect();
    let edges = links
        .iter()
        .flat_map(|&(a, b)| {
            [
                Edge { target: a, source: b, rate: disease.contact_rate },
                Edge { target: b, source: a, rate: disease.contact_rate },
            ]
        })
        .collect();
    let graph = PropagationGraph::new(Mode::Pandemic, params, edges)?;
    Ok(SocialGraph { graph, groups })
}

/// Bisects the Erdos-Renyi probability so that the elderly average degree
/// (or the non-teen average degree when there are no elderly) lands within
/// `tol` of `target`. Returns the closest graph found.
pub fn tune_er_prob(
    spec: &DemographicSpec,
    disease: &DiseaseParams,
    target: f64,
    tol: f64,
    seed: u64,
) -> Result<(DemographicSpec, SocialGraph)> {
    let measure = |g: &SocialGraph| {
        if spec.n_elderly > 0 {
            g.elderly_average_degree()
        } else {
            g.non_teen_average_degree()
        }
    };
    let build = |p: f64| {
        let s = DemographicSpec { er_edge_prob: p, ..spec.clone() };
        generate_social_graph(&s, disease, seed).map(|g| (s, g))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = build(0.0)?;
    let mut best_err = (measure(&best.1) - target).abs();
    for _ in 0..50 {
        if best_err <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let cand = build(mid)?;
        let d = measure(&cand.1);
        if (d - target).abs() < best_err {
            best_err = (d - target).abs();
            best = cand;
        }
        if d < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Negative number of new deaths between two consecutive states.
pub fn pandemic_utility(prev: &SystemState, next: &SystemState) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::Contract(format!("state sizes differ: {} vs {}", prev.len(), next.len())));
    }
    let deaths = |s: &SystemState| s.count(NodeState::Dead) as f64;
    Ok(-(deaths(next) - deaths(prev)))
}

/// Nodes eligible for vaccination: exactly the susceptible ones.
pub fn mask_actions(state: &SystemState) -> Vec<usize> {
    state.states.iter().enumerate().filter(|(_, s)| **s == NodeState::Susceptible).map(|(p, _)| p).collect()
}

#[derive(Debug, Clone)]
pub struct PandemicScenario {
    pub social: SocialGraph,
    pub epoch: EpochConfig,
    pub initial_infected: usize,
}

impl PandemicScenario {
    pub fn new(social: SocialGraph, dt: f64, initial_infected: usize) -> Result<Self> {
        let epoch = EpochConfig::from_dt(dt, 0)?;
        social.graph.validate_dt(epoch.dt())?;
        if initial_infected > social.graph.node_count() {
            return Err(Error::Config(format!(
                "{initial_infected} initial infections exceed {} nodes",
                social.graph.node_count()
            )));
        }
        Ok(Self { social, epoch, initial_infected })
    }

    pub fn graph(&self) -> &PropagationGraph {
        &self.social.graph
    }

    /// All susceptible except `initial_infected` uniformly chosen infected nodes.
    pub fn initial_state(&self, seed: u64) -> SystemState {
        let n = self.graph().node_count();
        let mut state = SystemState::uniform(n, NodeState::Susceptible);
        let mut rng = rng::policy_rng(seed);
        for p in rand::seq::index::sample(&mut rng, n, self.initial_infected) {
            state.states[p] = NodeState::Infected;
        }
        state
    }

    fn score(&self, p: usize) -> f64 {
        self.graph().degree(p) as f64 * self.graph().params(p).death
    }
}

impl Scenario for PandemicScenario {
    type State = SystemState;
    type Action = Vec<usize>;

    fn mode(&self) -> Mode {
        Mode::Pandemic
    }

    fn step(&self, state: &SystemState, action: &Vec<usize>, seed: u64) -> Result<(SystemState, f64)> {
        let next = contagion::step_epoch(self.graph(), state, action, &self.epoch.with_seed(seed))?;
        let u = pandemic_utility(state, &next)?;
        Ok((next, u))
    }

    fn check_action(&self, state: &SystemState, action: &Vec<usize>, budget: usize) -> Result<()> {
        if action.len() > budget {
            return Err(Error::RejectedAction(format!("{} vaccinations exceed budget {budget}", action.len())));
        }
        let unique: BTreeSet<_> = action.iter().collect();
        if unique.len() != action.len() {
            return Err(Error::RejectedAction("duplicate vaccination target".into()));
        }
        for &p in action {
            if state.states.get(p) != Some(&NodeState::Susceptible) {
                return Err(Error::RejectedAction(format!("node {p} is not susceptible")));
            }
        }
        Ok(())
    }

    fn baseline_action(
        &self,
        kind: BaselineKind,
        state: &SystemState,
        budget: usize,
        rng: &mut PolicyRng,
    ) -> Result<Vec<usize>> {
        let mask = mask_actions(state);
        let take = budget.min(mask.len());
        let mut action = match kind {
            BaselineKind::None => Vec::new(),
            BaselineKind::Random => {
                rand::seq::index::sample(rng, mask.len(), take).into_iter().map(|i| mask[i]).collect()
            }
            BaselineKind::OldFirst => {
                let mut picked = Vec::with_capacity(take);
                for group in [AgeGroup::Elderly, AgeGroup::Adult, AgeGroup::Teen] {
                    if picked.len() == take {
                        break;
                    }
                    let mut pool: Vec<usize> =
                        mask.iter().copied().filter(|&p| self.social.groups[p] == group).collect();
                    pool.shuffle(rng);
                    picked.extend(pool.into_iter().take(take - picked.len()));
                }
                picked
            }
            BaselineKind::NearestFire => {
                return Err(Error::Config("nearest_fire is a wildfire policy".into()));
            }
        };
        action.sort_unstable();
        Ok(action)
    }

    fn histogram(&self, state: &SystemState) -> Histogram {
        state.histogram()
    }

    fn is_quiescent(&self, state: &SystemState) -> bool {
        !state.has_active()
    }

    fn rollout_candidates(
        &self,
        state: &SystemState,
        budget: usize,
        base: &Vec<usize>,
        k: usize,
    ) -> Vec<(usize, Vec<usize>)> {
        let mask = mask_actions(state);
        if budget == 0 || mask.is_empty() {
            return vec![(0, Vec::new())];
        }
        let mut ranked = mask.clone();
        ranked.sort_by(|&a, &b| self.score(b).total_cmp(&self.score(a)).then(a.cmp(&b)));
        let mut leads: Vec<usize> = ranked.into_iter().take(k).collect();
        for &p in base {
            if !leads.contains(&p) {
                leads.push(p);
            }
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(leads.len());
        for lead in leads {
            let mut action = vec![lead];
            action.extend(base.iter().copied().filter(|&p| p != lead));
            action.truncate(budget);
            action.sort_unstable();
            if seen.insert(action.clone()) {
                out.push((lead, action));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contagion::count_by_state;

    fn codes(c: &[u8]) -> SystemState {
        SystemState { states: c.iter().map(|&x| NodeState::from_code(x).unwrap()).collect(), epoch: 0 }
    }

    #[test]
    fn mask_examples() {
        assert_eq!(mask_actions(&codes(&[0, 1, 2, 3, 4])), vec![0]);
        assert!(mask_actions(&codes(&[3, 3, 3])).is_empty());
        assert_eq!(mask_actions(&codes(&[0, 0, 0])), vec![0, 1, 2]);
    }

    #[test]
    fn utility_examples() {
        let prev = codes(&[2, 2, 2, 1, 1, 0]);
        let next = codes(&[2, 2, 2, 2, 2, 0]);
        assert_eq!(pandemic_utility(&prev, &next).unwrap(), -2.0);
        assert_eq!(pandemic_utility(&prev, &prev).unwrap(), 0.0);
        assert!(matches!(pandemic_utility(&prev, &codes(&[0])), Err(Error::Contract(_))));
    }

    #[test]
    fn two_adults_form_the_unique_connected_graph() {
        let spec = DemographicSpec::new(0, 2, 0, 0.0);
        let g = generate_social_graph(&spec, &DiseaseParams::default(), 3).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.graph.edges().len(), 2);
    }

    #[test]
    fn zero_nodes_is_rejected() {
        let spec = DemographicSpec::new(0, 0, 0, 0.1);
        assert!(matches!(generate_social_graph(&spec, &DiseaseParams::default(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DemographicSpec::new(20, 50, 30, 0.1);
        let a = generate_social_graph(&spec, &DiseaseParams::default(), 17).unwrap();
        let b = generate_social_graph(&spec, &DiseaseParams::default(), 17).unwrap();
        assert_eq!(a.graph.to_text(), b.graph.to_text());
        let c = generate_social_graph(&spec, &DiseaseParams::default(), 18).unwrap();
        assert_ne!(a.graph.to_text(), c.graph.to_text());
    }

    #[test]
    fn mortality_ratios() {
        let d = DiseaseParams::default();
        assert!((d.mortality(AgeGroup::Teen) - 0.001).abs() < 1e-15);
        assert!((d.mortality(AgeGroup::Adult) - 0.01).abs() < 1e-15);
        assert!((d.mortality(AgeGroup::Elderly) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn old_first_takes_the_only_elderly() {
        let spec = DemographicSpec::new(2, 2, 1, 0.5);
        let social = generate_social_graph(&spec, &DiseaseParams::default(), 1).unwrap();
        let scenario = PandemicScenario::new(social, 0.25, 0).unwrap();
        let state = SystemState::uniform(5, NodeState::Susceptible);
        for seed in 0..20 {
            let mut rng = rng::policy_rng(seed);
            let a = scenario.baseline_action(BaselineKind::OldFirst, &state, 1, &mut rng).unwrap();
            assert_eq!(a, vec![4]);
        }
        let mut rng = rng::policy_rng(0);
        let a = scenario.baseline_action(BaselineKind::OldFirst, &state, 3, &mut rng).unwrap();
        assert!(a.contains(&4) && a.contains(&2) && a.contains(&3));
    }

    #[test]
    fn random_with_large_budget_takes_whole_mask() {
        let spec = DemographicSpec::new(3, 3, 3, 0.3);
        let social = generate_social_graph(&spec, &DiseaseParams::default(), 1).unwrap();
        let scenario = PandemicScenario::new(social, 0.5, 0).unwrap();
        let state = codes(&[0, 1, 0, 2, 0, 3, 0, 4, 0]);
        let mut rng = rng::policy_rng(4);
        let a = scenario.baseline_action(BaselineKind::Random, &state, 10, &mut rng).unwrap();
        assert_eq!(a, mask_actions(&state));
        let none = scenario.baseline_action(BaselineKind::None, &state, 10, &mut rng).unwrap();
        assert!(none.is_empty());
        assert!(scenario.baseline_action(BaselineKind::NearestFire, &state, 1, &mut rng).is_err());
    }

    #[test]
    fn initial_state_infects_requested_count() {
        let spec = DemographicSpec::new(20, 50, 30, 0.1);
        let social = generate_social_graph(&spec, &DiseaseParams::default(), 2).unwrap();
        let scenario = PandemicScenario::new(social, 0.25, 5).unwrap();
        let s = scenario.initial_state(9);
        assert_eq!(count_by_state(&s), [95, 5, 0, 0, 0]);
        assert_eq!(s, scenario.initial_state(9));
    }
}
