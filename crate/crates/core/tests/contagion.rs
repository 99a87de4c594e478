use proptest::prelude::*;
use sdnum::contagion::{
    step_epoch, step_subinterval, Edge, EpochConfig, Mode, NodeParams, NodeState, PropagationGraph, SystemState,
};
use sdnum::rng::derive;

fn pair(rate: f64) -> PropagationGraph {
    let params = vec![NodeParams::default(); 2];
    PropagationGraph::new(Mode::Pandemic, params, vec![Edge { target: 0, source: 1, rate }]).unwrap()
}

#[test]
fn two_sub_intervals_compound_the_contact_probability() {
    // w dt = 0.25 over two sub-intervals: 1 - 0.75^2
    let g = pair(0.5);
    let mut start = SystemState::uniform(2, NodeState::Susceptible);
    start.states[1] = NodeState::Infected;
    let n = 100_000;
    let hits = (0..n)
        .filter(|&r| {
            let cfg = EpochConfig::from_dt(0.5, derive(31, r)).unwrap();
            step_epoch(&g, &start, &[], &cfg).unwrap().states[0] == NodeState::Infected
        })
        .count();
    let p = 0.4375;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let got = hits as f64 / n as f64;
    assert!((got - p).abs() <= 3.0 * se, "{got} vs {p}");
}

#[test]
fn treated_nodes_never_catch_the_contagion() {
    let g = pair(1.0);
    let mut start = SystemState::uniform(2, NodeState::Susceptible);
    start.states[1] = NodeState::Infected;
    for r in 0..500 {
        let cfg = EpochConfig::from_dt(0.5, r).unwrap();
        let next = step_epoch(&g, &start, &[0], &cfg).unwrap();
        assert_eq!(next.states[0], NodeState::Treated);
    }
}

fn graph_and_state() -> impl Strategy<Value = (PropagationGraph, SystemState, u32)> {
    (2usize..12, prop::sample::select(vec![1u32, 2, 4, 10]), any::<bool>()).prop_flat_map(|(n, subs, wildfire)| {
        let mode = if wildfire { Mode::Wildfire } else { Mode::Pandemic };
        let node = (0.0f64..0.5, 0.0f64..0.5)
            .prop_map(move |(d, r)| NodeParams { death: d, recovery: if wildfire { 0.0 } else { r } });
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
        let states = if wildfire { 0u8..4 } else { 0u8..5 };
        (
            prop::collection::vec(node, n),
            prop::sample::subsequence(pairs.clone(), 0..=pairs.len()),
            prop::collection::vec(0.0f64..1.0, pairs.len()),
            prop::collection::vec(states, n),
        )
            .prop_map(move |(params, edges, rates, codes)| {
                let in_deg = |t: usize| edges.iter().filter(|e| e.0 == t).count().max(1) as f64;
                // scale rates so every node passes the dt check at dt = 1
                let edges: Vec<Edge> = edges
                    .iter()
                    .zip(&rates)
                    .map(|(&(t, s), r)| Edge { target: t, source: s, rate: r / in_deg(t) })
                    .collect();
                let g = PropagationGraph::new(mode, params, edges).unwrap();
                let states = codes.into_iter().map(|c| NodeState::from_code(c).unwrap()).collect();
                (g, SystemState { states, epoch: 3 }, subs)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn epoch_is_the_composition_of_its_sub_intervals((g, s, subs) in graph_and_state(), seed in any::<u64>()) {
        let cfg = EpochConfig::with_subintervals(subs, seed).unwrap();
        let whole = step_epoch(&g, &s, &[], &cfg).unwrap();
        let mut cur = s.clone();
        for i in 0..subs {
            cur = step_subinterval(&g, &cur, &[], i, &cfg).unwrap();
        }
        prop_assert_eq!(whole.epoch, s.epoch + 1);
        prop_assert_eq!(whole.states, cur.states);
    }

    #[test]
    fn transitions_respect_the_state_machine((g, s, subs) in graph_and_state(), seed in any::<u64>()) {
        let cfg = EpochConfig::with_subintervals(subs, seed).unwrap();
        let next = step_subinterval(&g, &s, &[], 0, &cfg).unwrap();
        for p in 0..s.len() {
            let (a, b) = (s.states[p], next.states[p]);
            if a.is_absorbing() {
                prop_assert_eq!(a, b);
            }
            if a == NodeState::Susceptible && b != a {
                prop_assert_eq!(b, NodeState::Infected);
                let exposed = g.edges().iter().any(|e| e.target == p && s.states[e.source] == NodeState::Infected);
                prop_assert!(exposed, "node {} caught it from nobody", p);
            }
            if a == NodeState::Infected {
                prop_assert!(matches!(b, NodeState::Infected | NodeState::Dead | NodeState::Recovered));
            }
            prop_assert!(g.mode().allows(b));
        }
    }
}
