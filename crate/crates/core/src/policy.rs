//! Local decision making for a fixed per-epoch budget.
//!
//! A [`Scenario`] is a site-level MDP (pandemic or wildfire); a [`Policy`]
//! maps its state to a feasible action. [`evaluate_utility`] estimates the
//! expected discounted utility `F(y)` a policy attains with budget `y` held
//! constant over the horizon.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::contagion::{Histogram, Mode};
use crate::error::{Error, Result};
use crate::rng::{self, derive, labels, PolicyRng};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    Random,
    OldFirst,
    NearestFire,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::None => "none",
            BaselineKind::Random => "random",
            BaselineKind::OldFirst => "old_first",
            BaselineKind::NearestFire => "nearest_fire",
        }
    }

    pub fn supports(self, mode: Mode) -> bool {
        match self {
            BaselineKind::None | BaselineKind::Random => true,
            BaselineKind::OldFirst => mode == Mode::Pandemic,
            BaselineKind::NearestFire => mode == Mode::Wildfire,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => BaselineKind::None,
            "random" => BaselineKind::Random,
            "old_first" => BaselineKind::OldFirst,
            "nearest_fire" => BaselineKind::NearestFire,
            other => return Err(Error::Config(format!("unknown policy kind '{other}'"))),
        })
    }
}

/// A site-level Markov decision process with an integer per-epoch budget.
pub trait Scenario: Send + Sync {
    type State: Clone + Send + Sync;
    type Action: Clone + Send + Sync + Default + PartialEq + fmt::Debug;

    fn mode(&self) -> Mode;

    /// Adapts budget-dependent parts of the state (e.g. the number of
    /// deployed units) to `budget`.
    fn prepare(&self, state: &Self::State, _budget: usize) -> Self::State {
        state.clone()
    }

    /// Applies `action` and advances one epoch. The trajectory key `seed`
    /// is constant along a trajectory; the epoch counter lives in the state.
    fn step(&self, state: &Self::State, action: &Self::Action, seed: u64) -> Result<(Self::State, f64)>;

    /// Checks mask and budget feasibility of `action`.
    fn check_action(&self, state: &Self::State, action: &Self::Action, budget: usize) -> Result<()>;

    fn baseline_action(
        &self,
        kind: BaselineKind,
        state: &Self::State,
        budget: usize,
        rng: &mut PolicyRng,
    ) -> Result<Self::Action>;

    /// Node-status counts of `state`, used for outcome traces.
    fn histogram(&self, state: &Self::State) -> Histogram;

    /// True when no further utility can accrue from `state` under any policy.
    fn is_quiescent(&self, state: &Self::State) -> bool;

    /// Candidate actions for one-step lookahead, each with a tie-break key
    /// (lower wins). At most `k` heuristic leads plus the base action's leads.
    fn rollout_candidates(
        &self,
        state: &Self::State,
        budget: usize,
        base: &Self::Action,
        k: usize,
    ) -> Vec<(usize, Self::Action)>;
}

pub trait Policy<S: Scenario>: Send + Sync {
    fn name(&self) -> String;

    fn decide(&self, scenario: &S, state: &S::State, budget: usize, rng: &mut PolicyRng) -> Result<S::Action>;
}

impl<S: Scenario, P: Policy<S> + ?Sized> Policy<S> for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, scenario: &S, state: &S::State, budget: usize, rng: &mut PolicyRng) -> Result<S::Action> {
        (**self).decide(scenario, state, budget, rng)
    }
}

/// Heuristic policy: none, uniform random, elderly-first or nearest-fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Baseline {
    kind: BaselineKind,
}

impl Baseline {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }
}

pub fn baseline_policy<S: Scenario>(scenario: &S, kind: BaselineKind) -> Result<Baseline> {
    if !kind.supports(scenario.mode()) {
        return Err(Error::Config(format!("policy '{kind}' is not available in {} mode", scenario.mode().as_str())));
    }
    Ok(Baseline { kind })
}

impl<S: Scenario> Policy<S> for Baseline {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn decide(&self, scenario: &S, state: &S::State, budget: usize, rng: &mut PolicyRng) -> Result<S::Action> {
        scenario.baseline_action(self.kind, state, budget, rng)
    }
}

/// One-step lookahead over a base policy.
///
/// Each candidate first action is scored by `n_rollouts` simulated
/// trajectories of `horizon` epochs that follow the base policy afterwards.
/// Candidates share random numbers: rollout `r` uses the same environment key
/// and the same base-policy generator for every candidate.
#[derive(Debug, Clone)]
pub struct Rollout<P> {
    base: P,
    n_rollouts: usize,
    horizon: usize,
    gamma: f64,
    candidates: usize,
}

pub fn rollout_policy<P>(
    base: P,
    n_rollouts: usize,
    horizon: usize,
    gamma: f64,
    candidates: usize,
) -> Result<Rollout<P>> {
    if n_rollouts < 1 {
        return Err(Error::Config("rollout needs at least one simulated trajectory".into()));
    }
    if horizon < 1 {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("discount {gamma} outside (0, 1]")));
    }
    if candidates < 1 {
        return Err(Error::Config("rollout needs at least one candidate".into()));
    }
    Ok(Rollout { base, n_rollouts, horizon, gamma, candidates })
}

impl<P> Rollout<P> {
    pub fn base(&self) -> &P {
        &self.base
    }

    fn simulate<S: Scenario>(
        &self,
        scenario: &S,
        state: &S::State,
        first: &S::Action,
        budget: usize,
        seed: u64,
    ) -> Result<f64>
    where
        P: Policy<S>,
    {
        let mut base_rng = rng::policy_rng(derive(seed, labels::POLICY));
        let (mut s, u) = scenario.step(state, first, seed)?;
        let mut total = u;
        let mut discount = self.gamma;
        for _ in 1..self.horizon {
            if scenario.is_quiescent(&s) {
                break;
            }
            let a = self.base.decide(scenario, &s, budget, &mut base_rng)?;
            let (next, u) = scenario.step(&s, &a, seed)?;
            total += discount * u;
            discount *= self.gamma;
            s = next;
        }
        Ok(total)
    }
}

impl<S: Scenario, P: Policy<S>> Policy<S> for Rollout<P> {
    fn name(&self) -> String {
        format!("rollout({})", self.base.name())
    }

    fn decide(&self, scenario: &S, state: &S::State, budget: usize, rng: &mut PolicyRng) -> Result<S::Action> {
        let base_action = self.base.decide(scenario, state, budget, rng)?;
        let mut candidates = scenario.rollout_candidates(state, budget, &base_action, self.candidates);
        if candidates.is_empty() {
            return Ok(base_action);
        }
        candidates.sort_by_key(|(key, _)| *key);
        // the base action goes first so that ties keep it; this is what makes
        // rollout never worse than its base in expectation
        if let Some(i) = candidates.iter().position(|(_, a)| *a == base_action) {
            let base = candidates.remove(i);
            candidates.insert(0, base);
        }
        if candidates.len() == 1 || scenario.is_quiescent(state) {
            return Ok(candidates.swap_remove(0).1);
        }
        let decision_seed = rng.next_u64();
        let mut best: Option<(f64, usize)> = None;
        for (idx, (_, action)) in candidates.iter().enumerate() {
            let mut sum = 0.0;
            for r in 0..self.n_rollouts {
                sum += self.simulate(scenario, state, action, budget, derive(decision_seed, r as u64))?;
            }
            let mean = sum / self.n_rollouts as f64;
            // a strict improvement is required to leave the base action
            if best.is_none_or(|(v, _)| mean > v) {
                best = Some((mean, idx));
            }
        }
        let (_, idx) = best.expect("at least one candidate");
        Ok(candidates.swap_remove(idx).1)
    }
}

/// Result of a Monte Carlo utility evaluation at one budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub budget: usize,
    pub estimate: Estimate,
    /// Discounted utility of each replica, indexed by replica id.
    pub samples: Vec<f64>,
    pub seed: u64,
    pub horizon: usize,
    pub policy: String,
}

/// Simulates one trajectory and returns its discounted utility.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory<S: Scenario, P: Policy<S> + ?Sized>(
    scenario: &S,
    policy: &P,
    initial: S::State,
    budget: usize,
    horizon: usize,
    gamma: f64,
    env_seed: u64,
    rng: &mut PolicyRng,
) -> Result<(S::State, f64)> {
    let mut state = scenario.prepare(&initial, budget);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = policy.decide(scenario, &state, budget, rng)?;
        scenario.check_action(&state, &action, budget)?;
        let (next, u) = scenario.step(&state, &action, env_seed)?;
        total += discount * u;
        discount *= gamma;
        state = next;
    }
    Ok((state, total))
}

/// Monte Carlo estimate of `sum_{t < horizon} gamma^t U_t` under `policy`
/// with a constant budget.
///
/// Replica `r` draws its initial state from `init(derive(seed, r))` and uses
/// environment and policy keys derived from the same replica seed, so two
/// evaluations with equal `seed` share random numbers across budgets and
/// policies.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_utility<S, P>(
    scenario: &S,
    policy: &P,
    init: &(dyn Fn(u64) -> Result<S::State> + Sync),
    budget: usize,
    horizon: usize,
    gamma: f64,
    replicas: usize,
    seed: u64,
) -> Result<Evaluation>
where
    S: Scenario,
    P: Policy<S> + ?Sized,
{
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if replicas < 1 {
        return Err(Error::Config("at least one replica is required".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("discount {gamma} outside (0, 1]")));
    }
    let samples = crate::par::map_indexed(replicas, |r| {
        let rseed = derive(seed, r as u64);
        let initial = init(rseed)?;
        let mut prng = rng::policy_rng(derive(rseed, labels::POLICY));
        let env = derive(rseed, labels::ENVIRONMENT);
        run_trajectory(scenario, policy, initial, budget, horizon, gamma, env, &mut prng).map(|(_, u)| u)
    })?;
    Ok(Evaluation { budget, estimate: Estimate::from_samples(&samples), samples, seed, horizon, policy: policy.name() })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three-state chain: from the start, action 1 earns 1 and action 2 earns
    /// 0, after which the chain is absorbed.
    struct Chain;

    impl Scenario for Chain {
        type State = u8;
        type Action = Vec<usize>;

        fn mode(&self) -> Mode {
            Mode::Pandemic
        }

        fn step(&self, state: &u8, action: &Vec<usize>, _seed: u64) -> Result<(u8, f64)> {
            Ok(match (state, action.first()) {
                (0, Some(1)) => (1, 1.0),
                (0, _) => (2, 0.0),
                (s, _) => (*s, 0.0),
            })
        }

        fn check_action(&self, _: &u8, action: &Vec<usize>, budget: usize) -> Result<()> {
            if action.len() > budget {
                return Err(Error::RejectedAction("over budget".into()));
            }
            Ok(())
        }

        fn baseline_action(&self, kind: BaselineKind, _: &u8, _: usize, _: &mut PolicyRng) -> Result<Vec<usize>> {
            Ok(match kind {
                BaselineKind::None => vec![],
                _ => vec![2],
            })
        }

        fn histogram(&self, state: &u8) -> Histogram {
            let mut h = [0; 5];
            h[*state as usize] = 1;
            h
        }

        fn is_quiescent(&self, state: &u8) -> bool {
            *state != 0
        }

        fn rollout_candidates(&self, state: &u8, _: usize, _: &Vec<usize>, _: usize) -> Vec<(usize, Vec<usize>)> {
            if *state == 0 {
                vec![(2, vec![2]), (1, vec![1])]
            } else {
                vec![]
            }
        }
    }

    #[test]
    fn rollout_picks_dominant_action() {
        for n in [1, 3, 10] {
            let base = baseline_policy(&Chain, BaselineKind::Random).unwrap();
            let policy = rollout_policy(base, n, 2, 1.0, 4).unwrap();
            let mut rng = rng::policy_rng(0);
            assert_eq!(policy.decide(&Chain, &0, 1, &mut rng).unwrap(), vec![1]);
        }
    }

    #[test]
    fn rollout_rejects_zero_rollouts() {
        assert!(matches!(rollout_policy(Baseline { kind: BaselineKind::None }, 0, 5, 0.9, 4), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_mode_mismatch() {
        assert!(baseline_policy(&Chain, BaselineKind::NearestFire).is_err());
        assert!(baseline_policy(&Chain, BaselineKind::OldFirst).is_ok());
    }

    #[test]
    fn evaluation_discounts_and_averages() {
        let policy = rollout_policy(Baseline { kind: BaselineKind::None }, 1, 1, 1.0, 1).unwrap();
        let init = |_seed: u64| Ok(0u8);
        let ev = evaluate_utility(&Chain, &policy, &init, 1, 3, 0.5, 4, 0).unwrap();
        assert_eq!(ev.estimate.mean, 1.0);
        assert_eq!(ev.estimate.stderr, 0.0);
        assert_eq!(ev.samples.len(), 4);
        assert!(evaluate_utility(&Chain, &policy, &init, 1, 0, 0.5, 4, 0).is_err());
        assert!(evaluate_utility(&Chain, &policy, &init, 1, 3, 0.5, 0, 0).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("old_first".parse::<BaselineKind>().unwrap(), BaselineKind::OldFirst);
        assert!("elderly".parse::<BaselineKind>().is_err());
    }
}
