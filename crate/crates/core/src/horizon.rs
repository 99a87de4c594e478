//! Rolling-horizon control of the resource market.
//!
//! Every `period` epochs each site re-simulates `horizon` epochs ahead from
//! its current ground state at every integer budget, fits a concave surrogate
//! to the estimates and reports it. The coordinator prices the surrogates,
//! rounds the market demands to whole units and commits them for the next
//! `period` epochs, after which the procedure repeats.
//!
//! Sites are reached through a [`SiteBus`]; [`LocalBus`] runs them in
//! process and the protocol module provides a networked bus. Agents are
//! deterministic functions of their configuration, seed and commitment
//! history, which is what lets a restarted agent catch up by replaying.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::contagion::{csv_err, Histogram};
use crate::error::{Error, Result};
use crate::fit::{fit_scalar_pairs, PwlUtility};
use crate::market::{default_alpha, run_market_with, MarketConfig, Response, SiteUtility, SmoothScalar, TraceRow};
use crate::policy::{evaluate_utility, Policy, Scenario};
use crate::rng::{self, derive, labels};
use crate::stats::Estimate;

/// Rolling window schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonPlan {
    /// Look-ahead length `T` used when estimating utilities.
    pub horizon: usize,
    /// Update period `tau`: epochs committed per window.
    pub period: usize,
    pub gamma: f64,
    /// Total epochs simulated by a run.
    pub epochs: usize,
}

/// One committed window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub window: usize,
    pub start: usize,
    pub epochs: usize,
}

impl HorizonPlan {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.period < 1 {
            return Err(Error::Config("horizon and update period must be at least 1".into()));
        }
        if self.period > self.horizon {
            return Err(Error::Config(format!("update period {} exceeds the horizon {}", self.period, self.horizon)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Windows covering `epochs`; the last one may be shorter than `period`.
    pub fn windows(&self) -> Vec<WindowSpan> {
        (0..self.epochs.div_ceil(self.period.max(1)))
            .map(|w| {
                let start = w * self.period;
                WindowSpan { window: w, start, epochs: self.period.min(self.epochs - start) }
            })
            .collect()
    }
}

/// Whole units granted to one site for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub allocation: usize,
    pub epochs: usize,
}

/// What a site realized while a commitment was in force.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowOutcome {
    /// Undiscounted utility summed over the window.
    pub realized: f64,
    /// `(epoch, histogram)` after each simulated epoch.
    pub trajectory: Vec<(u64, Histogram)>,
}

/// A site's report at the start of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteReport {
    pub model: PwlUtility,
    /// Utility estimates at budgets `0..=max_budget`.
    pub samples: Vec<Estimate>,
    /// Outcome of the most recent commitment, if any.
    pub previous: Option<WindowOutcome>,
}

/// Site-side logic shared by in-process and networked runs.
pub trait SiteAgent: Send {
    /// Largest budget the site can use in one epoch.
    fn cap(&self) -> usize;

    /// Advances the ground state through `history`, replaying from the start
    /// when it does not extend what was already applied. Returns the outcome
    /// of the last commitment.
    fn sync(&mut self, history: &[Commitment]) -> Result<Option<WindowOutcome>>;

    /// Estimates the look-ahead utility at budgets `0..=max_budget` from the
    /// current ground state.
    fn estimate(&mut self, window: usize, max_budget: usize) -> Result<Vec<Estimate>>;
}

/// Syncs, estimates and fits: the full site-side work for one window.
pub fn site_report(agent: &mut dyn SiteAgent, window: usize, history: &[Commitment], z: usize) -> Result<SiteReport> {
    let previous = agent.sync(history)?;
    let samples = agent.estimate(window, z.min(agent.cap()))?;
    let pairs: Vec<(f64, f64)> = samples.iter().enumerate().map(|(b, e)| (b as f64, e.mean)).collect();
    let model = fit_scalar_pairs(&pairs)?.model;
    Ok(SiteReport { model, samples, previous })
}

/// Agent running a scenario's simulator and a fixed policy.
pub struct ScenarioAgent<S: Scenario, P> {
    scenario: S,
    policy: P,
    initial: S::State,
    ground: S::State,
    applied: Vec<Commitment>,
    outcomes: Vec<WindowOutcome>,
    epoch: u64,
    settings: AgentSettings,
}

/// Estimation settings of a [`ScenarioAgent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSettings {
    pub horizon: usize,
    pub gamma: f64,
    pub replicas: usize,
    pub cap: usize,
    pub seed: u64,
}

impl<S: Scenario, P: Policy<S>> ScenarioAgent<S, P> {
    pub fn new(scenario: S, policy: P, initial: S::State, settings: AgentSettings) -> Self {
        Self {
            scenario,
            policy,
            ground: initial.clone(),
            initial,
            applied: Vec::new(),
            outcomes: Vec::new(),
            epoch: 0,
            settings,
        }
    }

    pub fn ground(&self) -> &S::State {
        &self.ground
    }

    fn apply(&mut self, c: Commitment) -> Result<()> {
        let w = self.applied.len() as u64;
        let ground_seed = derive(self.settings.seed, labels::GROUND);
        let env = derive(ground_seed, labels::ENVIRONMENT);
        let mut prng = rng::policy_rng(derive(derive(ground_seed, labels::POLICY), w));
        let mut state = self.scenario.prepare(&self.ground, c.allocation);
        let mut outcome = WindowOutcome::default();
        for _ in 0..c.epochs {
            let action = self.policy.decide(&self.scenario, &state, c.allocation, &mut prng)?;
            self.scenario.check_action(&state, &action, c.allocation)?;
            let (next, u) = self.scenario.step(&state, &action, env)?;
            outcome.realized += u;
            self.epoch += 1;
            outcome.trajectory.push((self.epoch, self.scenario.histogram(&next)));
            state = next;
        }
        self.ground = state;
        self.applied.push(c);
        self.outcomes.push(outcome);
        Ok(())
    }
}

impl<S, P> SiteAgent for ScenarioAgent<S, P>
where
    S: Scenario,
    S::State: Send,
    P: Policy<S>,
{
    fn cap(&self) -> usize {
        self.settings.cap
    }

    fn sync(&mut self, history: &[Commitment]) -> Result<Option<WindowOutcome>> {
        if !history.starts_with(&self.applied) {
            self.ground = self.initial.clone();
            self.applied.clear();
            self.outcomes.clear();
            self.epoch = 0;
        }
        for &c in &history[self.applied.len()..] {
            self.apply(c)?;
        }
        Ok(self.outcomes.last().cloned())
    }

    fn estimate(&mut self, window: usize, max_budget: usize) -> Result<Vec<Estimate>> {
        let s = &self.settings;
        let seed = derive(derive(s.seed, labels::ESTIMATE), window as u64);
        let ground = &self.ground;
        let init = |_: u64| Ok(ground.clone());
        (0..=max_budget)
            .map(|b| {
                evaluate_utility(&self.scenario, &self.policy, &init, b, s.horizon, s.gamma, s.replicas, seed)
                    .map(|e| e.estimate)
            })
            .collect()
    }
}

/// Agent with a known smooth utility, for synthetic experiments.
#[derive(Debug, Clone)]
pub struct SmoothAgent {
    utility: SmoothScalar,
    cap: usize,
    applied: Vec<Commitment>,
}

impl SmoothAgent {
    pub fn new(utility: SmoothScalar, cap: usize) -> Self {
        Self { utility, cap, applied: Vec::new() }
    }
}

impl SiteAgent for SmoothAgent {
    fn cap(&self) -> usize {
        self.cap
    }

    fn sync(&mut self, history: &[Commitment]) -> Result<Option<WindowOutcome>> {
        self.applied = history.to_vec();
        Ok(history.last().map(|c| WindowOutcome {
            realized: self.utility.value(&[c.allocation as f64]) * c.epochs as f64,
            trajectory: Vec::new(),
        }))
    }

    fn estimate(&mut self, _window: usize, max_budget: usize) -> Result<Vec<Estimate>> {
        Ok((0..=max_budget).map(|b| Estimate::exact(self.utility.value(&[b as f64]))).collect())
    }
}

/// Transport between the coordinator and its sites.
pub trait SiteBus {
    fn sites(&self) -> usize;

    /// Opens `window`: each site syncs to its history and reports a fresh
    /// surrogate. A site that fails yields an error entry.
    fn open_window(
        &mut self,
        window: usize,
        z: usize,
        histories: &[Vec<Commitment>],
    ) -> Result<Vec<Result<SiteReport>>>;

    /// Primal responses of `sites` to `lambda` at dual iteration `k`.
    fn demands(&mut self, window: usize, k: usize, lambda: &[f64], sites: &[usize]) -> Result<Vec<Response>>;

    /// Applies the final commitments and collects their outcomes.
    fn finish(&mut self, histories: &[Vec<Commitment>]) -> Result<Vec<Result<Option<WindowOutcome>>>>;
}

/// In-process bus over owned agents.
pub struct LocalBus {
    agents: Vec<Box<dyn SiteAgent>>,
    models: Vec<Option<PwlUtility>>,
    z: f64,
}

impl LocalBus {
    pub fn new(agents: Vec<Box<dyn SiteAgent>>) -> Self {
        let n = agents.len();
        Self { agents, models: vec![None; n], z: 0.0 }
    }

    pub fn into_agents(self) -> Vec<Box<dyn SiteAgent>> {
        self.agents
    }
}

impl SiteBus for LocalBus {
    fn sites(&self) -> usize {
        self.agents.len()
    }

    fn open_window(
        &mut self,
        window: usize,
        z: usize,
        histories: &[Vec<Commitment>],
    ) -> Result<Vec<Result<SiteReport>>> {
        self.z = z as f64;
        Ok(self
            .agents
            .iter_mut()
            .zip(histories)
            .zip(self.models.iter_mut())
            .map(|((agent, h), slot)| {
                let report = site_report(agent.as_mut(), window, h, z);
                *slot = report.as_ref().ok().map(|r| r.model.clone());
                report
            })
            .collect())
    }

    fn demands(&mut self, _window: usize, _k: usize, lambda: &[f64], sites: &[usize]) -> Result<Vec<Response>> {
        sites
            .iter()
            .map(|&l| {
                let model = self.models[l]
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("site {l} has no surrogate this window")))?;
                Ok(model.respond(lambda, &[self.z]))
            })
            .collect()
    }

    fn finish(&mut self, histories: &[Vec<Commitment>]) -> Result<Vec<Result<Option<WindowOutcome>>>> {
        Ok(self.agents.iter_mut().zip(histories).map(|(a, h)| a.sync(h)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub plan: HorizonPlan,
    /// Units of the shared resource available per epoch.
    pub z: usize,
    pub market: MarketConfig,
}

/// Everything decided and observed in one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub span: WindowSpan,
    pub models: Vec<PwlUtility>,
    pub samples: Vec<Vec<Estimate>>,
    /// Sites whose report failed; their previous surrogate was reused.
    pub stale: Vec<bool>,
    pub lambda: f64,
    /// Continuous market demands.
    pub demands: Vec<f64>,
    pub allocations: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub duality_gap: f64,
    pub market_trace: Vec<TraceRow>,
    /// Realized utility per site; NaN when the site did not report it.
    pub realized: Vec<f64>,
    pub trajectories: Vec<Vec<(u64, Histogram)>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub windows: Vec<WindowRecord>,
}

/// Largest budget a surrogate was fitted on.
fn budget_cap(model: &PwlUtility) -> usize {
    model.anchors().iter().map(|a| a.y[0]).fold(0.0, f64::max).round() as usize
}

/// Rounds market demands to whole units with `sum <= z`.
///
/// Demands are floored, then units are removed from the sites losing least
/// while over supply, and added to the sites gaining most while some site
/// gains from one more unit. Ties go to the lower site index.
pub fn integerize(demands: &[f64], models: &[PwlUtility], z: usize) -> Vec<usize> {
    let caps: Vec<usize> = models.iter().map(budget_cap).collect();
    let f = |l: usize, a: usize| models[l].evaluate(&[a as f64]);
    let mut alloc: Vec<usize> =
        demands.iter().zip(&caps).map(|(y, &c)| ((y.max(0.0) + 1e-9).floor() as usize).min(c)).collect();
    while alloc.iter().sum::<usize>() > z {
        let l = (0..alloc.len())
            .filter(|&l| alloc[l] > 0)
            .min_by(|&i, &j| (f(i, alloc[i]) - f(i, alloc[i] - 1)).total_cmp(&(f(j, alloc[j]) - f(j, alloc[j] - 1))))
            .expect("a positive allocation exists while over supply");
        alloc[l] -= 1;
    }
    while alloc.iter().sum::<usize>() < z {
        let best = (0..alloc.len())
            .filter(|&l| alloc[l] < caps[l])
            .map(|l| (l, f(l, alloc[l] + 1) - f(l, alloc[l])))
            .filter(|(_, g)| *g > 1e-12)
            .fold(None, |acc: Option<(usize, f64)>, (l, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((l, g)),
            });
        match best {
            Some((l, _)) => alloc[l] += 1,
            None => break,
        }
    }
    alloc
}

/// Runs the rolling-horizon loop over `bus`.
pub fn run_controller(bus: &mut dyn SiteBus, cfg: &ControllerConfig) -> Result<RunTrace> {
    cfg.plan.validate()?;
    let n = bus.sites();
    if n == 0 {
        return Err(Error::Config("a run needs at least one site".into()));
    }
    let z = cfg.z as f64;
    let mut histories: Vec<Vec<Commitment>> = vec![Vec::new(); n];
    let mut last: Vec<Option<PwlUtility>> = vec![None; n];
    let mut trace = RunTrace::default();

    for span in cfg.plan.windows() {
        let reports = bus.open_window(span.window, cfg.z, &histories)?;
        let mut models = Vec::with_capacity(n);
        let mut samples = Vec::with_capacity(n);
        let mut stale = vec![false; n];
        for (l, report) in reports.into_iter().enumerate() {
            match report {
                Ok(r) => {
                    if let (Some(prev), Some(rec)) = (r.previous, trace.windows.last_mut()) {
                        rec.realized[l] = prev.realized;
                        rec.trajectories[l] = prev.trajectory;
                    }
                    last[l] = Some(r.model.clone());
                    models.push(r.model);
                    samples.push(r.samples);
                }
                Err(e) => {
                    log::warn!("site {l} failed to report in window {}: {e}; reusing its last surrogate", span.window);
                    stale[l] = true;
                    models.push(last[l].clone().unwrap_or_else(|| PwlUtility::zero(1)));
                    samples.push(Vec::new());
                }
            }
        }

        let fresh: Vec<usize> = (0..n).filter(|&l| !stale[l]).collect();
        let slope = models.iter().map(|m| m.max_slope()).fold(0.0, f64::max);
        let alpha = cfg.market.alpha.unwrap_or_else(|| default_alpha(n, slope));
        let outcome = run_market_with(&[z], alpha, &cfg.market, |lambda, k| {
            let mut replies: Vec<Option<Response>> = vec![None; n];
            if !fresh.is_empty() {
                for (&l, r) in fresh.iter().zip(bus.demands(span.window, k, lambda, &fresh)?) {
                    replies[l] = Some(r);
                }
            }
            Ok(replies
                .into_iter()
                .enumerate()
                .map(|(l, r)| r.unwrap_or_else(|| models[l].respond(lambda, &[z])))
                .collect())
        })?;
        let demands: Vec<f64> = outcome.demands.iter().map(|y| y[0]).collect();
        let allocations = integerize(&demands, &models, cfg.z);
        for (h, &a) in histories.iter_mut().zip(&allocations) {
            h.push(Commitment { allocation: a, epochs: span.epochs });
        }
        trace.windows.push(WindowRecord {
            span,
            models,
            samples,
            stale,
            lambda: outcome.lambda[0],
            demands,
            allocations,
            iterations: outcome.iterations,
            converged: outcome.converged,
            duality_gap: outcome.duality_gap,
            market_trace: outcome.trace,
            realized: vec![f64::NAN; n],
            trajectories: vec![Vec::new(); n],
        });
    }

    let finals = bus.finish(&histories)?;
    if let Some(rec) = trace.windows.last_mut() {
        for (l, f) in finals.into_iter().enumerate() {
            match f {
                Ok(Some(o)) => {
                    rec.realized[l] = o.realized;
                    rec.trajectories[l] = o.trajectory;
                }
                Ok(None) => {}
                Err(e) => log::warn!("site {l} failed to report its final outcome: {e}"),
            }
        }
    }
    Ok(trace)
}

impl RunTrace {
    /// True when every window allocates at most `z` units.
    pub fn feasible(&self, z: usize) -> bool {
        self.windows.iter().all(|w| w.allocations.iter().sum::<usize>() <= z)
    }

    /// Windows in which the site with the clearly largest surrogate gain from
    /// one more unit, measured at its previous allocation, lost units.
    pub fn leader_violations(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for pair in self.windows.windows(2) {
            let (prev, cur) = (&pair[0], &pair[1]);
            let gains: Vec<f64> = cur
                .models
                .iter()
                .zip(&prev.allocations)
                .map(|(m, &a)| m.evaluate(&[a as f64 + 1.0]) - m.evaluate(&[a as f64]))
                .collect();
            let mut order: Vec<usize> = (0..gains.len()).collect();
            order.sort_by(|&i, &j| gains[j].total_cmp(&gains[i]));
            let leader = order[0];
            let runner_up = order.get(1).map_or(0.0, |&j| gains[j]);
            if gains[leader] > 1e-9
                && gains[leader] > runner_up + 1e-9
                && cur.allocations[leader] < prev.allocations[leader]
            {
                bad.push(cur.span.window);
            }
        }
        bad
    }

    /// Controller trace: `window, start, epochs, lambda, iterations,
    /// converged, alloc_0.., realized_0.., stale_0..`.
    pub fn write_controller_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.windows.first().map_or(0, |r| r.allocations.len());
        let mut header: Vec<String> =
            ["window", "start", "epochs", "lambda", "iterations", "converged"].iter().map(|s| s.to_string()).collect();
        header.extend((0..n).map(|l| format!("alloc_{l}")));
        header.extend((0..n).map(|l| format!("realized_{l}")));
        header.extend((0..n).map(|l| format!("stale_{l}")));
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.windows {
            let mut rec = vec![
                r.span.window.to_string(),
                r.span.start.to_string(),
                r.span.epochs.to_string(),
                format!("{:?}", r.lambda),
                r.iterations.to_string(),
                r.converged.to_string(),
            ];
            rec.extend(r.allocations.iter().map(|a| a.to_string()));
            rec.extend(r.realized.iter().map(|u| format!("{u:?}")));
            rec.extend(r.stale.iter().map(|s| s.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Market iterates of every window: `window, k, lambda, y_0.., excess`.
    pub fn write_market_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.windows.first().map_or(0, |r| r.allocations.len());
        let mut header = vec!["window".to_string(), "k".into(), "lambda".into()];
        header.extend((0..n).map(|l| format!("y_{l}")));
        header.push("excess".into());
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.windows {
            for row in &r.market_trace {
                let mut rec = vec![r.span.window.to_string(), row.k.to_string(), format!("{:?}", row.lambda[0])];
                rec.extend(row.demands.iter().map(|y| format!("{:?}", y[0])));
                rec.push(format!("{:?}", row.excess[0]));
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Per-window surrogates: `window, site, y, mean, stderr, n, fitted`.
    pub fn write_surrogate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window", "site", "y", "mean", "stderr", "n", "fitted"]).map_err(csv_err)?;
        for r in &self.windows {
            for (l, (samples, model)) in r.samples.iter().zip(&r.models).enumerate() {
                for (b, e) in samples.iter().enumerate() {
                    out.write_record([
                        r.span.window.to_string(),
                        l.to_string(),
                        b.to_string(),
                        format!("{:?}", e.mean),
                        format!("{:?}", e.stderr),
                        e.n.to_string(),
                        format!("{:?}", model.evaluate(&[b as f64])),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Ground-truth status after every epoch: `epoch, site, code_0..code_4`.
    pub fn write_outcome_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "site", "code_0", "code_1", "code_2", "code_3", "code_4"]).map_err(csv_err)?;
        for r in &self.windows {
            for (l, traj) in r.trajectories.iter().enumerate() {
                for (epoch, h) in traj {
                    let mut rec = vec![epoch.to_string(), l.to_string()];
                    rec.extend(h.iter().map(|c| c.to_string()));
                    out.write_record(&rec).map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}
