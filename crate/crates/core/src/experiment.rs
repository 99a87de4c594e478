//! Batch experiments over configured sites: surrogate sample grids and
//! policy comparisons.

use std::io::Write;

use crate::config::{ExperimentConfig, SiteModel};
use crate::contagion::csv_err;
use crate::error::{Error, Result};
use crate::market::SiteUtility;
use crate::policy::{evaluate_utility, Scenario};
use crate::rng::{derive, labels};
use crate::stats::{Estimate, PairedTest};

/// Utility estimates of one site over the budget grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteEvaluation {
    pub site: usize,
    pub name: String,
    /// `(budget, estimate)` in grid order.
    pub points: Vec<(usize, Estimate)>,
}

/// Estimates `F(y)` for every configured site and budget.
///
/// Replica `r` of site `l` uses the same random numbers at every budget.
pub fn evaluate_sites(cfg: &ExperimentConfig) -> Result<Vec<SiteEvaluation>> {
    let plan = cfg.plan();
    let ev = &cfg.evaluate;
    if ev.replicas == 0 {
        return Err(Error::Config("evaluate.replicas must be positive".into()));
    }
    if ev.budgets.is_empty() {
        return Err(Error::Config("evaluate.budgets is empty".into()));
    }
    let sites = selected(cfg, ev.sites.as_deref())?;
    let mut out = Vec::with_capacity(sites.len());
    for l in sites {
        let built = cfg.build_site(l)?;
        let seed = derive(built.seed, labels::EVALUATE);
        let points = match &built.model {
            SiteModel::Pandemic(sc) => {
                let policy = cfg.policy_for(sc)?;
                let init = |r: u64| Ok(sc.initial_state(derive(r, labels::INITIAL)));
                grid(&ev.budgets, |y| {
                    evaluate_utility(sc, &policy, &init, y, plan.horizon, plan.gamma, ev.replicas, seed)
                        .map(|e| e.estimate)
                })?
            }
            SiteModel::Wildfire(sc) => {
                let policy = cfg.policy_for(sc)?;
                let init = |r: u64| Ok(sc.initial_state(derive(r, labels::INITIAL)));
                grid(&ev.budgets, |y| {
                    evaluate_utility(sc, &policy, &init, y, plan.horizon, plan.gamma, ev.replicas, seed)
                        .map(|e| e.estimate)
                })?
            }
            SiteModel::Synthetic(u) => grid(&ev.budgets, |y| Ok(Estimate::exact(u.value(&[y as f64]))))?,
        };
        out.push(SiteEvaluation { site: l, name: built.name, points });
    }
    Ok(out)
}

fn grid(budgets: &[usize], mut f: impl FnMut(usize) -> Result<Estimate>) -> Result<Vec<(usize, Estimate)>> {
    budgets.iter().map(|&y| f(y).map(|e| (y, e))).collect()
}

fn selected(cfg: &ExperimentConfig, sites: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = cfg.site_count();
    match sites {
        None => Ok((0..n).collect()),
        Some(list) => {
            if let Some(bad) = list.iter().find(|&&l| l >= n) {
                return Err(Error::Config(format!("site index {bad} out of range for {n} sites")));
            }
            Ok(list.to_vec())
        }
    }
}

/// Evaluation CSV: `site,name,y,mean,stderr,n`.
pub fn write_evaluate_csv<W: Write>(rows: &[SiteEvaluation], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["site", "name", "y", "mean", "stderr", "n"]).map_err(csv_err)?;
    for s in rows {
        for (y, e) in &s.points {
            out.write_record([
                s.site.to_string(),
                s.name.clone(),
                y.to_string(),
                format!("{:?}", e.mean),
                format!("{:?}", e.stderr),
                e.n.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-replica cost of one policy at one site.
///
/// Cost is undiscounted negative utility over the comparison horizon, which
/// for pandemic sites is the number of deaths.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub site: usize,
    pub name: String,
    pub policy: String,
    /// Indexed by replica; replica `r` shares its random numbers across
    /// policies, so outcomes of two policies can be paired.
    pub costs: Vec<f64>,
}

impl PolicyOutcome {
    pub fn estimate(&self) -> Estimate {
        Estimate::from_samples(&self.costs)
    }
}

/// Runs every configured policy at every selected site for
/// `compare.epochs` epochs with `compare.budget` units per epoch.
pub fn compare_policies(cfg: &ExperimentConfig) -> Result<Vec<PolicyOutcome>> {
    let c = &cfg.compare;
    if c.replicas == 0 || c.rollout_replicas == Some(0) {
        return Err(Error::Config("compare replicas must be positive".into()));
    }
    if c.policies.is_empty() {
        return Err(Error::Config("compare.policies is empty".into()));
    }
    if c.epochs == 0 {
        return Err(Error::Config("compare.epochs must be positive".into()));
    }
    let mut out = Vec::new();
    for l in selected(cfg, c.sites.as_deref())? {
        let built = cfg.build_site(l)?;
        let seed = derive(built.seed, labels::COMPARE);
        for name in &c.policies {
            let replicas = if name == "rollout" { c.rollout_replicas.unwrap_or(c.replicas) } else { c.replicas };
            let costs = match &built.model {
                SiteModel::Pandemic(sc) => costs_for(cfg, sc, name, replicas, seed, |r| sc.initial_state(r))?,
                SiteModel::Wildfire(sc) => costs_for(cfg, sc, name, replicas, seed, |r| sc.initial_state(r))?,
                SiteModel::Synthetic(_) => {
                    return Err(Error::Config("compare-policies needs a pandemic or wildfire config".into()))
                }
            };
            out.push(PolicyOutcome { site: l, name: built.name.clone(), policy: name.clone(), costs });
        }
    }
    Ok(out)
}

fn costs_for<S: Scenario + 'static>(
    cfg: &ExperimentConfig,
    scenario: &S,
    name: &str,
    replicas: usize,
    seed: u64,
    initial: impl Fn(u64) -> S::State + Sync,
) -> Result<Vec<f64>> {
    let c = &cfg.compare;
    let policy = cfg.named_policy(scenario, name)?;
    let init = |r: u64| Ok(initial(derive(r, labels::INITIAL)));
    let e = evaluate_utility(scenario, &policy, &init, c.budget, c.epochs, 1.0, replicas, seed)?;
    Ok(e.samples.into_iter().map(|u| -u).collect())
}

/// Comparison CSV: `site,name,policy,replicas,mean,stderr,normalized,z_vs_previous`.
///
/// `normalized` divides by the mean cost of the site's first listed policy.
/// `z_vs_previous` is the paired z statistic of the previous policy's cost
/// minus this one's over their shared replicas; positive means this policy
/// is better.
pub fn write_compare_csv<W: Write>(rows: &[PolicyOutcome], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["site", "name", "policy", "replicas", "mean", "stderr", "normalized", "z_vs_previous"])
        .map_err(csv_err)?;
    let mut reference = f64::NAN;
    let mut previous: Option<&PolicyOutcome> = None;
    for row in rows {
        let e = row.estimate();
        let prev = previous.filter(|p| p.site == row.site);
        if prev.is_none() {
            reference = e.mean;
        }
        let z = prev.map_or(String::new(), |p| format!("{:?}", paired(p, row).z()));
        let normalized = if reference != 0.0 { e.mean / reference } else { f64::NAN };
        out.write_record([
            row.site.to_string(),
            row.name.clone(),
            row.policy.clone(),
            e.n.to_string(),
            format!("{:?}", e.mean),
            format!("{:?}", e.stderr),
            format!("{normalized:?}"),
            z,
        ])
        .map_err(csv_err)?;
        previous = Some(row);
    }
    out.flush()?;
    Ok(())
}

/// Paired test of `a` minus `b` over the replicas both have.
pub fn paired(a: &PolicyOutcome, b: &PolicyOutcome) -> PairedTest {
    let n = a.costs.len().min(b.costs.len());
    PairedTest::new(&a.costs[..n], &b.costs[..n])
}
