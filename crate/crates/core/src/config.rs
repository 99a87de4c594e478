//! Experiment configuration.
//!
//! Configs are TOML with `schema_version = 1`; unknown keys are rejected.
//! All randomness flows from the root `seed`: site `l` draws from
//! `site_seed = derive(derive(seed, SITE), l)`, and its graph, initial state,
//! ground truth and estimates use `derive(site_seed, LABEL)` with the labels
//! in [`crate::rng::labels`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contagion::Mode;
use crate::error::{Error, Result};
use crate::horizon::{AgentSettings, ControllerConfig, HorizonPlan, ScenarioAgent, SiteAgent, SmoothAgent};
use crate::market::{MarketConfig, SmoothScalar};
use crate::pandemic::{self, DemographicSpec, DiseaseParams, PandemicScenario, LOCATION_PRESETS};
use crate::policy::{baseline_policy, rollout_policy, BaselineKind, Policy, Scenario};
use crate::rng::{derive, labels};
use crate::wildfire::{GridParams, GridSpec, RewardWeights, WildfireScenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Pandemic,
    Wildfire,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: ExperimentMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub horizon: HorizonSection,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pandemic: Option<PandemicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wildfire: Option<WildfireSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

/// Unset fields take mode defaults: `T = 10, tau = 5, gamma = 0.99` for the
/// pandemic, `T = 24, tau = 10, gamma = 0.95` for wildfire.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    /// Units of the shared resource per epoch.
    pub z: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        let m = MarketConfig::default();
        Self { z: 6, alpha: None, max_iters: m.max_iters, tol: m.tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Base heuristic; defaults to `old_first` (pandemic) or `nearest_fire`
    /// (wildfire).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<BaselineKind>,
    /// Wrap the base in one-step rollout.
    pub rollout: bool,
    pub n_rollouts: usize,
    pub rollout_horizon: usize,
    pub candidates: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { kind: None, rollout: false, n_rollouts: 8, rollout_horizon: 10, candidates: 8 }
    }
}

/// Monte Carlo settings of the per-window surrogate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub replicas: usize,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self { replicas: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub budgets: Vec<usize>,
    pub replicas: usize,
    /// Sites to evaluate; all when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { budgets: (0..=5).collect(), replicas: 1000, sites: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Baseline names, or `rollout` for rollout over the configured base.
    pub policies: Vec<String>,
    pub replicas: usize,
    pub epochs: usize,
    pub budget: usize,
    /// Replicas for rollout policies, which cost far more per replica.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            policies: vec!["none".into(), "random".into(), "old_first".into()],
            replicas: 10_000,
            epochs: 50,
            budget: 1,
            rollout_replicas: None,
            sites: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PandemicSection {
    pub dt: f64,
    pub initial_infected: usize,
    pub disease: DiseaseParams,
    /// Allowed gap between the tuned and the target average degree.
    pub degree_tolerance: f64,
    pub sites: Vec<PandemicSite>,
}

impl Default for PandemicSection {
    fn default() -> Self {
        Self {
            dt: 0.1,
            initial_infected: 5,
            disease: DiseaseParams::default(),
            degree_tolerance: 0.1,
            sites: Vec::new(),
        }
    }
}

/// A preset name (`Loc.1` .. `Loc.5`), or explicit group counts with either
/// an edge probability or a target degree.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PandemicSite {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_teen: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_adult: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_elderly: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub er_edge_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_degree: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WildfireSection {
    pub dt: f64,
    pub max_step: usize,
    pub initial_fires: usize,
    pub weights: RewardWeights,
    pub sites: Vec<WildfireSite>,
}

impl Default for WildfireSection {
    fn default() -> Self {
        Self { dt: 0.1, max_step: 1, initial_fires: 1, weights: RewardWeights::default(), sites: Vec::new() }
    }
}

/// Either a preset name (`Loc.1`, `Loc.2`) or explicit grid parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WildfireSite {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub sites: Vec<SyntheticSite>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSite {
    /// `log` for `c ln(1 + y)`, `quadratic` for `b y - a y^2 / 2`.
    pub utility: SyntheticKind,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Log,
    Quadratic,
}

impl SyntheticSite {
    pub fn utility(&self) -> SmoothScalar {
        match self.utility {
            SyntheticKind::Log => SmoothScalar::Log { c: self.c },
            SyntheticKind::Quadratic => SmoothScalar::Quadratic { a: self.a, b: self.b },
        }
    }
}

/// A site's simulator or closed-form utility.
pub enum SiteModel {
    Pandemic(PandemicScenario),
    Wildfire(WildfireScenario),
    Synthetic(SmoothScalar),
}

pub struct BuiltSite {
    pub name: String,
    pub seed: u64,
    pub cap: usize,
    pub model: SiteModel,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

pub fn site_seed(root: u64, site: usize) -> u64 {
    derive(derive(root, labels::SITE), site as u64)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Serialized form written to run manifests; loads back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let present = [self.pandemic.is_some(), self.wildfire.is_some(), self.synthetic.is_some()];
        let wanted = match self.mode {
            ExperimentMode::Pandemic => 0,
            ExperimentMode::Wildfire => 1,
            ExperimentMode::Synthetic => 2,
        };
        if !present[wanted] {
            return Err(Error::Config(format!("mode {:?} needs a [{}] section", self.mode, self.mode_name())));
        }
        if present.iter().enumerate().any(|(i, p)| *p && i != wanted) {
            return Err(Error::Config("only the section matching `mode` may be present".into()));
        }
        if self.site_count() == 0 {
            return Err(Error::Config("at least one site is required".into()));
        }
        self.plan().validate()?;
        if self.estimate.replicas < 1 || self.evaluate.replicas < 1 || self.compare.replicas < 1 {
            return Err(Error::Config("replica counts must be at least 1".into()));
        }
        if self.compare.rollout_replicas == Some(0) {
            return Err(Error::Config("replica counts must be at least 1".into()));
        }
        if !(self.market.tol > 0.0) {
            return Err(Error::Config("market tolerance must be positive".into()));
        }
        if let Some(kind) = self.policy.kind {
            if let Some(mode) = self.contagion_mode() {
                if !kind.supports(mode) {
                    return Err(Error::Config(format!("policy '{kind}' is not available in {} mode", mode.as_str())));
                }
            }
        }
        for name in &self.compare.policies {
            if name != "rollout" {
                name.parse::<BaselineKind>()?;
            }
        }
        for list in [&self.evaluate.sites, &self.compare.sites].into_iter().flatten() {
            if let Some(&bad) = list.iter().find(|&&l| l >= self.site_count()) {
                return Err(Error::Config(format!("site index {bad} out of range")));
            }
        }
        Ok(())
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            ExperimentMode::Pandemic => "pandemic",
            ExperimentMode::Wildfire => "wildfire",
            ExperimentMode::Synthetic => "synthetic",
        }
    }

    pub fn contagion_mode(&self) -> Option<Mode> {
        match self.mode {
            ExperimentMode::Pandemic => Some(Mode::Pandemic),
            ExperimentMode::Wildfire => Some(Mode::Wildfire),
            ExperimentMode::Synthetic => None,
        }
    }

    pub fn site_count(&self) -> usize {
        match self.mode {
            ExperimentMode::Pandemic => self.pandemic.as_ref().map_or(0, |p| p.sites.len()),
            ExperimentMode::Wildfire => self.wildfire.as_ref().map_or(0, |w| w.sites.len()),
            ExperimentMode::Synthetic => self.synthetic.as_ref().map_or(0, |s| s.sites.len()),
        }
    }

    pub fn plan(&self) -> HorizonPlan {
        let (t, tau, gamma, epochs) = match self.mode {
            ExperimentMode::Wildfire => (24, 10, 0.95, 40),
            _ => (10, 5, 0.99, 50),
        };
        let h = &self.horizon;
        HorizonPlan {
            horizon: h.horizon.unwrap_or(t),
            period: h.period.unwrap_or(tau),
            gamma: h.gamma.unwrap_or(gamma),
            epochs: h.epochs.unwrap_or(epochs),
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            plan: self.plan(),
            z: self.market.z,
            market: MarketConfig { alpha: self.market.alpha, max_iters: self.market.max_iters, tol: self.market.tol },
        }
    }

    pub fn base_kind(&self) -> BaselineKind {
        self.policy.kind.unwrap_or(match self.mode {
            ExperimentMode::Wildfire => BaselineKind::NearestFire,
            _ => BaselineKind::OldFirst,
        })
    }

    /// The configured policy for `scenario`.
    pub fn policy_for<S: Scenario + 'static>(&self, scenario: &S) -> Result<Box<dyn Policy<S>>> {
        self.named_policy(scenario, if self.policy.rollout { "rollout" } else { self.base_kind().as_str() })
    }

    /// A baseline by name, or `rollout` over the configured base.
    pub fn named_policy<S: Scenario + 'static>(&self, scenario: &S, name: &str) -> Result<Box<dyn Policy<S>>> {
        if name == "rollout" {
            let base = baseline_policy(scenario, self.base_kind())?;
            let p = &self.policy;
            let gamma = self.plan().gamma;
            return Ok(Box::new(rollout_policy(base, p.n_rollouts, p.rollout_horizon, gamma, p.candidates)?));
        }
        Ok(Box::new(baseline_policy(scenario, name.parse()?)?))
    }

    pub fn build_site(&self, site: usize) -> Result<BuiltSite> {
        if site >= self.site_count() {
            return Err(Error::Config(format!("site index {site} out of range")));
        }
        let seed = site_seed(self.seed, site);
        let z = self.market.z;
        match self.mode {
            ExperimentMode::Pandemic => {
                let sec = self.pandemic.as_ref().expect("validated");
                let s = &sec.sites[site];
                let (spec, target, name) = pandemic_spec(s)?;
                let graph_seed = derive(seed, labels::GRAPH);
                let social = match target {
                    Some(t) => pandemic::tune_er_prob(&spec, &sec.disease, t, sec.degree_tolerance, graph_seed)?.1,
                    None => pandemic::generate_social_graph(&spec, &sec.disease, graph_seed)?,
                };
                let scenario = PandemicScenario::new(social, sec.dt, sec.initial_infected)?;
                Ok(BuiltSite { name, seed, cap: s.cap.unwrap_or(z), model: SiteModel::Pandemic(scenario) })
            }
            ExperimentMode::Wildfire => {
                let sec = self.wildfire.as_ref().expect("validated");
                let s = &sec.sites[site];
                let (params, name) = match (&s.preset, &s.grid) {
                    (Some(p), None) => {
                        let idx = preset_index(p, 2)?;
                        (GridParams::preset(idx).expect("preset exists"), p.clone())
                    }
                    (None, Some(g)) => (g.clone(), format!("site{site}")),
                    _ => {
                        return Err(Error::Config(format!("wildfire site {site} needs exactly one of preset or grid")))
                    }
                };
                let spec = GridSpec::generate(&params, derive(seed, labels::GRAPH))?;
                let scenario = WildfireScenario::new(spec, sec.dt, sec.weights, sec.max_step, sec.initial_fires)?;
                Ok(BuiltSite { name, seed, cap: s.cap.unwrap_or(z), model: SiteModel::Wildfire(scenario) })
            }
            ExperimentMode::Synthetic => {
                let s = self.synthetic.as_ref().expect("validated").sites[site];
                Ok(BuiltSite {
                    name: format!("site{site}"),
                    seed,
                    cap: s.cap.unwrap_or(z),
                    model: SiteModel::Synthetic(s.utility()),
                })
            }
        }
    }

    /// The site agent for `site`, starting from its seeded initial state.
    pub fn agent(&self, site: usize) -> Result<Box<dyn SiteAgent>> {
        let built = self.build_site(site)?;
        let plan = self.plan();
        let settings = AgentSettings {
            horizon: plan.horizon,
            gamma: plan.gamma,
            replicas: self.estimate.replicas,
            cap: built.cap,
            seed: built.seed,
        };
        let initial_seed = derive(built.seed, labels::INITIAL);
        Ok(match built.model {
            SiteModel::Pandemic(sc) => {
                let policy = self.policy_for(&sc)?;
                let initial = sc.initial_state(initial_seed);
                Box::new(ScenarioAgent::new(sc, policy, initial, settings))
            }
            SiteModel::Wildfire(sc) => {
                let policy = self.policy_for(&sc)?;
                let initial = sc.initial_state(initial_seed);
                Box::new(ScenarioAgent::new(sc, policy, initial, settings))
            }
            SiteModel::Synthetic(u) => Box::new(SmoothAgent::new(u, built.cap)),
        })
    }
}

fn preset_index(name: &str, count: usize) -> Result<usize> {
    name.strip_prefix("Loc.")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|i| (1..=count).contains(i))
        .ok_or_else(|| Error::Config(format!("unknown location preset '{name}'")))
}

/// Demographics, optional degree target and display name of a site.
fn pandemic_spec(s: &PandemicSite) -> Result<(DemographicSpec, Option<f64>, String)> {
    if let Some(p) = &s.preset {
        if s.n_teen.is_some() || s.n_adult.is_some() || s.n_elderly.is_some() {
            return Err(Error::Config("a preset site cannot also set group counts".into()));
        }
        let loc = LOCATION_PRESETS[preset_index(p, LOCATION_PRESETS.len())? - 1];
        let spec = DemographicSpec::new(loc.teen, loc.adult, loc.elderly, s.er_edge_prob.unwrap_or(0.0));
        let target = if s.er_edge_prob.is_some() {
            None
        } else {
            Some(s.target_degree.unwrap_or(if loc.elderly > 0 { loc.ead } else { loc.ad }))
        };
        return Ok((spec, target, loc.name.to_string()));
    }
    let (Some(t), Some(a), Some(e)) = (s.n_teen, s.n_adult, s.n_elderly) else {
        return Err(Error::Config("a pandemic site needs a preset or all three group counts".into()));
    };
    match (s.er_edge_prob, s.target_degree) {
        (Some(p), None) => Ok((DemographicSpec::new(t, a, e, p), None, format!("{t}/{a}/{e}"))),
        (None, Some(d)) => Ok((DemographicSpec::new(t, a, e, 0.0), Some(d), format!("{t}/{a}/{e}"))),
        _ => Err(Error::Config("set exactly one of er_edge_prob and target_degree".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
schema_version = 1
mode = "synthetic"
seed = 7

[market]
z = 4

[[synthetic.sites]]
utility = "log"
c = 1.0

[[synthetic.sites]]
utility = "quadratic"
a = 1.0
b = 3.0
cap = 3
"#;

    #[test]
    fn synthetic_config_loads_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SYNTH).unwrap();
        assert_eq!(cfg.site_count(), 2);
        assert_eq!(cfg.plan(), HorizonPlan { horizon: 10, period: 5, gamma: 0.99, epochs: 50 });
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.agent(1).unwrap().cap(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = SYNTH.replace("seed = 7", "seed = 7\nsede = 8");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_version_and_sections_are_checked() {
        assert!(matches!(
            ExperimentConfig::from_toml(&SYNTH.replace("schema_version = 1", "schema_version = 2")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(&SYNTH.replace("mode = \"synthetic\"", "mode = \"pandemic\"")),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml(&SYNTH.replace("mode = \"synthetic\"", "mode = \"volcano\"")).is_err());
    }

    #[test]
    fn pandemic_preset_builds_connected_graph() {
        let text = "schema_version = 1\nmode = \"pandemic\"\n[[pandemic.sites]]\npreset = \"Loc.2\"\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let built = cfg.build_site(0).unwrap();
        let SiteModel::Pandemic(sc) = built.model else { panic!("pandemic site expected") };
        assert_eq!(sc.graph().node_count(), 100);
        assert!(sc.social.is_connected());
        assert!((sc.social.elderly_average_degree() - 6.7).abs() <= 0.1 + 1e-12);
    }

    #[test]
    fn wildfire_rejects_pandemic_policy() {
        let text = "schema_version = 1\nmode = \"wildfire\"\n[policy]\nkind = \"old_first\"\n[[wildfire.sites]]\npreset = \"Loc.1\"\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
    }
}
