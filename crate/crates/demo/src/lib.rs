//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes and returns plain strings and numbers so the page
//! needs no bundler: it loads the `wasm-bindgen --target web` output directly.

use std::fmt::Write;

use wasm_bindgen::prelude::*;

use sdnum::config::{ExperimentConfig, SiteModel};
use sdnum::contagion::NodeState;
use sdnum::error::Result;
use sdnum::fit::{fit_scalar_pairs, PwlUtility};
use sdnum::horizon::integerize;
use sdnum::market::{run_market, MarketConfig, SiteUtility, SmoothScalar};
use sdnum::policy::{baseline_policy, BaselineKind, Policy, Scenario};
use sdnum::rng::{derive, labels, policy_rng};

fn to_js(e: sdnum::error::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Simulates a preset wildfire location under the nearest-fire heuristic.
///
/// The first line is `width height`; each following line is one epoch as
/// `cells|unit cells|reward`, with one character per cell: `.` unburnt,
/// `*` burning, `#` burnt out, `o` extinguished.
pub fn wildfire_frames_text(location: u32, units: u32, epochs: u32, seed: u32) -> Result<String> {
    let toml = format!(
        "schema_version = 1\nmode = \"wildfire\"\nseed = {seed}\n[[wildfire.sites]]\npreset = \"Loc.{location}\"\n"
    );
    let cfg = ExperimentConfig::from_toml(&toml)?;
    let built = cfg.build_site(0)?;
    let SiteModel::Wildfire(sc) = built.model else { unreachable!("wildfire config builds a wildfire site") };
    let budget = units as usize;
    let policy = baseline_policy(&sc, BaselineKind::NearestFire)?;
    let mut rng = policy_rng(derive(built.seed, labels::POLICY));
    let key = derive(built.seed, labels::GROUND);
    let mut state = sc.prepare(&sc.initial_state(derive(built.seed, labels::INITIAL)), budget);
    let mut out = format!("{} {}\n", sc.spec.width, sc.spec.height);
    let mut reward = 0.0;
    for t in 0..=epochs {
        let cells: String = state
            .cells
            .states
            .iter()
            .map(|s| match s {
                NodeState::Susceptible => '.',
                NodeState::Infected => '*',
                NodeState::Dead => '#',
                _ => 'o',
            })
            .collect();
        let pos: Vec<String> = state.units.positions.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{cells}|{}|{reward}", pos.join(","));
        if t == epochs {
            break;
        }
        let action = policy.decide(&sc, &state, budget, &mut rng)?;
        (state, reward) = sc.step(&state, &action, key)?;
    }
    Ok(out)
}

/// Fits a concave non-decreasing curve to `y,u` lines and returns the model
/// text followed by a blank line and `y,u,fitted` rows.
pub fn fit_text(samples: &str) -> Result<String> {
    let mut pairs = Vec::new();
    for (i, line) in samples.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || sdnum::error::Error::Parse { line: i + 1, message: format!("expected `y,u`, got `{line}`") };
        let (y, u) = line.split_once(',').ok_or_else(bad)?;
        pairs.push((y.trim().parse::<f64>().map_err(|_| bad())?, u.trim().parse::<f64>().map_err(|_| bad())?));
    }
    let fit = fit_scalar_pairs(&pairs)?;
    let mut out = fit.model.to_text();
    out.push('\n');
    for (y, u) in &pairs {
        let _ = writeln!(out, "{y},{u},{}", fit.model.evaluate(&[*y]));
    }
    Ok(out)
}

/// Splits `z` whole units between sites with utilities `c ln(1 + y)`.
///
/// Each site is fitted at the integers up to `z`, the market finds the price,
/// and the demands are rounded to a feasible allocation. Returns `price`
/// then one `c,demand,allocation` line per site.
pub fn allocate_text(weights: &str, z: u32) -> Result<String> {
    let cs = weights
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| sdnum::error::Error::Config(format!("bad weight `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if cs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(sdnum::error::Error::Config("weights must be non-negative".into()));
    }
    let z = z as usize;
    let models = cs
        .iter()
        .map(|&c| {
            let exact = SmoothScalar::Log { c };
            let pairs: Vec<(f64, f64)> = (0..=z.max(1)).map(|y| (y as f64, exact.value(&[y as f64]))).collect();
            Ok(fit_scalar_pairs(&pairs)?.model)
        })
        .collect::<Result<Vec<PwlUtility>>>()?;
    let refs: Vec<&dyn SiteUtility> = models.iter().map(|m| m as &dyn SiteUtility).collect();
    let market = run_market(&refs, &[z as f64], &MarketConfig::default())?;
    let demands: Vec<f64> = market.demands.iter().map(|d| d[0]).collect();
    let alloc = integerize(&demands, &models, z);
    let mut out = format!("{}\n", market.lambda[0]);
    for ((c, d), a) in cs.iter().zip(&demands).zip(&alloc) {
        let _ = writeln!(out, "{c},{d},{a}");
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn wildfire_frames(location: u32, units: u32, epochs: u32, seed: u32) -> std::result::Result<String, JsValue> {
    wildfire_frames_text(location, units, epochs, seed).map_err(to_js)
}

#[wasm_bindgen]
pub fn fit(samples: &str) -> std::result::Result<String, JsValue> {
    fit_text(samples).map_err(to_js)
}

#[wasm_bindgen]
pub fn allocate(weights: &str, z: u32) -> std::result::Result<String, JsValue> {
    allocate_text(weights, z).map_err(to_js)
}
