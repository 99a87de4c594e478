//! Primal-dual resource market.
//!
//! Each site answers a price `lambda` with the demand maximizing
//! `F(y) - lambda . y` over `0 <= y <= cap`; the coordinator moves the price
//! along the excess demand, `lambda' = [lambda + alpha (sum_l y_l - z)]^+`,
//! until supply and demand balance.

use std::io::Write;

use crate::contagion::csv_err;
use crate::error::{Error, Result};
use crate::fit::PwlUtility;

/// A site's answer to a price.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub y: Vec<f64>,
    /// Utility at `y`, reported so the coordinator can track the primal
    /// objective without learning anything else about the site.
    pub value: f64,
    /// The cap bound the demand; the uncapped response would be larger.
    pub capped: bool,
}

pub trait SiteUtility: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    /// A supergradient at `y`.
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
    /// Maximizer of `value(y) - price . y` over `0 <= y <= cap`, smallest
    /// on ties.
    fn respond(&self, price: &[f64], cap: &[f64]) -> Response;
    /// Upper bound on any gradient component, used to pick a step size.
    fn max_slope(&self) -> f64;
}

const TIE: f64 = 1e-12;

impl SiteUtility for PwlUtility {
    fn dim(&self) -> usize {
        PwlUtility::dim(self)
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.evaluate(y)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let a = self
            .anchors()
            .iter()
            .min_by(|a, b| plane(a, y).total_cmp(&plane(b, y)))
            .expect("models have at least one anchor");
        a.g.clone()
    }

    fn respond(&self, price: &[f64], cap: &[f64]) -> Response {
        if self.dim() == 1 {
            scalar_pwl_response(self, price[0], cap[0])
        } else {
            supergradient_response(self, price, cap)
        }
    }

    fn max_slope(&self) -> f64 {
        PwlUtility::max_slope(self)
    }
}

fn plane(a: &crate::fit::Anchor, y: &[f64]) -> f64 {
    a.u_hat + a.g.iter().zip(y).zip(&a.y).map(|((g, p), q)| g * (p - q)).sum::<f64>()
}

/// Scans the breakpoints of the lower envelope: the optimum of a concave
/// piecewise-linear objective on an interval sits at a breakpoint or an end.
fn scalar_pwl_response(model: &PwlUtility, price: f64, cap: f64) -> Response {
    let anchors = model.anchors();
    let mut points = vec![0.0, cap];
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            let dg = a.g[0] - b.g[0];
            if dg != 0.0 {
                let y = (b.u_hat - b.g[0] * b.y[0] - a.u_hat + a.g[0] * a.y[0]) / dg;
                if y > 0.0 && y < cap {
                    points.push(y);
                }
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let net = |y: f64| model.evaluate(&[y]) - price * y;
    let best = points.iter().map(|&y| net(y)).fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE * best.abs().max(1.0);
    let y = points.iter().copied().find(|&y| net(y) >= best - tol).unwrap_or(0.0);
    // right derivative at the cap: slope of the planes tight there
    let v_cap = model.evaluate(&[cap]);
    let right_slope = anchors
        .iter()
        .filter(|a| (plane(a, &[cap]) - v_cap).abs() <= TIE * v_cap.abs().max(1.0))
        .map(|a| a.g[0])
        .fold(f64::INFINITY, f64::min);
    Response { y: vec![y], value: model.evaluate(&[y]), capped: y == cap && right_slope > price }
}

/// Projected supergradient ascent on the box, keeping the best iterate.
fn supergradient_response<U: SiteUtility + ?Sized>(site: &U, price: &[f64], cap: &[f64]) -> Response {
    let d = price.len();
    let net = |y: &[f64]| site.value(y) - price.iter().zip(y).map(|(p, v)| p * v).sum::<f64>();
    let mut y = vec![0.0; d];
    let mut best = (net(&y), y.clone());
    let span = cap.iter().fold(0.0f64, |m, c| m.max(*c)).max(1e-12);
    for k in 0..20_000 {
        let g = site.gradient(&y);
        let step = span / ((k + 1) as f64).sqrt();
        let mut moved = 0.0f64;
        for j in 0..d {
            let next = (y[j] + step * (g[j] - price[j]) / (1.0 + site.max_slope())).clamp(0.0, cap[j]);
            moved = moved.max((next - y[j]).abs());
            y[j] = next;
        }
        let v = net(&y);
        if v > best.0 + TIE * v.abs().max(1.0) {
            best = (v, y.clone());
        }
        if moved <= 1e-9 {
            break;
        }
    }
    let y = best.1;
    let capped = y.iter().zip(cap).zip(site.gradient(&y)).zip(price).any(|(((v, c), g), p)| v == c && g > *p);
    Response { value: site.value(&y), y, capped }
}

/// Smooth concave scalar utilities with closed-form responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothScalar {
    /// `c ln(1 + y)`
    Log { c: f64 },
    /// `b y - a y^2 / 2`
    Quadratic { a: f64, b: f64 },
}

impl SiteUtility for SmoothScalar {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, y: &[f64]) -> f64 {
        match *self {
            SmoothScalar::Log { c } => c * y[0].ln_1p(),
            SmoothScalar::Quadratic { a, b } => b * y[0] - 0.5 * a * y[0] * y[0],
        }
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        vec![match *self {
            SmoothScalar::Log { c } => c / (1.0 + y[0]),
            SmoothScalar::Quadratic { a, b } => b - a * y[0],
        }]
    }

    fn respond(&self, price: &[f64], cap: &[f64]) -> Response {
        let (p, cap) = (price[0], cap[0]);
        let free = match *self {
            SmoothScalar::Log { c } if p > 0.0 => c / p - 1.0,
            SmoothScalar::Log { .. } => f64::INFINITY,
            SmoothScalar::Quadratic { a, b } if a > 0.0 => (b - p) / a,
            SmoothScalar::Quadratic { b, .. } => {
                if b > p {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        };
        let y = free.clamp(0.0, cap);
        Response { y: vec![y], value: self.value(&[y]), capped: free > cap }
    }

    fn max_slope(&self) -> f64 {
        match *self {
            SmoothScalar::Log { c } => c,
            SmoothScalar::Quadratic { b, .. } => b.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub lambda: Vec<f64>,
    pub k: usize,
    pub alpha: f64,
    pub z: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
}

impl MarketState {
    pub fn new(z: Vec<f64>, alpha: f64) -> Self {
        Self { lambda: vec![0.0; z.len()], k: 0, alpha, z, demands: Vec::new() }
    }
}

/// Total demand minus supply, per resource.
pub fn excess_demand(demands: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = z.iter().map(|v| -v).collect();
    for y in demands {
        for (ej, yj) in e.iter_mut().zip(y) {
            *ej += yj;
        }
    }
    e
}

/// One projected dual step.
pub fn dual_update(state: &MarketState, demands: &[Vec<f64>]) -> MarketState {
    let excess = excess_demand(demands, &state.z);
    let lambda = state.lambda.iter().zip(&excess).map(|(l, e)| (l + state.alpha * e).max(0.0)).collect();
    MarketState { lambda, k: state.k + 1, alpha: state.alpha, z: state.z.clone(), demands: demands.to_vec() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig {
    /// Dual step; `None` picks `0.5 / (L * max slope)`.
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self { alpha: None, max_iters: 10_000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub lambda: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
    pub excess: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub lambda: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Best dual bound minus best feasible primal value seen.
    pub duality_gap: f64,
    pub alpha: f64,
    pub trace: Vec<TraceRow>,
}

impl MarketOutcome {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        write_market_trace(&self.trace, w)
    }
}

/// Market trace CSV: `k, lambda, y_0 .. y_{L-1}, excess` for scalar
/// resources; vector components are joined with `;`.
pub fn write_market_trace<W: Write>(trace: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let sites = trace.first().map_or(0, |r| r.demands.len());
    let mut header = vec!["k".to_string(), "lambda".to_string()];
    header.extend((0..sites).map(|l| format!("y_{l}")));
    header.push("excess".into());
    out.write_record(&header).map_err(csv_err)?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
    for r in trace {
        let mut rec = vec![r.k.to_string(), join(&r.lambda)];
        rec.extend(r.demands.iter().map(|y| join(y)));
        rec.push(join(&r.excess));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn converged(lambda: &[f64], excess: &[f64], tol: f64) -> bool {
    lambda.iter().zip(excess).all(|(l, e)| e.abs() <= tol || (*l <= tol && *e <= tol))
}

/// Runs the dual iteration against an arbitrary demand oracle.
///
/// `oracle(lambda, k)` returns one response per site. The same driver backs
/// the in-process market and the networked coordinator, so both produce
/// identical iterates for identical responses.
pub fn run_market_with<F>(z: &[f64], alpha: f64, cfg: &MarketConfig, mut oracle: F) -> Result<MarketOutcome>
where
    F: FnMut(&[f64], usize) -> Result<Vec<Response>>,
{
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("market step {alpha} must be positive")));
    }
    if z.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("supply must be non-negative".into()));
    }
    let mut state = MarketState::new(z.to_vec(), alpha);
    let mut trace = Vec::new();
    let mut best_dual = f64::INFINITY;
    let mut best_feasible: Option<(f64, Vec<f64>, Vec<Vec<f64>>)> = None;
    let mut prev_excess: Option<Vec<f64>> = None;
    loop {
        let replies = oracle(&state.lambda, state.k)?;
        let demands: Vec<Vec<f64>> = replies.iter().map(|r| r.y.clone()).collect();
        let excess = excess_demand(&demands, z);
        trace.push(TraceRow {
            k: state.k,
            lambda: state.lambda.clone(),
            demands: demands.clone(),
            excess: excess.clone(),
        });

        let primal: f64 = replies.iter().map(|r| r.value).sum();
        let priced: f64 = state.lambda.iter().zip(&excess).map(|(l, e)| l * e).sum();
        best_dual = best_dual.min(primal - priced);
        if excess.iter().all(|e| *e <= cfg.tol) && best_feasible.as_ref().is_none_or(|(v, _, _)| primal > *v) {
            best_feasible = Some((primal, state.lambda.clone(), demands.clone()));
        }

        if converged(&state.lambda, &excess, cfg.tol) {
            let gap = (best_dual - primal).max(0.0);
            return Ok(MarketOutcome {
                lambda: state.lambda,
                demands,
                iterations: state.k,
                converged: true,
                duality_gap: gap,
                alpha: state.alpha,
                trace,
            });
        }
        // after repeated halving the price can no longer move
        let stalled =
            state.lambda.iter().zip(&excess).all(|(l, e)| (state.alpha * e).abs() <= f64::EPSILON * l.abs().max(1.0));
        if state.k >= cfg.max_iters || stalled {
            let (value, lambda, demands) = match best_feasible {
                Some(b) => b,
                None => (primal, state.lambda.clone(), demands),
            };
            return Ok(MarketOutcome {
                lambda,
                demands,
                iterations: state.k,
                converged: false,
                duality_gap: (best_dual - value).max(0.0),
                alpha: state.alpha,
                trace,
            });
        }
        // halve the step when excess demand changes sign
        if let Some(prev) = &prev_excess {
            if prev.iter().zip(&excess).any(|(a, b)| a * b < 0.0) {
                state.alpha *= 0.5;
            }
        }
        prev_excess = Some(excess);
        state = dual_update(&state, &demands);
    }
}

/// Default step `0.5 / (L * max slope)`.
pub fn default_alpha(sites: usize, max_slope: f64) -> f64 {
    0.5 / (sites.max(1) as f64 * max_slope.max(1e-9))
}

/// In-process market over site utilities; demands are capped at the supply.
pub fn run_market(sites: &[&dyn SiteUtility], z: &[f64], cfg: &MarketConfig) -> Result<MarketOutcome> {
    if sites.is_empty() {
        return Err(Error::Config("a market needs at least one site".into()));
    }
    if sites.iter().any(|s| s.dim() != z.len()) {
        return Err(Error::Config("site dimension differs from the supply vector".into()));
    }
    let slope = sites.iter().map(|s| s.max_slope()).fold(0.0, f64::max);
    let alpha = cfg.alpha.unwrap_or_else(|| default_alpha(sites.len(), slope));
    run_market_with(z, alpha, cfg, |lambda, _| Ok(sites.iter().map(|s| s.respond(lambda, z)).collect()))
}

/// Euclidean projection onto `{x >= 0, sum x <= z}`.
pub fn project_budget(v: &[f64], z: f64) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clamped.iter().sum::<f64>() <= z {
        return clamped;
    }
    // projection onto the simplex sum x = z by sorting
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, si) in s.iter().enumerate() {
        acc += si;
        let t = (acc - z) / (i + 1) as f64;
        if si - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected gradient ascent with a fixed step; stops when an iteration
/// moves less than `tol`.
pub fn projected_gradient(
    grad: impl Fn(&[f64]) -> Vec<f64>,
    project: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, bool) {
    let mut x = project(x0);
    for _ in 0..max_iters {
        let g = grad(&x);
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
        let next = project(&trial);
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        x = next;
        if moved <= tol {
            return (x, true);
        }
    }
    (x, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Anchor;

    fn linear(slope: f64) -> PwlUtility {
        PwlUtility::new(1, vec![Anchor { y: vec![0.0], u_hat: 0.0, g: vec![slope] }]).unwrap()
    }

    #[test]
    fn linear_responses() {
        let f = linear(2.0);
        assert_eq!(f.respond(&[3.0], &[10.0]).y, vec![0.0]);
        let r = f.respond(&[1.0], &[10.0]);
        assert_eq!(r.y, vec![10.0]);
        assert!(r.capped);
    }

    #[test]
    fn breakpoint_response() {
        let f = PwlUtility::new(
            1,
            vec![Anchor { y: vec![0.0], u_hat: 0.0, g: vec![3.0] }, Anchor { y: vec![4.0], u_hat: 12.0, g: vec![1.0] }],
        )
        .unwrap();
        assert_eq!(f.respond(&[2.0], &[10.0]).y, vec![4.0]);
        // price equal to a slope: smallest maximizer
        assert_eq!(f.respond(&[3.0], &[10.0]).y, vec![0.0]);
        assert_eq!(f.respond(&[1.0], &[10.0]).y, vec![4.0]);
    }

    #[test]
    fn dual_update_examples() {
        let mut s = MarketState::new(vec![6.0], 0.1);
        s.lambda = vec![0.5];
        let n = dual_update(&s, &[vec![8.0]]);
        assert!((n.lambda[0] - 0.7).abs() < 1e-12);
        assert_eq!(n.k, 1);
        s.lambda = vec![0.05];
        assert_eq!(dual_update(&s, &[vec![2.0]]).lambda, vec![0.0]);
        s.lambda = vec![0.5];
        assert_eq!(dual_update(&s, &[vec![2.0], vec![4.0]]).lambda, vec![0.5]);
    }

    #[test]
    fn log_sites_reach_water_filling_price() {
        let a = SmoothScalar::Log { c: 1.0 };
        let b = SmoothScalar::Log { c: 2.0 };
        let out = run_market(&[&a, &b], &[1.0], &MarketConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.lambda[0] - 1.0).abs() < 1e-3);
        assert!(out.demands[0][0].abs() < 1e-3 && (out.demands[1][0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn single_increasing_site_takes_everything() {
        let f = linear(1.0);
        let out = run_market(&[&f], &[5.0], &MarketConfig::default()).unwrap();
        assert_eq!(out.demands[0], vec![5.0]);
    }

    #[test]
    fn flat_sites_leave_the_resource_free() {
        let f = PwlUtility::zero(1);
        let out = run_market(&[&f, &f], &[3.0], &MarketConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.lambda, vec![0.0]);
        assert!(out.demands.iter().map(|y| y[0]).sum::<f64>() <= 3.0);
    }

    #[test]
    fn budget_projection() {
        assert_eq!(project_budget(&[0.5, -1.0], 2.0), vec![0.5, 0.0]);
        let p = project_budget(&[2.0, 2.0], 2.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        let p = project_budget(&[3.0, 0.0, -1.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
    }
}
