//! Concave non-decreasing piecewise-linear surrogates.
//!
//! Given samples `(y_i, u_i)` the fit solves
//!
//! ```text
//! minimize   sum_i (uh_i - u_i)^2
//! subject to uh_j <= uh_i + g_i . (y_j - y_i)   for all i, j
//!            g_i >= 0
//! ```
//!
//! and the surrogate is `F(y) = min_i uh_i + g_i . (y - y_i)`.
//!
//! Both solvers work on the dual: for `min 1/2 |x - c|^2` subject to
//! `A x >= 0` the optimum is `x = c + A^T mu` where `mu >= 0` minimizes
//! `|A^T mu + c|`, a non-negative least squares problem. With one resource
//! dimension the sorted anchors reduce the constraints to "adjacent slopes
//! non-increasing, last slope non-negative" and the problem has no `g`
//! variables at all. In higher dimensions the gradients are kept as
//! variables and a proximal term makes every dual subproblem well posed.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, KktResiduals, Result};
use crate::nnls::nnls;

/// Largest KKT residual accepted from the solver.
pub const KKT_TOLERANCE: f64 = 1e-6;
/// Tolerance used when checking the hyperplane invariant of a model.
pub const INVARIANT_TOLERANCE: f64 = 1e-8;

const PROX_ITERATIONS: usize = 2000;
const PROX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub u: f64,
}

impl Sample {
    pub fn scalar(y: f64, u: f64) -> Self {
        Self { y: vec![y], u }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub y: Vec<f64>,
    pub u_hat: f64,
    pub g: Vec<f64>,
}

impl Anchor {
    fn plane(&self, y: &[f64]) -> f64 {
        self.u_hat + self.g.iter().zip(y).zip(&self.y).map(|((g, a), b)| g * (a - b)).sum::<f64>()
    }
}

/// Concave non-decreasing piecewise-linear utility, the lower envelope of
/// one supporting hyperplane per anchor. Scalar models keep their anchors
/// sorted by `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlUtility {
    dim: usize,
    anchors: Vec<Anchor>,
}

impl PwlUtility {
    pub fn new(dim: usize, anchors: Vec<Anchor>) -> Result<Self> {
        if dim == 0 || anchors.is_empty() {
            return Err(Error::Config("a model needs a positive dimension and at least one anchor".into()));
        }
        for a in &anchors {
            if a.y.len() != dim || a.g.len() != dim {
                return Err(Error::Config(format!("anchor dimension differs from {dim}")));
            }
            if !(a.u_hat.is_finite() && a.y.iter().chain(&a.g).all(|v| v.is_finite())) {
                return Err(Error::Config("anchor values must be finite".into()));
            }
        }
        let mut anchors = anchors;
        if dim == 1 {
            anchors.sort_by(|a, b| a.y[0].total_cmp(&b.y[0]));
        }
        Ok(Self { dim, anchors })
    }

    /// The zero utility over `dim` resources.
    pub fn zero(dim: usize) -> Self {
        Self { dim, anchors: vec![Anchor { y: vec![0.0; dim], u_hat: 0.0, g: vec![0.0; dim] }] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn evaluate(&self, y: &[f64]) -> f64 {
        self.anchors.iter().map(|a| a.plane(y)).fold(f64::INFINITY, f64::min)
    }

    /// Largest gradient component over all anchors.
    pub fn max_slope(&self) -> f64 {
        self.anchors.iter().flat_map(|a| a.g.iter().copied()).fold(0.0, f64::max)
    }

    /// Largest violation of the hyperplane and sign constraints.
    pub fn invariant_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.anchors {
            for &g in &a.g {
                worst = worst.max(-g);
            }
            for b in &self.anchors {
                worst = worst.max(b.u_hat - a.plane(&b.y));
            }
        }
        worst
    }

    pub fn check_invariants(&self) -> Result<()> {
        let v = self.invariant_violation();
        if v > INVARIANT_TOLERANCE {
            return Err(Error::Contract(format!("surrogate violates concavity/monotonicity by {v:e}")));
        }
        Ok(())
    }

    /// Text form:
    ///
    /// ```text
    /// pwl-utility v1
    /// dim <d>
    /// anchor <y_1> .. <y_d> ; <u_hat> ; <g_1> .. <g_d>
    /// ```
    ///
    /// Numbers use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut s = format!("pwl-utility v1\ndim {}\n", self.dim);
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for a in &self.anchors {
            let _ = writeln!(s, "anchor {} ; {:?} ; {}", join(&a.y), a.u_hat, join(&a.g));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, message: &str| Error::Parse { line: line + 1, message: message.into() };
        match lines.next() {
            Some((_, l)) if l.trim() == "pwl-utility v1" => {}
            Some((i, _)) => return Err(parse_err(i, "expected header 'pwl-utility v1'")),
            None => return Err(parse_err(0, "empty model")),
        }
        let dim = match lines.next() {
            Some((i, l)) => l
                .trim()
                .strip_prefix("dim ")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .ok_or_else(|| parse_err(i, "expected 'dim <d>'"))?,
            None => return Err(parse_err(1, "missing dim line")),
        };
        let nums = |i: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(i, &format!("invalid number '{t}'"))))
                .collect()
        };
        let mut anchors = Vec::new();
        for (i, l) in lines {
            let body = l.trim().strip_prefix("anchor ").ok_or_else(|| parse_err(i, "expected an anchor line"))?;
            let parts: Vec<&str> = body.split(';').collect();
            if parts.len() != 3 {
                return Err(parse_err(i, "anchor needs 'y ; u_hat ; g'"));
            }
            let y = nums(i, parts[0])?;
            let u = nums(i, parts[1])?;
            let g = nums(i, parts[2])?;
            if y.len() != dim || g.len() != dim || u.len() != 1 {
                return Err(parse_err(i, "anchor has the wrong number of components"));
            }
            anchors.push(Anchor { y, u_hat: u[0], g });
        }
        Self::new(dim, anchors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PwlUtility,
    /// Fitted values in the order the samples were given.
    pub fitted: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
}

impl FitResult {
    /// Largest absolute gap between a fitted value and its sample.
    pub fn max_residual(&self, samples: &[Sample]) -> f64 {
        self.fitted.iter().zip(samples).map(|(f, s)| (f - s.u).abs()).fold(0.0, f64::max)
    }
}

/// Least-squares concave non-decreasing fit.
pub fn fit_concave_monotone(samples: &[Sample]) -> Result<FitResult> {
    let dim = validate(samples)?;
    let scale = samples.iter().fold(1.0f64, |m, s| m.max(s.u.abs()));
    let result = if samples.len() == 1 {
        let s = &samples[0];
        FitResult {
            model: PwlUtility::new(dim, vec![Anchor { y: s.y.clone(), u_hat: s.u, g: vec![0.0; dim] }])?,
            fitted: vec![s.u],
            objective: 0.0,
            residuals: KktResiduals::default(),
        }
    } else if dim == 1 {
        fit_scalar(samples, scale)?
    } else {
        fit_general(samples, dim, scale)?
    };
    if result.residuals.max() > KKT_TOLERANCE {
        return Err(Error::Solver {
            message: format!("concave fit of {} samples", samples.len()),
            residuals: result.residuals,
        });
    }
    Ok(result)
}

/// Convenience wrapper for scalar `(y, u)` pairs.
pub fn fit_scalar_pairs(pairs: &[(f64, f64)]) -> Result<FitResult> {
    let samples: Vec<Sample> = pairs.iter().map(|&(y, u)| Sample::scalar(y, u)).collect();
    fit_concave_monotone(&samples)
}

/// Reads samples from CSV with a header row. Every column but the last is a
/// resource coordinate; the last is the observed utility.
pub fn read_samples_csv<R: std::io::Read>(r: R) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let parse =
        |e: csv::Error| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() };
    let width = reader.headers().map_err(parse)?.len();
    if width < 2 {
        return Err(Error::Parse { line: 1, message: "need at least one y column and a utility column".into() });
    }
    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(parse)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("invalid number '{f}'") }))
            .collect::<Result<Vec<f64>>>()?;
        let (u, y) = vals.split_last().expect("csv enforces the header width");
        samples.push(Sample { y: y.to_vec(), u: *u });
    }
    Ok(samples)
}

/// Writes `y_0 .. y_{d-1}, u, fitted` rows in sample order.
pub fn write_fitted_csv<W: std::io::Write>(samples: &[Sample], fit: &FitResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = samples.first().map_or(0, |s| s.y.len());
    let mut header: Vec<String> = (0..dim).map(|j| format!("y_{j}")).collect();
    header.extend(["u".to_string(), "fitted".to_string()]);
    out.write_record(&header).map_err(crate::contagion::csv_err)?;
    for (s, f) in samples.iter().zip(&fit.fitted) {
        let mut rec: Vec<String> = s.y.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", s.u));
        rec.push(format!("{f:?}"));
        out.write_record(&rec).map_err(crate::contagion::csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn validate(samples: &[Sample]) -> Result<usize> {
    let Some(first) = samples.first() else {
        return Err(Error::Config("at least one sample is required".into()));
    };
    let dim = first.y.len();
    if dim == 0 {
        return Err(Error::Config("samples need at least one resource dimension".into()));
    }
    for s in samples {
        if s.y.len() != dim {
            return Err(Error::Config("samples have mixed dimensions".into()));
        }
        if !(s.u.is_finite() && s.y.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("samples must be finite".into()));
        }
    }
    let mut ys: Vec<&Vec<f64>> = samples.iter().map(|s| &s.y).collect();
    ys.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    if ys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate sample locations".into()));
    }
    Ok(dim)
}

fn fit_scalar(samples: &[Sample], scale: f64) -> Result<FitResult> {
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| samples[a].y[0].total_cmp(&samples[b].y[0]));
    let y: Vec<f64> = order.iter().map(|&i| samples[i].y[0]).collect();
    let u = DVector::from_iterator(n, order.iter().map(|&i| samples[i].u));

    // slope_i = (uh_{i+1} - uh_i) / h_i as a row vector over uh
    let slope_row = |i: usize| {
        let h = y[i + 1] - y[i];
        let mut r = vec![0.0; n];
        r[i] = -1.0 / h;
        r[i + 1] = 1.0 / h;
        r
    };
    // constraints: slope_i - slope_{i+1} >= 0, slope_{n-2} >= 0
    let m = n - 1;
    let mut c = DMatrix::zeros(m, n);
    for i in 0..m - 1 {
        let (a, b) = (slope_row(i), slope_row(i + 1));
        for j in 0..n {
            c[(i, j)] = a[j] - b[j];
        }
    }
    let last = slope_row(n - 2);
    for j in 0..n {
        c[(m - 1, j)] = last[j];
    }
    let ct = c.transpose();
    let sol = nnls(&ct, &(-&u));
    let u_hat = &u + &ct * &sol.x;

    let slacks = &c * &u_hat;
    let stationarity = (&u_hat - &u - &ct * &sol.x).amax();
    let complementarity = sol.x.iter().zip(slacks.iter()).map(|(m, s)| (m * s).abs()).fold(0.0, f64::max);

    let mut anchors = Vec::with_capacity(n);
    for i in 0..n {
        let g = if i + 1 < n { ((u_hat[i + 1] - u_hat[i]) / (y[i + 1] - y[i])).max(0.0) } else { 0.0 };
        anchors.push(Anchor { y: vec![y[i]], u_hat: u_hat[i], g: vec![g] });
    }
    let model = PwlUtility::new(1, anchors)?;
    let mut fitted = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        fitted[i] = u_hat[k];
    }
    let residuals = KktResiduals {
        primal: model.invariant_violation() / scale,
        stationarity: stationarity / scale,
        complementarity: complementarity / scale,
    };
    let residuals = if sol.converged { residuals } else { KktResiduals { stationarity: f64::INFINITY, ..residuals } };
    let objective = (&u_hat - &u).norm_squared();
    Ok(FitResult { model, fitted, objective, residuals })
}

fn fit_general(samples: &[Sample], dim: usize, scale: f64) -> Result<FitResult> {
    let n = samples.len();
    let nv = n + n * dim;
    let g_col = |i: usize, d: usize| n + i * dim + d;

    // rows of A, constraints A x >= 0 over x = (uh, g)
    let m = n * (n - 1) + n * dim;
    let mut a = DMatrix::zeros(m, nv);
    let mut row = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            a[(row, i)] = 1.0;
            a[(row, j)] = -1.0;
            for d in 0..dim {
                a[(row, g_col(i, d))] = samples[j].y[d] - samples[i].y[d];
            }
            row += 1;
        }
    }
    for i in 0..n {
        for d in 0..dim {
            a[(row, g_col(i, d))] = 1.0;
            row += 1;
        }
    }
    let at = a.transpose();

    let u = DVector::from_iterator(n, samples.iter().map(|s| s.u));

    // The objective ignores g, so the problem is only positive semidefinite.
    // Proximal point iterations add |g - g_k|^2 / 2, making each subproblem a
    // projection that the dual NNLS solves exactly. They identify the active
    // constraints quickly but converge slowly afterwards, so every few
    // iterations the KKT system restricted to the active set is solved
    // directly and accepted once it certifies optimality.
    let mut target = DVector::zeros(nv);
    target.rows_mut(0, n).copy_from(&u);
    let mut best: Option<(DVector<f64>, DVector<f64>, KktResiduals)> = None;
    let accept = PROX_TOLERANCE * scale;
    for iter in 0..PROX_ITERATIONS {
        let sol = nnls(&at, &(-&target));
        if !sol.converged {
            break;
        }
        let x = &target + &at * &sol.x;
        let res = kkt_residuals(&a, &x, &sol.x, &u);
        let polished = (iter % 4 == 3).then(|| polish(&a, &u, &sol.x)).flatten();
        target.rows_mut(n, nv - n).copy_from(&x.rows(n, nv - n));
        if best.as_ref().is_none_or(|(_, _, b)| res.max() < b.max()) {
            best = Some((x.clone(), sol.x, res));
        }
        let by_slack = if iter % 4 == 3 { polish_by_slack(&a, &u, &x) } else { Vec::new() };
        for (px, pmu) in polished.into_iter().chain(by_slack) {
            let pres = kkt_residuals(&a, &px, &pmu, &u);
            if pres.max() < best.as_ref().map_or(f64::INFINITY, |b| b.2.max()) {
                best = Some((px, pmu, pres));
            }
        }
        if best.as_ref().is_some_and(|b| b.2.max() <= accept) {
            break;
        }
    }
    let Some((x, _, res)) = best else {
        return Err(Error::Solver {
            message: "dual least squares did not converge".into(),
            residuals: KktResiduals {
                primal: f64::INFINITY,
                stationarity: f64::INFINITY,
                complementarity: f64::INFINITY,
            },
        });
    };
    let (primal, stationarity, complementarity) = (res.primal, res.stationarity, res.complementarity);

    let anchors = (0..n)
        .map(|i| Anchor {
            y: samples[i].y.clone(),
            u_hat: x[i],
            g: (0..dim).map(|d| x[g_col(i, d)].max(0.0)).collect(),
        })
        .collect();
    let model = PwlUtility::new(dim, anchors)?;
    let fitted: Vec<f64> = (0..n).map(|i| x[i]).collect();
    let objective = fitted.iter().zip(samples).map(|(f, s)| (f - s.u).powi(2)).sum();
    let residuals = KktResiduals {
        primal: primal.max(model.invariant_violation()) / scale,
        stationarity: stationarity / scale,
        complementarity: complementarity / scale,
    };
    Ok(FitResult { model, fitted, objective, residuals })
}

/// Unscaled KKT residuals of `min 1/2 |uh - u|^2 s.t. A x >= 0` at `(x, mu)`.
fn kkt_residuals(a: &DMatrix<f64>, x: &DVector<f64>, mu: &DVector<f64>, u: &DVector<f64>) -> KktResiduals {
    let n = u.len();
    let slacks = a * x;
    let grad = a.tr_mul(mu);
    let mut stationarity = mu.iter().fold(0.0f64, |w, m| w.max(-m));
    for k in 0..x.len() {
        let lhs = if k < n { x[k] - u[k] } else { 0.0 };
        stationarity = stationarity.max((lhs - grad[k]).abs());
    }
    KktResiduals {
        primal: slacks.iter().fold(0.0f64, |w, s| w.max(-s)),
        stationarity,
        complementarity: mu.iter().zip(slacks.iter()).map(|(m, s)| (m * s).abs()).fold(0.0, f64::max),
    }
}

/// Guesses the active set from near-zero slacks at `x` over a range of
/// thresholds. For each guess the projection onto `A_act x = 0` gives the
/// primal point and NNLS gives non-negative multipliers, so degenerate
/// multipliers cannot spoil the certificate once the guess is right.
fn polish_by_slack(a: &DMatrix<f64>, u: &DVector<f64>, x: &DVector<f64>) -> Vec<(DVector<f64>, DVector<f64>)> {
    let (m, nv) = a.shape();
    let n = u.len();
    let slacks = a * x;
    let size = x.amax().max(1.0);
    let mut out = Vec::new();
    let mut last: Option<Vec<usize>> = None;
    for tau in [1e-10, 1e-8, 1e-6, 1e-5, 1e-4, 1e-3] {
        let active: Vec<usize> = (0..m).filter(|&k| slacks[k] <= tau * size).collect();
        if last.as_ref() == Some(&active) {
            continue;
        }
        let Some((px, _)) = solve_on_active(a, u, &active, x) else { continue };
        let mut r = DVector::zeros(nv);
        r.rows_mut(0, n).copy_from(&(px.rows(0, n) - u));
        let at_act = DMatrix::from_fn(nv, active.len(), |j, c| a[(active[c], j)]);
        let dual = nnls(&at_act, &r);
        let mut mu = DVector::zeros(m);
        for (c, &k) in active.iter().enumerate() {
            mu[k] = dual.x[c];
        }
        out.push((px, mu));
        last = Some(active);
    }
    out
}

/// Solves the equality-constrained problem on the constraints with positive
/// multipliers in `mu_guess`, returning the minimum-norm primal/dual pair.
fn polish(a: &DMatrix<f64>, u: &DVector<f64>, mu_guess: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (m, nv) = a.shape();
    let mu_max = mu_guess.amax().max(1.0);
    let active: Vec<usize> = (0..m).filter(|&k| mu_guess[k] > 1e-12 * mu_max).collect();
    solve_on_active(a, u, &active, &DVector::zeros(nv))
}

/// Solution of `min 1/2 |uh - u|^2 s.t. A_k x = 0 for k in active` closest
/// to `origin`, with the multipliers of those equalities. Only `uh` is
/// pinned by the objective, so the choice of origin decides `g`.
fn solve_on_active(
    a: &DMatrix<f64>,
    u: &DVector<f64>,
    active: &[usize],
    origin: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (m, nv) = a.shape();
    let n = u.len();
    let na = active.len();
    let mut kkt = DMatrix::zeros(nv + na, nv + na);
    for i in 0..n {
        kkt[(i, i)] = 1.0;
    }
    for (c, &k) in active.iter().enumerate() {
        for j in 0..nv {
            kkt[(j, nv + c)] = -a[(k, j)];
            kkt[(nv + c, j)] = a[(k, j)];
        }
    }
    // unknowns are the step from `origin` and the multipliers
    let mut rhs = DVector::zeros(nv + na);
    rhs.rows_mut(0, n).copy_from(&(u - origin.rows(0, n)));
    for (c, &k) in active.iter().enumerate() {
        rhs[nv + c] = -a.row(k).dot(&origin.transpose());
    }
    let svd = kkt.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let sol = svd.solve(&rhs, eps).ok()?;
    let mut mu = DVector::zeros(m);
    for (c, &k) in active.iter().enumerate() {
        mu[k] = sol[nv + c];
    }
    Some((origin + sol.rows(0, nv), mu))
}

/// Optimality-gap certificate `|Y* - Yhat*| <= 2 sqrt(eps / m_f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCertificate {
    pub epsilon: f64,
    pub m_f: f64,
    pub bound: f64,
    /// Set when `epsilon` is a sampled proxy rather than a true sup bound.
    pub proxy: bool,
}

pub fn gap_bound(epsilon: f64, m_f: f64) -> Result<GapCertificate> {
    if !(m_f > 0.0) {
        return Err(Error::Domain(format!("strong concavity modulus must be positive, got {m_f}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("surrogate error must be non-negative, got {epsilon}")));
    }
    Ok(GapCertificate { epsilon, m_f, bound: 2.0 * (epsilon / m_f).sqrt(), proxy: false })
}

/// Certificate using the sampled error proxy: the largest fit residual plus
/// the largest Monte Carlo standard error.
pub fn proxy_certificate(fit: &FitResult, samples: &[Sample], stderrs: &[f64], m_f: f64) -> Result<GapCertificate> {
    let eps = fit.max_residual(samples) + stderrs.iter().copied().fold(0.0, f64::max);
    Ok(GapCertificate { proxy: true, ..gap_bound(eps, m_f)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_concave_samples_are_kept() {
        let f = fit_scalar_pairs(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        for (a, b) in f.fitted.iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f.objective < 1e-20);
    }

    #[test]
    fn analytic_three_point_case() {
        let f = fit_scalar_pairs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 2.0)]).unwrap();
        let want = [-1.0 / 3.0, 2.0 / 3.0, 5.0 / 3.0];
        for (a, b) in f.fitted.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((f.objective - 2.0 / 3.0).abs() < 1e-9);
        assert!((f.model.evaluate(&[0.5]) - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn single_sample() {
        let f = fit_scalar_pairs(&[(3.0, 7.0)]).unwrap();
        assert_eq!(f.fitted, vec![7.0]);
        assert_eq!(f.objective, 0.0);
        assert_eq!(f.model.evaluate(&[100.0]), 7.0);
        assert_eq!(f.model.evaluate(&[0.0]), 7.0);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(fit_scalar_pairs(&[(1.0, 0.0), (1.0, 2.0)]), Err(Error::Config(_))));
        assert!(matches!(fit_concave_monotone(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn unsorted_input_keeps_order_of_fitted_values() {
        let f = fit_scalar_pairs(&[(2.0, 2.0), (0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!((f.fitted[0] - 5.0 / 3.0).abs() < 1e-9);
        assert!((f.fitted[1] + 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn decreasing_samples_flatten() {
        let f = fit_scalar_pairs(&[(0.0, 3.0), (1.0, 2.0), (2.0, 1.0)]).unwrap();
        for v in &f.fitted {
            assert!((v - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_dimensional_fit_satisfies_invariants() {
        let samples: Vec<Sample> =
            [(0.0, 0.0, 0.0), (1.0, 0.0, 1.0), (0.0, 1.0, 2.0), (1.0, 1.0, 2.5), (2.0, 0.0, 1.2)]
                .iter()
                .map(|&(a, b, u)| Sample { y: vec![a, b], u })
                .collect();
        let f = fit_concave_monotone(&samples).unwrap();
        f.model.check_invariants().unwrap();
        assert!(f.residuals.max() <= KKT_TOLERANCE);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = fit_scalar_pairs(&[(0.0, 0.1), (1.0, 0.7), (2.5, 0.9), (4.0, 1.3)]).unwrap();
        let text = f.model.to_text();
        assert_eq!(PwlUtility::from_text(&text).unwrap(), f.model);
        assert!(matches!(PwlUtility::from_text("nope"), Err(Error::Parse { .. })));
    }

    #[test]
    fn gap_examples() {
        assert!((gap_bound(0.01, 1.0).unwrap().bound - 0.2).abs() < 1e-15);
        assert_eq!(gap_bound(0.0, 1.0).unwrap().bound, 0.0);
        assert_eq!(gap_bound(1.0, 4.0).unwrap().bound, 1.0);
        assert!(matches!(gap_bound(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_three_dimensional_case_certifies() {
        let pts = [
            ([1.0, 1.0, 4.0], 4.161248143685885),
            ([1.0, 4.0, 2.0], 0.0),
            ([1.0, 4.0, 3.0], 1.9620080327225549),
            ([2.0, 2.0, 0.0], -1.6656791907039858),
            ([3.0, 0.0, 2.0], 3.2607860583179606),
            ([3.0, 0.0, 4.0], 2.5734439993437803),
            ([3.0, 4.0, 3.0], -1.3014132742489948),
        ];
        let samples: Vec<Sample> = pts.iter().map(|(y, u)| Sample { y: y.to_vec(), u: *u }).collect();
        let f = fit_concave_monotone(&samples).unwrap();
        assert!(f.residuals.max() <= KKT_TOLERANCE, "{:?}", f.residuals);

        let pts = [
            ([0.0, 1.0, 4.0], 2.922476582512126),
            ([1.0, 1.0, 3.0], 0.0),
            ([1.0, 3.0, 0.0], -2.614894607569855),
            ([4.0, 0.0, 2.0], 0.9663954744150108),
            ([4.0, 4.0, 1.0], -2.1691367467299374),
        ];
        let samples: Vec<Sample> = pts.iter().map(|(y, u)| Sample { y: y.to_vec(), u: *u }).collect();
        let f = fit_concave_monotone(&samples).unwrap();
        assert!(f.residuals.max() <= KKT_TOLERANCE, "{:?}", f.residuals);
    }
}
