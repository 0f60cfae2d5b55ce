//! Least-squares fits of the episode shape and the emotion half-life.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Polarity, Result};

const MAX_ITERATIONS: usize = 500;
const REL_TOLERANCE: f64 = 1e-10;
const STARTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Lorentzian,
    Gaussian,
    Quadratic,
}

impl Family {
    pub fn param_names(self) -> [&'static str; 3] {
        match self {
            Family::Exponential => ["A", "lambda", "b"],
            Family::Lorentzian | Family::Gaussian => ["sigma", "mu", "A"],
            Family::Quadratic => ["a", "b", "c"],
        }
    }

    pub fn eval(self, p: &[f64; 3], t: f64) -> f64 {
        match self {
            Family::Exponential => p[0] * (p[1] * t).exp() + p[2],
            Family::Lorentzian => {
                let (s, m, a) = (p[0], p[1], p[2]);
                a / PI * s / ((t - m).powi(2) + s * s)
            }
            Family::Gaussian => {
                let (s, m, a) = (p[0], p[1], p[2]);
                a / (s * (2.0 * PI).sqrt()) * (-(t - m).powi(2) / (2.0 * s * s)).exp()
            }
            Family::Quadratic => p[0] * t * t + p[1] * t + p[2],
        }
    }

    fn gradient(self, p: &[f64; 3], t: f64) -> [f64; 3] {
        match self {
            Family::Exponential => {
                let e = (p[1] * t).exp();
                [e, p[0] * t * e, 1.0]
            }
            Family::Lorentzian => {
                let (s, m, a) = (p[0], p[1], p[2]);
                let u = t - m;
                let d = u * u + s * s;
                [
                    a / PI * (u * u - s * s) / (d * d),
                    a / PI * s * 2.0 * u / (d * d),
                    s / (PI * d),
                ]
            }
            Family::Gaussian => {
                let (s, m, a) = (p[0], p[1], p[2]);
                let u = t - m;
                let g = (-u * u / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
                let f = a * g;
                [f * (u * u / (s * s * s) - 1.0 / s), f * u / (s * s), g]
            }
            Family::Quadratic => [t * t, t, 1.0],
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Exponential => "exponential",
            Family::Lorentzian => "lorentzian",
            Family::Gaussian => "gaussian",
            Family::Quadratic => "quadratic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub segment: (i64, i64),
    pub sse: f64,
    pub n_points: usize,
    pub iterations: usize,
}

impl FitResult {
    fn new(family: Family, p: [f64; 3], t: &[f64], sse: f64, iterations: usize) -> Self {
        FitResult {
            family,
            params: family
                .param_names()
                .iter()
                .zip(p)
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
            segment: (t[0].round() as i64, t[t.len() - 1].round() as i64),
            sse,
            n_points: t.len(),
            iterations,
        }
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn vector(&self) -> [f64; 3] {
        self.family.param_names().map(|n| self.param(n))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.family.eval(&self.vector(), t)
    }
}

pub fn sse(family: Family, p: &[f64; 3], t: &[f64], y: &[f64]) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&t, &y)| {
            let r = y - family.eval(p, t);
            r * r
        })
        .sum()
}

struct Outcome {
    p: [f64; 3],
    sse: f64,
    iterations: usize,
    converged: bool,
}

/// Damped Gauss-Newton (Levenberg-Marquardt with Marquardt scaling).
fn levenberg_marquardt(family: Family, t: &[f64], y: &[f64], p0: [f64; 3]) -> Outcome {
    let mut p = p0;
    let mut cost = sse(family, &p, t, y);
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost <= scale * 1e-30 {
            converged = true;
            break;
        }
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let j = Vector3::from(family.gradient(&p, ti));
            let r = yi - family.eval(&p, ti);
            h += j * j.transpose();
            g += j * r;
        }
        let mut improved = false;
        while damping < 1e16 {
            let mut a = h;
            for d in 0..3 {
                a[(d, d)] += damping * h[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&g) else {
                damping *= 4.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let trial_cost = sse(family, &trial, t, y);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                p = trial;
                cost = trial_cost;
                damping = (damping / 3.0).max(1e-12);
                improved = true;
                if rel < REL_TOLERANCE {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            // no downhill step at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    Outcome {
        p,
        sse: cost,
        iterations,
        converged,
    }
}

/// Best of all starts; errors when none of them converged.
fn multistart(family: Family, t: &[f64], y: &[f64], starts: Vec<[f64; 3]>) -> Result<FitResult> {
    let mut best: Option<Outcome> = None;
    let mut any_converged = false;
    for p0 in starts {
        if p0.iter().any(|v| !v.is_finite()) || !sse(family, &p0, t, y).is_finite() {
            continue;
        }
        let o = levenberg_marquardt(family, t, y, p0);
        any_converged |= o.converged;
        if best.as_ref().is_none_or(|b| o.sse < b.sse) {
            best = Some(o);
        }
    }
    match best {
        Some(b) if any_converged => Ok(FitResult::new(family, b.p, t, b.sse, b.iterations)),
        Some(b) => Err(Error::NoConvergence {
            family: family.to_string(),
            best_sse: b.sse,
        }),
        None => Err(Error::NoConvergence {
            family: family.to_string(),
            best_sse: f64::INFINITY,
        }),
    }
}

fn check_points(t: &[f64], y: &[f64], min: usize) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::InvalidInput("time and value arrays differ in length".into()));
    }
    if t.len() < min {
        return Err(Error::InsufficientData(format!("{} points, need {min}", t.len())));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    Ok(())
}

/// Least squares for `y = c0 * g(t) + c1` (or without offset when `offset` is false).
fn linear_coefficients(g: &[f64], y: &[f64], offset: bool) -> Option<(f64, f64)> {
    if offset {
        let n = g.len() as f64;
        let (sg, sy) = (g.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sgg: f64 = g.iter().map(|v| v * v).sum();
        let sgy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        let m = Matrix2::new(sgg, sg, sg, n);
        let c = m.lu().solve(&Vector2::new(sgy, sy))?;
        Some((c[0], c[1]))
    } else {
        let sgg: f64 = g.iter().map(|v| v * v).sum();
        let sgy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        (sgg > 0.0).then(|| (sgy / sgg, 0.0))
    }
}

fn segment_length(t: &[f64]) -> f64 {
    (t[t.len() - 1] - t[0]).abs().max(1.0)
}

/// Rate implied by a log-linear regression of `|y - b|` on `t`, with `b` taken
/// from whichever edge of the segment is flatter.
fn log_linear_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let q = (t.len() / 4).max(1);
    let head = y[..q].iter().sum::<f64>() / q as f64;
    let tail = y[y.len() - q..].iter().sum::<f64>() / q as f64;
    let extreme = |b: f64| y.iter().map(|v| (v - b).abs()).fold(0.0, f64::max);
    let b = if extreme(head) >= extreme(tail) { head } else { tail };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter_map(|(&t, &y)| {
            let d = (y - b).abs();
            (d > 1e-12).then(|| (t, d.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx).filter(|r| r.is_finite() && *r != 0.0)
}

/// `f(t) = A * exp(lambda * t) + b`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_points(t, y, 4)?;
    let len = segment_length(t);
    let mut rates: Vec<f64> = Vec::with_capacity(STARTS);
    if let Some(r) = log_linear_rate(t, y) {
        rates.push(r);
    }
    for c in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        rates.push(c / len);
        rates.push(-c / len);
    }
    rates.truncate(STARTS);
    let starts = rates
        .into_iter()
        .filter_map(|lambda| {
            let g: Vec<f64> = t.iter().map(|&t| (lambda * t).exp()).collect();
            let (a, b) = linear_coefficients(&g, y, true)?;
            Some([a, lambda, b])
        })
        .collect();
    multistart(Family::Exponential, t, y, starts)
}

fn peak_starts(family: Family, t: &[f64], y: &[f64]) -> Vec<[f64; 3]> {
    let len = segment_length(t);
    let argmax = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| t[i])
        .unwrap_or(0.0);
    let centers = [argmax, (t[0] + t[t.len() - 1]) / 2.0, t[0], t[t.len() - 1]];
    let widths = [len / 8.0, len / 2.0, 2.0 * len, 8.0 * len];
    let mut starts = Vec::with_capacity(STARTS);
    for &mu in &centers {
        for &sigma in &widths {
            let g: Vec<f64> = t.iter().map(|&t| family.eval(&[sigma, mu, 1.0], t)).collect();
            if let Some((a, _)) = linear_coefficients(&g, y, false) {
                starts.push([sigma, mu, a]);
            }
        }
    }
    starts
}

/// `f(t) = (A / pi) * sigma / ((t - mu)^2 + sigma^2)`.
pub fn fit_lorentzian(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_points(t, y, 4)?;
    let mut fit = multistart(Family::Lorentzian, t, y, peak_starts(Family::Lorentzian, t, y))?;
    // the model depends on sigma only through |sigma| once A absorbs the sign
    normalize_width(&mut fit);
    Ok(fit)
}

/// `f(t) = A / (sigma * sqrt(2 pi)) * exp(-(t - mu)^2 / (2 sigma^2))`.
pub fn fit_gaussian(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_points(t, y, 4)?;
    let mut fit = multistart(Family::Gaussian, t, y, peak_starts(Family::Gaussian, t, y))?;
    normalize_width(&mut fit);
    Ok(fit)
}

fn normalize_width(fit: &mut FitResult) {
    let sigma = fit.param("sigma");
    if sigma < 0.0 {
        fit.params.insert("sigma".into(), -sigma);
        let a = fit.param("A");
        fit.params.insert("A".into(), -a);
    }
}

/// `f(t) = a t^2 + b t + c` from the normal equations.
pub fn fit_quadratic(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_points(t, y, 3)?;
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for (&t, &y) in t.iter().zip(y) {
        let x = Vector3::new(t * t, t, 1.0);
        xtx += x * x.transpose();
        xty += x * y;
    }
    let p = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| Error::InvalidInput("quadratic design is singular".into()))?;
    let mut p = [p[0], p[1], p[2]];
    // points on a straight line: the least-squares quadratic is that line, so
    // keep round-off from leaking into the curvature term
    let g: Vec<f64> = t.to_vec();
    if let Some((slope, intercept)) = linear_coefficients(&g, y, true) {
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let on_line = t.iter().zip(y).all(|(&t, &y)| (y - (slope * t + intercept)).abs() <= 8.0 * f64::EPSILON * scale);
        if on_line {
            p = [0.0, slope, intercept];
        }
    }
    Ok(FitResult::new(Family::Quadratic, p, t, sse(Family::Quadratic, &p, t, y), 0))
}

pub fn fit_family(family: Family, t: &[f64], y: &[f64]) -> Result<FitResult> {
    match family {
        Family::Exponential => fit_exponential(t, y),
        Family::Lorentzian => fit_lorentzian(t, y),
        Family::Gaussian => fit_gaussian(t, y),
        Family::Quadratic => fit_quadratic(t, y),
    }
}

/// One row of the model ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelFit {
    TwoExponentials { rise: FitResult, decay: FitResult, sse: f64 },
    Single { fit: FitResult },
}

impl ModelFit {
    pub fn two_exponentials(rise: FitResult, decay: FitResult) -> Self {
        let sse = rise.sse + decay.sse;
        ModelFit::TwoExponentials { rise, decay, sse }
    }

    pub fn sse(&self) -> f64 {
        match self {
            ModelFit::TwoExponentials { sse, .. } => *sse,
            ModelFit::Single { fit } => fit.sse,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ModelFit::TwoExponentials { .. } => "2 exponentials".into(),
            ModelFit::Single { fit } => fit.family.to_string(),
        }
    }
}

/// Ascending SSE; ties keep their input order.
pub fn rank_models(mut fits: Vec<ModelFit>) -> Vec<ModelFit> {
    fits.sort_by(|a, b| a.sse().total_cmp(&b.sse()));
    fits
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfLife {
    pub minutes: f64,
    pub peak_value: f64,
    pub end_value: f64,
}

/// Time for an exponential decay fit to fall from its value at `t0` halfway to
/// its value at `segment_end`. Found by bisection.
pub fn half_life(decay: &FitResult, segment_end: f64) -> Result<HalfLife> {
    if decay.family != Family::Exponential {
        return Err(Error::InvalidInput("half-life needs an exponential fit".into()));
    }
    let (a, lambda) = (decay.param("A"), decay.param("lambda"));
    if a == 0.0 {
        return Err(Error::InvalidInput("flat decay fit (A = 0) has no half-life".into()));
    }
    if !(lambda < 0.0) {
        return Err(Error::InvalidInput(format!("rate {lambda} is not a decay")));
    }
    if !(segment_end > 0.0) {
        return Err(Error::InvalidInput(format!("segment end {segment_end} must be positive")));
    }
    let p = decay.eval(0.0);
    let e = decay.eval(segment_end);
    let target = (p + e) / 2.0;
    // f - target changes sign once on [0, end] since f is monotone
    let g = |t: f64| (decay.eval(t) - target) * a.signum();
    let (mut lo, mut hi) = (0.0, segment_end * 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(HalfLife {
        minutes: 0.5 * (lo + hi),
        peak_value: p,
        end_value: e,
    })
}

/// Closed form `ln((1 + exp(lambda * end)) / 2) / lambda`.
pub fn half_life_closed_form(lambda: f64, segment_end: f64) -> f64 {
    ((1.0 + (lambda * segment_end).exp()) / 2.0).ln() / lambda
}

/// Fits of one cohort's smoothed series over its emotional period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFits {
    pub polarity: Polarity,
    pub span: (i64, i64),
    pub ranked: Vec<ModelFit>,
    pub half_life: Option<HalfLife>,
    /// Families that could not be fitted, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(String, String)>,
}

impl EpisodeFits {
    pub fn two_exponentials(&self) -> Option<(&FitResult, &FitResult)> {
        self.ranked.iter().find_map(|m| match m {
            ModelFit::TwoExponentials { rise, decay, .. } => Some((rise, decay)),
            _ => None,
        })
    }
}

fn points(series: &[Option<f64>], offsets: &[i64], lo: i64, hi: i64) -> (Vec<f64>, Vec<f64>) {
    offsets
        .iter()
        .zip(series)
        .filter(|(&k, _)| k >= lo && k <= hi)
        .filter_map(|(&k, v)| v.map(|v| (k as f64, v)))
        .unzip()
}

/// Rise `[start, -1]` and decay `[0, end]` exponentials plus single-curve fits
/// over `[start, end]`, ranked by SSE.
pub fn fit_episode(series: &[Option<f64>], offsets: &[i64], span: (i64, i64), polarity: Polarity) -> Result<EpisodeFits> {
    let (start, end) = span;
    if !(start < 0 && end > 0) {
        return Err(Error::InvalidInput(format!("span [{start}, {end}] does not straddle t0")));
    }
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    let mut half = None;

    let (tu, yu) = points(series, offsets, start, -1);
    let (td, yd) = points(series, offsets, 0, end);
    match (fit_exponential(&tu, &yu), fit_exponential(&td, &yd)) {
        (Ok(rise), Ok(decay)) => {
            half = half_life(&decay, end as f64).ok();
            ranked.push(ModelFit::two_exponentials(rise, decay));
        }
        (Err(e), _) | (_, Err(e)) => failures.push(("2 exponentials".to_string(), e.to_string())),
    }
    let (t, y) = points(series, offsets, start, end);
    for family in [Family::Lorentzian, Family::Gaussian, Family::Quadratic] {
        match fit_family(family, &t, &y) {
            Ok(fit) => ranked.push(ModelFit::Single { fit }),
            Err(e) => failures.push((family.to_string(), e.to_string())),
        }
    }
    Ok(EpisodeFits {
        polarity,
        span,
        ranked: rank_models(ranked),
        half_life: half,
        failures,
    })
}
