//! One-dimensional Gaussian mixtures fitted by EM, component-count selection
//! and contrary-peak fractions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Polarity, Result};

pub const RESTARTS: usize = 10;
pub const SIGMA_FLOOR: f64 = 1e-4;
const MAX_ITERATIONS: usize = 500;
const REL_TOLERANCE: f64 = 1e-8;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmResult {
    pub k: usize,
    /// Sorted by ascending mean.
    pub components: Vec<Component>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub iterations: usize,
    /// Log-likelihood after every EM iteration of the winning restart.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl GmmResult {
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (log_normal(x, c.mu, c.sigma)).exp())
            .sum()
    }
}

fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

pub fn parameter_count(k: usize) -> usize {
    3 * k - 1
}

/// k-means++ seeding: the first center uniformly, the rest with probability
/// proportional to the squared distance to the nearest chosen center.
fn kmeans_pp(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            values[pick]
        } else {
            values[rng.random_range(0..values.len())]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

fn initial_components(values: &[f64], centers: &[f64]) -> Vec<Component> {
    let k = centers.len();
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); k];
    for &v in values {
        let j = (0..k)
            .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
            .unwrap();
        sums[j].0 += 1;
        sums[j].1 += v;
        sums[j].2 += v * v;
    }
    let overall = {
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    sums.iter()
        .zip(centers)
        .map(|(&(c, s, ss), &center)| {
            if c == 0 {
                return Component {
                    weight: 1.0 / values.len() as f64,
                    mu: center,
                    sigma: overall.max(SIGMA_FLOOR),
                };
            }
            let m = s / c as f64;
            let var = (ss / c as f64 - m * m).max(0.0);
            Component {
                weight: c as f64 / values.len() as f64,
                mu: m,
                sigma: var.sqrt().max(overall * 0.1).max(SIGMA_FLOOR),
            }
        })
        .collect()
}

struct Run {
    components: Vec<Component>,
    log_likelihood: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// EM from the given start; `None` when a component collapses.
fn em(values: &[f64], mut comps: Vec<Component>) -> Option<Run> {
    let n = values.len();
    let k = comps.len();
    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut logp = vec![0.0; k];
    let mut previous = f64::NEG_INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        // E step, with the log-likelihood of the current parameters
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            for (j, c) in comps.iter().enumerate() {
                logp[j] = c.weight.ln() + log_normal(x, c.mu, c.sigma);
            }
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let row = &mut resp[i * k..(i + 1) * k];
            let mut s = 0.0;
            for (r, l) in row.iter_mut().zip(&logp) {
                *r = (l - m).exp();
                s += *r;
            }
            ll += m + s.ln();
            for r in row.iter_mut() {
                *r /= s;
            }
        }
        if !ll.is_finite() {
            return None;
        }
        trace.push(ll);
        if iteration > 1 && (ll - previous).abs() <= REL_TOLERANCE * ll.abs() {
            return Some(Run {
                components: comps,
                log_likelihood: ll,
                iterations: iteration,
                trace,
            });
        }
        previous = ll;
        // M step
        for (j, c) in comps.iter_mut().enumerate() {
            let (mut w, mut s) = (0.0, 0.0);
            for i in 0..n {
                w += resp[i * k + j];
                s += resp[i * k + j] * values[i];
            }
            if w <= 0.0 {
                return None;
            }
            let mu = s / w;
            let var = (0..n).map(|i| resp[i * k + j] * (values[i] - mu).powi(2)).sum::<f64>() / w;
            let sigma = var.sqrt();
            if !(sigma >= SIGMA_FLOOR) {
                return None;
            }
            *c = Component {
                weight: w / n as f64,
                mu,
                sigma,
            };
        }
    }
    let ll = *trace.last()?;
    Some(Run {
        components: comps,
        log_likelihood: ll,
        iterations: MAX_ITERATIONS,
        trace,
    })
}

/// Best of [`RESTARTS`] seeded EM runs by log-likelihood.
pub fn fit_gmm(values: &[f64], k: usize, seed: u64) -> Result<GmmResult> {
    if k == 0 {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    if values.len() <= 3 * k {
        return Err(Error::InsufficientData(format!("{} values for {k} components", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let run = |restart: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((k as u64) << 32) | restart as u64);
        let centers = kmeans_pp(values, k, &mut rng);
        em(values, initial_components(values, &centers))
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<Option<Run>> = {
        use rayon::prelude::*;
        (0..RESTARTS).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Option<Run>> = (0..RESTARTS).map(run).collect();

    let best = runs
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.log_likelihood > a.log_likelihood { b } else { a })
        .ok_or(Error::MixtureCollapse { restarts: RESTARTS })?;
    let mut components = best.components;
    components.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    let n = values.len();
    let p = parameter_count(k) as f64;
    Ok(GmmResult {
        k,
        components,
        log_likelihood: best.log_likelihood,
        aic: 2.0 * p - 2.0 * best.log_likelihood,
        bic: p * (n as f64).ln() - 2.0 * best.log_likelihood,
        n,
        iterations: best.iterations,
        trace: best.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub k_aic: usize,
    pub k_bic: usize,
    /// The BIC choice when the criteria disagree.
    pub k: usize,
    pub fits: Vec<GmmResult>,
}

/// The `k` whose step from `k - 1` gives the largest criterion drop; 1 when no
/// step improves the criterion.
fn largest_drop(criteria: &[f64]) -> usize {
    let mut best = (1, 0.0);
    for i in 1..criteria.len() {
        let drop = criteria[i - 1] - criteria[i];
        if drop > best.1 {
            best = (i + 1, drop);
        }
    }
    best.0
}

/// Fits `k = 1..=k_max` and picks the component count with the largest
/// marginal AIC and BIC reduction. Counts that cannot be fitted are skipped.
pub fn select_k(values: &[f64], k_max: usize, seed: u64) -> Result<Selection> {
    let mut fits = Vec::new();
    for k in 1..=k_max {
        match fit_gmm(values, k, seed) {
            Ok(f) => fits.push(f),
            Err(e) if k == 1 => return Err(e),
            Err(e) => {
                log::warn!("mixture with {k} components skipped: {e}");
                break;
            }
        }
    }
    let k_aic = largest_drop(&fits.iter().map(|f| f.aic).collect::<Vec<_>>());
    let k_bic = largest_drop(&fits.iter().map(|f| f.bic).collect::<Vec<_>>());
    Ok(Selection {
        k_aic,
        k_bic,
        k: k_bic,
        fits,
    })
}

/// Share of peaks whose sign runs against the cohort polarity; zero peaks are
/// not contrary.
pub fn contrary_fraction(peaks: &[f64], polarity: Polarity) -> Result<f64> {
    if peaks.is_empty() {
        return Err(Error::InsufficientData("no peak values".into()));
    }
    let contrary = peaks.iter().filter(|&&p| p * polarity.sign() < 0.0).count();
    Ok(contrary as f64 / peaks.len() as f64)
}
