//! ARIMA(p, d, q) by conditional sum of squares with d from successive KPSS
//! tests and (p, q) by AICc.

use super::{aicc, difference, select_d, variance_floor, DynamicsError, OrderLimits, UnivariateForecast};
use crate::linalg::{least_squares, Matrix};
use crate::optimize::levenberg_marquardt;

const LM_MAX_ITER: usize = 200;
const LM_RTOL: f64 = 1e-10;
/// Partial autocorrelations must stay this far inside the unit interval.
const ROOT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaFit {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Mean of the differenced series (a drift when d = 1); absent for d = 2.
    pub mean: Option<f64>,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub aicc: Option<f64>,
    /// No candidate converged and the fit fell back to a random walk.
    pub flagged: bool,
    level_tails: Vec<f64>,
    w: Vec<f64>,
    resid: Vec<f64>,
    start: usize,
    last: f64,
}

impl ArimaFit {
    pub fn order_label(&self) -> String {
        if self.flagged {
            "RW".into()
        } else {
            format!("ARIMA({},{},{})", self.p, self.d, self.q)
        }
    }

    /// h-step forecast on the original scale.
    pub fn forecast(&self, h: usize) -> f64 {
        if self.flagged || h == 0 {
            return self.last;
        }
        let n = self.w.len();
        let mu = self.mean.unwrap_or(0.0);
        let mut ext = self.w.clone();
        for i in 0..h {
            let t = n + i;
            let mut v = mu;
            for (j, &a) in self.phi.iter().enumerate() {
                v += a * (ext[t - 1 - j] - mu);
            }
            for (j, &b) in self.theta.iter().enumerate() {
                let s = t - 1 - j;
                if s < n && s >= self.start {
                    v += b * self.resid[s];
                }
            }
            ext.push(v);
        }
        let mut path = ext.split_off(n);
        for &tail in self.level_tails.iter().rev() {
            let mut acc = tail;
            for v in path.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        path[h - 1]
    }

    pub(crate) fn univariate(&self, h: usize) -> UnivariateForecast {
        UnivariateForecast {
            value: self.forecast(h),
            order: self.order_label(),
            aicc: self.aicc,
            flagged: self.flagged,
        }
    }
}

/// True when the polynomial `1 - c_1 z - ... - c_p z^p` has all roots outside
/// the unit circle, checked through the step-down (reverse Levinson)
/// recursion on partial autocorrelations.
pub(crate) fn is_stationary(coefs: &[f64]) -> bool {
    let mut a = coefs.to_vec();
    for k in (1..=a.len()).rev() {
        let r = a[k - 1];
        if !(r.abs() < 1.0 - ROOT_MARGIN) {
            return false;
        }
        let denom = 1.0 - r * r;
        a = (0..k - 1).map(|j| (a[j] + r * a[k - 2 - j]) / denom).collect();
    }
    true
}

fn is_invertible(theta: &[f64]) -> bool {
    let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
    is_stationary(&neg)
}

/// Conditional residuals for t >= start; pre-sample innovations are zero.
fn css_residuals(w: &[f64], mu: f64, phi: &[f64], theta: &[f64], start: usize, e: &mut [f64]) {
    for t in start..w.len() {
        let mut v = w[t] - mu;
        for (j, &a) in phi.iter().enumerate() {
            v -= a * (w[t - 1 - j] - mu);
        }
        for (j, &b) in theta.iter().enumerate() {
            if t >= start + 1 + j {
                v -= b * e[t - 1 - j - start];
            }
        }
        e[t - start] = v;
    }
}

struct Candidate {
    mean: Option<f64>,
    phi: Vec<f64>,
    theta: Vec<f64>,
    sse: f64,
    resid: Vec<f64>,
}

fn initial_phi(w: &[f64], mu: f64, p: usize, start: usize) -> Vec<f64> {
    if p == 0 {
        return Vec::new();
    }
    let rows: Vec<Vec<f64>> = (start..w.len())
        .map(|t| (1..=p).map(|j| w[t - j] - mu).collect())
        .collect();
    let y: Vec<f64> = (start..w.len()).map(|t| w[t] - mu).collect();
    let Ok(x) = Matrix::from_rows(&rows) else {
        return vec![0.0; p];
    };
    match least_squares(&x, &y) {
        Ok(fit) => {
            let mut phi = fit.coefficients;
            for _ in 0..20 {
                if is_stationary(&phi) {
                    return phi;
                }
                phi.iter_mut().for_each(|v| *v *= 0.5);
            }
            vec![0.0; p]
        }
        Err(_) => vec![0.0; p],
    }
}

/// CSS fit of one (p, q) candidate; `None` when the optimiser does not converge.
fn fit_candidate(w: &[f64], p: usize, q: usize, with_mean: bool, start: usize) -> Option<Candidate> {
    let n_res = w.len() - start;
    let mu0 = if with_mean {
        w[start..].iter().sum::<f64>() / n_res as f64
    } else {
        0.0
    };
    let mut resid = vec![0.0; n_res];
    if p == 0 && q == 0 {
        css_residuals(w, mu0, &[], &[], start, &mut resid);
        let sse = resid.iter().map(|v| v * v).sum();
        return Some(Candidate {
            mean: with_mean.then_some(mu0),
            phi: Vec::new(),
            theta: Vec::new(),
            sse,
            resid,
        });
    }
    let offset = usize::from(with_mean);
    let mut x0 = Vec::with_capacity(offset + p + q);
    if with_mean {
        x0.push(mu0);
    }
    x0.extend(initial_phi(w, mu0, p, start));
    x0.extend(std::iter::repeat(0.0).take(q));
    let split = |x: &[f64]| {
        let mu = if with_mean { x[0] } else { 0.0 };
        (mu, x[offset..offset + p].to_vec(), x[offset + p..].to_vec())
    };
    let result = levenberg_marquardt(
        |x, r| {
            let (mu, phi, theta) = split(x);
            if !is_stationary(&phi) || !is_invertible(&theta) {
                return false;
            }
            css_residuals(w, mu, &phi, &theta, start, r);
            r.iter().all(|v| v.is_finite())
        },
        &x0,
        n_res,
        LM_MAX_ITER,
        LM_RTOL,
    );
    if !result.converged || !result.fx.is_finite() {
        return None;
    }
    let (mu, phi, theta) = split(&result.x);
    css_residuals(w, mu, &phi, &theta, start, &mut resid);
    Some(Candidate {
        mean: with_mean.then_some(mu),
        phi,
        theta,
        sse: result.fx,
        resid,
    })
}

/// Fits the AICc-best ARIMA model within `limits`. Every candidate is
/// conditioned on the same first `p_max` observations of the differenced series.
pub fn fit_arima(series: &[f64], limits: &OrderLimits) -> Result<ArimaFit, DynamicsError> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    let needed = (10 + limits.d_max).max(limits.d_max + limits.p_max + 4);
    if series.len() < needed {
        return Err(DynamicsError::SeriesTooShort {
            needed,
            available: series.len(),
        });
    }
    let d = select_d(series, limits.d_max)?;
    let mut level_tails = Vec::with_capacity(d);
    let mut w = series.to_vec();
    for _ in 0..d {
        level_tails.push(*w.last().expect("non-empty"));
        w = difference(&w);
    }
    let start = limits.p_max;
    let n_res = w.len() - start;
    let with_mean = d <= 1;
    let floor = variance_floor(&w);

    let mut best: Option<(f64, usize, usize, Candidate)> = None;
    for p in 0..=limits.p_max {
        for q in 0..=limits.q_max {
            let k = p + q + usize::from(with_mean) + 1;
            if n_res <= k + 1 {
                continue;
            }
            let Some(c) = fit_candidate(&w, p, q, with_mean, start) else { continue };
            let Some(score) = aicc(n_res, c.sse, k, floor) else { continue };
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, p, q, c));
            }
        }
    }
    let last = *series.last().expect("non-empty");
    Ok(match best {
        Some((score, p, q, c)) => ArimaFit {
            p,
            d,
            q,
            mean: c.mean,
            phi: c.phi,
            theta: c.theta,
            aicc: Some(score),
            flagged: false,
            level_tails,
            w,
            resid: {
                let mut full = vec![0.0; start];
                full.extend(c.resid);
                full
            },
            start,
            last,
        },
        None => ArimaFit {
            p: 0,
            d,
            q: 0,
            mean: None,
            phi: Vec::new(),
            theta: Vec::new(),
            aicc: None,
            flagged: true,
            level_tails,
            w,
            resid: Vec::new(),
            start,
            last,
        },
    })
}

pub fn fit_forecast_arima(series: &[f64], h: usize, limits: &OrderLimits) -> Result<UnivariateForecast, DynamicsError> {
    if h == 0 {
        return Err(DynamicsError::InvalidSpec("h must be >= 1".into()));
    }
    Ok(fit_arima(series, limits)?.univariate(h))
}
