//! Additive-error exponential smoothing without seasonality: simple, Holt
//! linear trend, and damped trend. Smoothing parameters minimise the
//! one-step SSE (the Gaussian likelihood up to a constant); initial states
//! come from a linear regression on the first observations.

use super::{aicc, variance_floor, DynamicsError, UnivariateForecast};
use crate::optimize::nelder_mead;

const MIN_LEN: usize = 10;
const INIT_WINDOW: usize = 10;
const PHI_LO: f64 = 0.8;
const PHI_HI: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EtsKind {
    Simple,
    Holt,
    Damped,
}

impl EtsKind {
    pub fn label(self) -> &'static str {
        match self {
            EtsKind::Simple => "ETS(A,N,N)",
            EtsKind::Holt => "ETS(A,A,N)",
            EtsKind::Damped => "ETS(A,Ad,N)",
        }
    }

    fn smoothing_params(self) -> usize {
        match self {
            EtsKind::Simple => 1,
            EtsKind::Holt => 2,
            EtsKind::Damped => 3,
        }
    }

    fn initial_states(self) -> usize {
        match self {
            EtsKind::Simple => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtsFit {
    pub kind: EtsKind,
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    /// Final level and trend states.
    pub level: f64,
    pub trend: f64,
    pub sse: f64,
    pub aicc: Option<f64>,
}

impl EtsFit {
    pub fn forecast(&self, h: usize) -> f64 {
        match self.kind {
            EtsKind::Simple => self.level,
            EtsKind::Holt => self.level + h as f64 * self.trend,
            EtsKind::Damped => {
                let mut damp = 0.0;
                let mut pw = 1.0;
                for _ in 0..h {
                    pw *= self.phi;
                    damp += pw;
                }
                self.level + damp * self.trend
            }
        }
    }

    pub(crate) fn univariate(&self, h: usize) -> UnivariateForecast {
        UnivariateForecast {
            value: self.forecast(h),
            order: self.kind.label().into(),
            aicc: self.aicc,
            flagged: false,
        }
    }
}

/// Runs the smoothing recursions from `(level0, trend0)` and returns the
/// fit with its one-step SSE; the information criterion is left unset.
pub fn ets_filter(
    kind: EtsKind,
    alpha: f64,
    beta: f64,
    phi: f64,
    level0: f64,
    trend0: f64,
    series: &[f64],
) -> EtsFit {
    let (phi, beta, mut b) = match kind {
        EtsKind::Simple => (0.0, 0.0, 0.0),
        EtsKind::Holt => (1.0, beta, trend0),
        EtsKind::Damped => (phi, beta, trend0),
    };
    let mut l = level0;
    let mut sse = 0.0;
    for &y in series {
        let fitted = l + phi * b;
        let e = y - fitted;
        sse += e * e;
        l = fitted + alpha * e;
        b = phi * b + beta * e;
    }
    EtsFit {
        kind,
        alpha,
        beta,
        phi: if kind == EtsKind::Holt { 1.0 } else { phi },
        level: l,
        trend: b,
        sse,
        aicc: None,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Intercept (state at t = 0) and slope of an OLS line through the first
/// observations.
fn initial_states(series: &[f64]) -> (f64, f64, f64) {
    let m = series.len().min(INIT_WINDOW);
    let ts: Vec<f64> = (1..=m).map(|t| t as f64).collect();
    let tbar = ts.iter().sum::<f64>() / m as f64;
    let ybar = series[..m].iter().sum::<f64>() / m as f64;
    let sxx: f64 = ts.iter().map(|t| (t - tbar).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(series).map(|(t, y)| (t - tbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    (ybar - slope * tbar, slope, ybar)
}

fn fit_kind(kind: EtsKind, series: &[f64]) -> EtsFit {
    let (intercept, slope, mean0) = initial_states(series);
    let (l0, b0) = match kind {
        EtsKind::Simple => (mean0, 0.0),
        _ => (intercept, slope),
    };
    // unconstrained coordinates: alpha in (0,1), beta = alpha * s, phi in [PHI_LO, PHI_HI]
    let decode = |x: &[f64]| {
        let alpha = logistic(x[0]);
        let beta = if x.len() > 1 { alpha * logistic(x[1]) } else { 0.0 };
        let phi = if x.len() > 2 {
            PHI_LO + (PHI_HI - PHI_LO) * logistic(x[2])
        } else {
            1.0
        };
        (alpha, beta, phi)
    };
    let mut x0 = vec![logit(0.5)];
    if kind != EtsKind::Simple {
        x0.push(logit(0.1));
    }
    if kind == EtsKind::Damped {
        x0.push(0.0);
    }
    let step = vec![1.0; x0.len()];
    let opt = nelder_mead(
        |x| {
            let (a, b, p) = decode(x);
            let s = ets_filter(kind, a, b, p, l0, b0, series).sse;
            if s.is_finite() {
                s
            } else {
                f64::MAX
            }
        },
        &x0,
        &step,
        400 * x0.len(),
        1e-10,
    );
    let (a, b, p) = decode(&opt.x);
    let mut fit = ets_filter(kind, a, b, p, l0, b0, series);
    // alpha = 1 is the random-walk boundary the logistic map cannot reach
    if kind == EtsKind::Simple {
        let rw = ets_filter(kind, 1.0, 0.0, 1.0, l0, 0.0, series);
        if rw.sse < fit.sse {
            fit = rw;
        }
    }
    fit
}

/// Fits all three variants and keeps the AICc winner.
pub fn fit_ets(series: &[f64]) -> Result<EtsFit, DynamicsError> {
    if series.len() < MIN_LEN {
        return Err(DynamicsError::SeriesTooShort {
            needed: MIN_LEN,
            available: series.len(),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    let floor = variance_floor(series);
    let n = series.len();
    let mut best: Option<EtsFit> = None;
    for kind in [EtsKind::Simple, EtsKind::Holt, EtsKind::Damped] {
        let mut fit = fit_kind(kind, series);
        let k = kind.smoothing_params() + kind.initial_states() + 1;
        fit.aicc = aicc(n, fit.sse, k, floor);
        let Some(score) = fit.aicc else { continue };
        if best.as_ref().map_or(true, |b| score < b.aicc.expect("scored")) {
            best = Some(fit);
        }
    }
    best.ok_or(DynamicsError::SeriesTooShort {
        needed: MIN_LEN,
        available: n,
    })
}

pub fn fit_forecast_ets(series: &[f64], h: usize) -> Result<UnivariateForecast, DynamicsError> {
    if h == 0 {
        return Err(DynamicsError::InvalidSpec("h must be >= 1".into()));
    }
    Ok(fit_ets(series)?.univariate(h))
}
