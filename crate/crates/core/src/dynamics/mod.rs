//! Time-series models for daily coefficient paths and their h-step forecasts.

mod ar;
mod arima;
mod ets;
mod kpss;

pub use ar::{fit_forecast_ar, fit_forecast_var, var_direct, VarForecast};
pub use arima::{fit_arima, fit_forecast_arima, ArimaFit};
pub use ets::{ets_filter, fit_ets, fit_forecast_ets, EtsFit, EtsKind};
pub use kpss::{difference, kpss_statistic, select_d, KpssResult, KPSS_CRITICAL_5PCT};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DynamicsError {
    #[error("coefficient path is empty")]
    EmptyPath,
    #[error("series too short: need {needed} observations, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("invalid dynamics specification: {0}")]
    InvalidSpec(String),
}

/// Which cross-sectional model produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurfaceModel {
    #[serde(rename = "GG")]
    Gg,
    #[serde(rename = "CT")]
    Ct,
}

impl SurfaceModel {
    pub fn coefficient_count(self) -> usize {
        match self {
            SurfaceModel::Gg => 5,
            SurfaceModel::Ct => 7,
        }
    }
}

impl fmt::Display for SurfaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurfaceModel::Gg => "GG",
            SurfaceModel::Ct => "CT",
        })
    }
}

/// Daily coefficient vectors on consecutive panel dates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    pub dates: Vec<NaiveDate>,
    /// One row per date.
    pub values: Vec<Vec<f64>>,
    pub model_tag: SurfaceModel,
}

impl CoefficientPath {
    pub fn new(
        dates: Vec<NaiveDate>,
        values: Vec<Vec<f64>>,
        model_tag: SurfaceModel,
    ) -> Result<Self, DynamicsError> {
        if values.is_empty() {
            return Err(DynamicsError::EmptyPath);
        }
        let k = model_tag.coefficient_count();
        if dates.len() != values.len() || values.iter().any(|r| r.len() != k) {
            return Err(DynamicsError::InvalidSpec(format!(
                "expected {} rows of width {k}",
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DynamicsError::InvalidSpec("dates must be strictly increasing".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(Self {
            dates,
            values,
            model_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.model_tag.coefficient_count()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DynamicsFamily {
    #[serde(rename = "RW")]
    Rw,
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "ARIMA")]
    Arima,
    #[serde(rename = "ETS")]
    Ets,
    #[serde(rename = "VAR")]
    Var,
}

impl DynamicsFamily {
    pub const ALL: [DynamicsFamily; 5] = [
        DynamicsFamily::Rw,
        DynamicsFamily::Ar,
        DynamicsFamily::Arima,
        DynamicsFamily::Ets,
        DynamicsFamily::Var,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DynamicsFamily::Rw => "RW",
            DynamicsFamily::Ar => "AR",
            DynamicsFamily::Arima => "ARIMA",
            DynamicsFamily::Ets => "ETS",
            DynamicsFamily::Var => "VAR",
        }
    }
}

impl fmt::Display for DynamicsFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DynamicsFamily {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DynamicsFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| DynamicsError::InvalidSpec(format!("unknown family {s:?}")))
    }
}

/// Forecast horizons supported by the experiment.
pub const HORIZONS: [usize; 5] = [1, 2, 5, 10, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderLimits {
    pub p_max: usize,
    pub q_max: usize,
    pub d_max: usize,
}

impl Default for OrderLimits {
    fn default() -> Self {
        Self {
            p_max: 5,
            q_max: 3,
            d_max: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsSpec {
    pub family: DynamicsFamily,
    pub horizon: usize,
    pub order_limits: OrderLimits,
}

impl DynamicsSpec {
    pub fn new(
        family: DynamicsFamily,
        horizon: usize,
        order_limits: OrderLimits,
    ) -> Result<Self, DynamicsError> {
        if !HORIZONS.contains(&horizon) {
            return Err(DynamicsError::InvalidSpec(format!(
                "horizon {horizon} not in {HORIZONS:?}"
            )));
        }
        if order_limits.d_max > 2 {
            return Err(DynamicsError::InvalidSpec("d_max must be <= 2".into()));
        }
        Ok(Self {
            family,
            horizon,
            order_limits,
        })
    }
}

/// Per-coordinate fit summary for the diagnostics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostic {
    pub coordinate: usize,
    pub selected_order: String,
    pub aicc: Option<f64>,
    pub forecast: f64,
    /// Set when a fallback (RW or ridge) replaced the requested fit.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientForecast {
    pub origin_date: NaiveDate,
    pub horizon: usize,
    pub predicted: Vec<f64>,
    pub family: DynamicsFamily,
    pub diagnostics: Vec<FitDiagnostic>,
}

/// Scalar forecast with the order selected for it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateForecast {
    pub value: f64,
    pub order: String,
    pub aicc: Option<f64>,
    pub flagged: bool,
}

pub fn forecast_rw(path: &CoefficientPath, h: usize) -> Result<CoefficientForecast, DynamicsError> {
    let last = path.values.last().ok_or(DynamicsError::EmptyPath)?;
    let origin_date = *path.dates.last().ok_or(DynamicsError::EmptyPath)?;
    Ok(CoefficientForecast {
        origin_date,
        horizon: h,
        predicted: last.clone(),
        family: DynamicsFamily::Rw,
        diagnostics: last
            .iter()
            .enumerate()
            .map(|(coordinate, &forecast)| FitDiagnostic {
                coordinate,
                selected_order: "RW".into(),
                aicc: None,
                forecast,
                flagged: false,
            })
            .collect(),
    })
}

/// Forecasts of one family for several horizons. ARIMA and ETS are fitted
/// once per coordinate and their forecast functions evaluated at each horizon;
/// AR and VAR run one projection regression per horizon.
pub fn forecast_horizons(
    path: &CoefficientPath,
    family: DynamicsFamily,
    horizons: &[usize],
    limits: &OrderLimits,
) -> Result<Vec<CoefficientForecast>, DynamicsError> {
    let origin_date = *path.dates.last().ok_or(DynamicsError::EmptyPath)?;
    if horizons.iter().any(|&h| h == 0) {
        return Err(DynamicsError::InvalidSpec("horizon must be >= 1".into()));
    }
    let k = path.width();
    let assemble = |h: usize, diagnostics: Vec<FitDiagnostic>| CoefficientForecast {
        origin_date,
        horizon: h,
        predicted: diagnostics.iter().map(|d| d.forecast).collect(),
        family,
        diagnostics,
    };
    let univariate = |coordinate: usize, f: UnivariateForecast| FitDiagnostic {
        coordinate,
        selected_order: f.order,
        aicc: f.aicc,
        forecast: f.value,
        flagged: f.flagged,
    };
    match family {
        DynamicsFamily::Rw => horizons.iter().map(|&h| forecast_rw(path, h)).collect(),
        DynamicsFamily::Ar => horizons
            .iter()
            .map(|&h| {
                let diags = (0..k)
                    .map(|j| Ok(univariate(j, fit_forecast_ar(&path.column(j), h, limits.p_max)?)))
                    .collect::<Result<Vec<_>, DynamicsError>>()?;
                Ok(assemble(h, diags))
            })
            .collect(),
        DynamicsFamily::Arima | DynamicsFamily::Ets => {
            let mut per_h: Vec<Vec<FitDiagnostic>> = vec![Vec::with_capacity(k); horizons.len()];
            for j in 0..k {
                let column = path.column(j);
                let forecasts: Vec<UnivariateForecast> = if family == DynamicsFamily::Arima {
                    let fit = fit_arima(&column, limits)?;
                    horizons.iter().map(|&h| fit.univariate(h)).collect()
                } else {
                    let fit = fit_ets(&column)?;
                    horizons.iter().map(|&h| fit.univariate(h)).collect()
                };
                for (slot, f) in per_h.iter_mut().zip(forecasts) {
                    slot.push(univariate(j, f));
                }
            }
            Ok(horizons
                .iter()
                .zip(per_h)
                .map(|(&h, d)| assemble(h, d))
                .collect())
        }
        DynamicsFamily::Var => horizons
            .iter()
            .map(|&h| {
                let f = fit_forecast_var(path, h, limits.p_max)?;
                let diags = f
                    .values
                    .iter()
                    .enumerate()
                    .map(|(coordinate, &forecast)| FitDiagnostic {
                        coordinate,
                        selected_order: format!("VAR({})", f.order),
                        aicc: f.aicc,
                        forecast,
                        flagged: f.flagged,
                    })
                    .collect();
                Ok(assemble(h, diags))
            })
            .collect(),
    }
}

/// Single-horizon forecast for one family.
pub fn forecast(path: &CoefficientPath, spec: &DynamicsSpec) -> Result<CoefficientForecast, DynamicsError> {
    forecast_horizons(path, spec.family, &[spec.horizon], &spec.order_limits)
        .map(|mut v| v.remove(0))
}

/// Variance floor used in information criteria so that exact fits compare
/// on equal terms and the most parsimonious one wins.
pub(crate) fn variance_floor(y: &[f64]) -> f64 {
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (1e-9 * scale).powi(2).max(1e-300)
}

/// Small-sample corrected AIC for a Gaussian model with `k` parameters
/// (including the innovation variance), up to an additive constant.
pub(crate) fn aicc(n: usize, sse: f64, k: usize, var_floor: f64) -> Option<f64> {
    let nf = n as f64;
    if n <= k + 1 || !sse.is_finite() {
        return None;
    }
    let kf = k as f64;
    Some(nf * (sse / nf).max(var_floor).ln() + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0))
}

pub(crate) fn is_constant(y: &[f64]) -> bool {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        crate::surface_data::business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), n)
    }

    fn constant_path(n: usize) -> CoefficientPath {
        let row = vec![0.3, 0.1, -0.2, 0.05, 0.0];
        CoefficientPath::new(dates(n), vec![row; n], SurfaceModel::Gg).unwrap()
    }

    #[test]
    fn rw_returns_last_row() {
        let mut rows = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5]; 3];
        rows[2] = vec![0.3, 0.1, 0.0, 0.0, 0.0];
        let path = CoefficientPath::new(dates(3), rows, SurfaceModel::Gg).unwrap();
        let f30 = forecast_rw(&path, 30).unwrap();
        assert_eq!(f30.predicted, vec![0.3, 0.1, 0.0, 0.0, 0.0]);
        assert_eq!(forecast_rw(&path, 1).unwrap().predicted, f30.predicted);
        let one = CoefficientPath::new(dates(1), vec![vec![1.0; 5]], SurfaceModel::Gg).unwrap();
        assert_eq!(forecast_rw(&one, 5).unwrap().predicted, vec![1.0; 5]);
    }

    #[test]
    fn empty_path_rejected() {
        assert_eq!(
            CoefficientPath::new(vec![], vec![], SurfaceModel::Gg).unwrap_err(),
            DynamicsError::EmptyPath
        );
    }

    #[test]
    fn every_family_returns_constant_path() {
        let path = constant_path(120);
        for family in DynamicsFamily::ALL {
            let fs = forecast_horizons(&path, family, &HORIZONS, &OrderLimits::default()).unwrap();
            for f in fs {
                for (p, c) in f.predicted.iter().zip(&path.values[0]) {
                    assert!((p - c).abs() < 1e-6, "{family} h={}: {p} vs {c}", f.horizon);
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DynamicsSpec::new(DynamicsFamily::Ar, 3, OrderLimits::default()).is_err());
        let bad = OrderLimits { d_max: 3, ..OrderLimits::default() };
        assert!(DynamicsSpec::new(DynamicsFamily::Ar, 5, bad).is_err());
        assert!(DynamicsSpec::new(DynamicsFamily::Ar, 5, OrderLimits::default()).is_ok());
    }

    #[test]
    fn family_names_round_trip() {
        for f in DynamicsFamily::ALL {
            assert_eq!(f.name().parse::<DynamicsFamily>().unwrap(), f);
        }
    }
}
