//! Direct h-step projection regressions: y_{t+h} on (1, y_t, ..., y_{t-p+1}).

use super::{aicc, is_constant, variance_floor, CoefficientPath, DynamicsError, UnivariateForecast};
use crate::linalg::{least_squares, least_squares_multi, log_det_covariance, ridge_multi, LinalgError, Matrix};

const RIDGE_PENALTY: f64 = 1e-8;

/// Design rows `[1, y_t, y_{t-1}, ..., y_{t-p+1}]` (lags of every column in
/// `cols`, grouped by lag) for each `t` in `ts`.
fn lag_design(cols: &[&[f64]], p: usize, ts: std::ops::RangeInclusive<usize>) -> Matrix<f64> {
    let width = 1 + cols.len() * p;
    let mut data = Vec::with_capacity(ts.clone().count() * width);
    for t in ts {
        data.push(1.0);
        for lag in 0..p {
            for c in cols {
                data.push(c[t - lag]);
            }
        }
    }
    let rows = data.len() / width;
    Matrix::from_row_major(rows, width, data).expect("consistent design shape")
}

fn last_regressors(cols: &[&[f64]], p: usize) -> Vec<f64> {
    let n = cols[0].len();
    let mut x = vec![1.0];
    for lag in 0..p {
        for c in cols {
            x.push(c[n - 1 - lag]);
        }
    }
    x
}

/// Direct AR forecast `h` steps past the end of `series`, with the lag order
/// chosen by AICc over `1..=p_max` on a common estimation sample.
pub fn fit_forecast_ar(series: &[f64], h: usize, p_max: usize) -> Result<UnivariateForecast, DynamicsError> {
    if h == 0 || p_max == 0 {
        return Err(DynamicsError::InvalidSpec("h and p_max must be >= 1".into()));
    }
    let n = series.len();
    if n <= p_max + h {
        return Err(DynamicsError::SeriesTooShort {
            needed: p_max + h + 1,
            available: n,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    if is_constant(series) {
        return Ok(UnivariateForecast {
            value: series[n - 1],
            order: "AR(0)".into(),
            aicc: None,
            flagged: false,
        });
    }
    let floor = variance_floor(series);
    let ts = (p_max - 1)..=(n - 1 - h);
    let n_eff = ts.clone().count();
    let target: Vec<f64> = ts.clone().map(|t| series[t + h]).collect();
    let cols = [series];
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut rank_deficient = false;
    for p in 1..=p_max {
        if n_eff <= p + 3 {
            continue;
        }
        let x = lag_design(&cols, p, ts.clone());
        let fit = match least_squares(&x, &target) {
            Ok(f) => f,
            Err(LinalgError::RankDeficient { .. }) => {
                rank_deficient = true;
                continue;
            }
            Err(_) => continue,
        };
        let Some(score) = aicc(n_eff, fit.rss, p + 2, floor) else { continue };
        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, p, fit.coefficients));
        }
    }
    let Some((score, p, beta)) = best else {
        return Err(if rank_deficient {
            DynamicsError::RankDeficient
        } else {
            DynamicsError::SeriesTooShort {
                needed: p_max + h + 4,
                available: n,
            }
        });
    };
    let x = last_regressors(&cols, p);
    Ok(UnivariateForecast {
        value: x.iter().zip(&beta).map(|(a, b)| a * b).sum(),
        order: format!("AR({p})"),
        aicc: Some(score),
        flagged: false,
    })
}

/// Direct VAR forecast with its selected lag order.
#[derive(Debug, Clone, PartialEq)]
pub struct VarForecast {
    pub values: Vec<f64>,
    pub order: usize,
    pub aicc: Option<f64>,
    /// Ridge fallback was used because every OLS design was rank deficient.
    pub flagged: bool,
}

pub fn fit_forecast_var(path: &CoefficientPath, h: usize, p_max: usize) -> Result<VarForecast, DynamicsError> {
    var_direct(&path.values, h, p_max)
}

/// Direct VAR projection on row-major observations. Constant coordinates are
/// carried forward unchanged and left out of the regression.
pub fn var_direct(rows: &[Vec<f64>], h: usize, p_max: usize) -> Result<VarForecast, DynamicsError> {
    if h == 0 || p_max == 0 {
        return Err(DynamicsError::InvalidSpec("h and p_max must be >= 1".into()));
    }
    let n = rows.len();
    if n == 0 {
        return Err(DynamicsError::EmptyPath);
    }
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(DynamicsError::InvalidSpec("ragged coefficient rows".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    if n <= k * p_max + h {
        return Err(DynamicsError::SeriesTooShort {
            needed: k * p_max + h + 1,
            available: n,
        });
    }
    let columns: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let active: Vec<usize> = (0..k).filter(|&j| !is_constant(&columns[j])).collect();
    let mut values = rows[n - 1].clone();
    if active.is_empty() {
        return Ok(VarForecast {
            values,
            order: 0,
            aicc: None,
            flagged: false,
        });
    }
    let cols: Vec<&[f64]> = active.iter().map(|&j| columns[j].as_slice()).collect();
    let kk = cols.len();
    let floor = cols.iter().map(|c| variance_floor(c)).fold(0.0, f64::max);
    let ts = (p_max - 1)..=(n - 1 - h);
    let n_eff = ts.clone().count();
    let mut y = Matrix::zeros(n_eff, kk);
    for (r, t) in ts.clone().enumerate() {
        for (c, col) in cols.iter().enumerate() {
            y.set(r, c, col[t + h]);
        }
    }

    let select = |ridge: bool| -> Option<(f64, usize, Matrix<f64>)> {
        let mut best: Option<(f64, usize, Matrix<f64>)> = None;
        for p in 1..=p_max {
            let m = 1 + kk * p;
            if n_eff <= m + kk + 1 {
                continue;
            }
            let x = lag_design(&cols, p, ts.clone());
            let fit = if ridge {
                ridge_multi(&x, &y, RIDGE_PENALTY)
            } else {
                least_squares_multi(&x, &y)
            };
            let Ok(fit) = fit else { continue };
            let (nf, mf, kf) = (n_eff as f64, m as f64, kk as f64);
            let score = nf * log_det_covariance(&fit.residuals, floor) + nf * kf * (nf + mf) / (nf - mf - kf - 1.0);
            if !score.is_finite() {
                continue;
            }
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, p, fit.coefficients));
            }
        }
        best
    };
    let (flagged, (score, p, beta)) = match select(false) {
        Some(b) => (false, b),
        None => match select(true) {
            Some(b) => (true, b),
            None => {
                return Err(if n_eff > 2 * kk + 2 {
                    DynamicsError::RankDeficient
                } else {
                    DynamicsError::SeriesTooShort {
                        needed: 2 * kk + 2 + h + p_max,
                        available: n,
                    }
                })
            }
        },
    };
    let x = last_regressors(&cols, p);
    for (c, &j) in active.iter().enumerate() {
        values[j] = (0..x.len()).map(|r| x[r] * beta.get(r, c)).sum();
    }
    Ok(VarForecast {
        values,
        order: p,
        aicc: Some(score),
        flagged,
    })
}
