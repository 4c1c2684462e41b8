//! Rolling out-of-sample experiment: daily surface fits, coefficient
//! forecasts, surface reconstruction at the target day's quote coordinates.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cross_section::{
    evaluate_ct, evaluate_gg, fit_ct, fit_ct_stage1, fit_gg, fix_lambda, CtCoefficients, GgCoefficients,
    LambdaBounds, ModelError, MoneynessTransform,
};
use crate::dynamics::{
    forecast_horizons, CoefficientPath, DynamicsFamily, OrderLimits, SurfaceModel, HORIZONS,
};
use crate::surface_data::{PanelSeries, SurfacePanel};
use crate::tree::{fit_pruned, select_complexity, series_points, TreeError, TreeNode, TreeParams};

/// Forecasts are clamped to this interval.
pub const IV_CLAMP: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid rolling configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown model id {0:?}")]
    UnknownModel(String),
    #[error("insufficient history: need {needed} panels, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("cross-section model: {0}")]
    Model(#[from] ModelError),
    #[error("regression tree: {0}")]
    Tree(#[from] TreeError),
}

/// One of the competing forecasting models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelId {
    Rt,
    Param(SurfaceModel, DynamicsFamily),
}

impl ModelId {
    pub fn all() -> Vec<ModelId> {
        let mut v = vec![ModelId::Rt];
        for s in [SurfaceModel::Gg, SurfaceModel::Ct] {
            for f in DynamicsFamily::ALL {
                v.push(ModelId::Param(s, f));
            }
        }
        v
    }

    pub fn surface(&self) -> Option<SurfaceModel> {
        match self {
            ModelId::Rt => None,
            ModelId::Param(s, _) => Some(*s),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Rt => f.write_str("RT"),
            ModelId::Param(s, fam) => write!(f, "{s}-{fam}"),
        }
    }
}

impl FromStr for ModelId {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::all()
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| HarnessError::UnknownModel(s.to_string()))
    }
}

impl TryFrom<String> for ModelId {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.to_string()
    }
}

/// How the CT decay parameter is chosen for the out-of-sample run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Calibrated once on the first window and held fixed.
    #[default]
    Frozen,
    /// Median of the daily estimates inside each window.
    PerWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingConfig {
    pub window_len: usize,
    pub n_oos: usize,
    pub horizons: Vec<usize>,
    pub models: Vec<ModelId>,
    pub order_limits: OrderLimits,
    pub tree: TreeParams,
    pub cv_folds: usize,
    pub lambda_policy: LambdaPolicy,
    pub lambda_bounds: LambdaBounds,
    pub transform: MoneynessTransform,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window_len: 1167,
            n_oos: 500,
            horizons: HORIZONS.to_vec(),
            models: ModelId::all(),
            order_limits: OrderLimits::default(),
            tree: TreeParams::default(),
            cv_folds: 10,
            lambda_policy: LambdaPolicy::Frozen,
            lambda_bounds: LambdaBounds::default(),
            transform: MoneynessTransform::default(),
        }
    }
}

impl RollingConfig {
    /// Checks the invariants and returns a copy with horizons and models
    /// sorted and de-duplicated.
    pub fn normalized(&self) -> Result<RollingConfig, HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.window_len < 30 {
            return bad("window_len must be >= 30");
        }
        if self.n_oos == 0 {
            return bad("n_oos must be >= 1");
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !HORIZONS.contains(h)) {
            return Err(HarnessError::InvalidConfig(format!(
                "horizons must be a non-empty subset of {HORIZONS:?}"
            )));
        }
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be >= 2");
        }
        if self.order_limits.d_max > 2 || self.order_limits.p_max == 0 {
            return bad("order limits need p_max >= 1 and d_max <= 2");
        }
        let mut out = self.clone();
        out.horizons.sort_unstable();
        out.horizons.dedup();
        out.models.sort();
        out.models.dedup();
        Ok(out)
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin_date: NaiveDate,
    pub target_date: NaiveDate,
    pub horizon: usize,
    pub model: ModelId,
    pub moneyness: f64,
    pub maturity: f64,
    pub pred_iv: f64,
    pub real_iv: f64,
    /// Realised iv at the same coordinate on the origin date, when quoted.
    pub anchor_iv: Option<f64>,
    /// Origin-date fitted CT surface at the target coordinate.
    pub anchor_fit_iv: Option<f64>,
}

/// A (origin, model) or (origin, model, horizon) cell without forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub origin_date: NaiveDate,
    pub model: ModelId,
    pub horizon: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastSet {
    pub records: Vec<ForecastRecord>,
    pub gaps: Vec<Gap>,
}

impl ForecastSet {
    pub fn models(&self) -> Vec<ModelId> {
        let mut m: Vec<ModelId> = self.records.iter().map(|r| r.model).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.records.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }
}

/// Per-coordinate coefficient forecast summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub origin_date: NaiveDate,
    pub horizon: usize,
    pub model: ModelId,
    pub coordinate: usize,
    pub selected_order: String,
    pub aicc: Option<f64>,
    pub forecast: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowInfo {
    pub origin_date: NaiveDate,
    pub window_start: NaiveDate,
    pub panels_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingRun {
    pub forecasts: ForecastSet,
    pub diagnostics: Vec<DiagnosticRow>,
    pub windows: Vec<WindowInfo>,
    /// Frozen CT decay, when a CT model ran under the frozen policy.
    pub lambda: Option<f64>,
    pub alpha_star: Option<f64>,
    /// First-window tree pruned at `alpha_star`.
    pub in_sample_tree: Option<TreeNode<f64>>,
}

pub fn clamp_iv(x: f64) -> f64 {
    x.clamp(IV_CLAMP.0, IV_CLAMP.1)
}

/// Two-step λ over an in-sample span: daily profile estimates, then their median.
pub fn ct_lambda_policy(
    in_sample: &PanelSeries,
    transform: &MoneynessTransform,
    bounds: &LambdaBounds,
) -> Result<f64, ModelError> {
    let daily = fit_ct_stage1::<f64>(&in_sample.panels, transform, bounds)?;
    let lambdas: Vec<f64> = daily.iter().map(|e| e.lambda).collect();
    fix_lambda(&lambdas)
}

type DailyFit = Result<Vec<f64>, String>;

fn fit_row_gg(panel: &SurfacePanel, transform: &MoneynessTransform) -> DailyFit {
    fit_gg::<f64>(panel, transform)
        .map(|c| c.alpha.to_vec())
        .map_err(|e| format!("GG fit on {}: {e}", panel.date))
}

fn fit_row_ct(panel: &SurfacePanel, lambda: f64, transform: &MoneynessTransform) -> DailyFit {
    fit_ct::<f64>(panel, lambda, transform)
        .map(|c| c.beta.to_vec())
        .map_err(|e| format!("CT fit on {}: {e}", panel.date))
}

fn evaluate_surface(
    surface: SurfaceModel,
    coefficients: &[f64],
    lambda: f64,
    moneyness: f64,
    maturity: f64,
    transform: &MoneynessTransform,
) -> f64 {
    match surface {
        SurfaceModel::Gg => {
            let mut a = [0.0; 5];
            a.copy_from_slice(coefficients);
            evaluate_gg(&GgCoefficients::from_alpha(a), moneyness, maturity, transform)
        }
        SurfaceModel::Ct => {
            let mut b = [0.0; 7];
            b.copy_from_slice(coefficients);
            evaluate_ct(&CtCoefficients::from_beta(b, lambda), moneyness, maturity, transform)
        }
    }
}

struct OriginOutput {
    records: Vec<ForecastRecord>,
    gaps: Vec<Gap>,
    diagnostics: Vec<DiagnosticRow>,
    window: WindowInfo,
}

/// Model output for one origin: per-horizon predictions at the target quotes.
enum ModelOutcome {
    Predictions(Vec<(usize, Result<Vec<f64>, String>)>),
    Gap(String),
}

/// Runs the rolling experiment. The first `window_len` panels are the
/// in-sample period for calibrating λ and the tree complexity; origins are
/// the last panels of the `n_oos` successive windows.
pub fn run_rolling(series: &PanelSeries, config: &RollingConfig, seed: u64) -> Result<RollingRun, HarnessError> {
    let config = config.normalized()?;
    let w = config.window_len;
    let h_max = config.max_horizon();
    let needed = w + config.n_oos + h_max;
    if series.len() < needed {
        return Err(HarnessError::InsufficientHistory {
            needed,
            available: series.len(),
        });
    }
    let panels = &series.panels;
    let transform = config.transform;
    let in_sample = series.slice(0..w);
    let last_origin = w - 1 + config.n_oos - 1;

    let wants = |s: SurfaceModel| config.models.iter().any(|m| m.surface() == Some(s));
    let wants_rt = config.models.contains(&ModelId::Rt);

    let frozen_lambda = if wants(SurfaceModel::Ct) && config.lambda_policy == LambdaPolicy::Frozen {
        Some(ct_lambda_policy(&in_sample, &transform, &config.lambda_bounds)?)
    } else {
        None
    };
    let (alpha_star, in_sample_tree) = if wants_rt {
        let sel = select_complexity::<f64>(&in_sample, config.cv_folds, seed, &config.tree)?;
        let tree = sel.schedule.subtree_at(sel.alpha_star).clone();
        (Some(sel.alpha_star), Some(tree))
    } else {
        (None, None)
    };

    let days = &panels[..=last_origin];
    let gg_cache: Vec<DailyFit> = if wants(SurfaceModel::Gg) {
        days.par_iter().map(|p| fit_row_gg(p, &transform)).collect()
    } else {
        Vec::new()
    };
    let ct_cache: Vec<DailyFit> = match frozen_lambda {
        Some(l) => days.par_iter().map(|p| fit_row_ct(p, l, &transform)).collect(),
        None => Vec::new(),
    };
    let daily_lambda: Vec<Result<f64, String>> =
        if wants(SurfaceModel::Ct) && config.lambda_policy == LambdaPolicy::PerWindow {
            days.par_iter()
                .map(|p| {
                    crate::cross_section::estimate_daily_lambda::<f64>(p, &transform, &config.lambda_bounds)
                        .map(|e| e.lambda)
                        .map_err(|e| format!("lambda search on {}: {e}", p.date))
                })
                .collect()
        } else {
            Vec::new()
        };

    let origin_output = |o: usize| -> OriginOutput {
        let window = (o + 1 - w)..=o;
        let origin = &panels[o];
        let origin_date = origin.date;
        let mut anchors: HashMap<(u64, u64), f64> = HashMap::new();
        for q in &origin.quotes {
            anchors.entry((q.moneyness.to_bits(), q.maturity.to_bits())).or_insert(q.iv);
        }

        // CT coefficients over the window under the active λ policy
        let ct_window: Option<(f64, Vec<DailyFit>)> = if !wants(SurfaceModel::Ct) {
            None
        } else if let Some(l) = frozen_lambda {
            Some((l, ct_cache[window.clone()].to_vec()))
        } else {
            let lambdas: Result<Vec<f64>, String> = daily_lambda[window.clone()].iter().cloned().collect();
            match lambdas.and_then(|ls| fix_lambda(&ls).map_err(|e| e.to_string())) {
                Ok(l) => Some((l, panels[window.clone()].iter().map(|p| fit_row_ct(p, l, &transform)).collect())),
                Err(e) => Some((f64::NAN, vec![Err(e); w])),
            }
        };
        let anchor_fit = ct_window.as_ref().and_then(|(l, fits)| {
            fits.last()
                .and_then(|f| f.as_ref().ok())
                .map(|beta| (beta.clone(), *l))
        });

        let mut outcomes: Vec<(ModelId, ModelOutcome)> = Vec::with_capacity(config.models.len());
        let mut diagnostics = Vec::new();
        for &model in &config.models {
            let outcome = match model {
                ModelId::Rt => {
                    let points = series_points::<f64>(&series.slice(o + 1 - w..o + 1));
                    match fit_pruned(&points, &config.tree, alpha_star.expect("alpha frozen for RT")) {
                        Ok(tree) => ModelOutcome::Predictions(
                            config
                                .horizons
                                .iter()
                                .map(|&h| {
                                    let preds = panels[o + h]
                                        .quotes
                                        .iter()
                                        .map(|q| tree.predict(q.moneyness, q.maturity))
                                        .collect();
                                    (h, Ok(preds))
                                })
                                .collect(),
                        ),
                        Err(e) => ModelOutcome::Gap(format!("tree fit: {e}")),
                    }
                }
                ModelId::Param(surface, family) => {
                    let (lambda, fits): (f64, &[DailyFit]) = match surface {
                        SurfaceModel::Gg => (f64::NAN, &gg_cache[window.clone()]),
                        SurfaceModel::Ct => {
                            let (l, f) = ct_window.as_ref().expect("CT fits prepared");
                            (*l, f.as_slice())
                        }
                    };
                    match fits.iter().cloned().collect::<Result<Vec<Vec<f64>>, String>>() {
                        Err(e) => ModelOutcome::Gap(e),
                        Ok(rows) => {
                            let dates = panels[window.clone()].iter().map(|p| p.date).collect();
                            let path = CoefficientPath::new(dates, rows, surface);
                            let mut limits = config.order_limits;
                            if family == DynamicsFamily::Var {
                                let k = surface.coefficient_count();
                                limits.p_max = limits.p_max.min((w.saturating_sub(h_max + 1)) / k).max(1);
                            }
                            match path.and_then(|p| forecast_horizons(&p, family, &config.horizons, &limits)) {
                                Err(e) => ModelOutcome::Gap(format!("{family} forecast: {e}")),
                                Ok(fcs) => ModelOutcome::Predictions(
                                    fcs.into_iter()
                                        .map(|f| {
                                            for d in &f.diagnostics {
                                                diagnostics.push(DiagnosticRow {
                                                    origin_date,
                                                    horizon: f.horizon,
                                                    model,
                                                    coordinate: d.coordinate,
                                                    selected_order: d.selected_order.clone(),
                                                    aicc: d.aicc,
                                                    forecast: d.forecast,
                                                    flagged: d.flagged,
                                                });
                                            }
                                            let preds = panels[o + f.horizon]
                                                .quotes
                                                .iter()
                                                .map(|q| {
                                                    evaluate_surface(
                                                        surface,
                                                        &f.predicted,
                                                        lambda,
                                                        q.moneyness,
                                                        q.maturity,
                                                        &transform,
                                                    )
                                                })
                                                .collect();
                                            (f.horizon, Ok(preds))
                                        })
                                        .collect(),
                                ),
                            }
                        }
                    }
                }
            };
            outcomes.push((model, outcome));
        }

        let mut records = Vec::new();
        let mut gaps = Vec::new();
        for (model, outcome) in &outcomes {
            if let ModelOutcome::Gap(reason) = outcome {
                gaps.push(Gap {
                    origin_date,
                    model: *model,
                    horizon: None,
                    reason: reason.clone(),
                });
            }
        }
        for &h in &config.horizons {
            let target = &panels[o + h];
            for (model, outcome) in &outcomes {
                let ModelOutcome::Predictions(per_h) = outcome else { continue };
                let (_, preds) = per_h.iter().find(|(hh, _)| *hh == h).expect("every horizon predicted");
                let preds = match preds {
                    Ok(p) if p.iter().all(|v| v.is_finite()) => p,
                    Ok(_) => {
                        gaps.push(Gap {
                            origin_date,
                            model: *model,
                            horizon: Some(h),
                            reason: "non-finite prediction".into(),
                        });
                        continue;
                    }
                    Err(e) => {
                        gaps.push(Gap {
                            origin_date,
                            model: *model,
                            horizon: Some(h),
                            reason: e.clone(),
                        });
                        continue;
                    }
                };
                for (q, &p) in target.quotes.iter().zip(preds) {
                    records.push(ForecastRecord {
                        origin_date,
                        target_date: target.date,
                        horizon: h,
                        model: *model,
                        moneyness: q.moneyness,
                        maturity: q.maturity,
                        pred_iv: clamp_iv(p),
                        real_iv: q.iv,
                        anchor_iv: anchors.get(&(q.moneyness.to_bits(), q.maturity.to_bits())).copied(),
                        anchor_fit_iv: anchor_fit.as_ref().map(|(beta, l)| {
                            evaluate_surface(SurfaceModel::Ct, beta, *l, q.moneyness, q.maturity, &transform)
                        }),
                    });
                }
            }
        }
        diagnostics.sort_by(|a, b| (a.horizon, a.model, a.coordinate).cmp(&(b.horizon, b.model, b.coordinate)));
        OriginOutput {
            records,
            gaps,
            diagnostics,
            window: WindowInfo {
                origin_date,
                window_start: panels[o + 1 - w].date,
                panels_used: window.count(),
            },
        }
    };

    let outputs: Vec<OriginOutput> = (w - 1..=last_origin).into_par_iter().map(origin_output).collect();
    let mut run = RollingRun {
        forecasts: ForecastSet::default(),
        diagnostics: Vec::new(),
        windows: Vec::with_capacity(outputs.len()),
        lambda: frozen_lambda,
        alpha_star,
        in_sample_tree,
    };
    for out in outputs {
        run.forecasts.records.extend(out.records);
        run.forecasts.gaps.extend(out.gaps);
        run.diagnostics.extend(out.diagnostics);
        run.windows.push(out.window);
    }
    Ok(run)
}
