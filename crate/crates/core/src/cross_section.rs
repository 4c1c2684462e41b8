//! Daily cross-section fits of the implied-volatility surface.
//!
//! Two linear-in-parameters specifications are supported:
//!
//! * the quadratic surface `α₀ + α₁Δ + α₂Δ² + α₃τ + α₄Δτ`, and
//! * the asymmetric-smile surface with Nelson–Siegel maturity loadings
//!
//! ```text
//! β₀ + β₁·1{Δ>0}Δ² + β₂·1{Δ<0}Δ² + β₃·S(τ) + β₄·C(τ) + β₅·1{Δ>0}Δτ + β₆·1{Δ<0}Δτ
//! S(τ) = (1 − e^{−λτ}) / (λτ),   C(τ) = S(τ) − e^{−λτ}
//! ```
//!
//! where Δ = moneyness/100 − 1. The decay λ is calibrated in two steps:
//! a per-day profile search (β concentrated out by OLS), then the median of
//! those daily values is frozen and every day is refitted by OLS.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{least_squares, LinalgError, Matrix};
use crate::optimize::brent_minimize;
use crate::scalar::Scalar;
use crate::surface_data::SurfacePanel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need at least {needed} observations, have {available}")]
    TooFewObservations { needed: usize, available: usize },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("empty input")]
    EmptyInput,
}

impl From<LinalgError> for ModelError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::RankDeficient { .. } => ModelError::RankDeficient,
            LinalgError::TooFewObservations { needed, available } => {
                ModelError::TooFewObservations { needed, available }
            }
            LinalgError::DimensionMismatch(m) => ModelError::DomainError(m),
        }
    }
}

/// Maps percent moneyness to the signed model coordinate Δ = m/center − 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoneynessTransform {
    pub center: f64,
}

impl Default for MoneynessTransform {
    fn default() -> Self {
        Self { center: 100.0 }
    }
}

impl MoneynessTransform {
    #[inline]
    pub fn apply<T: Scalar>(&self, moneyness: T) -> T {
        moneyness / T::lit(self.center) - T::one()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStats<T> {
    pub rss: T,
    pub n: usize,
    pub std_errors: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgCoefficients<T> {
    /// (intercept, Δ, Δ², τ, Δτ)
    pub alpha: [T; 5],
    pub date: Option<NaiveDate>,
    pub fit_stats: Option<FitStats<T>>,
}

impl<T: Scalar> GgCoefficients<T> {
    pub fn from_alpha(alpha: [T; 5]) -> Self {
        Self {
            alpha,
            date: None,
            fit_stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtCoefficients<T> {
    /// (level, right smile, left smile, NS slope, NS curvature,
    /// right attenuation, left attenuation)
    pub beta: [T; 7],
    pub lambda: T,
    pub date: Option<NaiveDate>,
    pub fit_stats: Option<FitStats<T>>,
}

impl<T: Scalar> CtCoefficients<T> {
    pub fn from_beta(beta: [T; 7], lambda: T) -> Self {
        Self {
            beta,
            lambda,
            date: None,
            fit_stats: None,
        }
    }
}

/// Nelson–Siegel slope and curvature loadings at maturity `tau`.
pub fn ns_loadings<T: Scalar>(maturity: T, lambda: T) -> Result<(T, T), ModelError> {
    if !(maturity > T::zero()) || !(lambda > T::zero()) {
        return Err(ModelError::DomainError(format!(
            "ns_loadings needs positive maturity and lambda (got {maturity}, {lambda})"
        )));
    }
    Ok(ns_loadings_unchecked(maturity * lambda))
}

#[inline]
fn ns_loadings_unchecked<T: Scalar>(x: T) -> (T, T) {
    if x == T::zero() {
        return (T::one(), T::zero());
    }
    let decay = (-x).exp();
    let slope = -(-x).exp_m1() / x;
    (slope, slope - decay)
}

#[inline]
pub fn gg_regressors<T: Scalar>(delta: T, tau: T) -> [T; 5] {
    [T::one(), delta, delta * delta, tau, delta * tau]
}

pub fn ct_regressors<T: Scalar>(delta: T, tau: T, lambda: T) -> Result<[T; 7], ModelError> {
    let (slope, curvature) = ns_loadings(tau, lambda)?;
    let pos = delta > T::zero();
    let neg = delta < T::zero();
    let d2 = delta * delta;
    let dt = delta * tau;
    let z = T::zero();
    Ok([
        T::one(),
        if pos { d2 } else { z },
        if neg { d2 } else { z },
        slope,
        curvature,
        if pos { dt } else { z },
        if neg { dt } else { z },
    ])
}

#[inline]
fn dot<T: Scalar>(x: &[T], c: &[T]) -> T {
    x.iter().zip(c).map(|(&a, &b)| a * b).sum()
}

fn panel_points<T: Scalar>(panel: &SurfacePanel, transform: &MoneynessTransform) -> Vec<(T, T, T)> {
    panel
        .quotes
        .iter()
        .map(|q| {
            (
                transform.apply(T::lit(q.moneyness)),
                T::lit(q.maturity),
                T::lit(q.iv),
            )
        })
        .collect()
}

fn design<T: Scalar, const K: usize>(
    points: &[(T, T, T)],
    row: impl Fn(T, T) -> Result<[T; K], ModelError>,
) -> Result<(Matrix<T>, Vec<T>), ModelError> {
    if points.len() < K {
        return Err(ModelError::TooFewObservations {
            needed: K,
            available: points.len(),
        });
    }
    let mut data = Vec::with_capacity(points.len() * K);
    for &(d, t, _) in points {
        data.extend_from_slice(&row(d, t)?);
    }
    let y = points.iter().map(|p| p.2).collect();
    Ok((Matrix::from_row_major(points.len(), K, data)?, y))
}

/// OLS fit of the quadratic surface to one day's quotes.
pub fn fit_gg<T: Scalar>(
    panel: &SurfacePanel,
    transform: &MoneynessTransform,
) -> Result<GgCoefficients<T>, ModelError> {
    let points = panel_points::<T>(panel, transform);
    let (x, y) = design(&points, |d, t| Ok(gg_regressors(d, t)))?;
    let ls = least_squares(&x, &y)?;
    let mut alpha = [T::zero(); 5];
    alpha.copy_from_slice(&ls.coefficients);
    Ok(GgCoefficients {
        alpha,
        date: Some(panel.date),
        fit_stats: Some(FitStats {
            rss: ls.rss,
            n: ls.n,
            std_errors: ls.std_errors,
        }),
    })
}

fn fit_ct_points<T: Scalar>(
    points: &[(T, T, T)],
    lambda: T,
) -> Result<([T; 7], FitStats<T>), ModelError> {
    let (x, y) = design(points, |d, t| ct_regressors(d, t, lambda))?;
    let ls = least_squares(&x, &y)?;
    let mut beta = [T::zero(); 7];
    beta.copy_from_slice(&ls.coefficients);
    Ok((
        beta,
        FitStats {
            rss: ls.rss,
            n: ls.n,
            std_errors: ls.std_errors,
        },
    ))
}

/// OLS fit of the asymmetric-smile surface at a fixed decay `lambda`.
pub fn fit_ct<T: Scalar>(
    panel: &SurfacePanel,
    lambda: T,
    transform: &MoneynessTransform,
) -> Result<CtCoefficients<T>, ModelError> {
    if !(lambda > T::zero()) {
        return Err(ModelError::DomainError(format!("lambda {lambda} must be positive")));
    }
    let points = panel_points::<T>(panel, transform);
    let (beta, stats) = fit_ct_points(&points, lambda)?;
    Ok(CtCoefficients {
        beta,
        lambda,
        date: Some(panel.date),
        fit_stats: Some(stats),
    })
}

/// Residual sum of squares of the CT fit as a function of λ (β profiled out).
pub fn ct_profile_sse<T: Scalar>(
    panel: &SurfacePanel,
    lambda: T,
    transform: &MoneynessTransform,
) -> Result<T, ModelError> {
    Ok(fit_ct(panel, lambda, transform)?
        .fit_stats
        .expect("fit_ct records stats")
        .rss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LambdaBounds {
    fn default() -> Self {
        Self { lo: 0.05, hi: 30.0 }
    }
}

/// One day's first-step λ estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate<T> {
    pub date: NaiveDate,
    pub lambda: T,
    pub sse: T,
    /// The optimum sits on a search bound (no interior minimum).
    pub at_bound: bool,
}

/// Minimum panel size for the first-step λ search.
pub const STAGE1_MIN_QUOTES: usize = 8;
const LAMBDA_GRID: usize = 48;
const LAMBDA_TOL: f64 = 1e-6;

/// Daily λ minimising the profiled SSE: a log-spaced scan over the bounds
/// locates the basin, Brent's method refines it.
pub fn estimate_daily_lambda<T: Scalar>(
    panel: &SurfacePanel,
    transform: &MoneynessTransform,
    bounds: &LambdaBounds,
) -> Result<LambdaEstimate<T>, ModelError> {
    if !(bounds.lo > 0.0 && bounds.hi > bounds.lo) {
        return Err(ModelError::DomainError("lambda bounds must satisfy 0 < lo < hi".into()));
    }
    if panel.len() < STAGE1_MIN_QUOTES {
        return Err(ModelError::TooFewObservations {
            needed: STAGE1_MIN_QUOTES,
            available: panel.len(),
        });
    }
    let points = panel_points::<T>(panel, transform);
    let sse = |lambda: T| fit_ct_points(&points, lambda).map(|(_, s)| s.rss);

    let (llo, lhi) = (bounds.lo.ln(), bounds.hi.ln());
    let grid: Vec<f64> = (0..LAMBDA_GRID)
        .map(|i| (llo + (lhi - llo) * i as f64 / (LAMBDA_GRID - 1) as f64).exp())
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for &g in &grid {
        values.push(sse(T::lit(g))?);
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal))
        .expect("non-empty grid");
    let lo = T::lit(grid[best.saturating_sub(1)]);
    let hi = T::lit(grid[(best + 1).min(grid.len() - 1)]);
    let min = brent_minimize(
        |l| sse(l).unwrap_or_else(|_| T::infinity()),
        lo,
        hi,
        T::lit(LAMBDA_TOL),
    );
    let (lambda, fx) = if min.fx <= values[best] {
        (min.x, min.fx)
    } else {
        (T::lit(grid[best]), values[best])
    };
    let edge = T::lit(10.0 * LAMBDA_TOL);
    let at_bound = (lambda - T::lit(bounds.lo)).abs() <= edge * T::lit(bounds.lo.max(1.0))
        || (T::lit(bounds.hi) - lambda).abs() <= edge * T::lit(bounds.hi.max(1.0));
    Ok(LambdaEstimate {
        date: panel.date,
        lambda,
        sse: fx,
        at_bound,
    })
}

/// First step of the λ calibration over many days (parallel across days).
pub fn fit_ct_stage1<T: Scalar>(
    panels: &[SurfacePanel],
    transform: &MoneynessTransform,
    bounds: &LambdaBounds,
) -> Result<Vec<LambdaEstimate<T>>, ModelError> {
    panels
        .par_iter()
        .map(|p| estimate_daily_lambda(p, transform, bounds))
        .collect()
}

/// Median of the daily λ estimates (mean of the middle pair for even counts).
pub fn fix_lambda<T: Scalar>(daily_lambdas: &[T]) -> Result<T, ModelError> {
    if daily_lambdas.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if daily_lambdas.iter().any(|l| !(l.is_finite() && *l > T::zero())) {
        return Err(ModelError::DomainError("lambda estimates must be positive".into()));
    }
    let mut v = daily_lambdas.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    })
}

pub fn evaluate_gg<T: Scalar>(
    coeffs: &GgCoefficients<T>,
    moneyness: T,
    maturity: T,
    transform: &MoneynessTransform,
) -> T {
    let delta = transform.apply(moneyness);
    dot(&gg_regressors(delta, maturity), &coeffs.alpha)
}

/// Evaluates the asymmetric-smile surface. Maturity must be positive; a
/// non-positive maturity evaluates the term-structure loadings at their
/// τ → 0 limit.
pub fn evaluate_ct<T: Scalar>(
    coeffs: &CtCoefficients<T>,
    moneyness: T,
    maturity: T,
    transform: &MoneynessTransform,
) -> T {
    let delta = transform.apply(moneyness);
    let x = ct_regressors(delta, maturity.max(T::zero()), coeffs.lambda).unwrap_or_else(|_| {
        let mut r = ct_regressors(delta, T::one(), T::one()).expect("valid");
        let (s, c) = ns_loadings_unchecked(T::zero());
        r[3] = s;
        r[4] = c;
        r
    });
    dot(&x, &coeffs.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface_data::IvQuote;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2014, 6, 2).unwrap()
    }

    fn panel_from(points: &[(f64, f64, f64)]) -> SurfacePanel {
        let quotes = points
            .iter()
            .map(|&(m, t, iv)| IvQuote::new(day(), m, t, iv, 1).unwrap())
            .collect();
        SurfacePanel::new(day(), quotes).unwrap()
    }

    fn random_coords(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.gen_range(90.0..110.0), rng.gen_range(1.0 / 12.0..2.0)))
            .collect()
    }

    #[test]
    fn ns_loadings_closed_form() {
        let (s, c) = ns_loadings(2.0f64, 0.5).unwrap();
        assert!((s - 0.632121).abs() < 1e-6);
        assert!((c - 0.264241).abs() < 1e-6);
        let (s, c) = ns_loadings(1.0f64, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((s - (1.0 - e)).abs() < 1e-15);
        assert!((c - (1.0 - 2.0 * e)).abs() < 1e-15);
    }

    #[test]
    fn ns_loadings_short_end_limit() {
        let (s, c) = ns_loadings(1e-12f64, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && c.abs() < 1e-12);
        assert_eq!(ns_loadings_unchecked(0.0f64), (1.0, 0.0));
        assert!(ns_loadings(0.0f64, 1.0).is_err());
        assert!(ns_loadings(1.0f64, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn ns_slope_decreasing_and_curvature_nonnegative(
            lambda in 0.05f64..30.0, t1 in 0.001f64..10.0, dt in 0.001f64..5.0
        ) {
            let (s1, c1) = ns_loadings(t1, lambda).unwrap();
            let (s2, c2) = ns_loadings(t1 + dt, lambda).unwrap();
            prop_assert!(s2 < s1);
            prop_assert!(c1 >= 0.0 && c2 >= 0.0);
        }

        #[test]
        fn fits_are_scale_equivariant(seed in 0u64..1000, scale in 0.2f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 40)
                .into_iter()
                .map(|(m, t)| (m, t, rng.gen_range(0.1..0.5)))
                .collect();
            let scaled: Vec<(f64, f64, f64)> = pts.iter().map(|&(m, t, v)| (m, t, v * scale)).collect();
            let tr = MoneynessTransform::default();
            let a = fit_gg::<f64>(&panel_from(&pts), &tr).unwrap();
            let b = fit_gg::<f64>(&panel_from(&scaled), &tr).unwrap();
            for (x, y) in a.alpha.iter().zip(&b.alpha) {
                prop_assert!((x * scale - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
            let a = fit_ct::<f64>(&panel_from(&pts), 1.2, &tr).unwrap();
            let b = fit_ct::<f64>(&panel_from(&scaled), 1.2, &tr).unwrap();
            for (x, y) in a.beta.iter().zip(&b.beta) {
                prop_assert!((x * scale - y).abs() <= 1e-7 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn ns_curvature_vanishes_at_long_end() {
        let (_, c) = ns_loadings(1e4f64, 1.0).unwrap();
        assert!(c < 1e-3);
    }

    #[test]
    fn gg_recovers_generating_coefficients() {
        let alpha = [0.3, 0.02, -0.003, 0.4, -0.005];
        let truth = GgCoefficients::<f64>::from_alpha(alpha);
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 50)
            .into_iter()
            .map(|(m, t)| (m, t, evaluate_gg(&truth, m, t, &tr)))
            .collect();
        let fit = fit_gg::<f64>(&panel_from(&pts), &tr).unwrap();
        for (a, b) in fit.alpha.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(fit.fit_stats.as_ref().unwrap().n, 50);
    }

    #[test]
    fn gg_residuals_orthogonal_to_regressors() {
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 60)
            .into_iter()
            .map(|(m, t)| (m, t, rng.gen_range(0.2..0.4)))
            .collect();
        let fit = fit_gg::<f64>(&panel_from(&pts), &tr).unwrap();
        for k in 0..5 {
            let (mut dotp, mut scale) = (0.0, 0.0);
            for &(m, t, v) in &pts {
                let x = gg_regressors(tr.apply(m), t);
                let e = v - evaluate_gg(&fit, m, t, &tr);
                dotp += x[k] * e;
                scale += (x[k] * v).abs();
            }
            assert!(dotp.abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn gg_constant_surface() {
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 30).into_iter().map(|(m, t)| (m, t, 0.25)).collect();
        let fit = fit_gg::<f64>(&panel_from(&pts), &tr).unwrap();
        assert!((fit.alpha[0] - 0.25).abs() < 1e-12);
        assert!(fit.alpha[1..].iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn gg_single_maturity_is_rank_deficient() {
        let pts: Vec<(f64, f64, f64)> = (0..10).map(|i| (90.0 + 2.0 * i as f64, 0.5, 0.3)).collect();
        let err = fit_gg::<f64>(&panel_from(&pts), &MoneynessTransform::default()).unwrap_err();
        assert_eq!(err, ModelError::RankDeficient);
        let few: Vec<(f64, f64, f64)> = pts[..4].to_vec();
        assert!(matches!(
            fit_gg::<f64>(&panel_from(&few), &MoneynessTransform::default()),
            Err(ModelError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn gg_fit_in_f32() {
        let truth = GgCoefficients::<f64>::from_alpha([0.3f64, 0.02, -0.5, 0.04, -0.05]);
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 50)
            .into_iter()
            .map(|(m, t)| (m, t, evaluate_gg(&truth, m, t, &tr)))
            .collect();
        let fit = fit_gg::<f32>(&panel_from(&pts), &tr).unwrap();
        assert!((fit.alpha[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn ct_recovers_generating_coefficients() {
        let beta = [0.28, 0.9, 1.4, 0.10, 0.15, -0.02, 0.05];
        let truth = CtCoefficients::<f64>::from_beta(beta, 1.0);
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 50)
            .into_iter()
            .map(|(m, t)| (m, t, evaluate_ct(&truth, m, t, &tr)))
            .collect();
        let fit = fit_ct::<f64>(&panel_from(&pts), 1.0, &tr).unwrap();
        for (a, b) in fit.beta.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn ct_atm_only_is_rank_deficient() {
        let pts: Vec<(f64, f64, f64)> = (0..12).map(|i| (100.0, 0.1 + 0.15 * i as f64, 0.3)).collect();
        let err = fit_ct::<f64>(&panel_from(&pts), 1.0, &MoneynessTransform::default()).unwrap_err();
        assert_eq!(err, ModelError::RankDeficient);
    }

    #[test]
    fn ct_constant_surface() {
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<(f64, f64, f64)> = random_coords(&mut rng, 40).into_iter().map(|(m, t)| (m, t, 0.30)).collect();
        let fit = fit_ct::<f64>(&panel_from(&pts), 1.0, &tr).unwrap();
        assert!((fit.beta[0] - 0.30).abs() < 1e-9);
        assert!(fit.beta[1..].iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn evaluate_gg_cases() {
        let tr = MoneynessTransform::default();
        let flat = GgCoefficients::<f64>::from_alpha([0.25, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(evaluate_gg(&flat, 93.0, 1.7, &tr), 0.25);
        let lin = GgCoefficients::<f64>::from_alpha([0.2, 0.0, 0.0, 0.1, 0.0]);
        assert!((evaluate_gg(&lin, 104.0, 0.5, &tr) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn evaluate_gg_matches_horner() {
        let tr = MoneynessTransform::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let (m, t) = (rng.gen_range(90.0..110.0), rng.gen_range(0.05..2.0));
            let d = m / 100.0 - 1.0;
            // Horner in Δ with maturity-dependent coefficients
            let horner = (a[2] * d + (a[1] + a[4] * t)) * d + (a[0] + a[3] * t);
            let v = evaluate_gg(&GgCoefficients::<f64>::from_alpha(a), m, t, &tr);
            assert!((v - horner).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_ct_cases() {
        let tr = MoneynessTransform::default();
        let flat = CtCoefficients::<f64>::from_beta([0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert!((evaluate_ct(&flat, 95.0, 0.7, &tr) - 0.3).abs() < 1e-15);
        let slope = CtCoefficients::<f64>::from_beta([0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 1.0);
        assert!((evaluate_ct(&slope, 100.0, 1.0, &tr) - (0.1 + 0.632_120_558_8)).abs() < 1e-9);
        // right wing uses β1/β5, left wing β2/β6
        let right = CtCoefficients::<f64>::from_beta([0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1.0);
        let left = CtCoefficients::<f64>::from_beta([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 1.0);
        let (up, down, t) = (105.0, 95.0, 0.5);
        assert!((evaluate_ct(&right, up, t, &tr) - (0.0025 + 0.025)).abs() < 1e-12);
        assert_eq!(evaluate_ct(&right, down, t, &tr), 0.0);
        assert!((evaluate_ct(&left, down, t, &tr) - (0.0025 - 0.025)).abs() < 1e-12);
        assert_eq!(evaluate_ct(&left, up, t, &tr), 0.0);
        // exactly at the money neither wing is active
        assert_eq!(evaluate_ct(&right, 100.0, t, &tr), 0.0);
    }

    fn ct_panel(rng: &mut ChaCha8Rng, beta: [f64; 7], lambda: f64, noise: f64, n: usize) -> SurfacePanel {
        let truth = CtCoefficients::<f64>::from_beta(beta, lambda);
        let tr = MoneynessTransform::default();
        let pts: Vec<(f64, f64, f64)> = random_coords(rng, n)
            .into_iter()
            .map(|(m, t)| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                (m, t, evaluate_ct(&truth, m, t, &tr) + noise * e)
            })
            .collect();
        panel_from(&pts)
    }

    const BETA: [f64; 7] = [0.28, 0.9, 1.4, 0.10, 0.25, -0.02, 0.05];

    #[test]
    fn stage1_recovers_noiseless_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let panels: Vec<SurfacePanel> = (0..5).map(|_| ct_panel(&mut rng, BETA, 1.5, 0.0, 50)).collect();
        let est = fit_ct_stage1::<f64>(&panels, &MoneynessTransform::default(), &LambdaBounds::default()).unwrap();
        for e in est {
            assert!((e.lambda - 1.5).abs() < 1e-4, "{}", e.lambda);
            assert!(!e.at_bound);
        }
    }

    #[test]
    fn stage1_noisy_median_close_to_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let panels: Vec<SurfacePanel> = (0..200).map(|_| ct_panel(&mut rng, BETA, 1.5, 0.01, 50)).collect();
        let tr = MoneynessTransform::default();
        let est = fit_ct_stage1::<f64>(&panels, &tr, &LambdaBounds::default()).unwrap();
        let lambdas: Vec<f64> = est.iter().map(|e| e.lambda).collect();
        let med = fix_lambda(&lambdas).unwrap();
        assert!((med - 1.5).abs() < 0.1, "median {med}");
        // daily optimum beats any other lambda on that day
        for (p, e) in panels.iter().zip(&est).take(20) {
            for alt in [0.3, 1.0, 2.0, 5.0, e.lambda + 0.01, (e.lambda - 0.01).max(0.05)] {
                assert!(e.sse <= ct_profile_sse(p, alt, &tr).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn stage1_single_maturity_propagates_rank_deficiency() {
        let pts: Vec<(f64, f64, f64)> = (0..12).map(|i| (90.0 + i as f64 * 1.7, 0.75, 0.3)).collect();
        let err = fit_ct_stage1::<f64>(&[panel_from(&pts)], &MoneynessTransform::default(), &LambdaBounds::default())
            .unwrap_err();
        assert_eq!(err, ModelError::RankDeficient);
    }

    #[test]
    fn stage1_flags_bound_optimum() {
        // the short-end slope loading saturates as lambda grows; a surface
        // that is pure curvature-free level shifts toward the upper bound
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let panel = ct_panel(&mut rng, [0.3, 0.5, 0.5, 0.2, 0.0, 0.0, 0.0], 29.99, 0.0, 60);
        let est = estimate_daily_lambda::<f64>(&panel, &MoneynessTransform::default(), &LambdaBounds { lo: 0.05, hi: 5.0 }).unwrap();
        assert!(est.at_bound, "lambda {}", est.lambda);
    }

    #[test]
    fn fix_lambda_median() {
        assert_eq!(fix_lambda(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(fix_lambda(&[1.0, 2.0, 3.0, 10.0]).unwrap(), 2.5);
        assert_eq!(fix_lambda::<f64>(&[]).unwrap_err(), ModelError::EmptyInput);
        assert!(fix_lambda(&[1.0, -2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v: Vec<f64> = (0..501).map(|_| rng.gen_range(0.5..3.0)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(fix_lambda(&v).unwrap(), sorted[250]);
    }
}
