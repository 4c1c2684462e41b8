//! Implied volatility surface forecasting: daily parametric surface fits,
//! a regression-tree surface, coefficient dynamics, a rolling out-of-sample
//! harness, forecast metrics and the model confidence set.
//!
//! Generic kernels take any [`Scalar`]; the aliases below fix the precision.

pub mod cross_section;
pub mod dynamics;
pub mod evaluation;
pub mod harness;
pub mod linalg;
pub mod mcs;
pub mod optimize;
pub mod scalar;
pub mod surface_data;
pub mod tree;

pub use cross_section::{
    evaluate_ct, evaluate_gg, estimate_daily_lambda, fit_ct, fit_ct_stage1, fit_gg, fix_lambda, CtCoefficients,
    GgCoefficients, LambdaBounds, LambdaEstimate, ModelError, MoneynessTransform,
};
pub use dynamics::{
    forecast, forecast_horizons, CoefficientForecast, CoefficientPath, DynamicsError, DynamicsFamily, DynamicsSpec,
    OrderLimits, SurfaceModel, HORIZONS,
};
pub use evaluation::{bucket_scores, mape, rmse, rmse_ratio, rmspe, ssr, BucketScheme, EvalError, ScoreTable, SsrAnchor};
pub use harness::{
    ct_lambda_policy, run_rolling, ForecastRecord, ForecastSet, Gap, HarnessError, LambdaPolicy, ModelId,
    RollingConfig, RollingRun,
};
pub use mcs::{
    block_length, bootstrap_variances, build_losses, run_mcs, LossAggregation, LossMatrix, McsError, McsResult,
};
pub use scalar::Scalar;
pub use surface_data::{DataError, IvQuote, PanelSeries, SurfacePanel};
pub use tree::{
    fit_pruned, grow_tree, prune_path, select_complexity, ComplexitySelection, PruneSchedule, TreeError, TreeNode,
    TreeParams, TreePoint,
};

pub type GgCoefficientsF64 = GgCoefficients<f64>;
pub type GgCoefficientsF32 = GgCoefficients<f32>;
pub type CtCoefficientsF64 = CtCoefficients<f64>;
pub type CtCoefficientsF32 = CtCoefficients<f32>;
pub type TreeNodeF64 = TreeNode<f64>;
pub type TreeNodeF32 = TreeNode<f32>;
pub type TreePointF64 = TreePoint<f64>;
pub type TreePointF32 = TreePoint<f32>;
pub type PruneScheduleF64 = PruneSchedule<f64>;
pub type PruneScheduleF32 = PruneSchedule<f32>;
pub type LambdaEstimateF64 = LambdaEstimate<f64>;
pub type LambdaEstimateF32 = LambdaEstimate<f32>;
