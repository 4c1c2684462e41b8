//! Model confidence set with the range statistic: daily losses, block
//! length from AR fits to the loss differentials, moving-block bootstrap,
//! and sequential elimination of the worst model.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ForecastRecord;
use crate::linalg::{least_squares, Matrix};

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_BOOTSTRAP: usize = 5000;
/// Largest AR order fitted to each differential when choosing the block length.
pub const DEFAULT_P_CAP: usize = 5;
pub const MIN_DAYS: usize = 20;
/// Bootstrap variances below this are treated as an exact tie.
pub const DEGENERATE_VARIANCE: f64 = 1e-16;
const T_CRITICAL: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McsError {
    #[error("loss matrix: {0}")]
    InvalidLosses(String),
    #[error("no date has forecasts from every model at horizon {0}")]
    NoCommonDates(usize),
    #[error("series too short: need {needed} observations, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("invalid MCS parameter: {0}")]
    InvalidParam(String),
}

/// Losses per observation (rows) and model (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub models: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub losses: Vec<Vec<f64>>,
}

impl LossMatrix {
    pub fn new(models: Vec<String>, dates: Vec<NaiveDate>, losses: Vec<Vec<f64>>) -> Result<Self, McsError> {
        let bad = |m: String| Err(McsError::InvalidLosses(m));
        if models.len() < 2 {
            return bad(format!("{} models, need at least 2", models.len()));
        }
        let mut seen = models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != models.len() {
            return bad("duplicate model ids".into());
        }
        if dates.len() != losses.len() {
            return bad(format!("{} dates for {} rows", dates.len(), losses.len()));
        }
        for (t, row) in losses.iter().enumerate() {
            if row.len() != models.len() {
                return bad(format!("row {t} has {} entries", row.len()));
            }
            if row.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return bad(format!("row {t} has a negative or non-finite loss"));
            }
        }
        Ok(Self { models, dates, losses })
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn m(&self) -> usize {
        self.models.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.losses.iter().map(|r| r[i]).collect()
    }

    fn require_days(&self) -> Result<(), McsError> {
        if self.n() < MIN_DAYS {
            return Err(McsError::SeriesTooShort {
                needed: MIN_DAYS,
                available: self.n(),
            });
        }
        Ok(())
    }
}

/// Unit of observation for the loss series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAggregation {
    /// Mean squared error over each origin date's quotes.
    #[default]
    Daily,
    /// Every quote is one observation, ordered by date.
    PerQuote,
}

/// Squared-error losses at one horizon for every model in `records`. A date
/// enters only when every model forecast the same number of quotes on it.
pub fn build_losses(
    records: &[ForecastRecord],
    horizon: usize,
    aggregation: LossAggregation,
) -> Result<LossMatrix, McsError> {
    let mut by_model: BTreeMap<_, BTreeMap<NaiveDate, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.horizon == horizon) {
        by_model
            .entry(r.model)
            .or_default()
            .entry(r.origin_date)
            .or_default()
            .push((r.real_iv - r.pred_iv).powi(2));
    }
    if by_model.len() < 2 {
        return Err(McsError::InvalidLosses(format!(
            "{} models at horizon {horizon}, need at least 2",
            by_model.len()
        )));
    }
    let models: Vec<_> = by_model.keys().copied().collect();
    let first = &by_model[&models[0]];
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (date, errs) in first {
        let cols: Option<Vec<&Vec<f64>>> = models
            .iter()
            .map(|m| by_model[m].get(date).filter(|e| e.len() == errs.len()))
            .collect();
        let Some(cols) = cols else { continue };
        match aggregation {
            LossAggregation::Daily => {
                dates.push(*date);
                rows.push(cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect());
            }
            LossAggregation::PerQuote => {
                for q in 0..errs.len() {
                    dates.push(*date);
                    rows.push(cols.iter().map(|c| c[q]).collect());
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(McsError::NoCommonDates(horizon));
    }
    LossMatrix::new(models.iter().map(|m| m.to_string()).collect(), dates, rows)
}

fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// Number of AR lag coefficients with |t| > 1.96 in an OLS AR(`p_cap`) fit
/// with intercept; zero when the design is rank deficient.
pub fn significant_lags(d: &[f64], p_cap: usize) -> usize {
    let n = d.len();
    let rows: Vec<Vec<f64>> = (p_cap..n)
        .map(|t| {
            let mut r = vec![1.0];
            r.extend((1..=p_cap).map(|l| d[t - l]));
            r
        })
        .collect();
    let y = &d[p_cap..];
    let Ok(x) = Matrix::from_rows(&rows) else { return 0 };
    let Ok(fit) = least_squares(&x, y) else { return 0 };
    let Some(se) = fit.std_errors else { return 0 };
    fit.coefficients[1..]
        .iter()
        .zip(&se[1..])
        .filter(|(b, s)| **s > 0.0 && (**b / **s).abs() > T_CRITICAL)
        .count()
}

/// Largest count of significant AR lags over all pairwise differentials,
/// at least 1.
pub fn block_length(losses: &LossMatrix, p_cap: usize) -> Result<usize, McsError> {
    if p_cap == 0 {
        return Err(McsError::InvalidParam("p_cap must be >= 1".into()));
    }
    losses.require_days()?;
    let needed = 2 * p_cap + 2;
    if losses.n() < needed {
        return Err(McsError::SeriesTooShort {
            needed,
            available: losses.n(),
        });
    }
    let cols: Vec<Vec<f64>> = (0..losses.m()).map(|i| losses.column(i)).collect();
    let best = pairs(losses.m())
        .map(|(i, j)| {
            let d: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a - b).collect();
            significant_lags(&d, p_cap)
        })
        .max()
        .unwrap_or(0);
    Ok(best.max(1))
}

/// Moving-block index resample of length `n`.
fn block_indices(rng: &mut ChaCha8Rng, n: usize, block_len: usize) -> Vec<usize> {
    let blocks = n.div_ceil(block_len);
    let mut idx = Vec::with_capacity(blocks * block_len);
    for _ in 0..blocks {
        let start = rng.gen_range(0..=n - block_len);
        idx.extend(start..start + block_len);
    }
    idx.truncate(n);
    idx
}

/// Bootstrap replicates of each model's mean loss; all models share one
/// index resample per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub observed: Vec<f64>,
    /// `n_boot` rows of per-model resampled means.
    pub replicates: Vec<Vec<f64>>,
    pub block_len: usize,
}

impl BootstrapDraws {
    pub fn draw(losses: &LossMatrix, block_len: usize, n_boot: usize, seed: u64) -> Result<Self, McsError> {
        if n_boot < 100 {
            return Err(McsError::InvalidParam(format!("n_boot {n_boot} < 100")));
        }
        let n = losses.n();
        if block_len == 0 || block_len > n {
            return Err(McsError::InvalidParam(format!("block length {block_len} for {n} observations")));
        }
        let m = losses.m();
        let mean_over = |idx: &mut dyn Iterator<Item = usize>| {
            let mut s = vec![0.0; m];
            for t in idx {
                for (acc, l) in s.iter_mut().zip(&losses.losses[t]) {
                    *acc += l;
                }
            }
            s.iter().map(|v| v / n as f64).collect::<Vec<f64>>()
        };
        let observed = mean_over(&mut (0..n));
        let replicates = (0..n_boot)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                mean_over(&mut block_indices(&mut rng, n, block_len).into_iter())
            })
            .collect();
        Ok(Self {
            observed,
            replicates,
            block_len,
        })
    }

    pub fn observed_diff(&self, i: usize, j: usize) -> f64 {
        self.observed[i] - self.observed[j]
    }

    /// Sample variance of the resampled mean differential.
    pub fn variance(&self, i: usize, j: usize) -> f64 {
        let b = self.replicates.len() as f64;
        let diffs = self.replicates.iter().map(|r| r[i] - r[j]);
        let mean = diffs.clone().sum::<f64>() / b;
        diffs.map(|d| (d - mean).powi(2)).sum::<f64>() / (b - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairVariances {
    pub m: usize,
    values: Vec<f64>,
}

impl PairVariances {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.get(i, j) < DEGENERATE_VARIANCE
    }
}

fn pair_variances(draws: &BootstrapDraws, m: usize) -> PairVariances {
    let mut values = vec![0.0; m * m];
    for (i, j) in pairs(m) {
        let v = draws.variance(i, j);
        values[i * m + j] = v;
        values[j * m + i] = v;
    }
    PairVariances { m, values }
}

/// Bootstrap variances of every mean loss differential.
pub fn bootstrap_variances(
    losses: &LossMatrix,
    block_len: usize,
    n_boot: usize,
    seed: u64,
) -> Result<PairVariances, McsError> {
    let draws = BootstrapDraws::draw(losses, block_len, n_boot, seed)?;
    Ok(pair_variances(&draws, losses.m()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub model: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub models: Vec<String>,
    pub surviving: Vec<String>,
    pub elimination_order: Vec<Elimination>,
    /// MCS p-value per model, in input column order.
    pub p_values: Vec<f64>,
    pub alpha: f64,
    pub n_boot: usize,
    pub block_len: usize,
    /// Pairs whose bootstrap variance was below the tie threshold.
    pub degenerate_pairs: Vec<(String, String)>,
}

impl McsResult {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.p_values[i])
    }

    pub fn survives(&self, model: &str) -> bool {
        self.surviving.iter().any(|m| m == model)
    }
}

/// One line of the MCS output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub model: String,
    pub eliminated_at_step: Option<usize>,
    pub p_value: f64,
    pub survivor: bool,
}

pub fn mcs_rows(result: &McsResult) -> Vec<McsRow> {
    let mut rows: Vec<McsRow> = result
        .elimination_order
        .iter()
        .enumerate()
        .map(|(k, e)| McsRow {
            model: e.model.clone(),
            eliminated_at_step: Some(k + 1),
            p_value: result.p_value(&e.model).expect("eliminated model is known"),
            survivor: false,
        })
        .collect();
    for s in &result.surviving {
        rows.push(McsRow {
            model: s.clone(),
            eliminated_at_step: None,
            p_value: 1.0,
            survivor: true,
        });
    }
    rows
}

/// Block length from AR(5) fits, then [`run_mcs_with_block`].
pub fn run_mcs(losses: &LossMatrix, alpha: f64, n_boot: usize, seed: u64) -> Result<McsResult, McsError> {
    let block = block_length(losses, DEFAULT_P_CAP)?;
    run_mcs_with_block(losses, alpha, n_boot, seed, block)
}

pub fn run_mcs_with_block(
    losses: &LossMatrix,
    alpha: f64,
    n_boot: usize,
    seed: u64,
    block_len: usize,
) -> Result<McsResult, McsError> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(McsError::InvalidParam(format!("alpha {alpha} outside (0, 0.5]")));
    }
    losses.require_days()?;
    let m = losses.m();
    let draws = BootstrapDraws::draw(losses, block_len, n_boot, seed)?;
    let var = pair_variances(&draws, m);
    let se: Vec<f64> = (0..m * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            if i == j || var.is_degenerate(i, j) {
                0.0
            } else {
                var.get(i, j).sqrt()
            }
        })
        .collect();
    // t statistic of i against j; exact ties contribute zero
    let t_obs = |i: usize, j: usize| {
        let s = se[i * m + j];
        if s == 0.0 {
            0.0
        } else {
            draws.observed_diff(i, j) / s
        }
    };

    let mut alive: Vec<usize> = (0..m).collect();
    let mut eliminated: Vec<Elimination> = Vec::new();
    let mut elim_p: HashMap<usize, f64> = HashMap::new();
    let mut running = 0.0_f64;
    while alive.len() > 1 {
        let alive_pairs: Vec<(usize, usize)> = alive
            .iter()
            .enumerate()
            .flat_map(|(a, &i)| alive[a + 1..].iter().map(move |&j| (i, j)))
            .filter(|&(i, j)| se[i * m + j] > 0.0)
            .collect();
        if alive_pairs.is_empty() {
            break;
        }
        let stat = alive_pairs.iter().map(|&(i, j)| t_obs(i, j).abs()).fold(0.0, f64::max);
        let exceed = draws
            .replicates
            .iter()
            .filter(|r| {
                let tb = alive_pairs
                    .iter()
                    .map(|&(i, j)| ((r[i] - r[j] - draws.observed_diff(i, j)) / se[i * m + j]).abs())
                    .fold(0.0, f64::max);
                tb >= stat
            })
            .count();
        let p = exceed as f64 / n_boot as f64;
        if p >= alpha {
            break;
        }
        // worst model: largest t against any other; label order breaks ties
        let worst = *alive
            .iter()
            .max_by(|&&a, &&b| {
                let sup = |i: usize| alive.iter().filter(|&&j| j != i).map(|&j| t_obs(i, j)).fold(f64::MIN, f64::max);
                sup(a)
                    .total_cmp(&sup(b))
                    .then_with(|| losses.models[b].cmp(&losses.models[a]))
            })
            .expect("at least two alive");
        running = running.max(p);
        elim_p.insert(worst, running);
        eliminated.push(Elimination {
            model: losses.models[worst].clone(),
            p_value: p,
        });
        alive.retain(|&i| i != worst);
    }

    let degenerate_pairs = pairs(m)
        .filter(|&(i, j)| var.is_degenerate(i, j))
        .map(|(i, j)| (losses.models[i].clone(), losses.models[j].clone()))
        .collect();
    Ok(McsResult {
        models: losses.models.clone(),
        surviving: alive.iter().map(|&i| losses.models[i].clone()).collect(),
        elimination_order: eliminated,
        p_values: (0..m).map(|i| elim_p.get(&i).copied().unwrap_or(1.0)).collect(),
        alpha,
        n_boot,
        block_len,
        degenerate_pairs,
    })
}
