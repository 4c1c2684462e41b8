//! Forecast accuracy: RMSE, RMSPE, MAPE and the sign success ratio, overall
//! and by moneyness/maturity bucket, plus RMSE ratios against a benchmark.
//!
//! RMSE is in iv units; RMSPE, MAPE and SSR are percentages.

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{ForecastRecord, ModelId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no observations to score")]
    EmptyInput,
    #[error("realised value at position {0} is zero")]
    ZeroRealized(usize),
    #[error("non-finite realised value at position {0}")]
    NonFinite(usize),
    #[error("benchmark model {0} has no forecasts")]
    BenchmarkMissing(String),
    #[error("benchmark RMSE is zero for horizon {horizon}, bucket {bucket}")]
    ZeroBenchmarkRmse { horizon: usize, bucket: String },
}

fn check<T: Scalar>(pairs: &[(T, T)], nonzero: bool) -> Result<(), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for (i, (real, _)) in pairs.iter().enumerate() {
        if !real.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
        if nonzero && real.is_zero() {
            return Err(EvalError::ZeroRealized(i));
        }
    }
    Ok(())
}

fn count<T: Scalar>(n: usize) -> T {
    T::lit(n as f64)
}

/// Root mean squared error over `(realised, predicted)` pairs.
pub fn rmse<T: Scalar>(pairs: &[(T, T)]) -> Result<T, EvalError> {
    check(pairs, false)?;
    let sse = pairs.iter().fold(T::zero(), |acc, &(r, p)| acc + (r - p) * (r - p));
    Ok((sse / count(pairs.len())).sqrt())
}

/// Root mean squared percentage error, scaled by the realised value.
pub fn rmspe<T: Scalar>(pairs: &[(T, T)]) -> Result<T, EvalError> {
    check(pairs, true)?;
    let hundred = T::lit(100.0);
    let s = pairs.iter().fold(T::zero(), |acc, &(r, p)| {
        let e = hundred * (r - p) / r;
        acc + e * e
    });
    Ok((s / count(pairs.len())).sqrt())
}

/// Mean absolute percentage error.
pub fn mape<T: Scalar>(pairs: &[(T, T)]) -> Result<T, EvalError> {
    check(pairs, true)?;
    let s = pairs.iter().fold(T::zero(), |acc, &(r, p)| acc + ((r - p) / r).abs());
    Ok(T::lit(100.0) * s / count(pairs.len()))
}

fn sign<T: Scalar>(x: T) -> i8 {
    if x > T::zero() {
        1
    } else if x < T::zero() {
        -1
    } else {
        0
    }
}

/// Percentage of `(anchor, realised, predicted)` triples whose predicted
/// change from the anchor has the realised change's sign. A zero change on
/// both sides agrees; a zero change on one side only disagrees.
pub fn ssr_triples<T: Scalar>(triples: &[(T, T, T)]) -> Result<T, EvalError> {
    if triples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = triples
        .iter()
        .filter(|&&(a, r, p)| sign(p - a) == sign(r - a))
        .count();
    Ok(T::lit(100.0) * count::<T>(hits) / count(triples.len()))
}

/// Reference level for "direction of change" in the success ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsrAnchor {
    /// Realised quote at the same coordinate on the origin date.
    #[default]
    Raw,
    /// Origin-date fitted CT surface at the target coordinate.
    FittedCt,
}

impl SsrAnchor {
    pub fn value(self, r: &ForecastRecord) -> Option<f64> {
        match self {
            SsrAnchor::Raw => r.anchor_iv,
            SsrAnchor::FittedCt => r.anchor_fit_iv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsrOutcome {
    pub ssr: f64,
    pub used: usize,
    /// Records without an anchor value.
    pub excluded: usize,
}

pub fn ssr(records: &[&ForecastRecord], anchor: SsrAnchor) -> Result<SsrOutcome, EvalError> {
    let triples: Vec<(f64, f64, f64)> = records
        .iter()
        .filter_map(|r| anchor.value(r).map(|a| (a, r.real_iv, r.pred_iv)))
        .collect();
    Ok(SsrOutcome {
        ssr: ssr_triples(&triples)?,
        used: triples.len(),
        excluded: records.len() - triples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketAxis {
    Moneyness,
    Maturity,
}

/// A one-dimensional interval on moneyness (percent) or maturity (years).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub axis: BucketAxis,
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Bucket {
    pub fn contains(&self, moneyness: f64, maturity: f64) -> bool {
        let x = match self.axis {
            BucketAxis::Moneyness => moneyness,
            BucketAxis::Maturity => maturity,
        };
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScheme {
    pub buckets: Vec<Bucket>,
}

impl Default for BucketScheme {
    /// OTM ≤ 95, ATM in [97.5, 102.5], ITM ≥ 105; short [1m, 3m),
    /// medium [3m, 6m), long ≥ 6m. Quotes in the gaps belong to no bucket.
    fn default() -> Self {
        let b = |label: &str, axis, lo, hi, lo_closed, hi_closed| Bucket {
            label: label.into(),
            axis,
            lo,
            hi,
            lo_closed,
            hi_closed,
        };
        use BucketAxis::*;
        let inf = f64::INFINITY;
        Self {
            buckets: vec![
                b("OTM", Moneyness, -inf, 95.0, false, true),
                b("ATM", Moneyness, 97.5, 102.5, true, true),
                b("ITM", Moneyness, 105.0, inf, true, false),
                b("short", Maturity, 1.0 / 12.0, 0.25, true, false),
                b("medium", Maturity, 0.25, 0.5, true, false),
                b("long", Maturity, 0.5, inf, true, false),
            ],
        }
    }
}

impl BucketScheme {
    /// Half-open bins `(-inf, e0), [e0, e1), ..., [ek, inf)` on each axis,
    /// so every quote lands in exactly one bin per axis.
    pub fn exhaustive(moneyness_edges: &[f64], maturity_edges: &[f64]) -> Self {
        let mut buckets = Vec::new();
        for (axis, edges, tag) in [
            (BucketAxis::Moneyness, moneyness_edges, "m"),
            (BucketAxis::Maturity, maturity_edges, "t"),
        ] {
            let mut bounds = vec![f64::NEG_INFINITY];
            bounds.extend_from_slice(edges);
            bounds.push(f64::INFINITY);
            for (i, w) in bounds.windows(2).enumerate() {
                buckets.push(Bucket {
                    label: format!("{tag}{i}"),
                    axis,
                    lo: w[0],
                    hi: w[1],
                    lo_closed: true,
                    hi_closed: false,
                });
            }
        }
        Self { buckets }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: ModelId,
    pub horizon: usize,
    /// `None` for the aggregate row over every record.
    pub bucket: Option<String>,
    pub n: usize,
    pub rmse: f64,
    pub rmspe: f64,
    pub mape: f64,
    /// Absent when no record in the cell has an anchor.
    pub ssr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn get(&self, model: ModelId, horizon: usize, bucket: Option<&str>) -> Option<&ScoreRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.horizon == horizon && r.bucket.as_deref() == bucket)
    }
}

fn group_by_cell(records: &[ForecastRecord]) -> Vec<((ModelId, usize), Vec<&ForecastRecord>)> {
    let mut cells: HashMap<(ModelId, usize), Vec<&ForecastRecord>> = HashMap::new();
    for r in records {
        cells.entry((r.model, r.horizon)).or_default().push(r);
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_by_key(|((m, h), _)| (*h, *m));
    cells
}

fn score(
    model: ModelId,
    horizon: usize,
    bucket: Option<String>,
    recs: &[&ForecastRecord],
    anchor: SsrAnchor,
) -> Result<ScoreRow, EvalError> {
    let pairs: Vec<(f64, f64)> = recs.iter().map(|r| (r.real_iv, r.pred_iv)).collect();
    Ok(ScoreRow {
        model,
        horizon,
        bucket,
        n: pairs.len(),
        rmse: rmse(&pairs)?,
        rmspe: rmspe(&pairs)?,
        mape: mape(&pairs)?,
        ssr: ssr(recs, anchor).ok().map(|o| o.ssr),
    })
}

/// Scores every (model, horizon): one aggregate row plus one row per
/// non-empty bucket, ordered by horizon, model, then scheme order.
pub fn bucket_scores(
    records: &[ForecastRecord],
    scheme: &BucketScheme,
    anchor: SsrAnchor,
) -> Result<ScoreTable, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut rows = Vec::new();
    for ((model, h), recs) in group_by_cell(records) {
        rows.push(score(model, h, None, &recs, anchor)?);
        for b in &scheme.buckets {
            let inside: Vec<&ForecastRecord> = recs
                .iter()
                .copied()
                .filter(|r| b.contains(r.moneyness, r.maturity))
                .collect();
            if !inside.is_empty() {
                rows.push(score(model, h, Some(b.label.clone()), &inside, anchor)?);
            }
        }
    }
    Ok(ScoreTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub model: ModelId,
    pub horizon: usize,
    pub bucket: Option<String>,
    /// Records shared with the benchmark.
    pub n: usize,
    pub ratio: f64,
}

type CoordKey = (NaiveDate, u64, u64, usize);

/// Keys each record by origin, coordinate and occurrence so repeated
/// coordinates on one day pair up in order.
fn keyed<'a>(recs: &[&'a ForecastRecord]) -> HashMap<CoordKey, &'a ForecastRecord> {
    let mut seen: HashMap<(NaiveDate, u64, u64), usize> = HashMap::new();
    let mut out = HashMap::with_capacity(recs.len());
    for r in recs {
        let base = (r.origin_date, r.moneyness.to_bits(), r.maturity.to_bits());
        let k = seen.entry(base).or_insert(0);
        out.insert((base.0, base.1, base.2, *k), *r);
        *k += 1;
    }
    out
}

/// RMSE of each model over RMSE of `benchmark`, on the coordinates both
/// predicted, per horizon and bucket (plus the aggregate). The benchmark's
/// own rows are omitted.
pub fn rmse_ratio(
    records: &[ForecastRecord],
    benchmark: ModelId,
    scheme: &BucketScheme,
) -> Result<Vec<RatioRow>, EvalError> {
    let cells = group_by_cell(records);
    if !cells.iter().any(|((m, _), _)| *m == benchmark) {
        return Err(EvalError::BenchmarkMissing(benchmark.to_string()));
    }
    let bench: HashMap<usize, HashMap<CoordKey, &ForecastRecord>> = cells
        .iter()
        .filter(|((m, _), _)| *m == benchmark)
        .map(|((_, h), recs)| (*h, keyed(recs)))
        .collect();
    let mut rows = Vec::new();
    for ((model, h), recs) in &cells {
        if *model == benchmark {
            continue;
        }
        let Some(bmap) = bench.get(h) else {
            return Err(EvalError::BenchmarkMissing(format!("{benchmark} at horizon {h}")));
        };
        let mut matched: Vec<(&ForecastRecord, &ForecastRecord)> = keyed(recs)
            .into_iter()
            .filter_map(|(k, r)| bmap.get(&k).map(|b| (r, *b)))
            .collect();
        matched.sort_by_key(|(r, _)| (r.origin_date, r.moneyness.to_bits(), r.maturity.to_bits()));
        let mut subsets: Vec<(Option<String>, Vec<(&ForecastRecord, &ForecastRecord)>)> =
            vec![(None, matched.clone())];
        for b in &scheme.buckets {
            subsets.push((
                Some(b.label.clone()),
                matched
                    .iter()
                    .copied()
                    .filter(|(r, _)| b.contains(r.moneyness, r.maturity))
                    .collect(),
            ));
        }
        for (bucket, pairs) in subsets {
            if pairs.is_empty() {
                continue;
            }
            let own: Vec<(f64, f64)> = pairs.iter().map(|(r, _)| (r.real_iv, r.pred_iv)).collect();
            let base: Vec<(f64, f64)> = pairs.iter().map(|(_, b)| (b.real_iv, b.pred_iv)).collect();
            let denom = rmse(&base)?;
            if denom == 0.0 {
                return Err(EvalError::ZeroBenchmarkRmse {
                    horizon: *h,
                    bucket: bucket.unwrap_or_else(|| "all".into()),
                });
            }
            rows.push(RatioRow {
                model: *model,
                horizon: *h,
                bucket,
                n: pairs.len(),
                ratio: rmse(&own)? / denom,
            });
        }
    }
    Ok(rows)
}
