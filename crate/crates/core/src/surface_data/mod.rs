//! Implied-volatility quote panels and the liquidity filters applied to them.
//!
//! A [`SurfacePanel`] is one trading day's cross-section of quotes; a
//! [`PanelSeries`] is a date-ordered run of panels for one commodity.
//! Moneyness is strike over underlying in percent, maturity is an ACT/365
//! year fraction and implied volatility is a decimal fraction.

mod csv_io;
mod synthetic;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{ingest_csv, read_csv, write_csv, CsvSchema, Ingested};
pub use synthetic::{
    generate_synthetic, GeneratedSeries, GroundTruth, Lattice, SyntheticConfig, TruthRow,
};

/// Raw quotes above this volatility are treated as corrupt on ingestion.
pub const RAW_IV_CEILING: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid quote: {0}")]
    InvalidQuote(String),
    #[error("quote dated {quote} placed in panel dated {panel}")]
    DateMismatch { panel: NaiveDate, quote: NaiveDate },
    #[error("panel dates must be strictly increasing ({prev} then {next})")]
    UnorderedDates { prev: NaiveDate, next: NaiveDate },
    #[error("no maturity group meets the liquidity threshold")]
    AllGroupsDropped,
    #[error("invalid maturity group rule: {0}")]
    InvalidRule(String),
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("series contains no quotes")]
    EmptySeries,
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One implied-volatility observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvQuote {
    pub date: NaiveDate,
    /// Strike / underlying × 100.
    pub moneyness: f64,
    /// Year fraction, ACT/365.
    pub maturity: f64,
    /// Decimal implied volatility (0.25 = 25%).
    pub iv: f64,
    pub volume: u64,
}

impl IvQuote {
    pub fn new(
        date: NaiveDate,
        moneyness: f64,
        maturity: f64,
        iv: f64,
        volume: u64,
    ) -> Result<Self, DataError> {
        if !moneyness.is_finite() || moneyness <= 0.0 {
            return Err(DataError::InvalidQuote(format!("moneyness {moneyness}")));
        }
        if !maturity.is_finite() || maturity <= 0.0 {
            return Err(DataError::InvalidQuote(format!("maturity {maturity}")));
        }
        if !iv.is_finite() || iv <= 0.0 || iv >= RAW_IV_CEILING {
            return Err(DataError::InvalidQuote(format!("iv {iv}")));
        }
        Ok(Self {
            date,
            moneyness,
            maturity,
            iv,
            volume,
        })
    }
}

/// All quotes observed on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePanel {
    pub date: NaiveDate,
    pub quotes: Vec<IvQuote>,
}

impl SurfacePanel {
    pub fn new(date: NaiveDate, quotes: Vec<IvQuote>) -> Result<Self, DataError> {
        if let Some(q) = quotes.iter().find(|q| q.date != date) {
            return Err(DataError::DateMismatch {
                panel: date,
                quote: q.date,
            });
        }
        Ok(Self { date, quotes })
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }
}

/// Date-ordered panels for one underlying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSeries {
    pub panels: Vec<SurfacePanel>,
    pub commodity_tag: String,
    /// Descriptive futures-curve annotation, carried but never computed.
    pub convenience_yield_slope: Option<f64>,
}

impl PanelSeries {
    pub fn new(
        panels: Vec<SurfacePanel>,
        commodity_tag: impl Into<String>,
        convenience_yield_slope: Option<f64>,
    ) -> Result<Self, DataError> {
        for w in panels.windows(2) {
            if w[1].date <= w[0].date {
                return Err(DataError::UnorderedDates {
                    prev: w[0].date,
                    next: w[1].date,
                });
            }
        }
        Ok(Self {
            panels,
            commodity_tag: commodity_tag.into(),
            convenience_yield_slope,
        })
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn quote_count(&self) -> usize {
        self.panels.iter().map(SurfacePanel::len).sum()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.panels.iter().map(|p| p.date).collect()
    }

    /// Contiguous sub-series `panels[range]` with the same annotations.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PanelSeries {
        PanelSeries {
            panels: self.panels[range].to_vec(),
            commodity_tag: self.commodity_tag.clone(),
            convenience_yield_slope: self.convenience_yield_slope,
        }
    }
}

/// Moneyness/maturity window applied to every quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeFilter {
    pub moneyness_lo: f64,
    pub moneyness_hi: f64,
    pub maturity_lo: f64,
    pub maturity_hi: f64,
}

impl Default for RangeFilter {
    fn default() -> Self {
        Self {
            moneyness_lo: 90.0,
            moneyness_hi: 110.0,
            maturity_lo: 1.0 / 12.0,
            maturity_hi: 2.0,
        }
    }
}

impl RangeFilter {
    pub fn accepts(&self, q: &IvQuote) -> bool {
        q.volume > 0
            && q.moneyness >= self.moneyness_lo
            && q.moneyness <= self.moneyness_hi
            && q.maturity >= self.maturity_lo
            && q.maturity <= self.maturity_hi
    }
}

/// Keeps traded quotes inside the inclusive moneyness and maturity ranges.
pub fn filter_panel(
    panel: &SurfacePanel,
    moneyness_lo: f64,
    moneyness_hi: f64,
    maturity_lo: f64,
    maturity_hi: f64,
) -> SurfacePanel {
    let filter = RangeFilter {
        moneyness_lo,
        moneyness_hi,
        maturity_lo,
        maturity_hi,
    };
    filter_panel_with(panel, &filter)
}

pub fn filter_panel_with(panel: &SurfacePanel, filter: &RangeFilter) -> SurfacePanel {
    SurfacePanel {
        date: panel.date,
        quotes: panel.quotes.iter().copied().filter(|q| filter.accepts(q)).collect(),
    }
}

pub fn filter_series(series: &PanelSeries, filter: &RangeFilter) -> PanelSeries {
    PanelSeries {
        panels: series.panels.iter().map(|p| filter_panel_with(p, filter)).collect(),
        commodity_tag: series.commodity_tag.clone(),
        convenience_yield_slope: series.convenience_yield_slope,
    }
}

/// Maturity-group liquidity rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaturityGroupRule {
    /// Group boundaries in months; group `i` spans `[edges[i], edges[i+1])`,
    /// the last group is closed on the right.
    pub group_edges: Vec<f64>,
    pub min_quotes_per_group: usize,
    /// Days left with fewer quotes than this are dropped.
    pub min_quotes_per_day: usize,
}

impl Default for MaturityGroupRule {
    fn default() -> Self {
        Self {
            group_edges: vec![1.0, 6.0, 12.0, 18.0, 24.0],
            min_quotes_per_group: 15_000,
            min_quotes_per_day: 5,
        }
    }
}

impl MaturityGroupRule {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.min_quotes_per_group == 0 {
            return Err(DataError::InvalidRule("min_quotes_per_group must be > 0".into()));
        }
        if self.group_edges.len() < 2 {
            return Err(DataError::InvalidRule("need at least two group edges".into()));
        }
        if self.group_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DataError::InvalidRule("group edges must ascend".into()));
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.group_edges.len() - 1
    }

    /// Group index of a maturity in years, or `None` outside every group.
    pub fn group_of(&self, maturity: f64) -> Option<usize> {
        let mut months = maturity * 12.0;
        if (months - months.round()).abs() < 1e-9 {
            months = months.round();
        }
        let last = self.n_groups() - 1;
        (0..self.n_groups()).find(|&g| {
            let (lo, hi) = (self.group_edges[g], self.group_edges[g + 1]);
            months >= lo && (months < hi || (g == last && months <= hi))
        })
    }

    /// Per-group quote counts over a whole series.
    pub fn tally(&self, series: &PanelSeries) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_groups()];
        for q in series.panels.iter().flat_map(|p| &p.quotes) {
            if let Some(g) = self.group_of(q.maturity) {
                counts[g] += 1;
            }
        }
        counts
    }
}

/// Result of [`apply_liquidity_rule`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidityOutcome {
    pub series: PanelSeries,
    /// Indices of the maturity groups that met the threshold.
    pub surviving_groups: Vec<usize>,
    pub group_counts: Vec<usize>,
    /// Upper edge of the longest surviving group, in years.
    pub effective_max_maturity: f64,
    pub dropped_days: usize,
}

/// Drops thinly traded maturity groups, counting quotes over the series
/// itself.
pub fn apply_liquidity_rule(
    series: &PanelSeries,
    rule: &MaturityGroupRule,
) -> Result<LiquidityOutcome, DataError> {
    apply_liquidity_rule_counted_on(series, series, rule)
}

/// Like [`apply_liquidity_rule`] but tallies group sizes on `reference`
/// (for example an in-sample span) and applies the verdict to `series`.
pub fn apply_liquidity_rule_counted_on(
    series: &PanelSeries,
    reference: &PanelSeries,
    rule: &MaturityGroupRule,
) -> Result<LiquidityOutcome, DataError> {
    rule.validate()?;
    let group_counts = rule.tally(reference);
    let keep: Vec<bool> = group_counts
        .iter()
        .map(|&c| c >= rule.min_quotes_per_group)
        .collect();
    let surviving_groups: Vec<usize> = (0..keep.len()).filter(|&g| keep[g]).collect();
    let Some(&longest) = surviving_groups.last() else {
        return Err(DataError::AllGroupsDropped);
    };

    let mut dropped_days = 0;
    let mut panels = Vec::with_capacity(series.panels.len());
    for p in &series.panels {
        let quotes: Vec<IvQuote> = p
            .quotes
            .iter()
            .copied()
            .filter(|q| rule.group_of(q.maturity).is_some_and(|g| keep[g]))
            .collect();
        if quotes.len() < rule.min_quotes_per_day {
            dropped_days += 1;
            continue;
        }
        panels.push(SurfacePanel {
            date: p.date,
            quotes,
        });
    }
    Ok(LiquidityOutcome {
        series: PanelSeries {
            panels,
            commodity_tag: series.commodity_tag.clone(),
            convenience_yield_slope: series.convenience_yield_slope,
        },
        surviving_groups,
        group_counts,
        effective_max_maturity: rule.group_edges[longest + 1] / 12.0,
        dropped_days,
    })
}

/// `n` consecutive weekdays starting at `start` (rolled forward off weekends).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Formats `x` with `digits` significant digits, trailing zeros trimmed.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x.is_infinite() {
            if x > 0.0 { "inf".into() } else { "-inf".into() }
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", digits.saturating_sub(1), x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    let out = if !(-7..16).contains(&exp) {
        format!("{}e{}", trim(mant), exp)
    } else {
        let rounded: f64 = sci.parse().expect("formatted float parses");
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, rounded))
    };
    if out == "-0" {
        "0".into()
    } else {
        out
    }
}
