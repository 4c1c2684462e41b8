use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ivs_core::cross_section::{estimate_daily_lambda, fit_ct, fit_gg, fix_lambda};
use ivs_core::dynamics::{DynamicsFamily, SurfaceModel};
use ivs_core::evaluation::{bucket_scores, rmse_ratio, BucketScheme};
use ivs_core::harness::{run_rolling, ForecastRecord, HarnessError, ModelId, RollingRun};
use ivs_core::mcs::{build_losses, block_length, mcs_rows, run_mcs_with_block, McsError};
use ivs_core::surface_data::{
    apply_liquidity_rule_counted_on, filter_series, generate_synthetic, ingest_csv, write_csv, DataError, PanelSeries, TruthRow,
};
use ivs_core::tree::select_complexity;

use crate::config::{InputKind, ManifestInfo, McsSettings, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{day, forecasts_csv, num, opt, read_forecasts, Staging, Table};

pub const MANIFEST: &str = "manifest.toml";
const GG_COLUMNS: [&str; 5] = ["level", "moneyness", "moneyness_sq", "maturity", "moneyness_maturity"];
const CT_COLUMNS: [&str; 7] = [
    "level",
    "smile_right",
    "smile_left",
    "term_slope",
    "term_curvature",
    "attenuation_right",
    "attenuation_left",
];

type Files = Vec<(String, Vec<u8>)>;

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::InvalidConfig(m) | DataError::InvalidRule(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

/// The quote series named by the config, after range and liquidity filters.
/// Liquidity counts are taken over the first rolling window.
pub fn load_series(cfg: &RunConfig) -> CliResult<(PanelSeries, Vec<TruthRow>)> {
    let seed = cfg.seed()?;
    let (mut series, truth) = match cfg.input.kind {
        InputKind::Synthetic => {
            let syn = cfg.input.synthetic.as_ref().expect("validated");
            let g = generate_synthetic(syn, seed).map_err(data_error)?;
            (g.series, g.truth)
        }
        InputKind::Csv => {
            let path = cfg.input.path.as_ref().expect("validated");
            let schema = cfg.input.schema.clone().unwrap_or_default();
            let ing = ingest_csv(path, &schema).map_err(data_error)?;
            (ing.series, Vec::new())
        }
    };
    if let Some(tag) = &cfg.input.commodity {
        series.commodity_tag = tag.clone();
    }
    if let Some(f) = &cfg.input.range_filter {
        series = filter_series(&series, f);
    }
    if let Some(rule) = &cfg.input.liquidity {
        let reference = series.slice(0..cfg.rolling.window_len.min(series.len()));
        series = apply_liquidity_rule_counted_on(&series, &reference, rule)
            .map_err(data_error)?
            .series;
    }
    Ok((series, truth))
}

fn manifest(cfg: &RunConfig, command: &str, commodity: &str) -> CliResult<String> {
    let mut m = cfg.clone();
    m.manifest = Some(ManifestInfo {
        command: command.into(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        commodity: commodity.into(),
    });
    m.to_toml()
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    if cfg.input.kind != InputKind::Synthetic {
        return Err(CliError::Config("generate needs a synthetic input".into()));
    }
    let staging = Staging::new(out, "generate")?;
    let (series, truth) = load_series(cfg)?;
    let mut quotes = Vec::new();
    write_csv(&series, &mut quotes).map_err(data_error)?;
    staging.write("quotes.csv", quotes)?;

    let width = truth.first().map_or(0, |r| r.coefficients.len());
    let mut header = vec!["date".to_string(), "model".into(), "lambda".into()];
    header.extend((0..width).map(|k| format!("coef_{k}")));
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &truth {
        let mut row = vec![day(r.date), r.model.to_string(), opt(r.lambda)];
        row.extend(r.coefficients.iter().map(|c| num(*c)));
        t.row(row);
    }
    staging.write("truth.csv", t.finish())?;
    staging.write(MANIFEST, manifest(cfg, "generate", &series.commodity_tag)?)?;
    staging.commit()
}

/// Daily GG and CT coefficients, the in-sample λ, and the in-sample tree.
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let staging = Staging::new(out, "fit")?;
    let (series, _) = load_series(cfg)?;
    if series.is_empty() {
        return Err(CliError::Data("series has no panels".into()));
    }
    let r = &cfg.rolling;
    let transform = r.transform;
    let in_sample = series.slice(0..r.window_len.min(series.len()));
    let mut gaps = Table::new(&["date", "model", "reason"]);

    let mut lam = Table::new(&["date", "lambda", "sse", "at_bound"]);
    let mut daily = Vec::new();
    for p in &in_sample.panels {
        match estimate_daily_lambda::<f64>(p, &transform, &r.lambda_bounds) {
            Ok(e) => {
                lam.row([day(e.date), num(e.lambda), num(e.sse), e.at_bound.to_string()]);
                daily.push(e.lambda);
            }
            Err(e) => gaps.row([day(p.date), "lambda".into(), e.to_string()]),
        }
    }
    let lambda = fix_lambda(&daily).map_err(|e| CliError::Compute(format!("lambda calibration: {e}")))?;
    staging.write("lambda_daily.csv", lam.finish())?;

    let mut gg = Table::new(&[&["date"][..], &GG_COLUMNS, &["rss", "n"]].concat());
    let mut ct = Table::new(&[&["date", "lambda"][..], &CT_COLUMNS, &["rss", "n"]].concat());
    for p in &series.panels {
        match fit_gg::<f64>(p, &transform) {
            Ok(c) => {
                let s = c.fit_stats.expect("fit records stats");
                let mut row = vec![day(p.date)];
                row.extend(c.alpha.iter().map(|v| num(*v)));
                row.extend([num(s.rss), s.n.to_string()]);
                gg.row(row);
            }
            Err(e) => gaps.row([day(p.date), "GG".into(), e.to_string()]),
        }
        match fit_ct::<f64>(p, lambda, &transform) {
            Ok(c) => {
                let s = c.fit_stats.expect("fit records stats");
                let mut row = vec![day(p.date), num(lambda)];
                row.extend(c.beta.iter().map(|v| num(*v)));
                row.extend([num(s.rss), s.n.to_string()]);
                ct.row(row);
            }
            Err(e) => gaps.row([day(p.date), "CT".into(), e.to_string()]),
        }
    }
    staging.write("coefficients_gg.csv", gg.finish())?;
    staging.write("coefficients_ct.csv", ct.finish())?;

    let sel = select_complexity::<f64>(&in_sample, r.cv_folds, cfg.seed()?, &r.tree)
        .map_err(|e| CliError::Compute(format!("tree: {e}")))?;
    staging.write("tree.json", sel.schedule.subtree_at(sel.alpha_star).to_json())?;
    let mut cv = Table::new(&["alpha", "cv_sse", "std_error", "leaves", "selected"]);
    for (k, e) in sel.schedule.cv_errors.iter().enumerate() {
        cv.row([
            num(e.alpha),
            num(e.sse),
            num(e.std_error),
            sel.schedule.subtrees[k].leaf_count().to_string(),
            (k == sel.selected_index).to_string(),
        ]);
    }
    staging.write("tree_cv.csv", cv.finish())?;
    staging.write("fit_gaps.csv", gaps.finish())?;
    staging.write(MANIFEST, manifest(cfg, "fit", &series.commodity_tag)?)?;
    staging.commit()
}

fn harness_error(e: HarnessError) -> CliError {
    match e {
        HarnessError::InvalidConfig(m) | HarnessError::UnknownModel(m) => CliError::Config(m),
        e @ HarnessError::InsufficientHistory { .. } => CliError::Config(e.to_string()),
        other => CliError::Compute(other.to_string()),
    }
}

/// Metric tables for one commodity's forecasts.
pub fn evaluation_files(records: &[ForecastRecord], commodity: &str, cfg: &RunConfig) -> CliResult<Files> {
    if records.is_empty() {
        return Err(CliError::Compute("no forecasts to evaluate".into()));
    }
    let scheme = BucketScheme::default();
    let table = bucket_scores(records, &scheme, cfg.evaluation.ssr_anchor)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    let mut files = Files::new();

    let mut long = Table::new(&["model", "horizon", "bucket", "n", "rmse", "rmspe", "mape", "ssr"]);
    for r in &table.rows {
        long.row([
            r.model.to_string(),
            r.horizon.to_string(),
            r.bucket.clone().unwrap_or_default(),
            r.n.to_string(),
            num(r.rmse),
            num(r.rmspe),
            num(r.mape),
            opt(r.ssr),
        ]);
    }
    files.push(("scores.csv".into(), long.finish()));

    let metrics: [(&str, fn(&ivs_core::evaluation::ScoreRow) -> Option<f64>); 4] = [
        ("rmse", |r| Some(r.rmse)),
        ("rmspe", |r| Some(r.rmspe)),
        ("mape", |r| Some(r.mape)),
        ("ssr", |r| r.ssr),
    ];
    for (name, get) in metrics {
        let mut t = Table::new(&["horizon", "model", commodity]);
        for r in table.rows.iter().filter(|r| r.bucket.is_none()) {
            t.row([r.horizon.to_string(), r.model.to_string(), opt(get(r))]);
        }
        files.push((format!("{name}.csv"), t.finish()));
    }

    let mut ratios = Table::new(&["benchmark", "model", "horizon", "bucket", "n", "ratio"]);
    for surface in [SurfaceModel::Gg, SurfaceModel::Ct] {
        let bench = ModelId::Param(surface, DynamicsFamily::Rw);
        let family: Vec<ForecastRecord> = records
            .iter()
            .filter(|r| r.model.surface() == Some(surface))
            .cloned()
            .collect();
        if !family.iter().any(|r| r.model == bench) {
            continue;
        }
        let rows = rmse_ratio(&family, bench, &scheme).map_err(|e| CliError::Compute(e.to_string()))?;
        for r in rows {
            ratios.row([
                bench.to_string(),
                r.model.to_string(),
                r.horizon.to_string(),
                r.bucket.unwrap_or_default(),
                r.n.to_string(),
                num(r.ratio),
            ]);
        }
    }
    files.push(("rmse_ratio.csv".into(), ratios.finish()));
    Ok(files)
}

/// One MCS table per horizon plus a status table; horizons whose loss
/// series is too short for the procedure are reported as skipped.
pub fn mcs_files(records: &[ForecastRecord], horizons: &[usize], settings: &McsSettings, seed: u64) -> CliResult<Files> {
    let mut files = Files::new();
    let mut status = Table::new(&["horizon", "status", "n_obs", "block_len", "detail"]);
    for &h in horizons {
        let mut t = Table::new(&["model", "eliminated_at_step", "p_value", "survivor"]);
        let outcome = build_losses(records, h, settings.aggregation).and_then(|lm| {
            let block = block_length(&lm, settings.p_cap)?;
            run_mcs_with_block(&lm, settings.alpha, settings.n_boot, seed, block).map(|r| (lm.n(), r))
        });
        match outcome {
            Ok((n, res)) => {
                for r in mcs_rows(&res) {
                    t.row([
                        r.model,
                        r.eliminated_at_step.map(|s| s.to_string()).unwrap_or_default(),
                        num(r.p_value),
                        r.survivor.to_string(),
                    ]);
                }
                status.row([h.to_string(), "ok".into(), n.to_string(), res.block_len.to_string(), String::new()]);
            }
            Err(e @ (McsError::SeriesTooShort { .. } | McsError::NoCommonDates(_) | McsError::InvalidLosses(_))) => {
                status.row([h.to_string(), "skipped".into(), String::new(), String::new(), e.to_string()]);
            }
            Err(e) => return Err(CliError::Compute(format!("MCS at horizon {h}: {e}"))),
        }
        files.push((format!("mcs_h{h}.csv"), t.finish()));
    }
    files.push(("mcs_status.csv".into(), status.finish()));
    Ok(files)
}

fn run_files(run: &RollingRun, cfg: &RunConfig) -> Files {
    let mut files = Files::new();
    files.push(("forecasts.csv".into(), forecasts_csv(&run.forecasts.records)));
    let mut gaps = Table::new(&["origin_date", "model", "h", "reason"]);
    for g in &run.forecasts.gaps {
        gaps.row([
            day(g.origin_date),
            g.model.to_string(),
            g.horizon.map(|h| h.to_string()).unwrap_or_default(),
            g.reason.clone(),
        ]);
    }
    files.push(("gaps.csv".into(), gaps.finish()));
    for &h in &cfg.rolling.horizons {
        let mut t = Table::new(&[
            "origin_date",
            "model",
            "family",
            "coordinate",
            "selected_order",
            "aicc",
            "forecast",
            "flagged",
        ]);
        for d in run.diagnostics.iter().filter(|d| d.horizon == h) {
            let family = match d.model {
                ModelId::Param(_, f) => f.to_string(),
                ModelId::Rt => String::new(),
            };
            t.row([
                day(d.origin_date),
                d.model.to_string(),
                family,
                d.coordinate.to_string(),
                d.selected_order.clone(),
                opt(d.aicc),
                num(d.forecast),
                d.flagged.to_string(),
            ]);
        }
        files.push((format!("diagnostics_h{h}.csv"), t.finish()));
    }
    let mut cal = Table::new(&["key", "value"]);
    cal.row(["lambda".to_string(), opt(run.lambda)]);
    cal.row(["alpha_star".to_string(), opt(run.alpha_star)]);
    files.push(("calibration.csv".into(), cal.finish()));
    if let Some(tree) = &run.in_sample_tree {
        files.push(("tree.json".into(), tree.to_json().into_bytes()));
    }
    files
}

/// Full experiment: rolling forecasts, metric tables, MCS and a manifest
/// that replays the run.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let staging = Staging::new(out, "run")?;
    let (series, _) = load_series(cfg)?;
    let seed = cfg.seed()?;
    let run = run_rolling(&series, &cfg.rolling, seed).map_err(harness_error)?;
    let mut files = run_files(&run, cfg);
    files.extend(evaluation_files(&run.forecasts.records, &series.commodity_tag, cfg)?);
    files.extend(mcs_files(&run.forecasts.records, &cfg.rolling.horizons, &cfg.mcs, seed)?);
    files.push((MANIFEST.into(), manifest(cfg, "run", &series.commodity_tag)?.into_bytes()));
    for (name, bytes) in files {
        staging.write(&name, bytes)?;
    }
    staging.commit()
}

/// A finished run directory: its manifest config and forecasts.
pub fn open_run(dir: &Path) -> CliResult<(RunConfig, ManifestInfo)> {
    let path = dir.join(MANIFEST);
    if !path.is_file() || !dir.join("forecasts.csv").is_file() {
        return Err(CliError::NoRunFound(dir.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::Data(e.to_string()))?;
    let cfg = RunConfig::from_toml(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    match cfg.manifest.clone() {
        Some(info) if info.command == "run" => Ok((cfg, info)),
        _ => Err(CliError::NoRunFound(dir.display().to_string())),
    }
}

pub fn cmd_evaluate(run_dir: &Path, out: &Path) -> CliResult<()> {
    let (cfg, info) = open_run(run_dir)?;
    let records = read_forecasts(&run_dir.join("forecasts.csv"))?;
    let staging = Staging::new(out, "evaluate")?;
    for (name, bytes) in evaluation_files(&records, &info.commodity, &cfg)? {
        staging.write(&name, bytes)?;
    }
    staging.commit()
}

pub fn cmd_mcs(run_dir: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let (cfg, _) = open_run(run_dir)?;
    let records = read_forecasts(&run_dir.join("forecasts.csv"))?;
    let seed = seed.map_or_else(|| cfg.seed(), Ok)?;
    let staging = Staging::new(out, "mcs")?;
    for (name, bytes) in mcs_files(&records, &cfg.rolling.horizons, &cfg.mcs, seed)? {
        staging.write(&name, bytes)?;
    }
    staging.commit()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub commodity: String,
    pub model: String,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
    pub best: bool,
}

const REPORT_METRICS: [&str; 4] = ["rmse", "rmspe", "mape", "ssr"];

fn read_scores(dir: &Path, commodity: &str) -> CliResult<Vec<ReportRow>> {
    let path = dir.join("scores.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|_| CliError::NoRunFound(dir.display().to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        if !rec[2].is_empty() {
            continue;
        }
        let horizon: usize = rec[1].parse().map_err(|_| CliError::Data(format!("{}: bad horizon", path.display())))?;
        for (k, metric) in REPORT_METRICS.iter().enumerate() {
            let field = &rec[4 + k];
            if field.is_empty() {
                continue;
            }
            rows.push(ReportRow {
                commodity: commodity.to_string(),
                model: rec[0].to_string(),
                horizon,
                metric: metric.to_string(),
                value: field.parse().map_err(|_| CliError::Data(format!("{}: bad {metric}", path.display())))?,
                best: false,
            });
        }
    }
    Ok(rows)
}

/// Marks the lowest error (highest success ratio) per commodity, horizon
/// and metric; ties are all marked.
pub fn mark_best(rows: &mut [ReportRow]) {
    let mut best: BTreeMap<(String, usize, String), f64> = BTreeMap::new();
    for r in rows.iter() {
        let key = (r.commodity.clone(), r.horizon, r.metric.clone());
        let better = |a: f64, b: f64| if r.metric == "ssr" { a > b } else { a < b };
        best.entry(key)
            .and_modify(|v| {
                if better(r.value, *v) {
                    *v = r.value
                }
            })
            .or_insert(r.value);
    }
    for r in rows.iter_mut() {
        r.best = best[&(r.commodity.clone(), r.horizon, r.metric.clone())] == r.value;
    }
}

fn survivors(dir: &Path, h: usize) -> Option<Vec<String>> {
    let mut rdr = csv::Reader::from_path(dir.join(format!("mcs_h{h}.csv"))).ok()?;
    let names: Vec<String> = rdr
        .records()
        .filter_map(Result::ok)
        .filter(|r| &r[3] == "true")
        .map(|r| r[0].to_string())
        .collect();
    (!names.is_empty()).then_some(names)
}

/// Text tables (models by commodities, one block per horizon) plus a long
/// CSV for plotting.
pub fn cmd_report(run_dirs: &[&Path], out: &Path) -> CliResult<()> {
    if run_dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    let mut mcs_lines = Vec::new();
    for dir in run_dirs {
        let (cfg, info) = open_run(dir)?;
        rows.extend(read_scores(dir, &info.commodity)?);
        for &h in &cfg.rolling.horizons {
            if let Some(s) = survivors(dir, h) {
                mcs_lines.push(format!("{} h={h}: {}", info.commodity, s.join(", ")));
            }
        }
    }
    mark_best(&mut rows);
    let staging = Staging::new(out, "report")?;

    let mut long = Table::new(&["commodity", "model", "horizon", "metric", "value", "best"]);
    for r in &rows {
        long.row([
            r.commodity.clone(),
            r.model.clone(),
            r.horizon.to_string(),
            r.metric.clone(),
            num(r.value),
            r.best.to_string(),
        ]);
    }
    staging.write("report_long.csv", long.finish())?;

    let mut commodities: Vec<String> = rows.iter().map(|r| r.commodity.clone()).collect();
    commodities.sort();
    commodities.dedup();
    let mut text = String::new();
    for metric in REPORT_METRICS {
        let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.metric == metric).collect();
        if mine.is_empty() {
            continue;
        }
        let _ = writeln!(text, "== {} ==", metric.to_uppercase());
        let mut horizons: Vec<usize> = mine.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        for h in horizons {
            let _ = write!(text, "h={h:<4}{:<10}", "model");
            for c in &commodities {
                let _ = write!(text, "{c:>16}");
            }
            text.push('\n');
            let mut models: Vec<&str> = mine.iter().filter(|r| r.horizon == h).map(|r| r.model.as_str()).collect();
            models.sort_by_key(|m| m.parse::<ModelId>().ok());
            models.dedup();
            for m in models {
                let _ = write!(text, "      {m:<10}");
                for c in &commodities {
                    let cell = mine
                        .iter()
                        .find(|r| r.horizon == h && r.model == m && &r.commodity == c)
                        .map(|r| format!("{:.4}{}", r.value, if r.best { "*" } else { " " }))
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(text, "{cell:>16}");
                }
                text.push('\n');
            }
        }
        text.push('\n');
    }
    text.push_str("* lowest error (highest success ratio) per commodity and horizon\n");
    if !mcs_lines.is_empty() {
        text.push_str("\n== MCS survivors ==\n");
        for l in mcs_lines {
            text.push_str(&l);
            text.push('\n');
        }
    }
    staging.write("report.txt", text)?;
    staging.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: &str, m: &str, h: usize, metric: &str, v: f64) -> ReportRow {
        ReportRow {
            commodity: c.into(),
            model: m.into(),
            horizon: h,
            metric: metric.into(),
            value: v,
            best: false,
        }
    }

    #[test]
    fn best_flag_per_commodity_and_horizon() {
        let mut rows = vec![
            row("oil", "RT", 1, "rmse", 0.02),
            row("oil", "GG-RW", 1, "rmse", 0.01),
            row("gas", "RT", 1, "rmse", 0.03),
            row("oil", "RT", 1, "ssr", 60.0),
            row("oil", "GG-RW", 1, "ssr", 55.0),
            row("oil", "RT", 5, "rmse", 0.05),
        ];
        mark_best(&mut rows);
        let flags: Vec<bool> = rows.iter().map(|r| r.best).collect();
        assert_eq!(flags, vec![false, true, true, true, false, true]);
    }
}
