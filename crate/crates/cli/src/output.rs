//! Output directories are built in a hidden sibling and renamed into place
//! only when a command succeeds, so failures leave nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ivs_core::harness::{ForecastRecord, ModelId};

use crate::error::{io_err, CliError, CliResult};

/// Written into every output directory; marks it as safe to replace.
pub const MARKER: &str = ".ivs-output";

pub struct Staging {
    tmp: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path, command: &str) -> CliResult<Self> {
        if target.exists() {
            let empty = fs::read_dir(target)
                .map_err(|e| CliError::Config(format!("output {}: {e}", target.display())))?
                .next()
                .is_none();
            if !empty && !target.join(MARKER).exists() {
                return Err(CliError::Config(format!(
                    "output directory {} exists and was not written by this tool",
                    target.display()
                )));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
        let name = target
            .file_name()
            .ok_or_else(|| CliError::Config(format!("bad output path {}", target.display())))?
            .to_string_lossy();
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err("clearing staging directory", e))?;
        }
        fs::create_dir(&tmp).map_err(|e| CliError::Config(format!("output not writable: {e}")))?;
        let s = Self {
            tmp,
            target: target.to_path_buf(),
            committed: false,
        };
        s.write(MARKER, format!("{command}\n"))?;
        Ok(s)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.tmp.join(name), contents).map_err(|e| io_err(&format!("writing {name}"), e))
    }

    pub fn commit(mut self) -> CliResult<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| io_err("replacing output directory", e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| io_err("moving outputs into place", e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// CSV text with a header row.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub fn finish(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn day(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

pub const FORECAST_HEADER: [&str; 10] = [
    "origin_date",
    "target_date",
    "h",
    "model",
    "moneyness",
    "maturity",
    "pred_iv",
    "real_iv",
    "anchor_iv",
    "anchor_fit_iv",
];

pub fn forecasts_csv(records: &[ForecastRecord]) -> Vec<u8> {
    let mut t = Table::new(&FORECAST_HEADER);
    for r in records {
        t.row([
            day(r.origin_date),
            day(r.target_date),
            r.horizon.to_string(),
            r.model.to_string(),
            num(r.moneyness),
            num(r.maturity),
            num(r.pred_iv),
            num(r.real_iv),
            opt(r.anchor_iv),
            opt(r.anchor_fit_iv),
        ]);
    }
    t.finish()
}

pub fn read_forecasts(path: &Path) -> CliResult<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    let header = rdr.headers().map_err(|e| io_err("forecast header", e))?.clone();
    if header.iter().collect::<Vec<_>>() != FORECAST_HEADER {
        return Err(CliError::Data(format!("{} has an unexpected header", path.display())));
    }
    let bad = |line: usize, what: &str| CliError::Data(format!("{}: line {line}: bad {what}", path.display()));
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| io_err("forecast row", e))?;
        let date = |k: usize| NaiveDate::parse_from_str(&row[k], "%Y-%m-%d").map_err(|_| bad(line, FORECAST_HEADER[k]));
        let float = |k: usize| row[k].parse::<f64>().map_err(|_| bad(line, FORECAST_HEADER[k]));
        let maybe = |k: usize| if row[k].is_empty() { Ok(None) } else { float(k).map(Some) };
        out.push(ForecastRecord {
            origin_date: date(0)?,
            target_date: date(1)?,
            horizon: row[2].parse().map_err(|_| bad(line, "h"))?,
            model: row[3].parse::<ModelId>().map_err(|_| bad(line, "model"))?,
            moneyness: float(4)?,
            maturity: float(5)?,
            pred_iv: float(6)?,
            real_iv: float(7)?,
            anchor_iv: maybe(8)?,
            anchor_fit_iv: maybe(9)?,
        });
    }
    Ok(out)
}
