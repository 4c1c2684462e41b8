use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{format_significant, DataError, IvQuote, PanelSeries, SurfacePanel};

/// Column names for the five quote fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date: String,
    pub moneyness: String,
    pub maturity: String,
    pub iv: String,
    pub volume: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            moneyness: "moneyness".into(),
            maturity: "maturity".into(),
            iv: "iv".into(),
            volume: "volume".into(),
        }
    }
}

/// A parsed series plus the number of rows that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: PanelSeries,
    pub skipped_rows: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Ingested, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, schema, tag)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    commodity_tag: impl Into<String>,
) -> Result<Ingested, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::SchemaMismatch(format!("missing column '{name}'")))
    };
    let cols = [
        find(&schema.date)?,
        find(&schema.moneyness)?,
        find(&schema.maturity)?,
        find(&schema.iv)?,
        find(&schema.volume)?,
    ];

    let mut by_date: BTreeMap<NaiveDate, Vec<IvQuote>> = BTreeMap::new();
    let mut skipped_rows = 0;
    for record in rdr.records() {
        let Ok(record) = record else {
            skipped_rows += 1;
            continue;
        };
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let parsed = (|| {
            let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").ok()?;
            let moneyness: f64 = field(1).parse().ok()?;
            let maturity: f64 = field(2).parse().ok()?;
            let iv: f64 = field(3).parse().ok()?;
            let volume: u64 = field(4).parse().ok()?;
            IvQuote::new(date, moneyness, maturity, iv, volume).ok()
        })();
        match parsed {
            Some(q) => by_date.entry(q.date).or_default().push(q),
            None => skipped_rows += 1,
        }
    }
    if by_date.is_empty() {
        return Err(DataError::EmptySeries);
    }
    let panels = by_date
        .into_iter()
        .map(|(date, quotes)| SurfacePanel { date, quotes })
        .collect();
    Ok(Ingested {
        series: PanelSeries::new(panels, commodity_tag, None)?,
        skipped_rows,
    })
}

/// Writes `date,moneyness,maturity,iv,volume` rows with 10 significant digits.
pub fn write_csv<W: Write>(series: &PanelSeries, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "moneyness", "maturity", "iv", "volume"])?;
    for q in series.panels.iter().flat_map(|p| &p.quotes) {
        w.write_record([
            q.date.format("%Y-%m-%d").to_string(),
            format_significant(q.moneyness, 10),
            format_significant(q.maturity, 10),
            format_significant(q.iv, 10),
            q.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface_data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn three_rows_one_date() {
        let data = "date,moneyness,maturity,iv,volume\n\
                    2015-03-02,95,0.25,0.31,4\n\
                    2015-03-02,100,0.5,0.29,10\n\
                    2015-03-02,105,1.0,0.30,2\n";
        let out = read_csv(data.as_bytes(), &CsvSchema::default(), "corn").unwrap();
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.series.panels[0].len(), 3);
        assert_eq!(out.skipped_rows, 0);
        assert_eq!(out.series.commodity_tag, "corn");
    }

    #[test]
    fn non_numeric_iv_row_skipped() {
        let data = "date,moneyness,maturity,iv,volume\n\
                    2015-03-02,95,0.25,abc,4\n\
                    2015-03-03,100,0.5,0.29,10\n\
                    2015-03-02,105,1.0,0.30,2\n";
        let out = read_csv(data.as_bytes(), &CsvSchema::default(), "x").unwrap();
        assert_eq!(out.skipped_rows, 1);
        assert_eq!(out.series.dates().len(), 2);
        assert!(out.series.dates()[0] < out.series.dates()[1]);
    }

    #[test]
    fn custom_schema_and_missing_column() {
        let data = "Day,K,T,vol,qty\n2015-03-02,95,0.25,0.3,4\n";
        let schema = CsvSchema {
            date: "Day".into(),
            moneyness: "K".into(),
            maturity: "T".into(),
            iv: "vol".into(),
            volume: "qty".into(),
        };
        assert_eq!(read_csv(data.as_bytes(), &schema, "x").unwrap().series.quote_count(), 1);
        let err = read_csv(data.as_bytes(), &CsvSchema::default(), "x").unwrap_err();
        assert!(matches!(err, DataError::SchemaMismatch(_)));
    }

    #[test]
    fn empty_and_unreadable() {
        let data = "date,moneyness,maturity,iv,volume\n";
        assert!(matches!(
            read_csv(data.as_bytes(), &CsvSchema::default(), "x"),
            Err(DataError::EmptySeries)
        ));
        assert!(matches!(
            ingest_csv("/nonexistent/quotes.csv", &CsvSchema::default()),
            Err(DataError::UnreadableFile { .. })
        ));
    }

    #[test]
    fn emit_ingest_round_trip_is_stable() {
        let cfg = SyntheticConfig {
            n_days: 5,
            quotes_per_day: 20,
            noise_sd: 0.01,
            ..SyntheticConfig::default()
        };
        let gen = generate_synthetic(&cfg, 4).unwrap();
        let mut first = Vec::new();
        write_csv(&gen.series, &mut first).unwrap();
        let back = read_csv(first.as_slice(), &CsvSchema::default(), "x").unwrap();
        assert_eq!(back.skipped_rows, 0);
        let mut second = Vec::new();
        write_csv(&back.series, &mut second).unwrap();
        assert_eq!(first, second);
        // values agree to 10 significant digits
        for (a, b) in gen.series.panels.iter().flat_map(|p| &p.quotes).zip(back.series.panels.iter().flat_map(|p| &p.quotes)) {
            assert!((a.iv - b.iv).abs() <= 1e-9 * a.iv.abs());
        }
    }
}
