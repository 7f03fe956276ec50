use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

use super::{HourlyRecord, UPA_BANDS};
use crate::error::{Error, Result};

fn header() -> Vec<String> {
    let mut h = vec!["iso_timestamp".to_string()];
    h.extend((0..UPA_BANDS).map(|b| format!("upa_{b:03}")));
    h.push("ecmwf".into());
    h.push("wind".into());
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes records with an empty field for every missing value.
pub fn write_csv(w: impl Write, records: &[HourlyRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header())?;
    let mut row = Vec::with_capacity(UPA_BANDS + 3);
    for r in records {
        row.clear();
        row.push(r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true));
        match &r.upa {
            Some(u) => row.extend(u.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), UPA_BANDS)),
        }
        row.push(fmt_opt(r.ecmwf));
        row.push(fmt_opt(r.wind));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_path(path: &Path, records: &[HourlyRecord]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), records)
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map(|t| t.and_utc())
        .map_err(|_| Error::Ingest(format!("cannot parse timestamp `{s}`")))
}

fn parse_opt(s: &str, what: &str, line: u64) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Ingest(format!("line {line}: invalid {what} value `{s}`")))
}

pub fn read_csv(r: impl Read) -> Result<Vec<HourlyRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let expected = header();
    let got: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(Error::Ingest(format!(
            "unexpected header: expected iso_timestamp, upa_000..upa_{:03}, ecmwf, wind",
            UPA_BANDS - 1
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let timestamp = parse_timestamp(rec.get(0).unwrap_or_default().trim())?;
        let bands: Vec<Option<f64>> = (1..=UPA_BANDS)
            .map(|i| parse_opt(rec.get(i).unwrap_or_default(), "upa", line))
            .collect::<Result<_>>()?;
        let present = bands.iter().filter(|b| b.is_some()).count();
        let upa = match present {
            0 => None,
            UPA_BANDS => Some(bands.into_iter().map(Option::unwrap).collect()),
            n => {
                return Err(Error::Ingest(format!(
                    "line {line}: partial spectrum ({n} of {UPA_BANDS} bands)"
                )))
            }
        };
        out.push(HourlyRecord {
            timestamp,
            upa,
            ecmwf: parse_opt(rec.get(UPA_BANDS + 1).unwrap_or_default(), "ecmwf", line)?,
            wind: parse_opt(rec.get(UPA_BANDS + 2).unwrap_or_default(), "wind", line)?,
        });
    }
    Ok(out)
}

pub fn read_csv_path(path: &Path) -> Result<Vec<HourlyRecord>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Ingest(format!("cannot open dataset {}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(f))
}
