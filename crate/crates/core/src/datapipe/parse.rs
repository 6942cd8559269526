//! Raw click-log readers.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use rayon::prelude::*;

use super::dataset::{Dataset, Vocab};
use crate::error::{invalid, Error, Result};
use crate::manifest::Manifest;
use crate::sessgraph::Session;

/// Share of rows that may fail to parse before the whole file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawFormat {
    /// `session_id,timestamp,item_id,category` with ISO-8601 timestamps.
    Yoochoose,
    /// `sessionId;userId;itemId;timeframe;eventdate`.
    Diginetica,
    /// `session_id\tunix_timestamp\titem_id`.
    Tsv,
}

impl RawFormat {
    pub fn name(self) -> &'static str {
        match self {
            RawFormat::Yoochoose => "yoochoose",
            RawFormat::Diginetica => "diginetica",
            RawFormat::Tsv => "tsv",
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            RawFormat::Yoochoose => b',',
            RawFormat::Diginetica => b';',
            RawFormat::Tsv => b'\t',
        }
    }
}

impl fmt::Display for RawFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yoochoose" => Ok(RawFormat::Yoochoose),
            "diginetica" => Ok(RawFormat::Diginetica),
            "tsv" => Ok(RawFormat::Tsv),
            _ => Err(invalid!("unknown format `{s}` (yoochoose, diginetica, tsv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Click {
    session: String,
    // Diginetica orders by (eventdate, timeframe) but timestamps sessions by
    // the date alone.
    order: (f64, f64),
    ts: f64,
    item: String,
}

fn parse_record(rec: &csv::StringRecord, format: RawFormat) -> std::result::Result<Click, String> {
    let field = |i: usize| {
        rec.get(i)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing column {}", i + 1))
    };
    match format {
        RawFormat::Yoochoose => {
            let ts = DateTime::parse_from_rfc3339(field(1)?).map_err(|e| format!("bad timestamp: {e}"))?;
            let ts = ts.timestamp_millis() as f64 / 1000.0;
            Ok(Click {
                session: field(0)?.to_owned(),
                order: (ts, 0.0),
                ts,
                item: field(2)?.to_owned(),
            })
        }
        RawFormat::Diginetica => {
            let date = NaiveDate::parse_from_str(field(4)?, "%Y-%m-%d").map_err(|e| format!("bad eventdate: {e}"))?;
            let day = date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64;
            let frame: f64 = field(3)?.parse().map_err(|_| "bad timeframe".to_owned())?;
            Ok(Click {
                session: field(0)?.to_owned(),
                order: (day, frame),
                ts: day,
                item: field(2)?.to_owned(),
            })
        }
        RawFormat::Tsv => {
            let ts: f64 = field(1)?.parse().map_err(|_| "bad timestamp".to_owned())?;
            if !ts.is_finite() {
                return Err("non-finite timestamp".into());
            }
            Ok(Click {
                session: field(0)?.to_owned(),
                order: (ts, 0.0),
                ts,
                item: field(2)?.to_owned(),
            })
        }
    }
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.get(0)
        .map(|s| s.trim().eq_ignore_ascii_case("sessionid") || s.trim().eq_ignore_ascii_case("session_id"))
        .unwrap_or(false)
}

/// Reads a click log from `path`; see [`parse_raw_str`].
pub fn parse_raw(path: &Path, format: RawFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_raw_str(&text, format)?;
    ds.manifest.set("source", path.display());
    ds.record_stats("raw_");
    Ok(ds)
}

/// Groups clicks into sessions ordered by start time (then session id);
/// clicks within a session are sorted by time, keeping file order on ties.
/// Fails when more than 1% of the rows are malformed.
pub fn parse_raw_str(text: &str, format: RawFormat) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let records: Vec<(usize, std::result::Result<csv::StringRecord, String>)> = reader
        .records()
        .enumerate()
        .map(|(i, r)| (i + 1, r.map_err(|e| e.to_string())))
        .collect();

    let parsed: Vec<(usize, std::result::Result<Click, String>)> = records
        .into_par_iter()
        .filter(|(line, r)| !(*line == 1 && r.as_ref().map(is_header).unwrap_or(false)))
        .map(|(line, r)| (line, r.and_then(|rec| parse_record(&rec, format))))
        .collect();

    let total = parsed.len();
    let mut clicks = Vec::with_capacity(total);
    let mut bad = Vec::new();
    for (line, r) in parsed {
        match r {
            Ok(c) => clicks.push(c),
            Err(e) => bad.push((line, e)),
        }
    }
    if total == 0 {
        return Err(Error::Data("no click rows found".into()));
    }
    if bad.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        let samples: Vec<String> = bad.iter().take(3).map(|(l, e)| format!("line {l}: {e}")).collect();
        return Err(Error::Data(format!(
            "{} of {total} rows are malformed (limit {:.0}%); e.g. {}",
            bad.len(),
            MAX_MALFORMED_FRACTION * 100.0,
            samples.join("; ")
        )));
    }
    for (line, e) in bad.iter().take(5) {
        log::warn!("skipping line {line}: {e}");
    }

    let vocab = Vocab::from_raw(clicks.iter().map(|c| c.item.clone()));
    let mut groups: HashMap<String, Vec<Click>> = HashMap::new();
    for c in clicks {
        groups.entry(c.session.clone()).or_default().push(c);
    }
    let mut sessions: Vec<Session> = groups
        .into_iter()
        .map(|(id, mut cs)| {
            cs.sort_by(|a, b| a.order.0.total_cmp(&b.order.0).then(a.order.1.total_cmp(&b.order.1)));
            Session {
                id,
                items: cs.iter().map(|c| vocab.get(&c.item).unwrap()).collect(),
                timestamps: Some(cs.iter().map(|c| c.ts).collect()),
                label: None,
            }
        })
        .collect();
    sort_sessions(&mut sessions);

    let mut manifest = Manifest::new();
    manifest
        .set("format", format)
        .set("rows", total)
        .set("malformed_rows", bad.len());
    Ok(Dataset {
        sessions,
        vocab,
        manifest,
    })
}

/// Orders sessions by start timestamp, then by id.
pub(crate) fn sort_sessions(sessions: &mut [Session]) {
    sessions.sort_by(|a, b| {
        let ta = a.first_timestamp().unwrap_or(0.0);
        let tb = b.first_timestamp().unwrap_or(0.0);
        ta.total_cmp(&tb).then_with(|| a.id.cmp(&b.id))
    });
}
