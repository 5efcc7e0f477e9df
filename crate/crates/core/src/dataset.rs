//! Tab-separated quadruple files.
//!
//! One fact per line: `subject<TAB>predicate<TAB>object<TAB>start[<TAB>end]`.
//! Lines starting with `#` are comments. Dates are integers (years or day
//! counts) or ISO `YYYY-MM-DD`; any token containing `####` is an unknown
//! endpoint.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::time::{Granularity, Interval, TimePoint};
use crate::tkg::{add_inverse_facts, EntityId, PredicateId, Quad, Schema, Tkg, Vocabulary};

pub const UNKNOWN_TOKEN: &str = "####";

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

/// Parses one date token; `Ok(None)` means an unknown endpoint.
pub fn parse_time(token: &str, granularity: Granularity) -> std::result::Result<Option<TimePoint>, String> {
    let token = token.trim();
    if token.contains(UNKNOWN_TOKEN) {
        return Ok(None);
    }
    if let Ok(v) = token.parse::<i64>() {
        return Ok(Some(TimePoint(v)));
    }
    // ISO date, possibly with a leading minus on the year
    let (neg, body) = match token.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, token),
    };
    let mut parts = body.splitn(3, '-');
    let year = parts.next().unwrap_or("");
    let year: i64 = year
        .parse()
        .map_err(|_| format!("unparseable date `{token}`"))?;
    let year = if neg { -year } else { year };
    match granularity {
        Granularity::Year => Ok(Some(TimePoint(year))),
        Granularity::Day => {
            let month: u32 = parts
                .next()
                .and_then(|m| m.parse().ok())
                .ok_or_else(|| format!("date `{token}` needs a month for day granularity"))?;
            let day: u32 = parts
                .next()
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| format!("date `{token}` needs a day for day granularity"))?;
            let date = NaiveDate::from_ymd_opt(year as i32, month, day)
                .ok_or_else(|| format!("invalid calendar date `{token}`"))?;
            Ok(Some(TimePoint((date - epoch()).num_days())))
        }
    }
}

pub fn format_time(t: Option<TimePoint>, granularity: Granularity) -> String {
    match (t, granularity) {
        (None, _) => UNKNOWN_TOKEN.to_owned(),
        (Some(t), Granularity::Year) => t.0.to_string(),
        (Some(t), Granularity::Day) => {
            let date = epoch() + chrono::Duration::days(t.0);
            format!("{:04}-{:02}-{:02}", date.year(), date.month(), date.day())
        }
    }
}

/// Parses dataset text into quads, extending `vocab` in first-seen order.
pub fn parse_quads(
    text: &str,
    schema: Schema,
    granularity: Granularity,
    vocab: &mut Vocabulary,
) -> Result<Vec<Quad>> {
    let mut quads = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != schema.columns() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected {} tab-separated columns, found {}",
                    schema.columns(),
                    cols.len()
                ),
            });
        }
        if cols[..3].iter().any(|c| c.is_empty()) {
            return Err(Error::Parse {
                line,
                message: "empty subject, predicate or object".into(),
            });
        }
        let to_err = |message| Error::Parse { line, message };
        let start = parse_time(cols[3], granularity).map_err(to_err)?;
        let end = match schema {
            Schema::Timestamp => start,
            Schema::Interval => parse_time(cols[4], granularity).map_err(to_err)?,
        };
        if let (Some(s), Some(e)) = (start, end) {
            if s > e {
                return Err(Error::InvertedInterval {
                    line,
                    start: s.0,
                    end: e.0,
                });
            }
        }
        quads.push(Quad {
            subject: EntityId(vocab.entities.intern(cols[0])),
            predicate: PredicateId(vocab.predicates.intern(cols[1])),
            object: EntityId(vocab.entities.intern(cols[2])),
            time: Interval { start, end },
        });
    }
    Ok(quads)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Reads a single dataset file into a (non-augmented) graph.
pub fn parse_quadruple_file(path: &Path, schema: Schema, granularity: Granularity) -> Result<Tkg> {
    let text = read_text(path)?;
    let mut vocab = Vocabulary::default();
    let quads = parse_quads(&text, schema, granularity, &mut vocab)?;
    if quads.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Tkg::new(vocab, quads, schema, granularity)
}

/// Dataset splits parsed over one shared vocabulary.
#[derive(Debug, Clone)]
pub struct Splits {
    pub vocab: Vocabulary,
    pub train: Vec<Quad>,
    pub valid: Vec<Quad>,
    pub test: Vec<Quad>,
    pub schema: Schema,
    pub granularity: Granularity,
}

impl Splits {
    pub fn from_texts(
        train: &str,
        valid: Option<&str>,
        test: Option<&str>,
        schema: Schema,
        granularity: Granularity,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        let train = parse_quads(train, schema, granularity, &mut vocab)?;
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let valid = match valid {
            Some(t) => parse_quads(t, schema, granularity, &mut vocab)?,
            None => Vec::new(),
        };
        let test = match test {
            Some(t) => parse_quads(t, schema, granularity, &mut vocab)?,
            None => Vec::new(),
        };
        Ok(Splits {
            vocab,
            train,
            valid,
            test,
            schema,
            granularity,
        })
    }

    pub fn load(
        train: &Path,
        valid: Option<&Path>,
        test: Option<&Path>,
        schema: Schema,
        granularity: Granularity,
    ) -> Result<Self> {
        let train = read_text(train)?;
        let valid = valid.map(read_text).transpose()?;
        let test = test.map(read_text).transpose()?;
        Self::from_texts(&train, valid.as_deref(), test.as_deref(), schema, granularity)
    }

    /// Inverse-augmented training graph.
    pub fn train_graph(&self) -> Result<Tkg> {
        add_inverse_facts(Tkg::new(
            self.vocab.clone(),
            self.train.iter().copied(),
            self.schema,
            self.granularity,
        )?)
    }

    /// Known-endpoint bounds over every split.
    pub fn time_bounds(&self) -> Option<(TimePoint, TimePoint)> {
        let pts = self
            .train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .flat_map(|q| [q.time.start, q.time.end])
            .flatten();
        let mut bounds: Option<(TimePoint, TimePoint)> = None;
        for t in pts {
            bounds = Some(match bounds {
                None => (t, t),
                Some((lo, hi)) => (lo.min(t), hi.max(t)),
            });
        }
        bounds
    }
}

pub fn write_quads(
    mut out: impl Write,
    quads: impl IntoIterator<Item = Quad>,
    vocab: &Vocabulary,
    schema: Schema,
    granularity: Granularity,
) -> Result<()> {
    for q in quads {
        write!(
            out,
            "{}\t{}\t{}\t{}",
            vocab.entity_name(q.subject),
            vocab.predicate_name(q.predicate),
            vocab.entity_name(q.object),
            format_time(q.time.start, granularity)
        )?;
        if schema == Schema::Interval {
            write!(out, "\t{}", format_time(q.time.end, granularity))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
