use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::RulePattern;
use crate::time::{Endpoint, Granularity, TimePoint};
use crate::tkg::PredicateId;

use super::{anchor_from_tag, anchor_tag, fit_gaussian, fit_weighted, Density, DensityClass, Target, N_MIN};

const HEADER: &str = "#tekg-densities\tv1";

/// Bucketing of body-event start times into eras with separate fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraPolicy {
    Single,
    Piece(i64),
}

impl EraPolicy {
    pub fn for_granularity(g: Granularity) -> Self {
        match g {
            Granularity::Year => EraPolicy::Piece(100),
            Granularity::Day => EraPolicy::Single,
        }
    }

    pub fn era(&self, start: Option<TimePoint>) -> Option<i64> {
        match *self {
            EraPolicy::Single => Some(0),
            EraPolicy::Piece(len) => start.map(|t| t.0.div_euclid(len)),
        }
    }
}

/// One weighted gap observation for a pattern position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSample {
    /// Index into the pattern list passed to [`DensityTable::fit`].
    pub pattern: usize,
    pub target: Target,
    /// 1-based body position.
    pub position: usize,
    pub anchor: Endpoint,
    pub era: Option<i64>,
    pub gap: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FitLevel {
    Era,
    Pooled,
    Predicate,
}

impl FitLevel {
    fn name(self) -> &'static str {
        match self {
            FitLevel::Era => "era",
            FitLevel::Pooled => "pooled",
            FitLevel::Predicate => "predicate",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "era" => Ok(FitLevel::Era),
            "pooled" => Ok(FitLevel::Pooled),
            "predicate" => Ok(FitLevel::Predicate),
            other => Err(Error::format("density level", other.to_owned())),
        }
    }
}

/// A fitted table entry as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub level: FitLevel,
    /// Pattern key, or the head predicate id for predicate-level rows.
    pub key: String,
    pub target: Target,
    pub position: usize,
    pub anchor: Endpoint,
    pub era: Option<i64>,
    pub density: Density,
    pub n: f64,
}

type PatternKey = (String, Target, usize, Endpoint);

/// Fitted densities with the era → pooled → predicate fallback chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensityTable {
    era: BTreeMap<(PatternKey, i64), (Density, f64)>,
    pooled: BTreeMap<PatternKey, (Density, f64)>,
    predicate: BTreeMap<(u32, Target, Endpoint), (Density, f64)>,
}

fn fit_groups<K: Ord + Send + Sync + Clone>(
    groups: BTreeMap<K, Vec<(f64, f64)>>,
    fit: impl Fn(&[(f64, f64)]) -> Option<Density> + Sync,
) -> BTreeMap<K, (Density, f64)> {
    let entries: Vec<(K, Vec<(f64, f64)>)> = groups.into_iter().collect();
    entries
        .par_iter()
        .filter_map(|(k, xs)| {
            let n: f64 = xs.iter().map(|s| s.1).sum();
            fit(xs).map(|d| (k.clone(), (d, n)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

impl DensityTable {
    pub fn fit(patterns: &[RulePattern], samples: &[GapSample]) -> Self {
        let keys: Vec<String> = patterns.iter().map(RulePattern::key).collect();
        let mut era: BTreeMap<(PatternKey, i64), Vec<(f64, f64)>> = BTreeMap::new();
        let mut pooled: BTreeMap<PatternKey, Vec<(f64, f64)>> = BTreeMap::new();
        let mut predicate: BTreeMap<(u32, Target, Endpoint), Vec<(f64, f64)>> = BTreeMap::new();
        for s in samples {
            if !(s.gap.is_finite() && s.weight > 0.0) {
                continue;
            }
            let pk = (keys[s.pattern].clone(), s.target, s.position, s.anchor);
            let x = (s.gap, s.weight);
            if let Some(e) = s.era {
                era.entry((pk.clone(), e)).or_default().push(x);
            }
            pooled.entry(pk).or_default().push(x);
            predicate
                .entry((patterns[s.pattern].head.0, s.target, s.anchor))
                .or_default()
                .push(x);
        }
        let min = N_MIN as f64;
        DensityTable {
            era: fit_groups(era, |xs| fit_weighted(xs, min).ok()),
            pooled: fit_groups(pooled, |xs| fit_weighted(xs, min).ok()),
            predicate: fit_groups(predicate, |xs| {
                let total: f64 = xs.iter().map(|s| s.1).sum();
                (total > 0.0).then(|| fit_gaussian(xs, total))
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.era.is_empty() && self.pooled.is_empty() && self.predicate.is_empty()
    }

    pub fn lookup(
        &self,
        key: &str,
        head: PredicateId,
        target: Target,
        position: usize,
        anchor: Endpoint,
        era: Option<i64>,
    ) -> Option<(Density, FitLevel)> {
        let pk = (key.to_owned(), target, position, anchor);
        if let Some(e) = era {
            if let Some(&(d, _)) = self.era.get(&(pk.clone(), e)) {
                return Some((d, FitLevel::Era));
            }
        }
        if let Some(&(d, _)) = self.pooled.get(&pk) {
            return Some((d, FitLevel::Pooled));
        }
        self.predicate
            .get(&(head.0, target, anchor))
            .map(|&(d, _)| (d, FitLevel::Predicate))
    }

    pub fn rows(&self) -> Vec<TableRow> {
        let mut rows = Vec::new();
        for (((key, target, position, anchor), era), &(density, n)) in &self.era {
            rows.push(TableRow {
                level: FitLevel::Era,
                key: key.clone(),
                target: *target,
                position: *position,
                anchor: *anchor,
                era: Some(*era),
                density,
                n,
            });
        }
        for ((key, target, position, anchor), &(density, n)) in &self.pooled {
            rows.push(TableRow {
                level: FitLevel::Pooled,
                key: key.clone(),
                target: *target,
                position: *position,
                anchor: *anchor,
                era: None,
                density,
                n,
            });
        }
        for (&(head, target, anchor), &(density, n)) in &self.predicate {
            rows.push(TableRow {
                level: FitLevel::Predicate,
                key: head.to_string(),
                target,
                position: 0,
                anchor,
                era: None,
                density,
                n,
            });
        }
        rows
    }

    pub fn from_rows(rows: impl IntoIterator<Item = TableRow>) -> Result<Self> {
        let mut t = DensityTable::default();
        for r in rows {
            let v = (r.density, r.n);
            let pk = (r.key, r.target, r.position, r.anchor);
            match (r.level, r.era) {
                (FitLevel::Era, Some(e)) => {
                    t.era.insert((pk, e), v);
                }
                (FitLevel::Pooled, _) => {
                    t.pooled.insert(pk, v);
                }
                (FitLevel::Predicate, _) => {
                    let head = pk.0.parse().map_err(|_| Error::format("density row", pk.0.clone()))?;
                    t.predicate.insert((head, pk.1, pk.3), v);
                }
                (FitLevel::Era, None) => return Err(Error::format("density row", "era row without era")),
            }
        }
        Ok(t)
    }

    /// Versioned header, then `level key target position anchor era class
    /// p1 p2 n` per row.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{HEADER}")?;
        for r in self.rows() {
            let (p1, p2) = r.density.params();
            let era = r.era.map_or_else(|| "-".to_owned(), |e| e.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.level.name(),
                r.key,
                r.target.tag(),
                r.position,
                anchor_tag(r.anchor),
                era,
                r.density.class(),
                p1,
                p2,
                r.n
            )?;
        }
        Ok(())
    }

    pub fn read_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(Error::format("density table", "missing or unsupported header")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let perr = |m: String| Error::Parse { line: i + 1, message: m };
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 10 {
                return Err(perr(format!("expected 10 columns, got {}", c.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number `{s}`")));
            let class: DensityClass = c[6].parse().map_err(|e: Error| perr(e.to_string()))?;
            rows.push(TableRow {
                level: FitLevel::parse(c[0]).map_err(|e| perr(e.to_string()))?,
                key: c[1].to_owned(),
                target: Target::from_tag(c[2]).map_err(|e| perr(e.to_string()))?,
                position: c[3].parse().map_err(|_| perr(format!("bad position `{}`", c[3])))?,
                anchor: anchor_from_tag(c[4]).map_err(|e| perr(e.to_string()))?,
                era: if c[5] == "-" {
                    None
                } else {
                    Some(c[5].parse().map_err(|_| perr(format!("bad era `{}`", c[5])))?)
                },
                density: Density::from_params(class, num(c[7])?, num(c[8])?)
                    .map_err(|e| perr(e.to_string()))?,
                n: num(c[9])?,
            });
        }
        DensityTable::from_rows(rows)
    }
}
