//! Interval metrics, dataset evaluation and the forecast re-split.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::AccessLog;
use crate::predictor::{FallbackStats, PredictionResult, Predictor, Query};
use crate::time::{Interval, TimePoint};
use crate::tkg::{Quad, Schema, Vocabulary};

/// Inclusive unit count of a known interval.
pub fn vol(i: &Interval) -> Result<i64> {
    let (s, e) = i.bounds()?;
    Ok(e.0 - s.0 + 1)
}

/// `max(1, vol(I ∩ Î)) / vol(hull(I, Î))`.
pub fn aeiou(truth: &Interval, pred: &Interval) -> Result<f64> {
    let (ts, te) = truth.bounds()?;
    let (ps, pe) = pred.bounds()?;
    let lo = ts.max(ps);
    let hi = te.min(pe);
    let inter = if lo <= hi { hi.0 - lo.0 + 1 } else { 0 };
    let hull = te.max(pe).0 - ts.min(ps).0 + 1;
    Ok(inter.max(1) as f64 / hull as f64)
}

/// `½ [1/(1 + |Δs|) + 1/(1 + |Δe|)]`.
pub fn tac(truth: &Interval, pred: &Interval) -> Result<f64> {
    let (ts, te) = truth.bounds()?;
    let (ps, pe) = pred.bounds()?;
    let r = |a: TimePoint, b: TimePoint| 1.0 / (1.0 + (a.0 - b.0).abs() as f64);
    Ok(0.5 * (r(ts, ps) + r(te, pe)))
}

pub fn mae(truths: &[TimePoint], preds: &[TimePoint]) -> Result<f64> {
    if truths.len() != preds.len() {
        return Err(Error::LengthMismatch {
            left: truths.len(),
            right: preds.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: i64 = truths.iter().zip(preds).map(|(a, b)| (a.0 - b.0).abs()).sum();
    Ok(total as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSums {
    pub count: usize,
    pub aeiou: f64,
    pub tac: f64,
    pub abs_error: f64,
    pub fallback: usize,
}

impl MetricSums {
    fn add(&mut self, truth: &Interval, pred: &PredictionResult) -> Result<()> {
        self.count += 1;
        self.aeiou += aeiou(truth, &pred.interval)?;
        self.tac += tac(truth, &pred.interval)?;
        let (ts, _) = truth.bounds()?;
        let (ps, _) = pred.interval.bounds()?;
        self.abs_error += (ts.0 - ps.0).abs() as f64;
        self.fallback += usize::from(pred.fallback);
        Ok(())
    }

    fn mean(&self, x: f64) -> Option<f64> {
        (self.count > 0).then(|| x / self.count as f64)
    }

    pub fn aeiou_mean(&self) -> Option<f64> {
        self.mean(self.aeiou)
    }

    pub fn tac_mean(&self) -> Option<f64> {
        self.mean(self.tac)
    }

    /// Mean absolute start-time error.
    pub fn mae(&self) -> Option<f64> {
        self.mean(self.abs_error)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub overall: MetricSums,
    pub by_predicate: BTreeMap<String, MetricSums>,
    /// Queries without a fully known truth.
    pub skipped: usize,
    /// Facts read at or after a query's start; only tracked in forecast mode.
    pub forecast_violations: Option<usize>,
}

/// Truth as scored: intervals need both endpoints, timestamps a start.
fn scored_truth(q: &Quad, schema: Schema) -> Option<Interval> {
    match schema {
        Schema::Interval => q.time.is_fully_known().then_some(q.time),
        Schema::Timestamp => q.time.start.map(|s| Interval::point(s.0)),
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Evaluated queries and their predictions in input order.
    pub queries: Vec<Quad>,
    pub predictions: Vec<PredictionResult>,
}

pub fn evaluate_dataset(predictor: &Predictor<'_>, test: &[Quad], forecast: bool) -> Result<Evaluation> {
    let schema = predictor.model.schema;
    let kept: Vec<(Quad, Interval)> = test
        .iter()
        .filter_map(|q| scored_truth(q, schema).map(|t| (*q, t)))
        .collect();
    let skipped = test.len() - kept.len();
    let results: Vec<(PredictionResult, usize)> = kept
        .par_iter()
        .map(|(q, _)| {
            let query = Query::from_quad(q, forecast);
            if forecast {
                let log = AccessLog::new();
                let p = predictor.predict(&query, Some(&log))?;
                let cutoff = query.cutoff.expect("scored queries have a start");
                let bad = log
                    .events()
                    .into_iter()
                    .filter(|&m| !matches!(predictor.graph.fact(m).time.start, Some(s) if s < cutoff))
                    .count();
                Ok((p, bad))
            } else {
                Ok((predictor.predict(&query, None)?, 0))
            }
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport {
        skipped,
        forecast_violations: forecast.then_some(0),
        ..EvalReport::default()
    };
    let vocab = predictor.graph.vocab();
    for ((q, truth), (p, bad)) in kept.iter().zip(&results) {
        report.overall.add(truth, p)?;
        report
            .by_predicate
            .entry(vocab.predicate_name(q.predicate))
            .or_default()
            .add(truth, p)?;
        if let Some(v) = report.forecast_violations.as_mut() {
            *v += bad;
        }
    }
    Ok(Evaluation {
        report,
        queries: kept.into_iter().map(|(q, _)| q).collect(),
        predictions: results.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Metrics of the predicate-marginal fallback applied to every query.
pub fn evaluate_fallback(stats: &FallbackStats, schema: Schema, vocab: &Vocabulary, test: &[Quad]) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for q in test {
        let Some(truth) = scored_truth(q, schema) else {
            report.skipped += 1;
            continue;
        };
        let p = PredictionResult {
            interval: stats.interval(q.predicate, schema),
            distributions: Vec::new(),
            support: Vec::new(),
            fallback: true,
        };
        report.overall.add(&truth, &p)?;
        report
            .by_predicate
            .entry(vocab.predicate_name(q.predicate))
            .or_default()
            .add(&truth, &p)?;
    }
    Ok(report)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_owned(), |v| format!("{v:.6}"))
}

impl EvalReport {
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "#scope\tcount\taeiou\ttac\tmae\tfallback")?;
        let row = |out: &mut dyn Write, name: &str, m: &MetricSums| -> Result<()> {
            writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}\t{}",
                m.count,
                fmt_opt(m.aeiou_mean()),
                fmt_opt(m.tac_mean()),
                fmt_opt(m.mae()),
                m.fallback
            )?;
            Ok(())
        };
        row(&mut out, "*", &self.overall)?;
        for (p, m) in &self.by_predicate {
            row(&mut out, p, m)?;
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.overall;
        writeln!(f, "queries evaluated: {}", m.count)?;
        writeln!(f, "queries skipped:   {}", self.skipped)?;
        writeln!(f, "aeIOU:             {}", fmt_opt(m.aeiou_mean()))?;
        writeln!(f, "TAC:               {}", fmt_opt(m.tac_mean()))?;
        writeln!(f, "MAE:               {}", fmt_opt(m.mae()))?;
        write!(f, "fallback:          {}", m.fallback)?;
        if let Some(v) = self.forecast_violations {
            write!(f, "\nforecast leaks:    {v}")?;
        }
        Ok(())
    }
}

/// Re-split facts by start time: train before `valid_start`, valid before
/// `test_start`, test from `test_start` on. Facts without a start go to
/// train.
pub fn forecast_resplit(quads: &[Quad], valid_start: TimePoint, test_start: TimePoint) -> Result<[Vec<Quad>; 3]> {
    if valid_start > test_start {
        return Err(Error::InvalidRange {
            min: valid_start.0,
            max: test_start.0,
        });
    }
    let mut out: [Vec<Quad>; 3] = Default::default();
    for q in quads {
        let k = match q.time.start {
            Some(s) if s >= test_start => 2,
            Some(s) if s >= valid_start => 1,
            _ => 0,
        };
        out[k].push(*q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn iv(a: i64, b: i64) -> Interval {
        Interval::known(a, b).unwrap()
    }

    #[test]
    fn volumes() {
        assert_eq!(vol(&iv(2000, 2000)).unwrap(), 1);
        assert_eq!(vol(&iv(2000, 2004)).unwrap(), 5);
        assert_eq!(vol(&iv(2018, 2021)).unwrap(), 4);
        assert!(vol(&Interval::unknown()).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_abs_diff_eq!(aeiou(&iv(2000, 2005), &iv(2000, 2005)).unwrap(), 1.0);
        assert_abs_diff_eq!(aeiou(&iv(2000, 2001), &iv(2003, 2004)).unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(tac(&iv(1854, 1870), &iv(1863, 1871)).unwrap(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(tac(&iv(1955, 1955), &iv(1957, 1957)).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(mae(&[TimePoint(0), TimePoint(10)], &[TimePoint(2), TimePoint(6)]).unwrap(), 3.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[TimePoint(1)], &[]).is_err());
    }

    #[test]
    fn resplit_by_start() {
        let q = |s| Quad {
            subject: crate::tkg::EntityId(0),
            predicate: crate::tkg::PredicateId(0),
            object: crate::tkg::EntityId(1),
            time: Interval::point(s),
        };
        let [tr, va, te] = forecast_resplit(&[q(2000), q(2011), q(2012), q(2018)], TimePoint(2010), TimePoint(2012)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (1, 1, 2));
    }
}
