//! Time points, intervals, temporal relations and the quantized time grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit of a dataset's time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Year,
    Day,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Year => f.write_str("year"),
            Granularity::Day => f.write_str("day"),
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "year" | "1 year" | "years" => Ok(Granularity::Year),
            "day" | "1 day" | "days" => Ok(Granularity::Day),
            other => Err(Error::Config(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Count of granularity units from the dataset epoch (year 0 for yearly
/// data, 1970-01-01 for daily data).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimePoint(pub i64);

impl TimePoint {
    pub fn value(self) -> i64 {
        self.0
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for TimePoint {
    fn from(v: i64) -> Self {
        TimePoint(v)
    }
}

/// A closed interval whose endpoints may be unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: Option<TimePoint>,
    pub end: Option<TimePoint>,
}

impl Interval {
    pub fn new(start: Option<TimePoint>, end: Option<TimePoint>) -> Result<Self> {
        if let (Some(s), Some(e)) = (start, end) {
            if s > e {
                return Err(Error::InvalidInterval { start: s.0, end: e.0 });
            }
        }
        Ok(Interval { start, end })
    }

    pub fn known(start: i64, end: i64) -> Result<Self> {
        Self::new(Some(TimePoint(start)), Some(TimePoint(end)))
    }

    pub fn point(t: i64) -> Self {
        Interval {
            start: Some(TimePoint(t)),
            end: Some(TimePoint(t)),
        }
    }

    pub fn unknown() -> Self {
        Interval {
            start: None,
            end: None,
        }
    }

    pub fn is_fully_known(&self) -> bool {
        self.start.is_some() && self.end.is_some()
    }

    /// Both endpoints, or `UnknownEndpoint`.
    pub fn bounds(&self) -> Result<(TimePoint, TimePoint)> {
        match (self.start, self.end) {
            (Some(s), Some(e)) => Ok((s, e)),
            _ => Err(Error::UnknownEndpoint),
        }
    }

    pub fn endpoint(&self, which: Endpoint) -> Option<TimePoint> {
        match which {
            Endpoint::Start => self.start,
            Endpoint::End => self.end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Start,
    End,
}

/// Qualitative relation between two intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemporalRelation {
    Before,
    Overlap,
    After,
    Any,
}

impl TemporalRelation {
    pub const ALL: [TemporalRelation; 4] = [
        TemporalRelation::Before,
        TemporalRelation::Overlap,
        TemporalRelation::After,
        TemporalRelation::Any,
    ];

    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TemporalRelation::Before => "Before",
            TemporalRelation::Overlap => "Overlap",
            TemporalRelation::After => "After",
            TemporalRelation::Any => "Any",
        }
    }

    /// Whether `self` holds between `a` and `b`. `Any` holds for every pair;
    /// the others need fully known intervals.
    pub fn holds(self, a: &Interval, b: &Interval) -> bool {
        match self {
            TemporalRelation::Any => true,
            tr => temporal_relation(a, b).map(|r| r == tr).unwrap_or(false),
        }
    }
}

impl fmt::Display for TemporalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemporalRelation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Before" => Ok(TemporalRelation::Before),
            "Overlap" => Ok(TemporalRelation::Overlap),
            "After" => Ok(TemporalRelation::After),
            "Any" => Ok(TemporalRelation::Any),
            other => Err(Error::format(
                "temporal relation",
                format!("unknown relation `{other}`"),
            )),
        }
    }
}

/// Classifies two fully known intervals. Touching endpoints count as
/// `Overlap`.
pub fn temporal_relation(a: &Interval, b: &Interval) -> Result<TemporalRelation> {
    let (a_start, a_end) = a.bounds()?;
    let (b_start, b_end) = b.bounds()?;
    Ok(if a_end < b_start {
        TemporalRelation::Before
    } else if a_start > b_end {
        TemporalRelation::After
    } else {
        TemporalRelation::Overlap
    })
}

/// Uniformly spaced candidate timestamps `start, start + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: i64,
    step: i64,
    len: usize,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn first(&self) -> TimePoint {
        TimePoint(self.start)
    }

    pub fn last(&self) -> TimePoint {
        self.point(self.len - 1)
    }

    pub fn point(&self, r: usize) -> TimePoint {
        TimePoint(self.start + self.step * r as i64)
    }

    pub fn points(&self) -> impl Iterator<Item = TimePoint> + '_ {
        (0..self.len).map(|r| self.point(r))
    }

    /// Index of the grid point nearest to `t`; ties go to the earlier point
    /// and values outside the grid clamp to its ends.
    pub fn snap(&self, t: TimePoint) -> usize {
        let offset = t.0 - self.start;
        if offset <= 0 {
            return 0;
        }
        let below = offset.div_euclid(self.step);
        let rem = offset.rem_euclid(self.step);
        let idx = if 2 * rem > self.step { below + 1 } else { below };
        (idx as usize).min(self.len - 1)
    }
}

/// Uniform discretization of `[t_min, t_max]`.
pub fn quantize(t_min: TimePoint, t_max: TimePoint, step: i64) -> Result<TimeGrid> {
    if step <= 0 {
        return Err(Error::InvalidStep(step));
    }
    if t_min > t_max {
        return Err(Error::InvalidRange {
            min: t_min.0,
            max: t_max.0,
        });
    }
    let len = ((t_max.0 - t_min.0) / step) as usize + 1;
    Ok(TimeGrid {
        start: t_min.0,
        step,
        len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_examples() {
        let r = |a: (i64, i64), b: (i64, i64)| {
            temporal_relation(
                &Interval::known(a.0, a.1).unwrap(),
                &Interval::known(b.0, b.1).unwrap(),
            )
            .unwrap()
        };
        assert_eq!(r((2018, 2021), (2020, 2023)), TemporalRelation::Overlap);
        assert_eq!(r((2018, 2019), (2020, 2023)), TemporalRelation::Before);
        assert_eq!(r((1875, 1877), (1872, 1886)), TemporalRelation::Overlap);
        assert_eq!(r((2020, 2023), (2018, 2019)), TemporalRelation::After);
        // boundary touch
        assert_eq!(r((2018, 2021), (2021, 2023)), TemporalRelation::Overlap);
    }

    #[test]
    fn relation_needs_known_endpoints() {
        let a = Interval::new(None, Some(TimePoint(2005))).unwrap();
        let b = Interval::point(2000);
        assert!(matches!(
            temporal_relation(&a, &b),
            Err(Error::UnknownEndpoint)
        ));
        assert!(TemporalRelation::Any.holds(&a, &b));
        assert!(!TemporalRelation::Before.holds(&a, &b));
    }

    #[test]
    fn quantize_examples() {
        let g = quantize(TimePoint(1800), TimePoint(2000), 10).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g.point(1), TimePoint(1810));
        assert_eq!(g.last(), TimePoint(2000));

        let d0 = chrono::NaiveDate::from_ymd_opt(2014, 1, 1).unwrap();
        let d1 = chrono::NaiveDate::from_ymd_opt(2014, 12, 31).unwrap();
        let epoch = chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        let g = quantize(
            TimePoint((d0 - epoch).num_days()),
            TimePoint((d1 - epoch).num_days()),
            1,
        )
        .unwrap();
        assert_eq!(g.len(), 365);

        let g = quantize(TimePoint(5), TimePoint(5), 1).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![TimePoint(5)]);

        assert!(matches!(
            quantize(TimePoint(0), TimePoint(5), 0),
            Err(Error::InvalidStep(0))
        ));
    }

    #[test]
    fn grid_last_point_respects_max() {
        let g = quantize(TimePoint(0), TimePoint(7), 3).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.last(), TimePoint(6));
        assert!(g.last().0 + g.step() > 7);
    }

    #[test]
    fn snap_ties_go_earlier() {
        let g = quantize(TimePoint(0), TimePoint(10), 2).unwrap();
        assert_eq!(g.snap(TimePoint(3)), 1);
        assert_eq!(g.snap(TimePoint(4)), 2);
        assert_eq!(g.snap(TimePoint(-5)), 0);
        assert_eq!(g.snap(TimePoint(99)), 5);
    }

    proptest::proptest! {
        #[test]
        fn exactly_one_relation(a0 in -50i64..50, la in 0i64..20, b0 in -50i64..50, lb in 0i64..20) {
            let a = Interval::known(a0, a0 + la).unwrap();
            let b = Interval::known(b0, b0 + lb).unwrap();
            let held: Vec<_> = [TemporalRelation::Before, TemporalRelation::Overlap, TemporalRelation::After]
                .into_iter()
                .filter(|tr| tr.holds(&a, &b))
                .collect();
            proptest::prop_assert_eq!(held.len(), 1);
            let ab = temporal_relation(&a, &b).unwrap();
            let ba = temporal_relation(&b, &a).unwrap();
            proptest::prop_assert_eq!(ab == TemporalRelation::Before, ba == TemporalRelation::After);
        }

        #[test]
        fn grid_is_uniform(min in -1000i64..1000, span in 0i64..500, step in 1i64..17) {
            let g = quantize(TimePoint(min), TimePoint(min + span), step).unwrap();
            proptest::prop_assert_eq!(g.len() as i64, span / step + 1);
            proptest::prop_assert_eq!(g.first(), TimePoint(min));
            proptest::prop_assert!(g.last().0 <= min + span);
            proptest::prop_assert!(g.last().0 + step > min + span);
            let pts: Vec<_> = g.points().collect();
            for w in pts.windows(2) {
                proptest::prop_assert_eq!(w[1].0 - w[0].0, step);
            }
        }
    }
}
