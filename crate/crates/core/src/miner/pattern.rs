use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::TekgGraph;
use crate::time::{Interval, TemporalRelation};
use crate::tkg::{PredicateId, Vocabulary};

/// Signature of a cyclic rule: head predicate, body predicates `P_1..P_l`
/// and the relations `TR_1..TR_{l-1}` between consecutive body intervals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RulePattern {
    pub head: PredicateId,
    pub body: Vec<PredicateId>,
    pub relations: Vec<TemporalRelation>,
}

impl RulePattern {
    pub fn new(
        head: PredicateId,
        body: Vec<PredicateId>,
        relations: Vec<TemporalRelation>,
    ) -> Result<Self> {
        if body.is_empty() || relations.len() + 1 != body.len() {
            return Err(Error::format(
                "rule pattern",
                format!(
                    "{} body predicates need {} relations, got {}",
                    body.len(),
                    body.len().saturating_sub(1),
                    relations.len()
                ),
            ));
        }
        Ok(RulePattern {
            head,
            body,
            relations,
        })
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    /// Canonical id tuple, e.g. `3;4,1;0` for head 3, body (4, 1) and
    /// relation `Before`.
    pub fn key(&self) -> String {
        let mut s = format!("{};", self.head.0);
        for (i, p) in self.body.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", p.0);
        }
        s.push(';');
        for (i, tr) in self.relations.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", tr.index());
        }
        s
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let bad = || Error::format("pattern key", key.to_owned());
        let mut parts = key.split(';');
        let (Some(head), Some(body), Some(rels), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let head = PredicateId(head.parse().map_err(|_| bad())?);
        let body = body
            .split(',')
            .map(|s| s.parse().map(PredicateId).map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let relations = if rels.is_empty() {
            Vec::new()
        } else {
            rels.split(',')
                .map(|s| {
                    s.parse::<usize>()
                        .ok()
                        .and_then(TemporalRelation::from_index)
                        .ok_or_else(bad)
                })
                .collect::<Result<Vec<_>>>()?
        };
        RulePattern::new(head, body, relations)
    }

    /// Short stable identifier: the first 16 hex digits of the SHA-256 of
    /// [`RulePattern::key`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.key().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn display(&self, vocab: &Vocabulary) -> String {
        let body: Vec<String> = self.body.iter().map(|&p| vocab.predicate_name(p)).collect();
        let rels: Vec<&str> = self.relations.iter().map(|r| r.name()).collect();
        format!(
            "[{}; {}; {}]",
            vocab.predicate_name(self.head),
            body.join(", "),
            rels.join(", ")
        )
    }
}

/// One grounding of a pattern: the anchor event followed by body events
/// `F_1..F_l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundedPath {
    pub query: usize,
    pub events: Vec<usize>,
    pub intervals: Vec<Interval>,
    pub pattern: RulePattern,
}

/// Pattern a body path instantiates for a given head. Relations between
/// intervals that are not fully known are recorded as `Any`.
pub fn pattern_of(g: &TekgGraph, head: PredicateId, events: &[usize]) -> Result<RulePattern> {
    let body = events.iter().map(|&m| g.fact(m).predicate).collect();
    let relations = events
        .windows(2)
        .map(|w| {
            crate::time::temporal_relation(&g.fact(w[0]).time, &g.fact(w[1]).time)
                .unwrap_or(TemporalRelation::Any)
        })
        .collect();
    RulePattern::new(head, body, relations)
}

/// Checks a path against the rule semantics directly: connectivity around
/// the cycle, positional predicates and the temporal relations.
pub fn validate_path(g: &TekgGraph, path: &GroundedPath) -> bool {
    let p = &path.pattern;
    if path.events.len() != p.len() || path.intervals.len() != p.len() {
        return false;
    }
    let q = g.fact(path.query);
    let first = path.events[0];
    let last = path.events[p.len() - 1];
    if q.predicate != p.head || g.fact(first).subject != q.object || g.fact(last).object != q.subject
    {
        return false;
    }
    for (k, &m) in path.events.iter().enumerate() {
        if g.fact(m).predicate != p.body[k] || g.fact(m).time != path.intervals[k] {
            return false;
        }
    }
    path.events.windows(2).zip(&p.relations).all(|(w, tr)| {
        g.has_entity_edge(w[0], w[1]) && tr.holds(&g.fact(w[0]).time, &g.fact(w[1]).time)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSupport {
    pub pattern: RulePattern,
    pub support: usize,
}

/// Deduplicates paths, counts distinct groundings per pattern, drops
/// patterns below `min_support` and sorts by support (descending) then key.
pub fn extract_rule_patterns(paths: &[GroundedPath], min_support: usize) -> Vec<PatternSupport> {
    let mut seen = HashSet::new();
    let mut counts: BTreeMap<&RulePattern, usize> = BTreeMap::new();
    for p in paths {
        if seen.insert((&p.pattern, p.query, &p.events)) {
            *counts.entry(&p.pattern).or_default() += 1;
        }
    }
    let mut out: Vec<PatternSupport> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_support)
        .map(|(p, c)| PatternSupport {
            pattern: p.clone(),
            support: c,
        })
        .collect();
    out.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| a.pattern.key().cmp(&b.pattern.key()))
    });
    out
}

/// Writes one pattern per line: head, body predicates, relations, support.
pub fn write_rules(mut out: impl Write, rules: &[PatternSupport], vocab: &Vocabulary) -> Result<()> {
    for r in rules {
        let mut cols = vec![vocab.predicate_name(r.pattern.head)];
        cols.extend(r.pattern.body.iter().map(|&p| vocab.predicate_name(p)));
        cols.extend(r.pattern.relations.iter().map(|t| t.name().to_owned()));
        cols.push(r.support.to_string());
        writeln!(out, "{}", cols.join("\t"))?;
    }
    Ok(())
}

pub fn read_rules(text: &str, vocab: &Vocabulary) -> Result<Vec<PatternSupport>> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse { line: i + 1, message: m };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() % 2 == 0 {
            return Err(perr(format!("expected an odd column count >= 3, got {}", cols.len())));
        }
        let l = (cols.len() - 1) / 2;
        let pred = |s: &str| vocab.predicate_id(s).map_err(|e| perr(e.to_string()));
        let head = pred(cols[0])?;
        let body = cols[1..=l].iter().map(|s| pred(s)).collect::<Result<Vec<_>>>()?;
        let relations = cols[l + 1..2 * l]
            .iter()
            .map(|s| s.parse().map_err(|e: Error| perr(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let support = cols[2 * l]
            .parse()
            .map_err(|_| perr(format!("bad support `{}`", cols[2 * l])))?;
        rules.push(PatternSupport {
            pattern: RulePattern::new(head, body, relations).map_err(|e| perr(e.to_string()))?,
            support,
        });
    }
    Ok(rules)
}

/// Writes mined groundings: pattern hash, anchor event, body events.
pub fn write_paths(mut out: impl Write, paths: &[GroundedPath]) -> Result<()> {
    for p in paths {
        let events: Vec<String> = p.events.iter().map(usize::to_string).collect();
        writeln!(out, "{}\t{}\t{}", p.pattern.hash(), p.query, events.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::student_graph;
    use TemporalRelation::*;

    fn pat(head: u32, body: &[u32], rels: &[TemporalRelation]) -> RulePattern {
        RulePattern::new(
            PredicateId(head),
            body.iter().copied().map(PredicateId).collect(),
            rels.to_vec(),
        )
        .unwrap()
    }

    fn path(p: &RulePattern, query: usize, events: &[usize]) -> GroundedPath {
        GroundedPath {
            query,
            events: events.to_vec(),
            intervals: vec![Interval::unknown(); events.len()],
            pattern: p.clone(),
        }
    }

    #[test]
    fn relation_count_must_match() {
        assert!(RulePattern::new(PredicateId(0), vec![], vec![]).is_err());
        assert!(RulePattern::new(PredicateId(0), vec![PredicateId(1)], vec![Any]).is_err());
    }

    #[test]
    fn key_round_trip() {
        let p = pat(0, &[2, 0, 2], &[Before, Overlap]);
        assert_eq!(p.key(), "0;2,0,2;0,1");
        assert_eq!(RulePattern::from_key(&p.key()).unwrap(), p);
        let single = pat(1, &[3], &[]);
        assert_eq!(RulePattern::from_key(&single.key()).unwrap(), single);
        assert_eq!(p.hash().len(), 16);
        assert_ne!(p.hash(), single.hash());
        assert!(RulePattern::from_key("0;1").is_err());
    }

    #[test]
    fn yago_style_pattern_round_trips() {
        let mut vocab = Vocabulary::default();
        let aff = PredicateId(vocab.predicates.intern("isAffiliatedTo"));
        let inv = PredicateId(aff.0 + 1);
        let p = RulePattern::new(aff, vec![inv, aff, inv], vec![Before, Overlap]).unwrap();
        assert_eq!(RulePattern::from_key(&p.key()).unwrap(), p);
        assert_eq!(
            p.display(&vocab),
            "[isAffiliatedTo; isAffiliatedTo^-1, isAffiliatedTo, isAffiliatedTo^-1; Before, Overlap]"
        );
        let mut buf = Vec::new();
        let rules = vec![PatternSupport { pattern: p, support: 4 }];
        write_rules(&mut buf, &rules, &vocab).unwrap();
        assert_eq!(read_rules(std::str::from_utf8(&buf).unwrap(), &vocab).unwrap(), rules);
    }

    #[test]
    fn support_counts_distinct_paths() {
        let p = pat(0, &[1], &[]);
        let paths = vec![path(&p, 0, &[1]), path(&p, 0, &[2]), path(&p, 0, &[1])];
        let out = extract_rule_patterns(&paths, 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].support, 2);
        assert!(extract_rule_patterns(&paths, 3).is_empty());
    }

    #[test]
    fn sorted_by_support_then_key() {
        let a = pat(0, &[1], &[]);
        let b = pat(0, &[2], &[]);
        let c = pat(0, &[3], &[]);
        let paths = vec![
            path(&c, 0, &[1]),
            path(&b, 0, &[1]),
            path(&b, 1, &[1]),
            path(&a, 0, &[1]),
        ];
        let out = extract_rule_patterns(&paths, 1);
        let keys: Vec<_> = out.iter().map(|r| r.pattern.key()).collect();
        assert_eq!(keys, ["0;2;", "0;1;", "0;3;"]);
    }

    #[test]
    fn student_graph_path_validates() {
        let g = student_graph();
        let study = g.vocab().predicate_id("StudyIn").unwrap();
        let inv = g.inverse(study);
        let events = vec![4, 1, 3];
        let pattern = pattern_of(&g, study, &events).unwrap();
        assert_eq!(pattern, RulePattern::new(study, vec![inv, study, inv], vec![Overlap, Overlap]).unwrap());
        let intervals = events.iter().map(|&m| g.fact(m).time).collect();
        let gp = GroundedPath {
            query: 0,
            events,
            intervals,
            pattern,
        };
        assert!(validate_path(&g, &gp));
        let mut broken = gp.clone();
        broken.pattern.relations[0] = Before;
        assert!(!validate_path(&g, &broken));
    }

    #[test]
    fn malformed_rule_lines_report_line() {
        let mut vocab = Vocabulary::default();
        vocab.predicates.intern("A");
        assert!(matches!(read_rules("A\tA\t3\n", &vocab), Ok(ref r) if r.len() == 1));
        assert!(matches!(read_rules("\nA\tA\n", &vocab), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_rules("A\tZ\t1\n", &vocab), Err(Error::Parse { line: 1, .. })));
    }
}
