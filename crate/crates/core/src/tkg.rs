//! Temporal knowledge graph data model.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{Granularity, Interval, TimePoint};

/// Suffix marking inverse predicates in names and files.
pub const INVERSE_SUFFIX: &str = "^-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredicateId(pub u32);

impl PredicateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PredicateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a dataset carries intervals or single timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Interval,
    Timestamp,
}

impl Schema {
    pub fn columns(self) -> usize {
        match self {
            Schema::Interval => 5,
            Schema::Timestamp => 4,
        }
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interval" => Ok(Schema::Interval),
            "timestamp" => Ok(Schema::Timestamp),
            other => Err(Error::Config(format!("unknown schema `{other}`"))),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schema::Interval => f.write_str("interval"),
            Schema::Timestamp => f.write_str("timestamp"),
        }
    }
}

/// Insertion-ordered name table with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32, n.as_str()))
    }

    /// Two-column `id<TAB>name` export.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for (id, name) in self.iter() {
            writeln!(out, "{id}\t{name}")?;
        }
        Ok(())
    }

    pub fn read_tsv(text: &str) -> Result<Self> {
        let mut table = SymbolTable::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected `id<TAB>name`".into(),
            })?;
            let id: u32 = id.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad id `{id}`"),
            })?;
            if id as usize != table.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("ids must be dense, expected {}", table.len()),
                });
            }
            table.intern(name);
        }
        Ok(table)
    }
}

/// Entity and base-predicate tables shared by every split of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: SymbolTable,
    pub predicates: SymbolTable,
}

impl Vocabulary {
    pub fn num_base_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Name of a possibly inverse predicate id.
    pub fn predicate_name(&self, p: PredicateId) -> String {
        let n = self.predicates.len() as u32;
        if p.0 < n {
            self.predicates.name(p.0).unwrap_or("?").to_owned()
        } else {
            format!(
                "{}{INVERSE_SUFFIX}",
                self.predicates.name(p.0 - n).unwrap_or("?")
            )
        }
    }

    pub fn predicate_id(&self, name: &str) -> Result<PredicateId> {
        if let Some(id) = self.predicates.get(name) {
            return Ok(PredicateId(id));
        }
        if let Some(base) = name.strip_suffix(INVERSE_SUFFIX) {
            if let Some(id) = self.predicates.get(base) {
                return Ok(PredicateId(id + self.predicates.len() as u32));
            }
        }
        Err(Error::UnknownPredicateName(name.to_owned()))
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).unwrap_or("?")
    }
}

/// A parsed quadruple before it is placed in a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quad {
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: EntityId,
    pub time: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fact {
    pub id: usize,
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: EntityId,
    pub time: Interval,
}

impl Fact {
    pub fn quad(&self) -> Quad {
        Quad {
            subject: self.subject,
            predicate: self.predicate,
            object: self.object,
            time: self.time,
        }
    }
}

/// A temporal knowledge graph over a shared vocabulary.
///
/// Base predicates take ids `0..n`; after [`add_inverse_facts`] the inverse
/// of `p` is `p + n` (and vice versa).
#[derive(Debug, Clone)]
pub struct Tkg {
    facts: Vec<Fact>,
    vocab: Vocabulary,
    granularity: Granularity,
    schema: Schema,
    augmented: bool,
    time_min: Option<TimePoint>,
    time_max: Option<TimePoint>,
}

impl Tkg {
    pub fn new(
        vocab: Vocabulary,
        quads: impl IntoIterator<Item = Quad>,
        schema: Schema,
        granularity: Granularity,
    ) -> Result<Self> {
        let n = vocab.predicates.len() as u32;
        let mut facts = Vec::new();
        for q in quads {
            if q.predicate.0 >= n {
                return Err(Error::UnknownPredicate(q.predicate.0));
            }
            if q.subject.0 as usize >= vocab.entities.len()
                || q.object.0 as usize >= vocab.entities.len()
            {
                return Err(Error::format("fact", "entity id outside vocabulary"));
            }
            facts.push(Fact {
                id: facts.len(),
                subject: q.subject,
                predicate: q.predicate,
                object: q.object,
                time: q.time,
            });
        }
        let mut g = Tkg {
            facts,
            vocab,
            granularity,
            schema,
            augmented: false,
            time_min: None,
            time_max: None,
        };
        g.recompute_bounds();
        Ok(g)
    }

    fn recompute_bounds(&mut self) {
        let known = self
            .facts
            .iter()
            .flat_map(|f| [f.time.start, f.time.end])
            .flatten();
        let (mut lo, mut hi) = (None::<TimePoint>, None::<TimePoint>);
        for t in known {
            lo = Some(lo.map_or(t, |l| l.min(t)));
            hi = Some(hi.map_or(t, |h| h.max(t)));
        }
        self.time_min = lo;
        self.time_max = hi;
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact(&self, id: usize) -> &Fact {
        &self.facts[id]
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn num_base_predicates(&self) -> usize {
        self.vocab.predicates.len()
    }

    /// Size of the augmented predicate set `|P|`.
    pub fn num_predicates(&self) -> usize {
        2 * self.num_base_predicates()
    }

    pub fn time_min(&self) -> Option<TimePoint> {
        self.time_min
    }

    pub fn time_max(&self) -> Option<TimePoint> {
        self.time_max
    }

    pub fn inverse(&self, p: PredicateId) -> PredicateId {
        inverse_predicate(p, self.num_base_predicates())
    }

    pub fn is_inverse(&self, p: PredicateId) -> bool {
        p.index() >= self.num_base_predicates()
    }

    /// Id of the mirror fact of `id` in an augmented graph.
    pub fn mirror(&self, id: usize) -> usize {
        let half = self.facts.len() / 2;
        if id < half {
            id + half
        } else {
            id - half
        }
    }
}

pub fn inverse_predicate(p: PredicateId, num_base: usize) -> PredicateId {
    let n = num_base as u32;
    if p.0 < n {
        PredicateId(p.0 + n)
    } else {
        PredicateId(p.0 - n)
    }
}

/// Appends `(o, p^-1, s, I)` for every fact `(s, p, o, I)`. Fact `i` and
/// fact `i + |F|` are mirrors of each other.
pub fn add_inverse_facts(g: Tkg) -> Result<Tkg> {
    if g.augmented {
        return Err(Error::AlreadyAugmented);
    }
    let n = g.num_base_predicates();
    let mut facts = g.facts;
    let base = facts.len();
    for i in 0..base {
        let f = facts[i];
        facts.push(Fact {
            id: base + i,
            subject: f.object,
            predicate: inverse_predicate(f.predicate, n),
            object: f.subject,
            time: f.time,
        });
    }
    Ok(Tkg {
        facts,
        augmented: true,
        ..g
    })
}

impl Tkg {
    /// Writes the (base) facts in dataset format.
    pub fn write_dataset(&self, out: impl Write) -> Result<()> {
        let facts = if self.augmented {
            &self.facts[..self.facts.len() / 2]
        } else {
            &self.facts[..]
        };
        crate::dataset::write_quads(
            out,
            facts.iter().map(Fact::quad),
            &self.vocab,
            self.schema,
            self.granularity,
        )
    }

    pub fn write_symbol_tables(&self, dir: &Path) -> Result<()> {
        let ent = dir.join("entities.tsv");
        let pred = dir.join("predicates.tsv");
        let f = std::fs::File::create(&ent).map_err(|e| Error::file(&ent, e))?;
        self.vocab.entities.write_tsv(std::io::BufWriter::new(f))?;
        let f = std::fs::File::create(&pred).map_err(|e| Error::file(&pred, e))?;
        self.vocab.predicates.write_tsv(std::io::BufWriter::new(f))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn student_graph() -> Tkg {
        let mut vocab = Vocabulary::default();
        let mut q = |s: &str, p: &str, o: &str, a: i64, b: i64| Quad {
            subject: EntityId(vocab.entities.intern(s)),
            predicate: PredicateId(vocab.predicates.intern(p)),
            object: EntityId(vocab.entities.intern(o)),
            time: Interval::known(a, b).unwrap(),
        };
        let quads = vec![
            q("Jackson", "StudyIn", "Harvard", 2018, 2021),
            q("Nancy", "StudyIn", "Harvard", 2020, 2023),
            q("Jackson", "WorkIn", "New York", 2021, 2023),
        ];
        Tkg::new(vocab, quads, Schema::Interval, Granularity::Year).unwrap()
    }

    #[test]
    fn inverse_doubles_and_swaps() {
        let g = student_graph();
        assert_eq!(g.len(), 3);
        let g = add_inverse_facts(g).unwrap();
        assert_eq!(g.len(), 6);
        let f1 = g.fact(0);
        let f1_inv = g.fact(3);
        assert_eq!(f1_inv.subject, f1.object);
        assert_eq!(f1_inv.object, f1.subject);
        assert_eq!(f1_inv.time, f1.time);
        assert_eq!(g.vocab().predicate_name(f1_inv.predicate), "StudyIn^-1");
        assert_eq!(g.vocab().entity_name(f1_inv.subject), "Harvard");
        for p in 0..g.num_predicates() as u32 {
            assert_eq!(g.inverse(g.inverse(PredicateId(p))), PredicateId(p));
        }
        for id in 0..g.len() {
            assert_eq!(g.mirror(g.mirror(id)), id);
        }
    }

    #[test]
    fn inverse_twice_is_error() {
        let g = add_inverse_facts(student_graph()).unwrap();
        assert!(matches!(add_inverse_facts(g), Err(Error::AlreadyAugmented)));
    }

    #[test]
    fn bounds_cover_known_endpoints() {
        let g = student_graph();
        assert_eq!(g.time_min(), Some(TimePoint(2018)));
        assert_eq!(g.time_max(), Some(TimePoint(2023)));
    }

    #[test]
    fn predicate_names_resolve() {
        let g = add_inverse_facts(student_graph()).unwrap();
        let v = g.vocab();
        assert_eq!(v.predicate_id("WorkIn^-1").unwrap(), PredicateId(3));
        assert!(v.predicate_id("Nope").is_err());
    }

    #[test]
    fn symbol_table_tsv_round_trip() {
        let g = student_graph();
        let mut buf = Vec::new();
        g.vocab().entities.write_tsv(&mut buf).unwrap();
        let back = SymbolTable::read_tsv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(&back, &g.vocab().entities);
    }
}
