//! Synthetic temporal graphs with planted rules and known gap laws.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_quads, Splits};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::time::{Granularity, Interval, TimePoint};
use crate::tkg::{EntityId, PredicateId, Quad, Schema, Vocabulary};

/// One planted rule: `trigger(x, y)` at `t` implies `consequence(x, y)` at
/// `t + gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    pub trigger: String,
    pub consequence: String,
    pub gap: Density,
    /// Duration law of both facts; point intervals when absent.
    #[serde(default)]
    pub duration: Option<Density>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub plants: Vec<Plant>,
    /// Entity pairs per plant.
    pub pairs: usize,
    /// Noise facts per planted fact, over fresh predicates.
    #[serde(default)]
    pub noise_rate: f64,
    /// Share of pairs that also get a random-time two-hop detour.
    #[serde(default)]
    pub decoy_rate: f64,
    #[serde(default)]
    pub seed: u64,
    pub schema: Schema,
    pub t_min: i64,
    pub t_max: i64,
    pub holdout_fraction: f64,
}

const NOISE_PREDICATES: usize = 4;

impl PlantSpec {
    /// Single plant `A → B` over years 1900..=2000.
    pub fn planted(gap: Density, pairs: usize, noise_rate: f64, seed: u64) -> Self {
        PlantSpec {
            plants: vec![Plant {
                trigger: "A".into(),
                consequence: "B".into(),
                gap,
                duration: None,
            }],
            pairs,
            noise_rate,
            decoy_rate: 0.0,
            seed,
            schema: Schema::Timestamp,
            t_min: 1900,
            t_max: 2000,
            holdout_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.plants.is_empty() || self.pairs == 0 {
            return bad("synthetic spec needs at least one plant and one pair");
        }
        if self.t_min > self.t_max {
            return Err(Error::InvalidRange {
                min: self.t_min,
                max: self.t_max,
            });
        }
        if !(self.noise_rate >= 0.0 && self.decoy_rate >= 0.0 && self.decoy_rate <= 1.0) {
            return bad("noise_rate must be nonnegative and decoy_rate within [0, 1]");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        for p in &self.plants {
            for d in std::iter::once(&p.gap).chain(&p.duration) {
                let (a, b) = d.params();
                Density::from_params(d.class(), a, b)?;
            }
        }
        Ok(())
    }
}

pub fn sample(d: &Density, rng: &mut impl Rng) -> f64 {
    match *d {
        Density::Gaussian { mu, sigma } => Normal::new(mu, sigma).expect("validated").sample(rng),
        Density::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
        Density::ReflectedExponential { rate } => -Exp::new(rate).expect("validated").sample(rng),
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub splits: Splits,
}

impl SynthData {
    /// Held-out consequence facts with their true intervals.
    pub fn truth(&self) -> &[Quad] {
        &self.splits.test
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let s = &self.splits;
        for (name, quads) in [("train.txt", &s.train), ("valid.txt", &s.valid), ("test.txt", &s.test)] {
            let path = dir.join(name);
            let mut buf = Vec::new();
            write_quads(&mut buf, quads.iter().copied(), &s.vocab, s.schema, s.granularity)?;
            std::fs::write(&path, buf).map_err(|e| Error::file(&path, e))?;
        }
        let path = dir.join("truth.tsv");
        let mut buf = Vec::new();
        write_truth(&mut buf, self)?;
        std::fs::write(&path, buf).map_err(|e| Error::file(&path, e))
    }
}

/// Truth table: the test queries with their hidden intervals.
pub fn write_truth(mut out: impl Write, data: &SynthData) -> Result<()> {
    let s = &data.splits;
    writeln!(out, "#subject\tpredicate\tobject\tstart\tend")?;
    let mut buf = Vec::new();
    write_quads(&mut buf, s.test.iter().copied(), &s.vocab, Schema::Interval, s.granularity)?;
    out.write_all(&buf)?;
    Ok(())
}

pub fn generate_planted_tkg(spec: &PlantSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabulary::default();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut entities = Vec::new();
    let time = |rng: &mut ChaCha8Rng, start: i64, law: Option<&Density>| {
        let d = law.map_or(0, |d| sample(d, rng).abs().round() as i64);
        match spec.schema {
            Schema::Timestamp => Interval::point(start),
            Schema::Interval => Interval {
                start: Some(TimePoint(start)),
                end: Some(TimePoint(start + d)),
            },
        }
    };
    let mut decoy = None;
    for (k, plant) in spec.plants.iter().enumerate() {
        let a = PredicateId(vocab.predicates.intern(&plant.trigger));
        let b = PredicateId(vocab.predicates.intern(&plant.consequence));
        let mut held: Vec<usize> = (0..spec.pairs).collect();
        held.shuffle(&mut rng);
        let cut = (spec.holdout_fraction * spec.pairs as f64).round() as usize;
        let mut is_held = vec![false; spec.pairs];
        for &i in &held[..cut] {
            is_held[i] = true;
        }
        for (i, &hidden) in is_held.iter().enumerate() {
            let x = EntityId(vocab.entities.intern(&format!("p{k}_s{i}")));
            let y = EntityId(vocab.entities.intern(&format!("p{k}_o{i}")));
            entities.extend([x, y]);
            let ta = rng.random_range(spec.t_min..=spec.t_max);
            let tb = ta + sample(&plant.gap, &mut rng).round() as i64;
            let fa = time(&mut rng, ta, plant.duration.as_ref());
            let fb = time(&mut rng, tb, plant.duration.as_ref());
            train.push(Quad {
                subject: x,
                predicate: a,
                object: y,
                time: fa,
            });
            let q = Quad {
                subject: x,
                predicate: b,
                object: y,
                time: fb,
            };
            if hidden {
                test.push(q);
            } else {
                train.push(q);
            }
            if spec.decoy_rate > 0.0 && rng.random_bool(spec.decoy_rate) {
                let (d1, d2) = *decoy.get_or_insert_with(|| {
                    (
                        PredicateId(vocab.predicates.intern("decoy_out")),
                        PredicateId(vocab.predicates.intern("decoy_back")),
                    )
                });
                let z = EntityId(vocab.entities.intern(&format!("p{k}_z{i}")));
                entities.push(z);
                for (s, p, o) in [(y, d1, z), (z, d2, x)] {
                    let t = rng.random_range(spec.t_min..=spec.t_max);
                    train.push(Quad {
                        subject: s,
                        predicate: p,
                        object: o,
                        time: time(&mut rng, t, plant.duration.as_ref()),
                    });
                }
            }
        }
    }
    let planted = spec.plants.len() * spec.pairs * 2;
    let noise = (spec.noise_rate * planted as f64).round() as usize;
    if noise > 0 {
        let preds: Vec<PredicateId> = (0..NOISE_PREDICATES)
            .map(|j| PredicateId(vocab.predicates.intern(&format!("noise{j}"))))
            .collect();
        let law = spec.plants[0].duration;
        for _ in 0..noise {
            let s = entities[rng.random_range(0..entities.len())];
            let o = entities[rng.random_range(0..entities.len())];
            let p = preds[rng.random_range(0..preds.len())];
            let t = rng.random_range(spec.t_min..=spec.t_max);
            train.push(Quad {
                subject: s,
                predicate: p,
                object: o,
                time: time(&mut rng, t, law.as_ref()),
            });
        }
    }
    Ok(SynthData {
        splits: Splits {
            vocab,
            train,
            valid: Vec::new(),
            test,
            schema: spec.schema,
            granularity: Granularity::Year,
        },
    })
}

/// Several plants with different gap classes over 1800..=2000 intervals,
/// plus noise and decoys.
pub fn heterogeneous_spec(pairs: usize, seed: u64) -> PlantSpec {
    let plant = |a: &str, b: &str, gap, dur| Plant {
        trigger: a.into(),
        consequence: b.into(),
        gap,
        duration: Some(dur),
    };
    PlantSpec {
        plants: vec![
            plant("born_in", "educated_at", Density::Gaussian { mu: 18.0, sigma: 2.0 }, Density::Gaussian { mu: 4.0, sigma: 1.0 }),
            plant("signed_with", "plays_for", Density::Exponential { rate: 0.5 }, Density::Gaussian { mu: 6.0, sigma: 2.0 }),
            plant("awarded", "nominated", Density::ReflectedExponential { rate: 0.4 }, Density::Gaussian { mu: 1.0, sigma: 0.5 }),
            plant("married", "divorced", Density::Gaussian { mu: 12.0, sigma: 3.0 }, Density::Gaussian { mu: 2.0, sigma: 1.0 }),
        ],
        pairs,
        noise_rate: 0.3,
        decoy_rate: 0.3,
        seed,
        schema: Schema::Interval,
        t_min: 1800,
        t_max: 2000,
        holdout_fraction: 0.2,
    }
}

/// `σ√(2/π)`: the MAE of predicting the mean of a gaussian gap.
pub fn oracle_bayes_mae(spec: &PlantSpec) -> Result<f64> {
    match spec.plants.as_slice() {
        [Plant {
            gap: Density::Gaussian { sigma, .. },
            ..
        }] => Ok(sigma.max(0.0) * (2.0 / std::f64::consts::PI).sqrt()),
        _ => Err(Error::NonGaussianLaw),
    }
}
