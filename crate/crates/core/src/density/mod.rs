//! Time-gap densities: the three parametric classes, maximum-likelihood
//! fitting with class selection, and their mixtures.

mod table;

pub use table::{DensityTable, EraPolicy, FitLevel, GapSample, TableRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::time::{Endpoint, Interval};

/// Smallest gaussian spread (and exponential mean), in granularity units.
pub const SIGMA_MIN: f64 = 0.5;

/// Minimum sample count for a fit at one conditioning level.
pub const N_MIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityClass {
    Gaussian,
    Exponential,
    ReflectedExponential,
}

impl DensityClass {
    pub fn name(self) -> &'static str {
        match self {
            DensityClass::Gaussian => "gaussian",
            DensityClass::Exponential => "exponential",
            DensityClass::ReflectedExponential => "reflected_exponential",
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(DensityClass::Gaussian),
            "exponential" => Ok(DensityClass::Exponential),
            "reflected_exponential" => Ok(DensityClass::ReflectedExponential),
            other => Err(Error::format("density class", other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Density {
    Gaussian { mu: f64, sigma: f64 },
    /// `λe^{-λx}` on `x ≥ 0`.
    Exponential { rate: f64 },
    /// `λe^{λx}` on `x ≤ 0`.
    ReflectedExponential { rate: f64 },
}

impl Density {
    pub fn class(&self) -> DensityClass {
        match self {
            Density::Gaussian { .. } => DensityClass::Gaussian,
            Density::Exponential { .. } => DensityClass::Exponential,
            Density::ReflectedExponential { .. } => DensityClass::ReflectedExponential,
        }
    }

    /// `(p1, p2)`: `(μ, σ)` or `(λ, 0)`.
    pub fn params(&self) -> (f64, f64) {
        match *self {
            Density::Gaussian { mu, sigma } => (mu, sigma),
            Density::Exponential { rate } | Density::ReflectedExponential { rate } => (rate, 0.0),
        }
    }

    pub fn from_params(class: DensityClass, p1: f64, p2: f64) -> Result<Self> {
        let d = match class {
            DensityClass::Gaussian => Density::Gaussian { mu: p1, sigma: p2 },
            DensityClass::Exponential => Density::Exponential { rate: p1 },
            DensityClass::ReflectedExponential => Density::ReflectedExponential { rate: p1 },
        };
        let ok = match d {
            Density::Gaussian { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            Density::Exponential { rate } | Density::ReflectedExponential { rate } => {
                rate.is_finite() && rate > 0.0
            }
        };
        if ok {
            Ok(d)
        } else {
            Err(Error::format("density parameters", format!("{class} {p1} {p2}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian { mu, sigma } => normal(mu, sigma).pdf(x),
            Density::Exponential { rate } if x >= 0.0 => rate * (-rate * x).exp(),
            Density::ReflectedExponential { rate } if x <= 0.0 => rate * (rate * x).exp(),
            _ => 0.0,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian { mu, sigma } => normal(mu, sigma).ln_pdf(x),
            Density::Exponential { rate } if x >= 0.0 => rate.ln() - rate * x,
            Density::ReflectedExponential { rate } if x <= 0.0 => rate.ln() + rate * x,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian { mu, sigma } => normal(mu, sigma).cdf(x),
            Density::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Density::ReflectedExponential { rate } => {
                if x >= 0.0 {
                    1.0
                } else {
                    (rate * x).exp()
                }
            }
        }
    }

    /// Mean density over the cell `[x - width/2, x + width/2]`. Summing
    /// `width * cell` over a grid never exceeds 1.
    pub fn cell(&self, x: f64, width: f64) -> f64 {
        let h = width / 2.0;
        ((self.cdf(x + h) - self.cdf(x - h)) / width).max(0.0)
    }

    pub fn log_likelihood(&self, samples: &[(f64, f64)]) -> f64 {
        samples.iter().map(|&(x, w)| w * self.ln_pdf(x)).sum()
    }
}

fn normal(mu: f64, sigma: f64) -> Normal {
    Normal::new(mu, sigma).expect("validated gaussian parameters")
}

/// Density value; the support rules are those of [`Density::pdf`].
pub fn eval_component(c: &Density, gap: f64) -> f64 {
    c.pdf(gap)
}

/// Fits all three classes and keeps the one with the highest
/// log-likelihood. Needs at least [`N_MIN`] samples.
pub fn fit_component(samples: &[f64]) -> Result<Density> {
    let weighted: Vec<(f64, f64)> = samples.iter().map(|&x| (x, 1.0)).collect();
    fit_weighted(&weighted, N_MIN as f64)
}

/// [`fit_component`] over `(gap, weight)` pairs; `min_weight` is the
/// minimum total weight.
pub fn fit_weighted(samples: &[(f64, f64)], min_weight: f64) -> Result<Density> {
    let total: f64 = samples.iter().map(|s| s.1).sum();
    if total < min_weight || total <= 0.0 {
        return Err(Error::InsufficientSamples {
            needed: min_weight.ceil() as usize,
            got: total.floor() as usize,
        });
    }
    let mut best = fit_gaussian(samples, total);
    let mut best_ll = best.log_likelihood(samples);
    for cand in [fit_exponential(samples, total, 1.0), fit_exponential(samples, total, -1.0)]
        .into_iter()
        .flatten()
    {
        let ll = cand.log_likelihood(samples);
        if ll > best_ll {
            best = cand;
            best_ll = ll;
        }
    }
    Ok(best)
}

/// Weighted sample mean and MLE spread, spread clamped to [`SIGMA_MIN`].
pub fn fit_gaussian(samples: &[(f64, f64)], total: f64) -> Density {
    let mu = samples.iter().map(|&(x, w)| w * x).sum::<f64>() / total;
    let var = samples.iter().map(|&(x, w)| w * (x - mu).powi(2)).sum::<f64>() / total;
    Density::Gaussian {
        mu,
        sigma: var.sqrt().max(SIGMA_MIN),
    }
}

/// `sign = 1` fits the exponential, `-1` the reflected one. `None` when a
/// sample lies outside the support.
fn fit_exponential(samples: &[(f64, f64)], total: f64, sign: f64) -> Option<Density> {
    if samples.iter().any(|&(x, w)| w > 0.0 && sign * x < 0.0) {
        return None;
    }
    let mean = samples.iter().map(|&(x, w)| w * sign * x).sum::<f64>() / total;
    let rate = 1.0 / mean.max(SIGMA_MIN);
    Some(if sign > 0.0 {
        Density::Exponential { rate }
    } else {
        Density::ReflectedExponential { rate }
    })
}

/// Quantity a density predicts for the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Start,
    End,
    Duration,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Start, Target::End, Target::Duration];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Target::Start => "s",
            Target::End => "e",
            Target::Duration => "d",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(Target::Start),
            "e" => Ok(Target::End),
            "d" => Ok(Target::Duration),
            other => Err(Error::format("target tag", other.to_owned())),
        }
    }

    /// Value of this target for a known interval.
    pub fn value(self, i: &Interval) -> Option<f64> {
        match self {
            Target::Start => i.start.map(|t| t.0 as f64),
            Target::End => i.end.map(|t| t.0 as f64),
            Target::Duration => match (i.start, i.end) {
                (Some(s), Some(e)) => Some((e.0 - s.0) as f64),
                _ => None,
            },
        }
    }
}

pub fn anchor_tag(a: Endpoint) -> &'static str {
    match a {
        Endpoint::Start => "s",
        Endpoint::End => "e",
    }
}

pub fn anchor_from_tag(s: &str) -> Result<Endpoint> {
    match s {
        "s" => Ok(Endpoint::Start),
        "e" => Ok(Endpoint::End),
        other => Err(Error::format("anchor tag", other.to_owned())),
    }
}

/// Reference point subtracted from the target value to form the gap.
/// Start and end targets use the body event's endpoint. For durations the
/// start-anchored component is unanchored (offset 0) and the end-anchored
/// one is relative to the body event's own duration.
pub fn anchor_offset(target: Target, anchor: Endpoint, body: &Interval) -> Option<f64> {
    match (target, anchor) {
        (Target::Duration, Endpoint::Start) => Some(0.0),
        (Target::Duration, Endpoint::End) => Target::Duration.value(body),
        (_, a) => body.endpoint(a).map(|t| t.0 as f64),
    }
}

/// Start- and end-anchored components for one pattern position and target,
/// with the inner weight `w` on the start-anchored one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMixture {
    pub target: Target,
    pub start: Option<Density>,
    pub end: Option<Density>,
    pub w: f64,
}

/// `w·f_s(x − o_s) + (1 − w)·f_e(x − o_e)`. Missing components contribute
/// nothing.
pub fn mixture_g(m: &GapMixture, x: f64, body: &Interval) -> Result<f64> {
    let mut total = 0.0;
    for (weight, comp, anchor) in [
        (m.w, m.start, Endpoint::Start),
        (1.0 - m.w, m.end, Endpoint::End),
    ] {
        if weight == 0.0 {
            continue;
        }
        let Some(c) = comp else { continue };
        let o = anchor_offset(m.target, anchor, body).ok_or(Error::UnknownEndpoint)?;
        total += weight * c.pdf(x - o);
    }
    Ok(total)
}

/// `Σ_i a_i g_i`.
#[allow(non_snake_case)]
pub fn mixture_G(a: &[f64], gs: &[f64]) -> Result<f64> {
    if a.len() != gs.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: gs.len(),
        });
    }
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::WeightSum(sum));
    }
    Ok(a.iter().zip(gs).map(|(a, g)| a * g).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Normal as NormalDist};

    #[test]
    fn recovers_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = NormalDist::new(10.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| d.sample(&mut rng)).collect();
        let Density::Gaussian { mu, sigma } = fit_component(&xs).unwrap() else {
            panic!("wrong class")
        };
        assert!((9.8..=10.2).contains(&mu), "{mu}");
        assert!((1.8..=2.2).contains(&sigma), "{sigma}");
    }

    #[test]
    fn recovers_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Exp::new(0.5).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| d.sample(&mut rng)).collect();
        let Density::Exponential { rate } = fit_component(&xs).unwrap() else {
            panic!("wrong class")
        };
        assert!((0.45..=0.55).contains(&rate), "{rate}");
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(fit_component(&neg).unwrap().class(), DensityClass::ReflectedExponential);
    }

    #[test]
    fn constant_samples_clamp_sigma() {
        let d = fit_component(&[5.0; 20]).unwrap();
        assert_eq!(d, Density::Gaussian { mu: 5.0, sigma: SIGMA_MIN });
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            fit_component(&[1.0; 9]),
            Err(Error::InsufficientSamples { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn component_values() {
        let g = Density::Gaussian { mu: 0.0, sigma: 1.0 };
        assert_abs_diff_eq!(eval_component(&g, 0.0), 0.398_942_280_401_432_7, epsilon = 1e-12);
        assert_eq!(eval_component(&Density::Exponential { rate: 1.0 }, -1.0), 0.0);
        let r = Density::ReflectedExponential { rate: 2.0 };
        assert_abs_diff_eq!(eval_component(&r, -1.0), 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(eval_component(&r, -1.0), 0.27067, epsilon = 1e-5);
        assert_eq!(eval_component(&r, 0.5), 0.0);
    }

    #[test]
    fn components_integrate_to_one() {
        let cases = [
            Density::Gaussian { mu: 3.0, sigma: 0.5 },
            Density::Gaussian { mu: -20.0, sigma: 7.0 },
            Density::Exponential { rate: 0.3 },
            Density::ReflectedExponential { rate: 2.0 },
        ];
        let h = 1e-3;
        for d in cases {
            // midpoint rule on [-200, 200]
            let n = (400.0 / h) as usize;
            let total: f64 = (0..n).map(|k| d.pdf(-200.0 + (k as f64 + 0.5) * h) * h).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn mixture_examples() {
        let g01 = Density::Gaussian { mu: 0.0, sigma: 1.0 };
        let m = GapMixture {
            target: Target::Start,
            start: Some(g01),
            end: Some(g01),
            w: 0.5,
        };
        let v = mixture_g(&m, 3.0, &Interval::point(3)).unwrap();
        assert_abs_diff_eq!(v, 0.398_942, epsilon = 1e-6);
        let only_start = GapMixture {
            w: 1.0,
            end: Some(Density::Exponential { rate: 9.0 }),
            ..m
        };
        let i = Interval::known(1, 4).unwrap();
        assert_eq!(mixture_g(&only_start, 2.5, &i).unwrap(), g01.pdf(1.5));
        let open = Interval::new(Some(crate::time::TimePoint(1)), None).unwrap();
        assert!(matches!(mixture_g(&m, 2.0, &open), Err(Error::UnknownEndpoint)));
        assert!(mixture_g(&only_start, 2.0, &open).is_ok());
    }

    #[test]
    fn outer_mixture() {
        assert_eq!(mixture_G(&[1.0], &[0.7]).unwrap(), 0.7);
        assert_abs_diff_eq!(mixture_G(&[0.5, 0.5], &[0.2, 0.4]).unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(
            mixture_G(&[1.0, 0.0], &[0.2, 5.0]).unwrap(),
            mixture_G(&[1.0], &[0.2]).unwrap()
        );
        assert!(matches!(mixture_G(&[0.5, 0.6], &[1.0, 1.0]), Err(Error::WeightSum(_))));
    }

    #[test]
    fn duration_offsets() {
        let i = Interval::known(2000, 2004).unwrap();
        assert_eq!(anchor_offset(Target::Duration, Endpoint::Start, &i), Some(0.0));
        assert_eq!(anchor_offset(Target::Duration, Endpoint::End, &i), Some(4.0));
        assert_eq!(anchor_offset(Target::End, Endpoint::End, &i), Some(2004.0));
    }

    fn density_strategy() -> impl Strategy<Value = Density> {
        prop_oneof![
            (-50.0..50.0f64, 0.5..20.0f64).prop_map(|(mu, sigma)| Density::Gaussian { mu, sigma }),
            (0.01..2.0f64).prop_map(|rate| Density::Exponential { rate }),
            (0.01..2.0f64).prop_map(|rate| Density::ReflectedExponential { rate }),
        ]
    }

    proptest! {
        #[test]
        fn class_selection_ignores_order(mut xs in prop::collection::vec(-30.0..30.0f64, 10..60), seed in any::<u64>()) {
            let a = fit_component(&xs).unwrap();
            use rand::seq::SliceRandom;
            xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = fit_component(&xs).unwrap();
            prop_assert_eq!(a.class(), b.class());
        }

        #[test]
        fn gridded_mass_at_most_one(d in density_strategy(), offset in -100i64..100, step in 1i64..5) {
            let width = step as f64;
            let mass: f64 = (-400..=400)
                .map(|k| d.cell((k * step - offset) as f64, width) * width)
                .sum();
            prop_assert!(mass <= 1.0 + 1e-2);
            prop_assert!((-400..=400).all(|k| d.cell(k as f64, width) >= 0.0 && d.pdf(k as f64) >= 0.0));
        }
    }
}
