//! Next-POI predictors behind one interface.
//!
//! Every native model returns the argmax and a full predictive distribution;
//! ties in the argmax go to the smallest POI id.

pub mod external;
pub mod markov;
pub mod mmc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PoiId, Visit};
use crate::synthgen::SplitMix64;

pub use external::{serve, ExternalPredictor, ExternalSpec};
pub use markov::MarkovModel;
pub use mmc::MobilityMarkovChain;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_MMC_STATES: usize = 10;
pub const MAX_MARKOV_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Drop the oldest context symbol until a seen context remains, down to
    /// the unigram table.
    #[default]
    Backoff,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    RandomUniform,
    TopFrequency,
    Markov { k: usize },
    Mmc { states: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub alpha: f64,
    pub fallback: Fallback,
}

impl PredictorSpec {
    pub fn new(kind: PredictorKind) -> Self {
        PredictorSpec {
            kind,
            alpha: DEFAULT_ALPHA,
            fallback: Fallback::Backoff,
        }
    }

    pub fn markov(k: usize) -> Self {
        Self::new(PredictorKind::Markov { k })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("smoothing must be >= 0, got {}", self.alpha)));
        }
        match self.kind {
            PredictorKind::Markov { k } if !(1..=MAX_MARKOV_ORDER).contains(&k) => Err(
                Error::invalid(format!("markov order must be in 1..={MAX_MARKOV_ORDER}, got {k}")),
            ),
            PredictorKind::Mmc { states: 0 } => Err(Error::invalid("mmc needs at least one state")),
            _ => Ok(()),
        }
    }

    /// Fresh, untrained model. `seed` only matters for `random_uniform`.
    pub fn build(&self, alphabet_len: usize, seed: u64) -> Result<Box<dyn Predictor>> {
        self.validate()?;
        if alphabet_len == 0 {
            return Err(Error::invalid("empty alphabet"));
        }
        Ok(match self.kind {
            PredictorKind::RandomUniform => Box::new(RandomUniform {
                n: alphabet_len,
                rng: SplitMix64::new(seed),
            }),
            PredictorKind::TopFrequency => Box::new(TopFrequency::new(alphabet_len, self.alpha)),
            PredictorKind::Markov { k } => {
                Box::new(MarkovModel::new(k, alphabet_len, self.alpha, self.fallback))
            }
            PredictorKind::Mmc { states } => Box::new(MobilityMarkovChain::new(
                states,
                alphabet_len,
                self.alpha,
                self.fallback,
            )),
        })
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PredictorKind::RandomUniform => write!(f, "uniform")?,
            PredictorKind::TopFrequency => write!(f, "top")?,
            PredictorKind::Markov { k } => write!(f, "markov:{k}")?,
            PredictorKind::Mmc { states } => write!(f, "mmc:{states}")?,
        }
        if self.alpha != DEFAULT_ALPHA {
            write!(f, ",alpha={}", self.alpha)?;
        }
        if self.fallback != Fallback::Backoff {
            write!(f, ",fallback=uniform")?;
        }
        Ok(())
    }
}

/// `markov:2`, `mmc:10`, `top`, `uniform`, with optional
/// `,alpha=0.5,fallback=uniform|backoff`.
impl FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let head = parts.next().unwrap_or_default();
        let (name, arg) = match head.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (head, None),
        };
        let num = |a: Option<&str>, default: Option<usize>| -> Result<usize> {
            match a {
                Some(a) => a
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad number {a:?} in model {s:?}"))),
                None => default.ok_or_else(|| Error::invalid(format!("model {s:?} needs a parameter"))),
            }
        };
        let kind = match name {
            "uniform" | "random_uniform" => PredictorKind::RandomUniform,
            "top" | "top_frequency" => PredictorKind::TopFrequency,
            "markov" => PredictorKind::Markov { k: num(arg, None)? },
            "mmc" => PredictorKind::Mmc {
                states: num(arg, Some(DEFAULT_MMC_STATES))?,
            },
            _ => return Err(Error::invalid(format!("unknown model {name:?}"))),
        };
        let mut spec = PredictorSpec::new(kind);
        for opt in parts {
            match opt.split_once('=') {
                Some(("alpha", v)) => {
                    spec.alpha = v
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad alpha {v:?}")))?
                }
                Some(("fallback", "uniform")) => spec.fallback = Fallback::Uniform,
                Some(("fallback", "backoff")) => spec.fallback = Fallback::Backoff,
                _ => return Err(Error::invalid(format!("unknown model option {opt:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Probabilities over POI ids `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution(Vec<f64>);

impl PredictiveDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn uniform(n: usize) -> Self {
        PredictiveDistribution(vec![1.0 / n as f64; n])
    }

    /// Checks nonnegativity and normalization to `tol`.
    pub fn new(p: Vec<f64>, tol: f64) -> Result<Self> {
        if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("distribution has negative or non-finite entries"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::invalid(format!("distribution sums to {s}")));
        }
        Ok(PredictiveDistribution(p))
    }

    pub(crate) fn from_raw(p: Vec<f64>) -> Self {
        debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        PredictiveDistribution(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, y: PoiId) -> f64 {
        self.0.get(y as usize).copied().unwrap_or(0.0)
    }

    /// Largest probability, smallest id on ties.
    pub fn argmax(&self) -> PoiId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as PoiId
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub poi: PoiId,
    pub distribution: Option<PredictiveDistribution>,
}

pub trait Predictor: Send {
    /// Discards previous state and trains on independent contiguous segments.
    fn fit(&mut self, segments: &[&[Visit]]) -> Result<()>;

    /// Continues training as if `more` were appended to the last segment.
    fn extend(&mut self, more: &[Visit]) -> Result<()>;

    fn supports_extend(&self) -> bool {
        true
    }

    /// How many trailing context symbols `predict` looks at.
    fn context_window(&self) -> usize;

    fn predict(&mut self, context: &[Visit]) -> Result<Prediction>;
}

pub(crate) fn symbols(v: &[Visit]) -> impl Iterator<Item = PoiId> + '_ {
    v.iter().map(|x| x.poi)
}

/// Additive smoothing over a sparse count row.
pub(crate) fn smoothed(
    counts: impl Iterator<Item = (PoiId, f64)>,
    total: f64,
    n: usize,
    alpha: f64,
) -> PredictiveDistribution {
    let denom = total + alpha * n as f64;
    let mut p = vec![alpha / denom; n];
    for (y, c) in counts {
        p[y as usize] = (c + alpha) / denom;
    }
    PredictiveDistribution::from_raw(p)
}

struct RandomUniform {
    n: usize,
    rng: SplitMix64,
}

impl Predictor for RandomUniform {
    fn fit(&mut self, _: &[&[Visit]]) -> Result<()> {
        Ok(())
    }

    fn extend(&mut self, _: &[Visit]) -> Result<()> {
        Ok(())
    }

    fn context_window(&self) -> usize {
        0
    }

    fn predict(&mut self, _: &[Visit]) -> Result<Prediction> {
        Ok(Prediction {
            poi: self.rng.below(self.n) as PoiId,
            distribution: Some(PredictiveDistribution::uniform(self.n)),
        })
    }
}

struct TopFrequency {
    n: usize,
    alpha: f64,
    counts: Vec<u64>,
    total: u64,
}

impl TopFrequency {
    fn new(n: usize, alpha: f64) -> Self {
        TopFrequency {
            n,
            alpha,
            counts: vec![0; n],
            total: 0,
        }
    }
}

impl Predictor for TopFrequency {
    fn fit(&mut self, segments: &[&[Visit]]) -> Result<()> {
        self.counts = vec![0; self.n];
        self.total = 0;
        for s in segments {
            self.extend(s)?;
        }
        Ok(())
    }

    fn extend(&mut self, more: &[Visit]) -> Result<()> {
        for y in symbols(more) {
            let slot = self
                .counts
                .get_mut(y as usize)
                .ok_or_else(|| Error::invalid(format!("poi {y} outside the alphabet")))?;
            *slot += 1;
            self.total += 1;
        }
        Ok(())
    }

    fn context_window(&self) -> usize {
        0
    }

    fn predict(&mut self, _: &[Visit]) -> Result<Prediction> {
        let dist = if self.total == 0 {
            PredictiveDistribution::uniform(self.n)
        } else {
            smoothed(
                self.counts
                    .iter()
                    .enumerate()
                    .filter(|e| *e.1 > 0)
                    .map(|(y, &c)| (y as PoiId, c as f64)),
                self.total as f64,
                self.n,
                self.alpha,
            )
        };
        let mut best = 0;
        for (y, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = y;
            }
        }
        Ok(Prediction {
            poi: best as PoiId,
            distribution: Some(dist),
        })
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_parsing_round_trips() {
        for s in ["markov:2", "mmc:10", "top", "uniform", "markov:1,alpha=1,fallback=uniform"] {
            let spec: PredictorSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<PredictorSpec>().unwrap(), spec);
        }
        assert_eq!(
            "mmc".parse::<PredictorSpec>().unwrap().kind,
            PredictorKind::Mmc { states: 10 }
        );
        assert!("markov:4".parse::<PredictorSpec>().is_err());
        assert!("markov:1,alpha=-1".parse::<PredictorSpec>().is_err());
        assert!("lstm".parse::<PredictorSpec>().is_err());
    }

    #[test]
    fn uniform_model_is_three_bits_on_eight_pois() {
        let mut m = PredictorSpec::new(PredictorKind::RandomUniform)
            .build(8, 1)
            .unwrap();
        let p = m.predict(&[]).unwrap().distribution.unwrap();
        assert_eq!(-p.prob(5).log2(), 3.0);
    }

    #[test]
    fn top_frequency_predicts_mode() {
        let mut m = PredictorSpec::new(PredictorKind::TopFrequency).build(3, 0).unwrap();
        m.fit(&[&letters("ABCBCB")]).unwrap();
        assert_eq!(m.predict(&letters("A")).unwrap().poi, 1);
    }

    fn any_spec() -> impl Strategy<Value = PredictorSpec> {
        let kind = prop_oneof![
            Just(PredictorKind::RandomUniform),
            Just(PredictorKind::TopFrequency),
            (1usize..=3).prop_map(|k| PredictorKind::Markov { k }),
            (1usize..6).prop_map(|states| PredictorKind::Mmc { states }),
        ];
        (
            kind,
            prop_oneof![Just(0.0), Just(0.01), Just(1.0), 0.0f64..5.0],
            prop_oneof![Just(Fallback::Backoff), Just(Fallback::Uniform)],
        )
            .prop_map(|(kind, alpha, fallback)| PredictorSpec {
                kind,
                alpha,
                fallback,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn distributions_are_normalized(
            spec in any_spec(),
            n in 1usize..9,
            train in proptest::collection::vec(0u32..9, 0..40),
            context in proptest::collection::vec(0u32..9, 0..4),
        ) {
            let train: Vec<u32> = train.into_iter().map(|s| s % n as u32).collect();
            let context: Vec<u32> = context.into_iter().map(|s| s % n as u32).collect();
            let mut m = spec.build(n, 7).unwrap();
            let _ = m.fit(&[&visits(&train)]);
            let pred = m.predict(&visits(&context)).unwrap();
            let d = pred.distribution.unwrap();
            prop_assert_eq!(d.probs().len(), n);
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
            let s: f64 = d.probs().iter().sum();
            prop_assert!((s - 1.0).abs() <= PredictiveDistribution::TOLERANCE, "sum {}", s);
            prop_assert!((pred.poi as usize) < n);
        }
    }
}
