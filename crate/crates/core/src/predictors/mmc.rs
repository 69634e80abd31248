//! Mobility Markov chain: first-order transitions over the `M` most visited
//! POIs plus one OTHER state.
//!
//! Transitions are counted on the state-mapped sequence (OTHER to OTHER
//! transitions are kept). The argmax comes from the state chain; an OTHER
//! verdict resolves to the most frequent POI outside the top `M`. The POI-level
//! distribution spreads OTHER's count over non-top POIs in proportion to their
//! training frequency, then applies the usual additive smoothing, so with `M`
//! at least the number of distinct POIs the model equals `markov_1`.

use std::collections::BTreeMap;

use super::{smoothed, symbols, Fallback, Prediction, PredictiveDistribution, Predictor};
use crate::error::{Error, Result};
use crate::model::{PoiId, Visit};

/// A state of the chain: a top POI or OTHER.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Top(PoiId),
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityMarkovChain {
    m: usize,
    n: usize,
    alpha: f64,
    fallback: Fallback,
    unigram: BTreeMap<PoiId, u64>,
    pairs: BTreeMap<(PoiId, PoiId), u64>,
    last: Option<PoiId>,
    derived: Option<Derived>,
}

#[derive(Debug, Clone, PartialEq)]
struct Derived {
    top: Vec<PoiId>,
    /// Most frequent non-top POI.
    other_poi: Option<PoiId>,
    other_total: u64,
    transitions: BTreeMap<State, BTreeMap<State, u64>>,
    state_unigram: BTreeMap<State, u64>,
}

impl MobilityMarkovChain {
    pub fn new(m: usize, n: usize, alpha: f64, fallback: Fallback) -> Self {
        MobilityMarkovChain {
            m,
            n,
            alpha,
            fallback,
            unigram: BTreeMap::new(),
            pairs: BTreeMap::new(),
            last: None,
            derived: None,
        }
    }

    fn count(&mut self, seq: impl Iterator<Item = PoiId>) -> Result<()> {
        for y in seq {
            if y as usize >= self.n {
                return Err(Error::invalid(format!("poi {y} outside the alphabet of {}", self.n)));
            }
            *self.unigram.entry(y).or_insert(0) += 1;
            if let Some(x) = self.last {
                *self.pairs.entry((x, y)).or_insert(0) += 1;
            }
            self.last = Some(y);
        }
        self.derived = None;
        Ok(())
    }

    /// Top-`M` POIs by training frequency, smaller id first on ties.
    pub fn top_pois(&mut self) -> &[PoiId] {
        &self.derived().top
    }

    pub fn state_of(&mut self, poi: PoiId) -> State {
        let d = self.derived();
        if d.top.binary_search(&poi).is_ok() {
            State::Top(poi)
        } else {
            State::Other
        }
    }

    /// State-level transition counts.
    pub fn transitions(&mut self) -> BTreeMap<State, BTreeMap<State, u64>> {
        self.derived().transitions.clone()
    }

    fn derived(&mut self) -> &Derived {
        if self.derived.is_none() {
            let mut by_freq: Vec<(PoiId, u64)> = self.unigram.iter().map(|(&y, &c)| (y, c)).collect();
            by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut top: Vec<PoiId> = by_freq.iter().take(self.m).map(|e| e.0).collect();
            let other_poi = by_freq.get(self.m).map(|e| e.0);
            let other_total = by_freq.iter().skip(self.m).map(|e| e.1).sum();
            top.sort_unstable();
            let state = |y: PoiId| {
                if top.binary_search(&y).is_ok() {
                    State::Top(y)
                } else {
                    State::Other
                }
            };
            let mut transitions: BTreeMap<State, BTreeMap<State, u64>> = BTreeMap::new();
            for (&(x, y), &c) in &self.pairs {
                *transitions
                    .entry(state(x))
                    .or_default()
                    .entry(state(y))
                    .or_insert(0) += c;
            }
            let mut state_unigram = BTreeMap::new();
            for (&y, &c) in &self.unigram {
                *state_unigram.entry(state(y)).or_insert(0) += c;
            }
            self.derived = Some(Derived {
                top,
                other_poi,
                other_total,
                transitions,
                state_unigram,
            });
        }
        self.derived.as_ref().unwrap()
    }

    fn poi_distribution(&self, row: &BTreeMap<State, u64>) -> (PoiId, PredictiveDistribution) {
        let d = self.derived.as_ref().unwrap();
        let total: u64 = row.values().sum();
        let mut counts: Vec<(PoiId, f64)> = Vec::new();
        for (&s, &c) in row {
            match s {
                State::Top(y) => counts.push((y, c as f64)),
                State::Other => {
                    for (&y, &f) in &self.unigram {
                        if d.top.binary_search(&y).is_err() {
                            counts.push((y, c as f64 * f as f64 / d.other_total as f64));
                        }
                    }
                }
            }
        }
        let dist = smoothed(counts.into_iter(), total as f64, self.n, self.alpha);
        // state argmax, ties by the POI each state resolves to
        let resolve = |s: State| match s {
            State::Top(y) => y,
            State::Other => d.other_poi.unwrap_or(0),
        };
        let mut best: Option<(PoiId, u64)> = None;
        for (&s, &c) in row {
            let y = resolve(s);
            if best.is_none_or(|b| c > b.1 || (c == b.1 && y < b.0)) {
                best = Some((y, c));
            }
        }
        (best.map_or(0, |b| b.0), dist)
    }
}

impl Predictor for MobilityMarkovChain {
    fn fit(&mut self, segments: &[&[Visit]]) -> Result<()> {
        self.unigram.clear();
        self.pairs.clear();
        self.derived = None;
        if !segments.iter().any(|s| s.len() >= 2) {
            return Err(Error::invalid("mmc needs a training segment of at least 2 symbols"));
        }
        for s in segments {
            self.last = None;
            self.count(symbols(s))?;
        }
        Ok(())
    }

    fn extend(&mut self, more: &[Visit]) -> Result<()> {
        self.count(symbols(more))
    }

    fn context_window(&self) -> usize {
        1
    }

    fn predict(&mut self, context: &[Visit]) -> Result<Prediction> {
        if self.unigram.is_empty() {
            return Ok(Prediction {
                poi: 0,
                distribution: Some(PredictiveDistribution::uniform(self.n)),
            });
        }
        self.derived();
        let state = context.last().map(|v| self.state_of(v.poi));
        let d = self.derived.as_ref().unwrap();
        let row = state.and_then(|s| d.transitions.get(&s));
        let (poi, dist) = match (row, self.fallback) {
            (Some(row), _) => self.poi_distribution(row),
            (None, Fallback::Backoff) => self.poi_distribution(&d.state_unigram),
            (None, Fallback::Uniform) => (0, PredictiveDistribution::uniform(self.n)),
        };
        Ok(Prediction {
            poi,
            distribution: Some(dist),
        })
    }
}
