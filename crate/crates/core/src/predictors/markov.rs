//! Order-k Markov model with additive smoothing and backoff.

use std::collections::{BTreeMap, HashMap};

use super::{smoothed, symbols, Fallback, Prediction, PredictiveDistribution, Predictor};
use crate::error::{Error, Result};
use crate::model::{PoiId, Visit};

/// Next-symbol counts after one context.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Row {
    pub total: u64,
    pub counts: BTreeMap<PoiId, u64>,
}

impl Row {
    fn add(&mut self, y: PoiId) {
        self.total += 1;
        *self.counts.entry(y).or_insert(0) += 1;
    }

    /// Most frequent successor, smallest id on ties.
    pub fn argmax(&self) -> Option<PoiId> {
        let mut best: Option<(PoiId, u64)> = None;
        for (&y, &c) in &self.counts {
            if best.is_none_or(|b| c > b.1) {
                best = Some((y, c));
            }
        }
        best.map(|b| b.0)
    }
}

fn key(ctx: &[PoiId]) -> u128 {
    ctx.iter().fold(0u128, |acc, &s| (acc << 32) | s as u128)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    k: usize,
    n: usize,
    alpha: f64,
    fallback: Fallback,
    /// `tables[j]` holds the order-`j` counts, `j = 0..=k`.
    tables: Vec<HashMap<u128, Row>>,
    /// Last `k` training symbols, so `extend` can continue the stream.
    tail: Vec<PoiId>,
}

impl MarkovModel {
    pub fn new(k: usize, n: usize, alpha: f64, fallback: Fallback) -> Self {
        MarkovModel {
            k,
            n,
            alpha,
            fallback,
            tables: vec![HashMap::new(); k + 1],
            tail: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn row(&self, ctx: &[PoiId]) -> Option<&Row> {
        self.tables.get(ctx.len())?.get(&key(ctx))
    }

    /// Count tables, for equality checks between training paths.
    pub fn tables(&self) -> &[HashMap<u128, Row>] {
        &self.tables
    }

    fn count(&mut self, seq: impl Iterator<Item = PoiId>) -> Result<()> {
        let mut buf = std::mem::take(&mut self.tail);
        let start = buf.len();
        buf.extend(seq);
        for i in start..buf.len() {
            let y = buf[i];
            if y as usize >= self.n {
                return Err(Error::invalid(format!("poi {y} outside the alphabet of {}", self.n)));
            }
            for j in 0..=self.k.min(i) {
                self.tables[j].entry(key(&buf[i - j..i])).or_default().add(y);
            }
        }
        let keep = buf.len().saturating_sub(self.k);
        self.tail = buf.split_off(keep);
        Ok(())
    }

    /// Distribution after `context`, following the fallback policy.
    pub fn distribution(&self, context: &[PoiId]) -> (Option<PoiId>, PredictiveDistribution) {
        let ctx = &context[context.len().saturating_sub(self.k)..];
        let orders: Vec<usize> = match self.fallback {
            Fallback::Backoff => (0..=ctx.len()).rev().collect(),
            Fallback::Uniform if ctx.len() == self.k => vec![self.k],
            Fallback::Uniform => Vec::new(),
        };
        for j in orders {
            let c = &ctx[ctx.len() - j..];
            if let Some(row) = self.tables[j].get(&key(c)) {
                let dist = smoothed(
                    row.counts.iter().map(|(&y, &c)| (y, c as f64)),
                    row.total as f64,
                    self.n,
                    self.alpha,
                );
                return (row.argmax(), dist);
            }
        }
        (None, PredictiveDistribution::uniform(self.n))
    }
}

impl Predictor for MarkovModel {
    fn fit(&mut self, segments: &[&[Visit]]) -> Result<()> {
        self.tables = vec![HashMap::new(); self.k + 1];
        self.tail.clear();
        let need = self.k + 1;
        if !segments.iter().any(|s| s.len() >= need) {
            let got = segments.iter().map(|s| s.len()).max().unwrap_or(0);
            return Err(Error::invalid(format!(
                "markov_{} needs a training segment of at least {need} symbols, got {got}",
                self.k
            )));
        }
        for s in segments {
            self.tail.clear();
            self.count(symbols(s))?;
        }
        Ok(())
    }

    fn extend(&mut self, more: &[Visit]) -> Result<()> {
        self.count(symbols(more))
    }

    fn context_window(&self) -> usize {
        self.k
    }

    fn predict(&mut self, context: &[Visit]) -> Result<Prediction> {
        let ctx: Vec<PoiId> = symbols(&context[context.len().saturating_sub(self.k)..]).collect();
        let (argmax, dist) = self.distribution(&ctx);
        Ok(Prediction {
            poi: argmax.unwrap_or_else(|| dist.argmax()),
            distribution: Some(dist),
        })
    }
}
