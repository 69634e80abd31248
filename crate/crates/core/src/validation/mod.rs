//! Time-ordered evaluation of next-POI predictors.
//!
//! Each test position is predicted from the true preceding symbols (teacher
//! forcing), restricted to the training segment that ends where the test
//! range begins plus the already revealed test prefix. Models are never
//! updated during a test range.

pub mod folds;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, PoiSequence, Visit};
use crate::predictors::{ExternalPredictor, ExternalSpec, Predictor, PredictorSpec};
use crate::synthgen::user_rng;

use folds::hull;
pub use folds::{blocks, make_folds, Fold, Scheme, ValidationPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Native(PredictorSpec),
    External(ExternalSpec),
}

impl ModelSpec {
    pub fn build(&self, alphabet_len: usize, seed: u64) -> Result<Box<dyn Predictor>> {
        match self {
            ModelSpec::Native(s) => s.build(alphabet_len, seed),
            ModelSpec::External(e) => Ok(Box::new(ExternalPredictor::new(e.clone(), alphabet_len)?)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Native(s) => s.to_string(),
            ModelSpec::External(e) => format!("external:{}", e.command.join(" ")),
        }
    }
}

impl From<PredictorSpec> for ModelSpec {
    fn from(s: PredictorSpec) -> Self {
        ModelSpec::Native(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub user_id: String,
    pub fold: usize,
    pub train: Vec<Range<usize>>,
    pub test: Vec<Range<usize>>,
    pub correct: u64,
    pub n_predictions: u64,
    pub accuracy: f64,
    /// Sum of `-log2 P(true)`; absent for argmax-only predictors.
    pub log_loss_bits: Option<f64>,
    pub bits_per_symbol: Option<f64>,
    pub leaky: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_users: usize,
    /// Mean over users.
    pub accuracy: f64,
    pub bits_per_symbol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dataset: String,
    pub model: String,
    pub scheme: String,
    pub leaky: bool,
    pub per_user: bool,
    pub folds: Vec<FoldResult>,
    pub fold_summaries: Vec<FoldSummary>,
    /// Mean over folds of the per-fold user means.
    pub accuracy: f64,
    /// Total correct over total predictions.
    pub accuracy_weighted: f64,
    pub bits_per_symbol: Option<f64>,
    pub bits_per_symbol_weighted: Option<f64>,
    pub n_predictions: u64,
    pub excluded_users: Vec<String>,
}

struct Scorer<'a> {
    visits: &'a [Visit],
    correct: u64,
    n: u64,
    bits: Option<f64>,
}

impl<'a> Scorer<'a> {
    fn new(visits: &'a [Visit]) -> Self {
        Scorer {
            visits,
            correct: 0,
            n: 0,
            bits: Some(0.0),
        }
    }

    fn run(&mut self, model: &mut dyn Predictor, fold: &Fold) -> Result<()> {
        let w = model.context_window();
        for r in &fold.test {
            let ctx_lo = fold
                .train
                .iter()
                .find(|t| t.end == r.start)
                .map_or(r.start, |t| t.start);
            for t in r.clone() {
                let lo = ctx_lo.max(t.saturating_sub(w));
                let p = model.predict(&self.visits[lo..t])?;
                let truth = self.visits[t].poi;
                self.correct += u64::from(p.poi == truth);
                self.n += 1;
                self.bits = match (self.bits, &p.distribution) {
                    (Some(b), Some(d)) => Some(b - d.prob(truth).log2()),
                    _ => None,
                };
            }
        }
        Ok(())
    }

    fn result(self, user_id: &str, fold: &Fold, leaky: bool) -> Option<FoldResult> {
        (self.n > 0).then(|| FoldResult {
            user_id: user_id.to_string(),
            fold: fold.index,
            train: fold.train.clone(),
            test: fold.test.clone(),
            correct: self.correct,
            n_predictions: self.n,
            accuracy: self.correct as f64 / self.n as f64,
            log_loss_bits: self.bits,
            bits_per_symbol: self.bits.map(|b| b / self.n as f64),
            leaky,
        })
    }
}

fn segments<'a>(visits: &'a [Visit], ranges: &[Range<usize>]) -> Vec<&'a [Visit]> {
    ranges.iter().map(|r| &visits[r.clone()]).collect()
}

fn model_seed(seed: u64, user: usize, fold: usize) -> u64 {
    user_rng(seed, user.wrapping_mul(1_000_003).wrapping_add(fold)).next_u64()
}

enum UserOutcome {
    Done(Vec<FoldResult>),
    Excluded(String),
}

fn evaluate_user(
    seq: &PoiSequence,
    user: usize,
    folds: &[Fold],
    model: &ModelSpec,
    n: usize,
    plan: &ValidationPlan,
) -> Result<UserOutcome> {
    let visits = seq.visits();
    let leaky = plan.scheme.is_leaky();
    let cumulative = plan.scheme == Scheme::Window10Cumulative;
    let mut out = Vec::with_capacity(folds.len());
    let mut carried: Option<(Box<dyn Predictor>, usize)> = None;
    for f in folds {
        let mut predictor = match carried.take() {
            Some((mut m, trained_to)) => {
                let end = f.train_hull().end;
                m.extend(&visits[trained_to..end])?;
                m
            }
            None => {
                let mut m = model.build(n, model_seed(plan.seed, user, f.index))?;
                if let Err(e) = m.fit(&segments(visits, &f.train)) {
                    if matches!(e, Error::Protocol { .. }) {
                        return Err(e);
                    }
                    return Ok(UserOutcome::Excluded(format!(
                        "user {} fold {}: {e}",
                        seq.user_id(),
                        f.index
                    )));
                }
                m
            }
        };
        let mut scorer = Scorer::new(visits);
        scorer.run(predictor.as_mut(), f)?;
        out.extend(scorer.result(seq.user_id(), f, leaky));
        if cumulative && predictor.supports_extend() {
            carried = Some((predictor, f.train_hull().end));
        }
    }
    Ok(UserOutcome::Done(out))
}

fn evaluate_pooled(
    users: &[(usize, &PoiSequence, Vec<Fold>)],
    model: &ModelSpec,
    n: usize,
    plan: &ValidationPlan,
) -> Result<Vec<FoldResult>> {
    let n_folds = users[0].2.len();
    if users.iter().any(|u| u.2.len() != n_folds) {
        return Err(Error::InfeasiblePlan(
            "pooled training needs the same number of folds for every user".into(),
        ));
    }
    let leaky = plan.scheme.is_leaky();
    let per_fold = (0..n_folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<FoldResult>> {
            let train: Vec<&[Visit]> = users
                .iter()
                .flat_map(|(_, s, folds)| segments(s.visits(), &folds[f].train))
                .collect();
            let mut m = model.build(n, model_seed(plan.seed, 0, f))?;
            m.fit(&train)?;
            let mut out = Vec::new();
            for (_, s, folds) in users {
                let mut scorer = Scorer::new(s.visits());
                scorer.run(m.as_mut(), &folds[f])?;
                out.extend(scorer.result(s.user_id(), &folds[f], leaky));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<FoldResult> = per_fold.into_iter().flatten().collect();
    // user order, then fold order
    let order: BTreeMap<&str, usize> = users.iter().map(|u| (u.1.user_id(), u.0)).collect();
    all.sort_by_key(|r| (order[r.user_id.as_str()], r.fold));
    Ok(all)
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

pub fn evaluate(ds: &Dataset, model: &ModelSpec, plan: &ValidationPlan) -> Result<Evaluation> {
    plan.scheme.validate()?;
    let n = ds.alphabet().len();
    let mut excluded = Vec::new();
    let mut feasible: Vec<(usize, &PoiSequence, Vec<Fold>)> = Vec::new();
    for (i, s) in ds.sequences().iter().enumerate() {
        match make_folds(plan, s.len()) {
            Ok(f) => feasible.push((i, s, f)),
            Err(Error::InfeasiblePlan(why)) => {
                warn!("user {} excluded: {why}", s.user_id());
                excluded.push(s.user_id().to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if feasible.is_empty() {
        return Err(Error::InfeasiblePlan(format!(
            "{} is infeasible for every user",
            plan.scheme
        )));
    }

    let folds: Vec<FoldResult> = if plan.per_user {
        let outcomes = feasible
            .par_iter()
            .map(|(i, s, f)| evaluate_user(s, *i, f, model, n, plan))
            .collect::<Result<Vec<_>>>()?;
        let mut all = Vec::new();
        for ((_, s, _), o) in feasible.iter().zip(outcomes) {
            match o {
                UserOutcome::Done(r) => all.extend(r),
                UserOutcome::Excluded(why) => {
                    warn!("{why}; user excluded");
                    excluded.push(s.user_id().to_string());
                }
            }
        }
        all
    } else {
        evaluate_pooled(&feasible, model, n, plan)?
    };

    let total: u64 = folds.iter().map(|f| f.n_predictions).sum();
    if total == 0 {
        return Err(Error::invalid("no test predictions"));
    }
    let mut by_fold: BTreeMap<usize, Vec<&FoldResult>> = BTreeMap::new();
    for f in &folds {
        by_fold.entry(f.fold).or_default().push(f);
    }
    let has_bits = folds.iter().all(|f| f.bits_per_symbol.is_some());
    let fold_summaries: Vec<FoldSummary> = by_fold
        .iter()
        .map(|(&fold, rs)| FoldSummary {
            fold,
            n_users: rs.len(),
            accuracy: mean(rs.iter().map(|r| r.accuracy)),
            bits_per_symbol: has_bits.then(|| mean(rs.iter().filter_map(|r| r.bits_per_symbol))),
        })
        .collect();
    let correct: u64 = folds.iter().map(|f| f.correct).sum();
    let log_loss: Option<f64> = if has_bits {
        Some(folds.iter().filter_map(|f| f.log_loss_bits).sum())
    } else {
        None
    };
    Ok(Evaluation {
        dataset: ds.name().to_string(),
        model: model.label(),
        scheme: plan.scheme.to_string(),
        leaky: plan.scheme.is_leaky(),
        per_user: plan.per_user,
        accuracy: mean(fold_summaries.iter().map(|s| s.accuracy)),
        accuracy_weighted: correct as f64 / total as f64,
        bits_per_symbol: has_bits.then(|| mean(fold_summaries.iter().filter_map(|s| s.bits_per_symbol))),
        bits_per_symbol_weighted: log_loss.map(|b| b / total as f64),
        n_predictions: total,
        fold_summaries,
        folds,
        excluded_users: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionEntry {
    pub model: String,
    /// Prediction-weighted bits per symbol; `None` for argmax-only models.
    pub bits_per_symbol: Option<f64>,
    pub accuracy: f64,
}

/// Bits per symbol of each model under the same plan.
pub fn compression_ratio(
    ds: &Dataset,
    models: &[ModelSpec],
    plan: &ValidationPlan,
) -> Result<Vec<CompressionEntry>> {
    models
        .iter()
        .map(|m| {
            let e = evaluate(ds, m, plan)?;
            Ok(CompressionEntry {
                model: e.model,
                bits_per_symbol: e.bits_per_symbol_weighted,
                accuracy: e.accuracy,
            })
        })
        .collect()
}

/// Holdout 80-20, 70-30, 60-40 and shuffled k-fold with k = 3, 5, 10.
pub fn default_sensitivity_schemes() -> Vec<Scheme> {
    let mut v: Vec<Scheme> = [0.8, 0.7, 0.6]
        .into_iter()
        .map(|f| Scheme::Holdout { train_fraction: f })
        .collect();
    v.extend([3, 5, 10].map(|k| Scheme::KFold { k, shuffled: true }));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub dataset: String,
    pub model: String,
    pub columns: Vec<String>,
    pub accuracies: Vec<f64>,
    pub leaky: Vec<bool>,
}

impl SensitivityTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        s.push_str(&self.dataset);
        for a in &self.accuracies {
            let _ = write!(s, ",{a}");
        }
        s.push('\n');
        s
    }

    /// Max minus min accuracy over the columns whose label starts with `prefix`.
    pub fn spread(&self, prefix: &str) -> f64 {
        let v: Vec<f64> = self
            .columns
            .iter()
            .zip(&self.accuracies)
            .filter(|(c, _)| c.starts_with(prefix))
            .map(|(_, &a)| a)
            .collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

pub fn validation_sensitivity(
    ds: &Dataset,
    model: &ModelSpec,
    schemes: &[Scheme],
    seed: u64,
) -> Result<SensitivityTable> {
    if schemes.len() < 2 {
        return Err(Error::invalid("sensitivity needs at least 2 schemes"));
    }
    let mut accuracies = Vec::new();
    for s in schemes {
        let plan = ValidationPlan::new(*s).with_seed(seed);
        accuracies.push(evaluate(ds, model, &plan)?.accuracy);
    }
    Ok(SensitivityTable {
        dataset: ds.name().to_string(),
        model: model.label(),
        columns: schemes.iter().map(Scheme::label).collect(),
        accuracies,
        leaky: schemes.iter().map(Scheme::is_leaky).collect(),
    })
}

/// One row per user and fold.
pub fn folds_csv(e: &Evaluation) -> String {
    let mut s = String::from(
        "user_id,fold,train_lo,train_hi,test_lo,test_hi,accuracy,bits_per_symbol,n_predictions,leaky\n",
    );
    for f in &e.folds {
        let tr = hull(&f.train);
        let te = hull(&f.test);
        let bits = f.bits_per_symbol.map_or("n/a".to_string(), |b| b.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            f.user_id, f.fold, tr.start, tr.end, te.start, te.end, f.accuracy, bits, f.n_predictions, f.leaky
        );
    }
    s
}
