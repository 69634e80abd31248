//! Split schemes and fold construction.

// train/test parts are lists of ranges, often of length one
#![allow(clippy::single_range_in_vec_init)]

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    /// Chronological split: the first `train_fraction` of the sequence trains.
    Holdout { train_fraction: f64 },
    KFold { k: usize, shuffled: bool },
    LeaveOneOut,
    /// Train on a with-replacement sample, test on the out-of-bag indices.
    Bootstrap { iterations: usize },
    /// Expanding window: blocks `0..=i` train, block `i + 1` tests, starting
    /// with `p` training blocks.
    Rolling { k: usize, p: usize },
    /// Sliding window of `p` training blocks, next block tests.
    BlockRolling { k: usize, p: usize },
    /// Ten 10% windows, training extended window by window.
    Window10Cumulative,
}

impl Scheme {
    /// Schemes that may train on observations after the test positions.
    pub fn is_leaky(&self) -> bool {
        matches!(
            self,
            Scheme::Holdout { .. } | Scheme::KFold { .. } | Scheme::LeaveOneOut | Scheme::Bootstrap { .. }
        )
    }

    pub fn is_time_ordered(&self) -> bool {
        matches!(
            self,
            Scheme::Rolling { .. } | Scheme::BlockRolling { .. } | Scheme::Window10Cumulative
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        match *self {
            Scheme::Holdout { train_fraction: f } if !(f > 0.0 && f < 1.0) => {
                bad(format!("holdout split must be in (0, 1), got {f}"))
            }
            Scheme::KFold { k, .. } if k < 2 => bad(format!("kfold needs k >= 2, got {k}")),
            Scheme::Bootstrap { iterations: 0 } => bad("bootstrap needs at least one iteration".into()),
            Scheme::Rolling { k, p } | Scheme::BlockRolling { k, p } if k < 2 || p < 1 || p >= k => {
                bad(format!("rolling schemes need k >= 2 and 1 <= p < k, got k={k}, p={p}"))
            }
            _ => Ok(()),
        }
    }

    /// Label used in CSV headers, e.g. `holdout_80_20`, `kfold_5`.
    pub fn label(&self) -> String {
        match *self {
            Scheme::Holdout { train_fraction } => {
                let tr = (train_fraction * 100.0).round() as u32;
                format!("holdout_{tr}_{}", 100 - tr)
            }
            Scheme::KFold { k, .. } => format!("kfold_{k}"),
            Scheme::LeaveOneOut => "leave_one_out".into(),
            Scheme::Bootstrap { iterations } => format!("bootstrap_{iterations}"),
            Scheme::Rolling { k, p } => format!("rolling_{k}_{p}"),
            Scheme::BlockRolling { k, p } => format!("block_rolling_{k}_{p}"),
            Scheme::Window10Cumulative => "window10_cumulative".into(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Scheme::Holdout { train_fraction } => write!(f, "holdout:split={train_fraction}"),
            Scheme::KFold { k, shuffled } => write!(f, "kfold:k={k},shuffled={shuffled}"),
            Scheme::LeaveOneOut => write!(f, "loo"),
            Scheme::Bootstrap { iterations } => write!(f, "bootstrap:iterations={iterations}"),
            Scheme::Rolling { k, p } => write!(f, "rolling:k={k},p={p}"),
            Scheme::BlockRolling { k, p } => write!(f, "block_rolling:k={k},p={p}"),
            Scheme::Window10Cumulative => write!(f, "window10_cumulative"),
        }
    }
}

/// `block_rolling:k=10,p=1`, `rolling:k=5,p=expanding`, `holdout:0.8`,
/// `kfold:k=3,shuffled=true`, `loo`, `bootstrap:iterations=50`,
/// `window10_cumulative`.
impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        let mut bare = None;
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => {
                    kv.insert(k.trim(), v.trim());
                }
                None => bare = Some(part),
            }
        }
        let int = |key: &str, default: Option<usize>| -> Result<usize> {
            match kv.get(key) {
                Some(&"expanding") if key == "p" => Ok(1),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad value {v:?} for {key} in {s:?}"))),
                None => default.ok_or_else(|| Error::invalid(format!("scheme {s:?} needs {key}="))),
            }
        };
        let scheme = match name.trim() {
            "holdout" => {
                let v = kv.get("split").copied().or(bare).unwrap_or("0.8");
                let f: f64 = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad holdout split {v:?}")))?;
                Scheme::Holdout { train_fraction: f }
            }
            "kfold" => Scheme::KFold {
                k: int("k", bare.and_then(|b| b.parse().ok()))?,
                shuffled: match kv.get("shuffled") {
                    None | Some(&"false") => false,
                    Some(&"true") => true,
                    Some(v) => return Err(Error::invalid(format!("bad shuffled value {v:?}"))),
                },
            },
            "loo" | "leave_one_out" => Scheme::LeaveOneOut,
            "bootstrap" => Scheme::Bootstrap {
                iterations: int("iterations", Some(100))?,
            },
            "rolling" => Scheme::Rolling {
                k: int("k", None)?,
                p: int("p", Some(1))?,
            },
            "block_rolling" => Scheme::BlockRolling {
                k: int("k", None)?,
                p: int("p", Some(1))?,
            },
            "window10_cumulative" => Scheme::Window10Cumulative,
            other => return Err(Error::invalid(format!("unknown scheme {other:?}"))),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub scheme: Scheme,
    /// One model per user, or one model trained on every user's training part.
    pub per_user: bool,
    /// Drives shuffled k-fold and bootstrap.
    pub seed: u64,
}

impl ValidationPlan {
    pub fn new(scheme: Scheme) -> Self {
        ValidationPlan {
            scheme,
            per_user: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Disjoint, sorted; each range is a contiguous training segment.
    pub train: Vec<Range<usize>>,
    /// Disjoint, sorted.
    pub test: Vec<Range<usize>>,
}

impl Fold {
    pub fn train_len(&self) -> usize {
        self.train.iter().map(|r| r.len()).sum()
    }

    pub fn test_len(&self) -> usize {
        self.test.iter().map(|r| r.len()).sum()
    }

    /// Smallest range covering all training indices.
    pub fn train_hull(&self) -> Range<usize> {
        hull(&self.train)
    }

    pub fn test_hull(&self) -> Range<usize> {
        hull(&self.test)
    }
}

pub(crate) fn hull(r: &[Range<usize>]) -> Range<usize> {
    match (r.first(), r.last()) {
        (Some(a), Some(b)) => a.start..b.end,
        _ => 0..0,
    }
}

/// Sorted, deduplicated indices to maximal runs.
pub fn runs(indices: &[usize]) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(r) if r.end == i => r.end += 1,
            Some(r) if r.end > i => {}
            _ => out.push(i..i + 1),
        }
    }
    out
}

fn complement(n: usize, taken: &[Range<usize>]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut at = 0;
    for r in taken {
        if r.start > at {
            out.push(at..r.start);
        }
        at = r.end;
    }
    if at < n {
        out.push(at..n);
    }
    out
}

fn infeasible(scheme: &Scheme, n: usize, why: &str) -> Error {
    Error::InfeasiblePlan(format!("{scheme} on a sequence of {n} symbols: {why}"))
}

/// `k` blocks of `n / k` symbols, the remainder going to the last block.
pub fn blocks(n: usize, k: usize) -> Vec<Range<usize>> {
    let b = n / k;
    (0..k)
        .map(|i| i * b..if i + 1 == k { n } else { (i + 1) * b })
        .collect()
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.below(i + 1));
    }
    idx
}

pub fn make_folds(plan: &ValidationPlan, n: usize) -> Result<Vec<Fold>> {
    let scheme = &plan.scheme;
    scheme.validate()?;
    let fold = |index, train, test| Fold { index, train, test };
    match *scheme {
        Scheme::BlockRolling { k, p } | Scheme::Rolling { k, p } => {
            if n / k < 2 {
                return Err(infeasible(scheme, n, &format!("{k} blocks need at least 2 symbols each")));
            }
            let b = blocks(n, k);
            let expanding = matches!(scheme, Scheme::Rolling { .. });
            Ok((0..k - p)
                .map(|i| {
                    let lo = if expanding { 0 } else { b[i].start };
                    fold(i, vec![lo..b[i + p - 1].end], vec![b[i + p].clone()])
                })
                .collect())
        }
        Scheme::Window10Cumulative => make_folds(
            &ValidationPlan {
                scheme: Scheme::Rolling { k: 10, p: 1 },
                ..plan.clone()
            },
            n,
        )
        .map_err(|_| infeasible(scheme, n, "10 windows need at least 2 symbols each")),
        Scheme::Holdout { train_fraction } => {
            let cut = (n as f64 * train_fraction).floor() as usize;
            if cut < 2 || n - cut < 1 {
                return Err(infeasible(scheme, n, "both parts must be nonempty"));
            }
            Ok(vec![fold(0, vec![0..cut], vec![cut..n])])
        }
        Scheme::KFold { k, shuffled } => {
            if n / k < 1 || n < 2 * k {
                return Err(infeasible(scheme, n, "too few symbols for the fold count"));
            }
            let order: Vec<usize> = if shuffled {
                shuffled_indices(n, plan.seed)
            } else {
                (0..n).collect()
            };
            Ok(blocks(n, k)
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut test: Vec<usize> = order[r].to_vec();
                    test.sort_unstable();
                    let test = runs(&test);
                    fold(i, complement(n, &test), test)
                })
                .collect())
        }
        Scheme::LeaveOneOut => {
            if n < 3 {
                return Err(infeasible(scheme, n, "need at least 3 symbols"));
            }
            Ok((0..n)
                .map(|i| fold(i, complement(n, &[i..i + 1]), vec![i..i + 1]))
                .collect())
        }
        Scheme::Bootstrap { iterations } => {
            if n < 3 {
                return Err(infeasible(scheme, n, "need at least 3 symbols"));
            }
            let mut rng = SplitMix64::new(plan.seed);
            Ok((0..iterations)
                .map(|i| {
                    let mut sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
                    sample.sort_unstable();
                    sample.dedup();
                    let train = runs(&sample);
                    fold(i, train.clone(), complement(n, &train))
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan(s: &str) -> ValidationPlan {
        ValidationPlan::new(s.parse().unwrap()).with_seed(11)
    }

    #[test]
    fn block_rolling_ten_one() {
        let f = make_folds(&plan("block_rolling:k=10,p=1"), 100).unwrap();
        assert_eq!(f.len(), 9);
        assert_eq!(f[0].train, vec![0..10]);
        assert_eq!(f[0].test, vec![10..20]);
        assert_eq!(f[8].test, vec![90..100]);
    }

    #[test]
    fn rolling_expanding() {
        let f = make_folds(&plan("rolling:k=5,p=expanding"), 50).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f[3].train, vec![0..40]);
        assert_eq!(f[3].test, vec![40..50]);
    }

    #[test]
    fn remainder_goes_to_last_block() {
        let f = make_folds(&plan("block_rolling:k=3,p=1"), 11).unwrap();
        assert_eq!(f[1].test, vec![6..11]);
    }

    #[test]
    fn shuffled_kfold() {
        let p = plan("kfold:k=3,shuffled=true");
        assert!(p.scheme.is_leaky());
        let f = make_folds(&p, 30).unwrap();
        assert_eq!(f.len(), 3);
        let mut all = Vec::new();
        for fold in &f {
            assert_eq!(fold.test_len(), 10);
            assert_eq!(fold.train_len(), 20);
            all.extend(fold.test.iter().cloned().flatten());
        }
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert_eq!(make_folds(&p, 30).unwrap(), f);
    }

    #[test]
    fn holdout_is_chronological() {
        let f = make_folds(&plan("holdout:0.7"), 10).unwrap();
        assert_eq!(f[0].train, vec![0..7]);
        assert_eq!(f[0].test, vec![7..10]);
        assert_eq!(Scheme::Holdout { train_fraction: 0.7 }.label(), "holdout_70_30");
    }

    #[test]
    fn bootstrap_out_of_bag() {
        let f = make_folds(&plan("bootstrap:iterations=4"), 50).unwrap();
        assert_eq!(f.len(), 4);
        for fold in f {
            assert_eq!(fold.train_len() + fold.test_len(), 50);
        }
    }

    #[test]
    fn infeasible_plans() {
        let e = make_folds(&plan("block_rolling:k=10,p=1"), 19).unwrap_err();
        assert!(matches!(e, Error::InfeasiblePlan(_)));
        assert!("block_rolling:k=3,p=3".parse::<Scheme>().is_err());
        assert!("holdout:1.5".parse::<Scheme>().is_err());
        assert!("kfold:k=1".parse::<Scheme>().is_err());
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in [
            "holdout:split=0.8",
            "kfold:k=5,shuffled=true",
            "loo",
            "bootstrap:iterations=20",
            "rolling:k=5,p=2",
            "block_rolling:k=10,p=1",
            "window10_cumulative",
        ] {
            let scheme: Scheme = s.parse().unwrap();
            assert_eq!(scheme.to_string(), s);
        }
    }

    proptest! {
        #[test]
        fn time_ordered_folds_never_leak(
            k in 2usize..15,
            p_raw in 1usize..14,
            n in 4usize..400,
            which in 0usize..3,
        ) {
            let p = 1 + p_raw % (k - 1);
            let scheme = match which {
                0 => Scheme::BlockRolling { k, p },
                1 => Scheme::Rolling { k, p },
                _ => Scheme::Window10Cumulative,
            };
            let Ok(folds) = make_folds(&ValidationPlan::new(scheme), n) else {
                return Ok(());
            };
            if which < 2 {
                prop_assert_eq!(folds.len(), k - p);
            }
            let mut prev_test_end = None;
            for f in &folds {
                let max_train = f.train.iter().map(|r| r.end - 1).max().unwrap();
                let min_test = f.test.iter().map(|r| r.start).min().unwrap();
                prop_assert!(max_train < min_test);
                if let Some(e) = prev_test_end {
                    prop_assert_eq!(f.test[0].start, e);
                }
                prev_test_end = Some(f.test[0].end);
            }
        }
    }
}
