//! Plug-in mutual information between symbols `d` positions apart, its decay
//! with distance, and pointwise mutual information.
//!
//! A pair `(i, i + d)` only counts when no separator lies anywhere in
//! `i..=i + d`, so joined multi-user streams never pair symbols of two
//! different users. Marginals come from the paired positions only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PoiId, SymbolStream};

/// Empirical joint and marginal counts of `(s_i, s_{i+d})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub distance: usize,
    pub n_pairs: u64,
    /// sorted by key
    pub joint: Vec<((PoiId, PoiId), u64)>,
    /// sorted by key
    pub left: Vec<(PoiId, u64)>,
    /// sorted by key
    pub right: Vec<(PoiId, u64)>,
}

fn plogp_sum(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    // H = log2 n - (1/n) sum c log2 c
    let s: f64 = counts.map(|c| c as f64 * (c as f64).log2()).sum();
    n.log2() - s / n
}

fn lookup<K: Ord + Copy>(v: &[(K, u64)], k: K) -> u64 {
    v.binary_search_by_key(&k, |e| e.0).map_or(0, |i| v[i].1)
}

impl PairTable {
    pub fn build(stream: &SymbolStream, d: usize) -> Result<PairTable> {
        if d == 0 {
            return Err(Error::invalid("distance must be at least 1"));
        }
        let syms = &stream.symbols;
        if syms.len() <= d {
            return Err(Error::invalid(format!(
                "sequence of length {} too short for distance {d}",
                syms.len()
            )));
        }
        let seg = stream.separator.map(|_| stream.segments());
        let valid = |i: usize| match &seg {
            None => true,
            Some(seg) => seg[i] != u32::MAX && seg[i] == seg[i + d],
        };

        let max_sym = syms.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut left_dense = vec![0u64; max_sym];
        let mut right_dense = vec![0u64; max_sym];
        let mut n_pairs = 0u64;

        let joint = if max_sym * max_sym <= 1 << 22 {
            let mut dense = vec![0u64; max_sym * max_sym];
            for i in 0..syms.len() - d {
                if !valid(i) {
                    continue;
                }
                let (x, y) = (syms[i] as usize, syms[i + d] as usize);
                dense[x * max_sym + y] += 1;
                left_dense[x] += 1;
                right_dense[y] += 1;
                n_pairs += 1;
            }
            dense
                .iter()
                .enumerate()
                .filter(|e| *e.1 > 0)
                .map(|(k, &c)| (((k / max_sym) as PoiId, (k % max_sym) as PoiId), c))
                .collect()
        } else {
            let mut keys: Vec<u64> = Vec::with_capacity(syms.len() - d);
            for i in 0..syms.len() - d {
                if !valid(i) {
                    continue;
                }
                let (x, y) = (syms[i], syms[i + d]);
                keys.push(((x as u64) << 32) | y as u64);
                left_dense[x as usize] += 1;
                right_dense[y as usize] += 1;
                n_pairs += 1;
            }
            keys.sort_unstable();
            let mut joint: Vec<((PoiId, PoiId), u64)> = Vec::new();
            for k in keys {
                let pair = ((k >> 32) as PoiId, k as u32);
                match joint.last_mut() {
                    Some((p, c)) if *p == pair => *c += 1,
                    _ => joint.push((pair, 1)),
                }
            }
            joint
        };
        if n_pairs < 2 {
            return Err(Error::invalid(format!(
                "fewer than 2 symbol pairs at distance {d}"
            )));
        }
        let compress = |v: Vec<u64>| -> Vec<(PoiId, u64)> {
            v.into_iter()
                .enumerate()
                .filter(|e| e.1 > 0)
                .map(|(k, c)| (k as PoiId, c))
                .collect()
        };
        Ok(PairTable {
            distance: d,
            n_pairs,
            joint,
            left: compress(left_dense),
            right: compress(right_dense),
        })
    }

    /// `sum p(x,y) log2(p(x,y) / (p(x) p(y)))`.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n_pairs as f64;
        self.joint
            .iter()
            .map(|&((x, y), c)| {
                let pxy = c as f64 / n;
                let px = lookup(&self.left, x) as f64 / n;
                let py = lookup(&self.right, y) as f64 / n;
                pxy * (pxy / (px * py)).log2()
            })
            .sum()
    }

    /// `(H(X), H(Y), H(X,Y))` in bits on the same tables.
    pub fn entropies(&self) -> (f64, f64, f64) {
        let n = self.n_pairs as f64;
        (
            plogp_sum(self.left.iter().map(|e| e.1), n),
            plogp_sum(self.right.iter().map(|e| e.1), n),
            plogp_sum(self.joint.iter().map(|e| e.1), n),
        )
    }

    pub fn joint_count(&self, a: PoiId, b: PoiId) -> u64 {
        lookup(&self.joint, (a, b))
    }

    pub fn left_count(&self, a: PoiId) -> u64 {
        lookup(&self.left, a)
    }

    pub fn right_count(&self, b: PoiId) -> u64 {
        lookup(&self.right, b)
    }
}

pub fn mutual_information_at_distance(stream: &SymbolStream, d: usize) -> Result<f64> {
    Ok(PairTable::build(stream, d)?.mutual_information())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    /// Points with `I(d)` at or below this are left out of the power-law fit.
    pub eps_fit: f64,
    /// Dependence depth threshold.
    pub eps_depth: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            eps_fit: 1e-3,
            eps_depth: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PowerLawFit {
    /// `I(d) ~ C d^-alpha`
    Fitted {
        alpha: f64,
        log2_c: f64,
        /// root mean square residual in log2 space
        rms_residual: f64,
        n_points: usize,
    },
    NoMeasurableDependence,
}

impl PowerLawFit {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            PowerLawFit::Fitted { alpha, .. } => Some(*alpha),
            PowerLawFit::NoMeasurableDependence => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiDecay {
    pub curve: Vec<(usize, f64)>,
    pub fit: PowerLawFit,
    /// Largest `d` with `I(d) >= eps_depth`.
    pub ldd_depth: Option<usize>,
}

/// Least squares of `log2 I` on `log2 d` over points with `I > eps_fit`.
/// Needs two distinct distances.
pub fn fit_power_law(curve: &[(usize, f64)], eps_fit: f64) -> PowerLawFit {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.1 > eps_fit && p.0 > 0)
        .map(|&(d, i)| ((d as f64).log2(), i.log2()))
        .collect();
    if pts.len() < 2 {
        return PowerLawFit::NoMeasurableDependence;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    PowerLawFit::Fitted {
        alpha: -slope,
        log2_c: intercept,
        rms_residual: (sse / n).sqrt(),
        n_points: pts.len(),
    }
}

pub fn depth_from_curve(curve: &[(usize, f64)], eps_depth: f64) -> Option<usize> {
    curve
        .iter()
        .filter(|p| p.1 >= eps_depth)
        .map(|p| p.0)
        .max()
}

/// `I(d)` for `d = 1..=d_max`, the power-law fit and the dependence depth.
/// Requires `d_max < len / 10` so every distance has enough pairs.
pub fn mi_decay_curve(stream: &SymbolStream, d_max: usize, cfg: &DecayConfig) -> Result<MiDecay> {
    if d_max == 0 {
        return Err(Error::invalid("d_max must be at least 1"));
    }
    if d_max >= stream.len() / 10 {
        return Err(Error::invalid(format!(
            "d_max {d_max} must be below a tenth of the sequence length {}",
            stream.len()
        )));
    }
    let curve = (1..=d_max)
        .into_par_iter()
        .map(|d| mutual_information_at_distance(stream, d).map(|i| (d, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MiDecay {
        fit: fit_power_law(&curve, cfg.eps_fit),
        ldd_depth: depth_from_curve(&curve, cfg.eps_depth),
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "bits", rename_all = "snake_case")]
pub enum Pmi {
    Bits(f64),
    /// `C(a,b) = 0`: the log of zero.
    NeverCoOccurs,
}

/// `log2(N C(a,b) / (C(a) C(b)))` computed from exact integer products.
pub fn pmi_from_counts(n_pairs: u64, c_a: u64, c_b: u64, c_ab: u64) -> Result<Pmi> {
    if c_a == 0 || c_b == 0 {
        return Err(Error::invalid("PMI needs C(a) > 0 and C(b) > 0"));
    }
    if c_ab == 0 {
        return Ok(Pmi::NeverCoOccurs);
    }
    let num = n_pairs as u128 * c_ab as u128;
    let den = c_a as u128 * c_b as u128;
    if num == den {
        return Ok(Pmi::Bits(0.0));
    }
    Ok(Pmi::Bits((num as f64 / den as f64).log2()))
}

/// PMI of `a` followed by `b` at distance `d`. `alphabet_len` bounds valid ids.
pub fn pmi(table: &PairTable, a: PoiId, b: PoiId, alphabet_len: usize) -> Result<Pmi> {
    for id in [a, b] {
        if id as usize >= alphabet_len {
            return Err(Error::invalid(format!("unknown poi id {id}")));
        }
    }
    pmi_from_counts(
        table.n_pairs,
        table.left_count(a),
        table.right_count(b),
        table.joint_count(a, b),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiEntry {
    pub a: PoiId,
    pub b: PoiId,
    pub d: usize,
    pub count: u64,
    pub pmi_bits: f64,
}

/// Highest-PMI pairs with at least `min_count` co-occurrences. Ties are
/// ordered by `(a, b)`.
pub fn pmi_top(table: &PairTable, top: usize, min_count: u64) -> Vec<PmiEntry> {
    let mut out: Vec<PmiEntry> = table
        .joint
        .iter()
        .filter(|e| e.1 >= min_count)
        .filter_map(|&((a, b), c)| {
            match pmi_from_counts(table.n_pairs, table.left_count(a), table.right_count(b), c) {
                Ok(Pmi::Bits(bits)) => Some(PmiEntry {
                    a,
                    b,
                    d: table.distance,
                    count: c,
                    pmi_bits: bits,
                }),
                _ => None,
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.pmi_bits
            .total_cmp(&x.pmi_bits)
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    out.truncate(top);
    out
}
