//! Dataset meta-attributes: entropy and predictability, mutual-information
//! decay, PMI, match structure and attribute correlations.

pub mod correlation;
pub mod entropy;
pub mod matches;
pub mod mi;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{concat_user_streams, Dataset, PoiSequence, SeparatorPolicy, SymbolStream};

pub use correlation::{attribute_correlations, CorrelationMatrix};
pub use entropy::{fano_predictability, lz_entropy_rate};
pub use matches::{match_structure, MatchRecord, DEFAULT_MATCH_LENGTHS};
pub use mi::{
    mi_decay_curve, mutual_information_at_distance, pmi, DecayConfig, MiDecay, PairTable, Pmi,
    PmiEntry, PowerLawFit,
};

pub const SECONDS_PER_MONTH: f64 = 365.25 / 12.0 * 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerUser,
    #[default]
    Dataset,
}

/// Which alphabet size enters the Fano bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanoAlphabet {
    /// Distinct POIs visited by the user.
    #[default]
    PerUser,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeParams {
    pub d_max: usize,
    pub decay: DecayConfig,
    pub fano_alphabet: FanoAlphabet,
    /// Per-user entropies averaged, or one estimate on the joined stream.
    pub entropy_scope: Scope,
    /// One curve on the separator-joined stream, or the mean of per-user curves.
    pub mi_scope: Scope,
    pub match_lengths: Vec<usize>,
    pub pmi_distance: usize,
    pub pmi_top: usize,
    pub pmi_min_count: u64,
}

impl Default for CharacterizeParams {
    fn default() -> Self {
        CharacterizeParams {
            d_max: 1000,
            decay: DecayConfig::default(),
            fano_alphabet: FanoAlphabet::PerUser,
            entropy_scope: Scope::PerUser,
            mi_scope: Scope::Dataset,
            match_lengths: DEFAULT_MATCH_LENGTHS.to_vec(),
            pmi_distance: 1,
            pmi_top: 20,
            pmi_min_count: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAttributes {
    pub user_id: String,
    pub symbol_count: usize,
    pub distinct_pois: usize,
    pub span_days: f64,
    pub entropy_bits: f64,
    pub predictability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                min: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
            };
        }
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        Summary {
            mean: v.iter().sum::<f64>() / n as f64,
            min: v[0],
            median,
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolCount {
    pub total: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Granularity {
    pub median_step_m: f64,
    pub median_interval_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiPoint {
    pub d: usize,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAttributeReport {
    pub dataset: String,
    pub n_users: usize,
    pub span_months: f64,
    pub raw_fix_count: Option<u64>,
    pub granularity: Option<Granularity>,
    pub symbol_count: SymbolCount,
    pub n_pois: usize,
    pub pois_per_user: f64,
    pub entropy_bits: Summary,
    pub predictability: Summary,
    pub mi_curve: Vec<MiPoint>,
    /// Largest `I(d)` over `d >= 2`.
    pub mi_max_beyond_bigram: Option<MiPoint>,
    pub ldd_exponent_alpha: Option<f64>,
    pub power_law: PowerLawFit,
    pub ldd_depth: Option<usize>,
    pub pmi_top: Vec<PmiEntry>,
    pub users: Vec<UserAttributes>,
    pub correlations: Option<CorrelationMatrix>,
    pub excluded_users: Vec<String>,
    pub params: CharacterizeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characterization {
    pub report: MetaAttributeReport,
    pub matches: Vec<MatchRecord>,
}

fn user_attributes(
    seq: &PoiSequence,
    alphabet_len: usize,
    fano: FanoAlphabet,
) -> Result<UserAttributes> {
    let symbols = seq.symbols();
    let mut distinct = symbols.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let entropy = lz_entropy_rate(&symbols)?;
    let n = match fano {
        FanoAlphabet::PerUser => distinct.len(),
        FanoAlphabet::Global => alphabet_len,
    };
    let v = seq.visits();
    Ok(UserAttributes {
        user_id: seq.user_id().to_string(),
        symbol_count: symbols.len(),
        distinct_pois: distinct.len(),
        span_days: (v[v.len() - 1].t - v[0].t) as f64 / 86_400.0,
        entropy_bits: entropy,
        predictability: fano_predictability(entropy, n)?,
    })
}

fn per_user_mean_curve(seqs: &[&PoiSequence], d_max: usize) -> Vec<(usize, f64)> {
    let streams: Vec<SymbolStream> = seqs.iter().map(|s| SymbolStream::plain(s.symbols())).collect();
    (1..=d_max)
        .into_par_iter()
        .filter_map(|d| {
            let vals: Vec<f64> = streams
                .iter()
                .filter_map(|s| mutual_information_at_distance(s, d).ok())
                .collect();
            (!vals.is_empty()).then(|| (d, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// Computes every meta-attribute of a dataset. Sequences shorter than two
/// symbols are skipped with a warning.
pub fn characterize(ds: &Dataset, params: &CharacterizeParams) -> Result<Characterization> {
    let usable: Vec<&PoiSequence> = ds.sequences().iter().filter(|s| s.len() >= 2).collect();
    let excluded_users: Vec<String> = ds
        .sequences()
        .iter()
        .filter(|s| s.len() < 2)
        .map(|s| s.user_id().to_string())
        .collect();
    for u in &excluded_users {
        warn!("user {u} skipped: fewer than 2 symbols");
    }
    if usable.is_empty() {
        return Err(Error::invalid("dataset has no sequence with at least 2 symbols"));
    }
    let alphabet_len = ds.alphabet().len();

    let users = usable
        .par_iter()
        .map(|s| user_attributes(s, alphabet_len, params.fano_alphabet))
        .collect::<Result<Vec<_>>>()?;

    let owned: Vec<PoiSequence> = usable.iter().map(|s| (*s).clone()).collect();
    let joined = concat_user_streams(&owned, alphabet_len, SeparatorPolicy::UniqueSeparator)?;

    let (entropy_bits, predictability) = match params.entropy_scope {
        Scope::PerUser => {
            let e: Vec<f64> = users.iter().map(|u| u.entropy_bits).collect();
            let p: Vec<f64> = users.iter().map(|u| u.predictability).collect();
            (Summary::of(&e), Summary::of(&p))
        }
        Scope::Dataset => {
            let plain = concat_user_streams(&owned, alphabet_len, SeparatorPolicy::None)?;
            let e = lz_entropy_rate(&plain.symbols)?;
            let p = fano_predictability(e, alphabet_len.max(2))?;
            (Summary::of(&[e]), Summary::of(&[p]))
        }
    };

    let raw_curve = match params.mi_scope {
        Scope::Dataset => {
            let limit = (joined.len() / 10).saturating_sub(1);
            let d_max = params.d_max.min(limit);
            if d_max < params.d_max {
                warn!("d_max reduced from {} to {d_max} for a stream of length {}", params.d_max, joined.len());
            }
            if d_max == 0 {
                Vec::new()
            } else {
                mi_decay_curve(&joined, d_max, &params.decay)?.curve
            }
        }
        Scope::PerUser => per_user_mean_curve(&usable, params.d_max),
    };
    // plug-in MI is nonnegative; rounding can leave tiny negatives
    let curve: Vec<(usize, f64)> = raw_curve.into_iter().map(|(d, i)| (d, i.max(0.0))).collect();
    let fit = mi::fit_power_law(&curve, params.decay.eps_fit);
    let ldd_depth = mi::depth_from_curve(&curve, params.decay.eps_depth);
    let mi_max_beyond_bigram = curve
        .iter()
        .filter(|p| p.0 >= 2)
        .fold(None::<(usize, f64)>, |best, &p| match best {
            Some(b) if b.1 >= p.1 => Some(b),
            _ => Some(p),
        })
        .map(|(d, bits)| MiPoint { d, bits });

    let pmi_top = PairTable::build(&joined, params.pmi_distance)
        .map(|t| mi::pmi_top(&t, params.pmi_top, params.pmi_min_count))
        .unwrap_or_default();

    let matches = match_structure(&joined, &params.match_lengths);

    let correlations = if users.len() >= 3 {
        let names: Vec<String> = [
            "symbol_count",
            "distinct_pois",
            "span_days",
            "entropy_bits",
            "predictability",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let columns = vec![
            users.iter().map(|u| u.symbol_count as f64).collect(),
            users.iter().map(|u| u.distinct_pois as f64).collect(),
            users.iter().map(|u| u.span_days).collect(),
            users.iter().map(|u| u.entropy_bits).collect(),
            users.iter().map(|u| u.predictability).collect(),
        ];
        Some(attribute_correlations(&names, &columns)?)
    } else {
        None
    };

    let t_min = usable.iter().map(|s| s.visits()[0].t).min().unwrap_or(0);
    let t_max = usable
        .iter()
        .map(|s| s.visits()[s.len() - 1].t)
        .max()
        .unwrap_or(0);
    let total: u64 = users.iter().map(|u| u.symbol_count as u64).sum();
    let raw = ds.provenance().raw.as_ref();

    let report = MetaAttributeReport {
        dataset: ds.name().to_string(),
        n_users: users.len(),
        span_months: (t_max - t_min) as f64 / SECONDS_PER_MONTH,
        raw_fix_count: raw.map(|r| r.fix_count),
        granularity: raw.map(|r| Granularity {
            median_step_m: r.median_step_m,
            median_interval_s: r.median_interval_s,
        }),
        symbol_count: SymbolCount {
            total,
            mean: total as f64 / users.len() as f64,
        },
        n_pois: alphabet_len,
        pois_per_user: users.iter().map(|u| u.distinct_pois as f64).sum::<f64>() / users.len() as f64,
        entropy_bits,
        predictability,
        mi_curve: curve.iter().map(|&(d, bits)| MiPoint { d, bits }).collect(),
        mi_max_beyond_bigram,
        ldd_exponent_alpha: fit.alpha(),
        power_law: fit,
        ldd_depth,
        pmi_top,
        users,
        correlations,
        excluded_users,
        params: params.clone(),
    };
    Ok(Characterization { report, matches })
}
