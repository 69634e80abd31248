//! Domain types shared by every stage of the pipeline.
//!
//! POIs are identified by dense integer ids (`0..alphabet.len()`), so all
//! downstream counting can index plain arrays. Every type here is immutable
//! once constructed; constructors enforce the invariants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense POI identifier.
pub type PoiId = u32;

/// UTC seconds.
pub type Timestamp = i64;

/// A WGS-84 coordinate without time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(Error::invalid(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Coord { lat, lon })
    }
}

/// A single GPS fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub t: Timestamp,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, t: Timestamp) -> Result<Self> {
        let c = Coord::new(lat, lon)?;
        Ok(GeoPoint {
            lat: c.lat,
            lon: c.lon,
            t,
        })
    }

    pub fn coord(&self) -> Coord {
        Coord {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// Time-ordered GPS fixes of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    user_id: String,
    points: Vec<GeoPoint>,
}

impl RawTrajectory {
    /// Points must be nonempty with strictly ascending timestamps.
    pub fn new(user_id: impl Into<String>, points: Vec<GeoPoint>) -> Result<Self> {
        let user_id = user_id.into();
        if points.is_empty() {
            return Err(Error::invalid(format!("trajectory of {user_id} is empty")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "trajectory of {user_id} not strictly time-ordered at t={}",
                w[1].t
            )));
        }
        Ok(RawTrajectory { user_id, points })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub poi_id: PoiId,
    pub lat: f64,
    pub lon: f64,
    pub label: Option<String>,
}

impl PoiRecord {
    pub fn centroid(&self) -> Coord {
        Coord {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// The POI universe of a dataset. Ids are dense from zero and equal to the
/// entry's position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoiAlphabet {
    entries: Vec<PoiRecord>,
}

impl PoiAlphabet {
    pub fn new(entries: Vec<PoiRecord>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.poi_id as usize != i {
                return Err(Error::invalid(format!(
                    "poi ids must be dense from 0: entry {i} has id {}",
                    e.poi_id
                )));
            }
            Coord::new(e.lat, e.lon)?;
        }
        Ok(PoiAlphabet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoiRecord] {
        &self.entries
    }

    pub fn contains(&self, id: PoiId) -> bool {
        (id as usize) < self.entries.len()
    }

    /// The reserved separator id: one past the last POI.
    pub fn separator(&self) -> PoiId {
        self.entries.len() as PoiId
    }
}

/// One visit in a POI sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub poi: PoiId,
    pub t: Timestamp,
}

/// What a sequence constructor does with consecutive repeats of one POI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunPolicy {
    /// Keep the first visit of each run.
    #[default]
    Collapse,
    Reject,
}

/// Time-ordered POI visits of one user with self-transitions removed.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiSequence {
    user_id: String,
    visits: Vec<Visit>,
}

impl PoiSequence {
    pub fn new(
        user_id: impl Into<String>,
        visits: Vec<Visit>,
        alphabet_len: usize,
        runs: RunPolicy,
    ) -> Result<Self> {
        let user_id = user_id.into();
        if let Some(v) = visits.iter().find(|v| v.poi as usize >= alphabet_len) {
            return Err(Error::invalid(format!(
                "sequence of {user_id} references unknown poi {}",
                v.poi
            )));
        }
        if let Some(w) = visits.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "sequence of {user_id} not strictly time-ordered at t={}",
                w[1].t
            )));
        }
        let has_runs = visits.windows(2).any(|w| w[0].poi == w[1].poi);
        let visits = match (has_runs, runs) {
            (false, _) => visits,
            (true, RunPolicy::Reject) => {
                return Err(Error::invalid(format!(
                    "sequence of {user_id} contains self-transitions"
                )))
            }
            (true, RunPolicy::Collapse) => collapse_runs(visits),
        };
        Ok(PoiSequence { user_id, visits })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn visits(&self) -> &[Visit] {
        &self.visits
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn symbols(&self) -> Vec<PoiId> {
        self.visits.iter().map(|v| v.poi).collect()
    }
}

/// Drops every visit that repeats the POI of the one before it.
pub fn collapse_runs(visits: Vec<Visit>) -> Vec<Visit> {
    let mut out: Vec<Visit> = Vec::with_capacity(visits.len());
    for v in visits {
        if out.last().map(|l| l.poi) != Some(v.poi) {
            out.push(v);
        }
    }
    out
}

/// Summary statistics of the raw fixes a dataset was extracted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStats {
    pub fix_count: u64,
    pub median_step_m: f64,
    pub median_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub format: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub raw: Option<RawStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    alphabet: PoiAlphabet,
    sequences: Vec<PoiSequence>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        alphabet: PoiAlphabet,
        sequences: Vec<PoiSequence>,
        provenance: Provenance,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("dataset name is empty"));
        }
        for s in &sequences {
            if let Some(v) = s.visits().iter().find(|v| !alphabet.contains(v.poi)) {
                return Err(Error::invalid(format!(
                    "sequence of {} references poi {} outside the alphabet",
                    s.user_id(),
                    v.poi
                )));
            }
        }
        Ok(Dataset {
            name,
            alphabet,
            sequences,
            provenance,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabet(&self) -> &PoiAlphabet {
        &self.alphabet
    }

    pub fn sequences(&self) -> &[PoiSequence] {
        &self.sequences
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeparatorPolicy {
    None,
    #[default]
    UniqueSeparator,
}

/// A flat symbol stream, optionally carrying a reserved separator symbol
/// that analyses must never pair across.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolStream {
    pub symbols: Vec<PoiId>,
    pub separator: Option<PoiId>,
}

impl SymbolStream {
    pub fn plain(symbols: Vec<PoiId>) -> Self {
        SymbolStream {
            symbols,
            separator: None,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_separator(&self, s: PoiId) -> bool {
        self.separator == Some(s)
    }

    /// Segment index for every position; separator positions get `u32::MAX`.
    pub(crate) fn segments(&self) -> Vec<u32> {
        let mut seg = 0u32;
        self.symbols
            .iter()
            .map(|&s| {
                if self.is_separator(s) {
                    seg += 1;
                    u32::MAX
                } else {
                    seg
                }
            })
            .collect()
    }
}

impl From<Vec<PoiId>> for SymbolStream {
    fn from(symbols: Vec<PoiId>) -> Self {
        SymbolStream::plain(symbols)
    }
}

/// Joins the users' symbol streams in order. With
/// [`SeparatorPolicy::UniqueSeparator`] the id `alphabet_len` is placed
/// between consecutive users.
pub fn concat_user_streams(
    sequences: &[PoiSequence],
    alphabet_len: usize,
    policy: SeparatorPolicy,
) -> Result<SymbolStream> {
    if sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sep = alphabet_len as PoiId;
    let total: usize = sequences.iter().map(|s| s.len() + 1).sum();
    let mut symbols = Vec::with_capacity(total);
    for (i, s) in sequences.iter().enumerate() {
        if i > 0 && policy == SeparatorPolicy::UniqueSeparator {
            symbols.push(sep);
        }
        symbols.extend(s.visits().iter().map(|v| v.poi));
    }
    let separator = match policy {
        SeparatorPolicy::UniqueSeparator if sequences.len() > 1 => Some(sep),
        _ => None,
    };
    Ok(SymbolStream { symbols, separator })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(user: &str, pois: &[PoiId]) -> PoiSequence {
        let visits = pois
            .iter()
            .enumerate()
            .map(|(i, &poi)| Visit {
                poi,
                t: i as i64 * 10,
            })
            .collect();
        PoiSequence::new(user, visits, 8, RunPolicy::Collapse).unwrap()
    }

    #[test]
    fn concat_with_separator() {
        let s = concat_user_streams(
            &[seq("a", &[0, 1]), seq("b", &[2])],
            3,
            SeparatorPolicy::UniqueSeparator,
        )
        .unwrap();
        assert_eq!(s.symbols, vec![0, 1, 3, 2]);
        assert_eq!(s.separator, Some(3));
    }

    #[test]
    fn concat_without_separator() {
        let s = concat_user_streams(&[seq("a", &[0, 1]), seq("b", &[2])], 3, SeparatorPolicy::None)
            .unwrap();
        assert_eq!(s.symbols, vec![0, 1, 2]);
        assert_eq!(s.separator, None);
    }

    #[test]
    fn concat_single_user_is_identity() {
        for policy in [SeparatorPolicy::None, SeparatorPolicy::UniqueSeparator] {
            let s = concat_user_streams(&[seq("a", &[0, 1, 0])], 3, policy).unwrap();
            assert_eq!(s.symbols, vec![0, 1, 0]);
        }
    }

    #[test]
    fn concat_empty_is_error() {
        let err = concat_user_streams(&[], 3, SeparatorPolicy::None).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn trajectory_rejects_timestamp_ties() {
        let p = GeoPoint::new(1.0, 1.0, 5).unwrap();
        assert!(RawTrajectory::new("u", vec![p, p]).is_err());
        assert!(RawTrajectory::new("u", vec![]).is_err());
    }

    #[test]
    fn coordinate_ranges() {
        assert!(GeoPoint::new(95.0, 0.0, 0).is_err());
        assert!(GeoPoint::new(0.0, -181.0, 0).is_err());
        assert!(GeoPoint::new(-90.0, 180.0, 0).is_ok());
    }

    #[test]
    fn alphabet_ids_must_be_dense() {
        let rec = |id| PoiRecord {
            poi_id: id,
            lat: 0.0,
            lon: 0.0,
            label: None,
        };
        assert!(PoiAlphabet::new(vec![rec(0), rec(1)]).is_ok());
        assert!(PoiAlphabet::new(vec![rec(0), rec(2)]).is_err());
    }

    proptest! {
        #[test]
        fn runs_are_collapsed_or_rejected(pois in proptest::collection::vec(0u32..3, 1..40)) {
            let visits: Vec<Visit> = pois
                .iter()
                .enumerate()
                .map(|(i, &poi)| Visit { poi, t: i as i64 })
                .collect();
            let has_runs = pois.windows(2).any(|w| w[0] == w[1]);

            let collapsed = PoiSequence::new("u", visits.clone(), 3, RunPolicy::Collapse).unwrap();
            prop_assert!(collapsed.visits().windows(2).all(|w| w[0].poi != w[1].poi));
            // first visit of every run survives with its own timestamp
            let mut expected = pois.clone();
            expected.dedup();
            prop_assert_eq!(collapsed.symbols(), expected);

            let rejected = PoiSequence::new("u", visits, 3, RunPolicy::Reject);
            prop_assert_eq!(rejected.is_err(), has_runs);
        }
    }
}
