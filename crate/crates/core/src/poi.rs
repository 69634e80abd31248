//! Staypoint detection and POI clustering.
//!
//! A staypoint is a maximal run of consecutive fixes that all lie within
//! `stay_radius` of the run's centroid and span at least
//! `stay_min_duration`. Staypoints of all users are then merged greedily
//! into POIs, processed in order of arrival time.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Coord, Dataset, PoiAlphabet, PoiId, PoiRecord, PoiSequence, Provenance, RawStats,
    RawTrajectory, RunPolicy, Timestamp, Visit,
};

/// Mean earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters.
pub fn haversine_m(a: Coord, b: Coord) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Arithmetic mean of lat/lon. Adequate for the sub-kilometre extents of
/// staypoints and POIs; not valid across the antimeridian.
pub fn mean_coord(coords: impl IntoIterator<Item = Coord>) -> Coord {
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for c in coords {
        lat += c.lat;
        lon += c.lon;
        n += 1;
    }
    let n = n.max(1) as f64;
    Coord {
        lat: lat / n,
        lon: lon / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    /// meters
    pub stay_radius: f64,
    /// seconds
    pub stay_min_duration: i64,
    /// meters
    pub cluster_merge_radius: f64,
    pub min_visits: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            stay_radius: 200.0,
            stay_min_duration: 20 * 60,
            cluster_merge_radius: 250.0,
            min_visits: 2,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.stay_radius) || !positive(self.cluster_merge_radius) {
            return Err(Error::invalid("radii must be positive"));
        }
        if self.stay_min_duration <= 0 || self.min_visits == 0 {
            return Err(Error::invalid(
                "stay_min_duration and min_visits must be positive",
            ));
        }
        if self.cluster_merge_radius < self.stay_radius {
            warn!(
                "cluster_merge_radius {} m is smaller than stay_radius {} m",
                self.cluster_merge_radius, self.stay_radius
            );
        }
        Ok(())
    }

    pub fn to_params_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("stay_radius_m".into(), self.stay_radius.to_string());
        m.insert("stay_min_duration_s".into(), self.stay_min_duration.to_string());
        m.insert(
            "cluster_merge_radius_m".into(),
            self.cluster_merge_radius.to_string(),
        );
        m.insert("min_visits".into(), self.min_visits.to_string());
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Staypoint {
    pub centroid: Coord,
    pub arrival: Timestamp,
    pub departure: Timestamp,
}

fn within_radius(points: &[Coord], radius: f64) -> Option<Coord> {
    let c = mean_coord(points.iter().copied());
    points
        .iter()
        .all(|&p| haversine_m(p, c) <= radius)
        .then_some(c)
}

/// Greedy left-to-right scan: from each start fix the window grows while
/// every fix stays within `stay_radius` of the window centroid. A window
/// lasting at least `stay_min_duration` becomes a staypoint and the scan
/// resumes after it; otherwise the scan advances by one fix.
pub fn detect_staypoints(traj: &RawTrajectory, p: &ExtractionParams) -> Vec<Staypoint> {
    let pts = traj.points();
    let coords: Vec<Coord> = pts.iter().map(|g| g.coord()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        let mut end = i + 1;
        let mut centroid = coords[i];
        while end < pts.len() {
            match within_radius(&coords[i..=end], p.stay_radius) {
                Some(c) => {
                    centroid = c;
                    end += 1;
                }
                None => break,
            }
        }
        let (arrival, departure) = (pts[i].t, pts[end - 1].t);
        if departure - arrival >= p.stay_min_duration {
            out.push(Staypoint {
                centroid,
                arrival,
                departure,
            });
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// POI alphabet plus, for every user and staypoint, the POI it joined
/// (`None` when its cluster was dropped by `min_visits`).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphabetAssignment {
    pub alphabet: PoiAlphabet,
    pub assignments: Vec<Vec<Option<PoiId>>>,
    /// Clusters formed before the `min_visits` filter.
    pub clusters_before_filter: usize,
}

struct Cluster {
    sum_lat: f64,
    sum_lon: f64,
    members: usize,
}

impl Cluster {
    fn centroid(&self) -> Coord {
        Coord {
            lat: self.sum_lat / self.members as f64,
            lon: self.sum_lon / self.members as f64,
        }
    }
}

/// Greedy agglomerative clustering of every user's staypoints.
///
/// Staypoints are visited in order of (arrival, user index, staypoint
/// index). Each joins the nearest existing cluster whose running centroid
/// is within `cluster_merge_radius` (ties: lowest cluster index), or opens
/// a new cluster. Clusters with fewer than `min_visits` members are then
/// dropped and the survivors numbered densely in creation order.
pub fn build_alphabet(staypoints: &[Vec<Staypoint>], p: &ExtractionParams) -> Result<AlphabetAssignment> {
    let mut order: Vec<(Timestamp, usize, usize)> = staypoints
        .iter()
        .enumerate()
        .flat_map(|(u, sps)| sps.iter().enumerate().map(move |(i, s)| (s.arrival, u, i)))
        .collect();
    if order.is_empty() {
        return Err(Error::invalid("no staypoints to cluster"));
    }
    order.sort_unstable();

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut raw_assign: Vec<Vec<usize>> = staypoints.iter().map(|s| vec![0; s.len()]).collect();
    for &(_, u, i) in &order {
        let c = staypoints[u][i].centroid;
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(k, cl)| (k, haversine_m(cl.centroid(), c)))
            .filter(|&(_, d)| d <= p.cluster_merge_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let k = match nearest {
            Some((k, _)) => {
                let cl = &mut clusters[k];
                cl.sum_lat += c.lat;
                cl.sum_lon += c.lon;
                cl.members += 1;
                k
            }
            None => {
                clusters.push(Cluster {
                    sum_lat: c.lat,
                    sum_lon: c.lon,
                    members: 1,
                });
                clusters.len() - 1
            }
        };
        raw_assign[u][i] = k;
    }

    let mut remap: Vec<Option<PoiId>> = vec![None; clusters.len()];
    let mut entries = Vec::new();
    for (k, cl) in clusters.iter().enumerate() {
        if cl.members >= p.min_visits {
            let id = entries.len() as PoiId;
            remap[k] = Some(id);
            let c = cl.centroid();
            entries.push(PoiRecord {
                poi_id: id,
                lat: c.lat,
                lon: c.lon,
                label: None,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid("no POIs survive min_visits"));
    }
    let assignments = raw_assign
        .into_iter()
        .map(|v| v.into_iter().map(|k| remap[k]).collect())
        .collect();
    Ok(AlphabetAssignment {
        alphabet: PoiAlphabet::new(entries)?,
        assignments,
        clusters_before_filter: clusters.len(),
    })
}

/// Orders a user's assigned staypoints by arrival, drops unassigned ones and
/// collapses self-transitions. Sequences shorter than two symbols are
/// returned as `Err(len)`; they cannot be used for prediction.
pub fn to_poi_sequence(
    user_id: &str,
    staypoints: &[Staypoint],
    assignment: &[Option<PoiId>],
    alphabet_len: usize,
) -> Result<std::result::Result<PoiSequence, usize>> {
    if staypoints.len() != assignment.len() {
        return Err(Error::invalid(format!(
            "assignment for {user_id} covers {} of {} staypoints",
            assignment.len(),
            staypoints.len()
        )));
    }
    let mut visits: Vec<Visit> = staypoints
        .iter()
        .zip(assignment)
        .filter_map(|(s, a)| a.map(|poi| Visit { poi, t: s.arrival }))
        .collect();
    visits.sort_by_key(|v| v.t);
    let seq = PoiSequence::new(user_id, visits, alphabet_len, RunPolicy::Collapse)?;
    if seq.len() < 2 {
        return Ok(Err(seq.len()));
    }
    Ok(Ok(seq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOutcome {
    pub dataset: Dataset,
    /// Users whose sequences collapsed below two symbols, with their length.
    pub excluded: Vec<(String, usize)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Sampling granularity of raw fixes: total count, median step length and
/// median sampling interval.
pub fn raw_stats(trajectories: &[RawTrajectory]) -> RawStats {
    let mut steps = Vec::new();
    let mut intervals = Vec::new();
    let mut fix_count = 0u64;
    for t in trajectories {
        fix_count += t.points().len() as u64;
        for w in t.points().windows(2) {
            steps.push(haversine_m(w[0].coord(), w[1].coord()));
            intervals.push((w[1].t - w[0].t) as f64);
        }
    }
    RawStats {
        fix_count,
        median_step_m: median(steps),
        median_interval_s: median(intervals),
    }
}

/// Full extraction: per-user staypoints (parallel across users), one global
/// clustering pass, then sequence building.
pub fn extract_dataset(
    name: &str,
    trajectories: &[RawTrajectory],
    p: &ExtractionParams,
    mut provenance: Provenance,
) -> Result<ExtractionOutcome> {
    p.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let staypoints: Vec<Vec<Staypoint>> = trajectories
        .par_iter()
        .map(|t| detect_staypoints(t, p))
        .collect();
    let assigned = build_alphabet(&staypoints, p)?;
    let mut sequences = Vec::new();
    let mut excluded = Vec::new();
    for ((t, sps), a) in trajectories.iter().zip(&staypoints).zip(&assigned.assignments) {
        match to_poi_sequence(t.user_id(), sps, a, assigned.alphabet.len())? {
            Ok(seq) => sequences.push(seq),
            Err(len) => {
                warn!(
                    "user {} excluded: POI sequence of length {len} is too short",
                    t.user_id()
                );
                excluded.push((t.user_id().to_string(), len));
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::invalid("no user has a POI sequence of length >= 2"));
    }
    provenance.params.extend(p.to_params_map());
    provenance.raw = Some(raw_stats(trajectories));
    let dataset = Dataset::new(name, assigned.alphabet, sequences, provenance)?;
    Ok(ExtractionOutcome { dataset, excluded })
}
