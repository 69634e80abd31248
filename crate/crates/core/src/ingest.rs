//! Parsers for raw trajectory exports and the canonical on-disk dataset.
//!
//! Canonical dataset directory:
//!
//! * `dataset.json`: `{schema_version, name, provenance}`
//! * `alphabet.json`: array of `{poi_id, lat, lon, label}`
//! * `sequences.jsonl`: one `{user_id, symbols: [[poi_id, t], ...]}` per line
//!
//! Raw trajectories produced by `ingest` live in `trajectories.jsonl`
//! (`{user_id, points: [[lat, lon, t], ...]}`) until POI extraction turns
//! them into a dataset.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Dataset, GeoPoint, PoiAlphabet, PoiRecord, PoiSequence, Provenance, RawTrajectory, RunPolicy,
    Timestamp, Visit,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const ALPHABET_FILE: &str = "alphabet.json";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const META_FILE: &str = "dataset.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    CsvGps,
    PltGeolifeLike,
    SymbolsJsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_gps" => Ok(Format::CsvGps),
            "plt_geolife_like" | "plt" => Ok(Format::PltGeolifeLike),
            "symbols_jsonl" => Ok(Format::SymbolsJsonl),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

impl Format {
    pub fn as_str(&self) -> &'static str {
        match self {
            Format::CsvGps => "csv_gps",
            Format::PltGeolifeLike => "plt_geolife_like",
            Format::SymbolsJsonl => "symbols_jsonl",
        }
    }
}

/// Column indices of the CSV fields we read; other columns are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user: usize,
    pub lat: usize,
    pub lon: usize,
    pub t: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            user: 0,
            lat: 1,
            lon: 2,
            t: 3,
        }
    }
}

impl std::str::FromStr for ColumnMap {
    type Err = Error;

    /// Parses `user=0,lat=1,lon=2,t=3`. All four names are required.
    fn from_str(s: &str) -> Result<Self> {
        let mut found: BTreeMap<&str, usize> = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad column spec {part:?}")))?;
            let idx = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad column index in {part:?}")))?;
            found.insert(k.trim(), idx);
        }
        let get = |k: &str| {
            found
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid(format!("column map does not cover {k:?}")))
        };
        Ok(ColumnMap {
            user: get("user")?,
            lat: get("lat")?,
            lon: get("lon")?,
            t: get("t")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimezonePolicy {
    #[default]
    AssumeUtc,
    /// Input timestamps are local time at this offset from UTC.
    OffsetSeconds(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Keep the first row (in file order) of each timestamp, report the rest.
    #[default]
    DropEqualTimestamp,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub format: Format,
    pub column_map: ColumnMap,
    pub timezone: TimezonePolicy,
    pub dedup: DedupPolicy,
    /// Skip the first CSV line.
    pub header: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            format: Format::CsvGps,
            column_map: ColumnMap::default(),
            timezone: TimezonePolicy::AssumeUtc,
            dedup: DedupPolicy::DropEqualTimestamp,
            header: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub trajectories: Vec<RawTrajectory>,
    pub rejects: Vec<Reject>,
    pub rows: usize,
}

impl ParseOutcome {
    pub fn point_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.points().len()).sum()
    }
}

struct Row {
    user: String,
    point: GeoPoint,
    path: PathBuf,
    line: usize,
}

/// Parses a raw GPS export into one trajectory per user.
///
/// Rows are grouped by user (users in order of first appearance) and sorted
/// by timestamp. Duplicate timestamps within a user are handled per
/// [`DedupPolicy`]; every input row is either a parsed point or a reject.
pub fn parse_raw(path: &Path, cfg: &IngestConfig) -> Result<ParseOutcome> {
    let rows = match cfg.format {
        Format::CsvGps => read_csv_rows(path, cfg)?,
        Format::PltGeolifeLike => read_plt_rows(path, cfg)?,
        Format::SymbolsJsonl => {
            return Err(Error::invalid(
                "symbols_jsonl carries POI symbols, not GPS fixes; use parse_symbols_jsonl",
            ))
        }
    };
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: empty file", path.display())));
    }
    let n_rows = rows.len();

    let mut order: Vec<String> = Vec::new();
    let mut by_user: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for row in rows {
        if !by_user.contains_key(&row.user) {
            order.push(row.user.clone());
        }
        by_user.entry(row.user.clone()).or_default().push(row);
    }

    let mut trajectories = Vec::with_capacity(order.len());
    let mut rejects = Vec::new();
    for user in order {
        let mut rows = by_user.remove(&user).unwrap_or_default();
        // stable: equal timestamps keep file order
        rows.sort_by_key(|r| r.point.t);
        let mut points: Vec<GeoPoint> = Vec::with_capacity(rows.len());
        for row in rows {
            if points.last().is_some_and(|p| p.t == row.point.t) {
                match cfg.dedup {
                    DedupPolicy::DropEqualTimestamp => rejects.push(Reject {
                        path: row.path,
                        line: row.line,
                        reason: format!("duplicate timestamp {} for user {user}", row.point.t),
                    }),
                    DedupPolicy::Error => {
                        return Err(Error::Parse {
                            path: row.path,
                            line: row.line,
                            msg: format!("duplicate timestamp {} for user {user}", row.point.t),
                        })
                    }
                }
                continue;
            }
            points.push(row.point);
        }
        trajectories.push(RawTrajectory::new(user, points)?);
    }
    Ok(ParseOutcome {
        trajectories,
        rejects,
        rows: n_rows,
    })
}

fn to_utc(t: Timestamp, tz: TimezonePolicy) -> Timestamp {
    match tz {
        TimezonePolicy::AssumeUtc => t,
        TimezonePolicy::OffsetSeconds(off) => t - off,
    }
}

fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(t) = raw.parse::<i64>() {
        return Some(t);
    }
    // fractional seconds are truncated toward negative infinity
    raw.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite())
        .map(|t| t.floor() as i64)
}

fn read_csv_rows(path: &Path, cfg: &IngestConfig) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(cfg.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let cols = cfg.column_map;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let field = |idx: usize, name: &str| {
            rec.get(idx)
                .ok_or_else(|| parse_err(format!("missing {name} column (index {idx})")))
        };
        let user = field(cols.user, "user")?.to_string();
        let lat: f64 = field(cols.lat, "lat")?
            .parse()
            .map_err(|_| parse_err("latitude is not a number".into()))?;
        let lon: f64 = field(cols.lon, "lon")?
            .parse()
            .map_err(|_| parse_err("longitude is not a number".into()))?;
        let t = parse_timestamp(field(cols.t, "t")?)
            .ok_or_else(|| parse_err("timestamp is not a number".into()))?;
        let point = GeoPoint::new(lat, lon, to_utc(t, cfg.timezone))
            .map_err(|e| parse_err(e.to_string()))?;
        rows.push(Row {
            user,
            point,
            path: path.to_path_buf(),
            line,
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Days between 1899-12-30 (the PLT day-count epoch) and 1970-01-01.
const PLT_EPOCH_OFFSET_DAYS: f64 = 25569.0;
const PLT_HEADER_LINES: usize = 6;

fn read_plt_rows(path: &Path, cfg: &IngestConfig) -> Result<Vec<Row>> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        walkdir::WalkDir::new(path)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("plt")))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    let mut rows = Vec::new();
    for file in files {
        let user = plt_user_id(&file);
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        for (i, raw) in text.lines().enumerate().skip(PLT_HEADER_LINES) {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: file.clone(),
                line,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields.len() < 5 {
                return Err(parse_err("expected at least 5 comma-separated fields"));
            }
            let lat: f64 = fields[0]
                .parse()
                .map_err(|_| parse_err("latitude is not a number"))?;
            let lon: f64 = fields[1]
                .parse()
                .map_err(|_| parse_err("longitude is not a number"))?;
            let days: f64 = fields[4]
                .parse()
                .map_err(|_| parse_err("day count is not a number"))?;
            let t = ((days - PLT_EPOCH_OFFSET_DAYS) * 86_400.0).round() as i64;
            let point = GeoPoint::new(lat, lon, to_utc(t, cfg.timezone))
                .map_err(|e| parse_err(&e.to_string()))?;
            rows.push(Row {
                user: user.clone(),
                point,
                path: file.clone(),
                line,
            });
        }
    }
    Ok(rows)
}

/// `<user>/Trajectory/<file>.plt` yields `<user>`; otherwise the file stem.
fn plt_user_id(file: &Path) -> String {
    let parent = file.parent();
    if let Some(p) = parent {
        if p.file_name().is_some_and(|n| n.eq_ignore_ascii_case("trajectory")) {
            if let Some(user) = p.parent().and_then(|u| u.file_name()) {
                return user.to_string_lossy().into_owned();
            }
        }
    }
    file.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    user_id: String,
    symbols: Vec<(u32, i64)>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    user_id: String,
    points: Vec<(f64, f64, i64)>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    name: String,
    provenance: Provenance,
}

/// Reads pre-symbolized check-in data (`sequences.jsonl` layout). The
/// alphabet is the dense range of ids seen, without coordinates.
pub fn parse_symbols_jsonl(path: &Path, name: &str) -> Result<Dataset> {
    let lines = read_sequence_lines(path)?;
    if lines.is_empty() {
        return Err(Error::invalid(format!("{}: empty file", path.display())));
    }
    let max_id = lines
        .iter()
        .flat_map(|l| l.symbols.iter().map(|s| s.0))
        .max()
        .unwrap_or(0);
    let alphabet = PoiAlphabet::new(
        (0..=max_id)
            .map(|poi_id| PoiRecord {
                poi_id,
                lat: 0.0,
                lon: 0.0,
                label: None,
            })
            .collect(),
    )?;
    let sequences = lines
        .into_iter()
        .map(|l| {
            let visits = l.symbols.iter().map(|&(poi, t)| Visit { poi, t }).collect();
            PoiSequence::new(l.user_id, visits, alphabet.len(), RunPolicy::Collapse)
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        source: path.display().to_string(),
        format: Format::SymbolsJsonl.as_str().to_string(),
        ..Default::default()
    };
    Dataset::new(name, alphabet, sequences, provenance)
}

fn read_sequence_lines(path: &Path) -> Result<Vec<SequenceLine>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialized bytes of the two canonical files, in a stable form.
pub fn canonical_bytes(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut alphabet = serde_json::to_vec_pretty(ds.alphabet().entries()).map_err(|e| {
        Error::Json {
            path: ALPHABET_FILE.into(),
            source: e,
        }
    })?;
    alphabet.push(b'\n');
    let mut sequences = Vec::new();
    for s in ds.sequences() {
        let line = SequenceLine {
            user_id: s.user_id().to_string(),
            symbols: s.visits().iter().map(|v| (v.poi, v.t)).collect(),
        };
        serde_json::to_writer(&mut sequences, &line).map_err(|e| Error::Json {
            path: SEQUENCES_FILE.into(),
            source: e,
        })?;
        sequences.push(b'\n');
    }
    Ok((alphabet, sequences))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (alphabet, sequences) = canonical_bytes(ds)?;
    write_file(&dir.join(ALPHABET_FILE), &alphabet)?;
    write_file(&dir.join(SEQUENCES_FILE), &sequences)?;
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        name: ds.name().to_string(),
        provenance: ds.provenance().clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Json {
        path: dir.join(META_FILE),
        source: e,
    })?;
    bytes.push(b'\n');
    write_file(&dir.join(META_FILE), &bytes)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let alphabet_path = dir.join(ALPHABET_FILE);
    if !alphabet_path.is_file() {
        return Err(Error::Missing(ALPHABET_FILE.into()));
    }
    let seq_path = dir.join(SEQUENCES_FILE);
    if !seq_path.is_file() {
        return Err(Error::Missing(SEQUENCES_FILE.into()));
    }
    let meta_path = dir.join(META_FILE);
    let (name, provenance) = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: meta_path.clone(),
            source: e,
        })?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: meta.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        (meta.name, meta.provenance)
    } else {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        (name, Provenance::default())
    };

    let text = fs::read_to_string(&alphabet_path).map_err(|e| Error::io(&alphabet_path, e))?;
    let entries: Vec<PoiRecord> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: alphabet_path.clone(),
        source: e,
    })?;
    let alphabet = PoiAlphabet::new(entries)?;
    let sequences = read_sequence_lines(&seq_path)?
        .into_iter()
        .map(|l| {
            let visits = l.symbols.iter().map(|&(poi, t)| Visit { poi, t }).collect();
            PoiSequence::new(l.user_id, visits, alphabet.len(), RunPolicy::Reject)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, alphabet, sequences, provenance)
}

pub fn save_trajectories(trajectories: &[RawTrajectory], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(TRAJECTORIES_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for t in trajectories {
        let line = TrajectoryLine {
            user_id: t.user_id().to_string(),
            points: t.points().iter().map(|p| (p.lat, p.lon, p.t)).collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn load_trajectories(dir: &Path) -> Result<Vec<RawTrajectory>> {
    let path = dir.join(TRAJECTORIES_FILE);
    if !path.is_file() {
        return Err(Error::Missing(TRAJECTORIES_FILE.into()));
    }
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            msg,
        };
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let points = parsed
            .points
            .iter()
            .map(|&(lat, lon, t)| GeoPoint::new(lat, lon, t))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(e.to_string()))?;
        out.push(RawTrajectory::new(parsed.user_id, points).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}
