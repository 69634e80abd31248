//! Artifact plumbing shared by the command-line front end: output writers,
//! plot-ready CSVs, run manifests and the bundled report.
//!
//! Everything here is deterministic for fixed inputs except the manifest's
//! wall time, so manifests are kept out of byte-identity comparisons.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::canonical_bytes;
use crate::meta::{Characterization, CorrelationMatrix, Granularity, MatchRecord, MetaAttributeReport};
use crate::model::Dataset;
use crate::selector::{Recommendation, Verdict};
use crate::synthgen::SynthOutput;
use crate::validation::{CompressionEntry, Evaluation, SensitivityTable};

pub const SUMMARY_SCHEMA: &str = include_str!("../schemas/summary.schema.json");
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");
pub const SUMMARY_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the dataset's canonical serialization.
pub fn dataset_hash(ds: &Dataset) -> Result<String> {
    let (alphabet, sequences) = canonical_bytes(ds)?;
    let mut h = Sha256::new();
    h.update(ds.name().as_bytes());
    h.update([0]);
    h.update(&alphabet);
    h.update(&sequences);
    Ok(hex::encode(h.finalize()))
}

/// Hash of a configuration value's compact JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Json {
        path: "<config>".into(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

pub fn to_json_bytes<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value, path)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::Missing(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(
        command_line: Vec<String>,
        config_hash: String,
        dataset_hash: Option<String>,
        started: Instant,
        outputs: Vec<PathBuf>,
    ) -> Self {
        RunManifest {
            command_line,
            config_hash,
            dataset_hash,
            tool_version: TOOL_VERSION.to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs,
        }
    }

    /// `<dir>/manifest.json` for an existing directory, `<file>.manifest.json`
    /// otherwise. Call after the outputs are written.
    pub fn path_for(out: &Path) -> PathBuf {
        if out.is_dir() {
            out.join("manifest.json")
        } else {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path_for(out);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn mi_curve_csv(report: &MetaAttributeReport) -> String {
    let mut s = String::from("d,I_bits\n");
    for p in &report.mi_curve {
        let _ = writeln!(s, "{},{}", p.d, p.bits);
    }
    s
}

/// Records without an earlier occurrence leave `log10_delta` empty.
pub fn match_structure_csv(matches: &[MatchRecord]) -> String {
    let mut s = String::from("pos,L,log10_delta\n");
    for m in matches {
        match m.log10_delta() {
            Some(x) => {
                let _ = writeln!(s, "{},{},{}", m.pos, m.len, x);
            }
            None => {
                let _ = writeln!(s, "{},{},", m.pos, m.len);
            }
        }
    }
    s
}

/// Header-only when there are too few users for correlations.
pub fn corr_matrix_csv(m: Option<&CorrelationMatrix>) -> String {
    let Some(m) = m else {
        return "attribute\n".to_string();
    };
    let mut s = String::from("attribute");
    for a in &m.attributes {
        s.push(',');
        s.push_str(a);
    }
    s.push('\n');
    for (a, row) in m.attributes.iter().zip(&m.matrix) {
        s.push_str(a);
        for x in row {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

/// Per-fold mean accuracy, one row per model and fold.
pub fn fold_accuracy_csv(evals: &[Evaluation]) -> String {
    let mut s = String::from("model,scheme,fold,n_users,accuracy,bits_per_symbol\n");
    for e in evals {
        for f in &e.fold_summaries {
            let bits = f.bits_per_symbol.map_or("n/a".to_string(), |b| b.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{}", e.model, e.scheme, f.fold, f.n_users, f.accuracy, bits);
        }
    }
    s
}

pub fn compression_csv(entries: &[CompressionEntry]) -> String {
    let mut s = String::from("model,bits_per_symbol,accuracy\n");
    for c in entries {
        let bits = c.bits_per_symbol.map_or("n/a".to_string(), |b| b.to_string());
        let _ = writeln!(s, "{},{},{}", c.model, bits, c.accuracy);
    }
    s
}

/// `report.json` at `path`, plot CSVs beside it. Returns the written paths.
pub fn write_characterization(c: &Characterization, path: &Path) -> Result<Vec<PathBuf>> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let files = [
        (dir.join("mi_curve.csv"), mi_curve_csv(&c.report)),
        (dir.join("match_structure.csv"), match_structure_csv(&c.matches)),
        (dir.join("corr_matrix.csv"), corr_matrix_csv(c.report.correlations.as_ref())),
    ];
    write_json(path, &c.report)?;
    let mut out = vec![path.to_path_buf()];
    for (p, body) in files {
        write_bytes(&p, body.as_bytes())?;
        out.push(p);
    }
    Ok(out)
}

/// The dataset files plus a `ground_truth.json` sidecar.
pub fn write_synth(out: &SynthOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    crate::ingest::save_dataset(&out.dataset, dir)?;
    let truth = dir.join("ground_truth.json");
    write_json(&truth, &out.ground_truth)?;
    Ok(vec![dir.to_path_buf(), truth])
}

/// Fold CSV at `path` and the full evaluation as JSON with the same stem.
pub fn write_evaluation(e: &Evaluation, path: &Path) -> Result<Vec<PathBuf>> {
    let json = path.with_extension("json");
    write_bytes(path, crate::validation::folds_csv(e).as_bytes())?;
    write_json(&json, e)?;
    Ok(vec![path.to_path_buf(), json])
}

pub fn write_sensitivity(t: &SensitivityTable, path: &Path) -> Result<Vec<PathBuf>> {
    let json = path.with_extension("json");
    write_bytes(path, t.to_csv().as_bytes())?;
    write_json(&json, t)?;
    Ok(vec![path.to_path_buf(), json])
}

/// One row of the descriptive-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub dataset: String,
    pub n_users: usize,
    pub months: f64,
    /// Raw fixes when known, otherwise symbols.
    pub trajectory_length: u64,
    pub trajectory_length_unit: String,
    pub pois: usize,
    pub granularity: Option<Granularity>,
    pub entropy_bits: f64,
    pub predictability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSection {
    pub pois_per_user: f64,
    pub avg_trajectory_length: f64,
    pub mi_max_beyond_bigram_bits: Option<f64>,
    pub mi_max_beyond_bigram_d: Option<usize>,
    pub ldd_exponent_alpha: Option<f64>,
    pub ldd_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: String,
    pub scheme: String,
    pub leaky: bool,
    pub accuracy: f64,
    pub accuracy_weighted: f64,
    pub bits_per_symbol: Option<f64>,
    pub n_predictions: u64,
    pub fold_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AccuracySection {
    Absent,
    Present { evaluations: Vec<EvaluationSummary> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSummary {
    pub verdict: Verdict,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub summary_version: u32,
    pub dataset_hash: String,
    pub descriptive: DescriptiveRow,
    pub meta: MetaSection,
    pub accuracy: AccuracySection,
    pub sensitivity: Option<SensitivityTable>,
    pub recommendation: Option<RecommendationSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub characterization: Option<MetaAttributeReport>,
    pub evaluations: Vec<Evaluation>,
    pub sensitivity: Option<SensitivityTable>,
    pub recommendation: Option<Recommendation>,
}

pub fn build_summary(ds: &Dataset, inputs: &ReportInputs) -> Result<ReportSummary> {
    let r = inputs
        .characterization
        .as_ref()
        .ok_or_else(|| Error::Missing("report inputs: characterization report".into()))?;
    if r.dataset != ds.name() {
        return Err(Error::invalid(format!(
            "characterization is for dataset {:?}, not {:?}",
            r.dataset,
            ds.name()
        )));
    }
    for e in &inputs.evaluations {
        if e.dataset != ds.name() {
            return Err(Error::invalid(format!(
                "evaluation of {} is for dataset {:?}, not {:?}",
                e.model,
                e.dataset,
                ds.name()
            )));
        }
    }
    let (trajectory_length, unit) = match r.raw_fix_count {
        Some(n) => (n, "fixes"),
        None => (r.symbol_count.total, "symbols"),
    };
    let accuracy = if inputs.evaluations.is_empty() {
        AccuracySection::Absent
    } else {
        AccuracySection::Present {
            evaluations: inputs
                .evaluations
                .iter()
                .map(|e| EvaluationSummary {
                    model: e.model.clone(),
                    scheme: e.scheme.clone(),
                    leaky: e.leaky,
                    accuracy: e.accuracy,
                    accuracy_weighted: e.accuracy_weighted,
                    bits_per_symbol: e.bits_per_symbol_weighted,
                    n_predictions: e.n_predictions,
                    fold_accuracy: e.fold_summaries.iter().map(|f| f.accuracy).collect(),
                })
                .collect(),
        }
    };
    Ok(ReportSummary {
        summary_version: SUMMARY_VERSION,
        dataset_hash: dataset_hash(ds)?,
        descriptive: DescriptiveRow {
            dataset: r.dataset.clone(),
            n_users: r.n_users,
            months: r.span_months,
            trajectory_length,
            trajectory_length_unit: unit.to_string(),
            pois: r.n_pois,
            granularity: r.granularity,
            entropy_bits: r.entropy_bits.mean,
            predictability: r.predictability.mean,
        },
        meta: MetaSection {
            pois_per_user: r.pois_per_user,
            avg_trajectory_length: r.symbol_count.mean,
            mi_max_beyond_bigram_bits: r.mi_max_beyond_bigram.map(|m| m.bits),
            mi_max_beyond_bigram_d: r.mi_max_beyond_bigram.map(|m| m.d),
            ldd_exponent_alpha: r.ldd_exponent_alpha,
            ldd_depth: r.ldd_depth,
        },
        accuracy,
        sensitivity: inputs.sensitivity.clone(),
        recommendation: inputs.recommendation.as_ref().map(|r| RecommendationSummary {
            verdict: r.verdict,
            rule: r.rule.clone(),
        }),
    })
}

/// Plain-text table: descriptive statistics, then accuracy.
pub fn render_table(s: &ReportSummary) -> String {
    let d = &s.descriptive;
    let granularity = d.granularity.map_or("n/a".to_string(), |g| {
        format!("{:.0} m / {:.0} s", g.median_step_m, g.median_interval_s)
    });
    let length = format!("{} {}", d.trajectory_length, d.trajectory_length_unit);
    let header = [
        "dataset",
        "#users",
        "#months",
        "traj. length",
        "POIs",
        "granularity",
        "entropy",
        "predictability",
    ];
    let row = [
        d.dataset.clone(),
        d.n_users.to_string(),
        format!("{:.1}", d.months),
        length,
        d.pois.to_string(),
        granularity,
        format!("{:.2}", d.entropy_bits),
        format!("{:.4}", d.predictability),
    ];
    let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header.map(String::from)));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    out.push_str(&line(&row));
    out.push_str("\n\n");
    match &s.accuracy {
        AccuracySection::Absent => out.push_str("accuracy: absent (no validation results)\n"),
        AccuracySection::Present { evaluations } => {
            out.push_str("accuracy:\n");
            for e in evaluations {
                let bits = e.bits_per_symbol.map_or("n/a".to_string(), |b| format!("{b:.4}"));
                let _ = writeln!(
                    out,
                    "  {:<20} {:<28} acc {:.4}  bits/symbol {}{}",
                    e.model,
                    e.scheme,
                    e.accuracy,
                    bits,
                    if e.leaky { "  [leaky]" } else { "" }
                );
            }
        }
    }
    if let Some(r) = &s.recommendation {
        let _ = writeln!(out, "\nrecommendation: {} (rule {})", r.verdict, r.rule);
    }
    out
}

/// Writes the bundle into `dir`. Returns the written paths.
pub fn write_report(ds: &Dataset, inputs: &ReportInputs, dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = build_summary(ds, inputs)?;
    let report = inputs.characterization.as_ref().expect("checked by build_summary");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (dir.join("summary.json"), to_json_bytes(&summary, &dir.join("summary.json"))?),
        (dir.join("table.txt"), render_table(&summary).into_bytes()),
        (dir.join("mi_curve.csv"), mi_curve_csv(report).into_bytes()),
    ];
    if !inputs.evaluations.is_empty() {
        files.push((dir.join("fold_accuracy.csv"), fold_accuracy_csv(&inputs.evaluations).into_bytes()));
        let entries: Vec<CompressionEntry> = inputs
            .evaluations
            .iter()
            .map(|e| CompressionEntry {
                model: e.model.clone(),
                bits_per_symbol: e.bits_per_symbol_weighted,
                accuracy: e.accuracy,
            })
            .collect();
        files.push((dir.join("compression.csv"), compression_csv(&entries).into_bytes()));
    }
    if let Some(t) = &inputs.sensitivity {
        files.push((dir.join("sensitivity.csv"), t.to_csv().into_bytes()));
    }
    let mut out = Vec::new();
    for (p, bytes) in files {
        write_bytes(&p, &bytes)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{characterize, CharacterizeParams};
    use crate::synthgen::{generate, SourceKind, SourceSpec};

    fn small() -> Dataset {
        generate(&SourceSpec {
            source: SourceKind::Iid { weights: vec![0.25; 4] },
            n_symbols: 400,
            n_users: 3,
            seed: 9,
        })
        .unwrap()
        .dataset
    }

    fn params() -> CharacterizeParams {
        CharacterizeParams {
            d_max: 20,
            ..CharacterizeParams::default()
        }
    }

    #[test]
    fn hashes_are_stable_and_sensitive() {
        let a = small();
        assert_eq!(dataset_hash(&a).unwrap(), dataset_hash(&small()).unwrap());
        assert_eq!(dataset_hash(&a).unwrap().len(), 64);
        assert_ne!(config_hash(&1u32).unwrap(), config_hash(&2u32).unwrap());
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_paths() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("report.json");
        assert_eq!(RunManifest::path_for(&file), dir.path().join("report.json.manifest.json"));
        assert_eq!(RunManifest::path_for(dir.path()), dir.path().join("manifest.json"));
    }

    #[test]
    fn csv_shapes() {
        let m = [
            MatchRecord { pos: 0, len: 1, delta: None },
            MatchRecord { pos: 3, len: 1, delta: Some(100) },
        ];
        assert_eq!(match_structure_csv(&m), "pos,L,log10_delta\n0,1,\n3,1,2\n");
        let c = CorrelationMatrix {
            attributes: vec!["a".into(), "b".into()],
            matrix: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
            excluded: vec![],
        };
        assert_eq!(corr_matrix_csv(Some(&c)), "attribute,a,b\na,1,-0.5\nb,-0.5,1\n");
    }

    #[test]
    fn report_without_validation_marks_accuracy_absent() {
        let ds = small();
        let c = characterize(&ds, &params()).unwrap();
        let inputs = ReportInputs {
            characterization: Some(c.report),
            ..ReportInputs::default()
        };
        let s = build_summary(&ds, &inputs).unwrap();
        assert_eq!(s.accuracy, AccuracySection::Absent);
        let t = render_table(&s);
        assert!(t.starts_with("dataset"), "{t}");
        for col in ["#users", "#months", "traj. length", "POIs", "granularity", "entropy", "predictability"] {
            assert!(t.lines().next().unwrap().contains(col), "{col}");
        }
        assert!(t.contains("accuracy: absent"));
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["accuracy"]["status"], "absent");
    }

    #[test]
    fn missing_characterization_is_named() {
        let e = build_summary(&small(), &ReportInputs::default()).unwrap_err();
        assert!(e.to_string().contains("characterization"), "{e}");
    }
}
