use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use mobsel_core::ingest::{self, DedupPolicy, Format, IngestConfig, TimezonePolicy};
use mobsel_core::meta::{characterize, CharacterizeParams, DecayConfig, FanoAlphabet, MetaAttributeReport, Scope};
use mobsel_core::pipeline::{self, ReportInputs, RunManifest};
use mobsel_core::poi::{extract_dataset, ExtractionParams};
use mobsel_core::predictors::external::{serve, ExternalSpec};
use mobsel_core::predictors::PredictorSpec;
use mobsel_core::selector::{recommend, Recommendation, RuleSet, Verdict};
use mobsel_core::synthgen::{generate, random_no_repeat_chain, SourceKind, SourceSpec, SplitMix64};
use mobsel_core::validation::{
    compression_ratio, default_sensitivity_schemes, evaluate, validation_sensitivity, Evaluation, ModelSpec,
    Scheme, SensitivityTable, ValidationPlan,
};
use mobsel_core::{Dataset, Provenance};
use serde_json::{json, Value};

use crate::{Cli, Command, ModelArgs, UsageError};

/// What a command produced, for its manifest.
struct Done {
    anchor: PathBuf,
    outputs: Vec<PathBuf>,
    config: Value,
    dataset_hash: Option<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct IngestSummary {
    source: String,
    format: String,
    rows: usize,
    points: usize,
    rejected: usize,
}

const INGEST_SUMMARY: &str = "ingest.json";
const REJECTS_FILE: &str = "rejects.jsonl";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_out(out: &Option<PathBuf>, cmd: &str) -> Result<PathBuf> {
    out.clone().ok_or_else(|| usage(format!("{cmd} needs --out")))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn load(dir: &Path) -> Result<Dataset> {
    ingest::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn parse_scope(s: &str) -> Result<Scope> {
    match s {
        "per_user" => Ok(Scope::PerUser),
        "dataset" => Ok(Scope::Dataset),
        _ => Err(usage(format!("scope must be per_user or dataset, got {s:?}"))),
    }
}

fn model_spec(m: &ModelArgs) -> Result<ModelSpec> {
    if let Some(cmd) = &m.external {
        let command: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        if command.is_empty() {
            return Err(usage("--external needs a command"));
        }
        return Ok(ModelSpec::External(ExternalSpec {
            command,
            context_window: m.context_window,
        }));
    }
    Ok(ModelSpec::Native(parse_model(&m.model)?))
}

// malformed flag values are usage errors, not data errors
fn parse_model(s: &str) -> Result<PredictorSpec> {
    s.parse().map_err(|e: mobsel_core::Error| usage(e.to_string()))
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    s.parse().map_err(|e: mobsel_core::Error| usage(e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let started = Instant::now();
    let command_line: Vec<String> = std::env::args().collect();
    let done = match &cli.command {
        Command::Ingest(a) => ingest_cmd(&cli, a)?,
        Command::ExtractPoi(a) => extract_cmd(&cli, a)?,
        Command::Synth(a) => synth_cmd(&cli, a)?,
        Command::Characterize(a) => characterize_cmd(&cli, a)?,
        Command::Validate(a) => validate_cmd(&cli, a)?,
        Command::Sensitivity(a) => sensitivity_cmd(&cli, a)?,
        Command::Compress(a) => compress_cmd(&cli, a)?,
        Command::Recommend(a) => recommend_cmd(&cli, a)?,
        Command::Report(a) => report_cmd(&cli, a)?,
        // a protocol endpoint driven by the harness, not a pipeline step
        Command::ServePredictor(a) => return serve_cmd(&cli, a),
    };
    let manifest = RunManifest::new(
        command_line,
        pipeline::config_hash(&done.config)?,
        done.dataset_hash,
        started,
        done.outputs,
    );
    let path = manifest.write(&done.anchor)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn ingest_cmd(cli: &Cli, a: &crate::IngestArgs) -> Result<Done> {
    let out = require_out(&cli.out, "ingest")?;
    let format: Format = a.format.parse().map_err(|e: mobsel_core::Error| usage(e.to_string()))?;
    let config = json!({
        "command": "ingest",
        "format": format.as_str(),
        "cols": a.cols,
        "header": a.header,
        "tz_offset": a.tz_offset,
        "strict_dedup": a.strict_dedup,
    });
    if format == Format::SymbolsJsonl {
        let name = a.name.clone().unwrap_or_else(|| {
            a.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
        let ds = ingest::parse_symbols_jsonl(&a.input, &name)?;
        ingest::save_dataset(&ds, &out)?;
        println!("{} users, {} POIs", ds.sequences().len(), ds.alphabet().len());
        return Ok(Done {
            anchor: out.clone(),
            outputs: vec![out],
            config,
            dataset_hash: Some(pipeline::dataset_hash(&ds)?),
        });
    }
    let cfg = IngestConfig {
        format,
        column_map: a.cols.parse().map_err(|e: mobsel_core::Error| usage(e.to_string()))?,
        timezone: a.tz_offset.map_or(TimezonePolicy::AssumeUtc, TimezonePolicy::OffsetSeconds),
        dedup: if a.strict_dedup {
            DedupPolicy::Error
        } else {
            DedupPolicy::DropEqualTimestamp
        },
        header: a.header,
    };
    let parsed = ingest::parse_raw(&a.input, &cfg)?;
    ingest::save_trajectories(&parsed.trajectories, &out)?;
    let mut rejects = Vec::new();
    for r in &parsed.rejects {
        serde_json::to_writer(
            &mut rejects,
            &json!({ "file": file_name(&r.path), "line": r.line, "reason": r.reason }),
        )?;
        rejects.push(b'\n');
    }
    pipeline::write_bytes(&out.join(REJECTS_FILE), &rejects)?;
    let summary = IngestSummary {
        source: file_name(&a.input),
        format: format.as_str().to_string(),
        rows: parsed.rows,
        points: parsed.point_count(),
        rejected: parsed.rejects.len(),
    };
    pipeline::write_json(&out.join(INGEST_SUMMARY), &summary)?;
    if !parsed.rejects.is_empty() {
        warn!("{} of {} rows rejected, see {REJECTS_FILE}", summary.rejected, summary.rows);
    }
    println!(
        "{} rows: {} points in {} trajectories, {} rejected",
        summary.rows,
        summary.points,
        parsed.trajectories.len(),
        summary.rejected
    );
    let bytes = if a.input.is_file() { Some(pipeline::sha256_hex(&fs::read(&a.input)?)) } else { None };
    Ok(Done {
        anchor: out.clone(),
        outputs: vec![
            out.join(ingest::TRAJECTORIES_FILE),
            out.join(REJECTS_FILE),
            out.join(INGEST_SUMMARY),
        ],
        config,
        dataset_hash: bytes,
    })
}

fn extract_cmd(cli: &Cli, a: &crate::ExtractArgs) -> Result<Done> {
    let out = require_out(&cli.out, "extract-poi")?;
    let trajectories = ingest::load_trajectories(&a.input)?;
    let summary_path = a.input.join(INGEST_SUMMARY);
    let provenance = if summary_path.is_file() {
        let s: IngestSummary = pipeline::read_json(&summary_path)?;
        Provenance {
            source: s.source,
            format: s.format,
            ..Provenance::default()
        }
    } else {
        Provenance {
            source: file_name(&a.input),
            ..Provenance::default()
        }
    };
    let params = ExtractionParams {
        stay_radius: a.stay_radius,
        stay_min_duration: a.stay_min,
        cluster_merge_radius: a.merge_radius,
        min_visits: a.min_visits,
    };
    let name = a.name.clone().unwrap_or_else(|| file_name(&out));
    let outcome = extract_dataset(&name, &trajectories, &params, provenance)?;
    for (user, len) in &outcome.excluded {
        warn!("user {user} excluded: {len} symbols after extraction");
    }
    ingest::save_dataset(&outcome.dataset, &out)?;
    println!(
        "{} POIs, {} users kept, {} excluded",
        outcome.dataset.alphabet().len(),
        outcome.dataset.sequences().len(),
        outcome.excluded.len()
    );
    Ok(Done {
        anchor: out.clone(),
        outputs: vec![out],
        config: json!({ "command": "extract-poi", "params": params }),
        dataset_hash: Some(pipeline::dataset_hash(&outcome.dataset)?),
    })
}

fn synth_source(cli: &Cli, a: &crate::SynthArgs) -> Result<SourceKind> {
    if let Some(path) = &a.spec {
        return Ok(pipeline::read_json(path)?);
    }
    let kind = a.kind.as_deref().ok_or_else(|| usage("synth needs --kind or --spec"))?;
    Ok(match kind {
        "iid" => SourceKind::Iid {
            weights: vec![1.0 / a.alphabet as f64; a.alphabet],
        },
        "periodic" => {
            if a.pattern.is_empty() {
                return Err(usage("periodic needs --pattern"));
            }
            SourceKind::Periodic {
                pattern: a.pattern.clone(),
            }
        }
        "markov" => random_no_repeat_chain(a.alphabet, &mut SplitMix64::new(cli.seed ^ 0x6d61_726b)),
        "copy_with_gap" => SourceKind::CopyWithGap {
            k: a.k,
            noise: a.noise,
            alphabet: a.alphabet,
            no_repeat: !a.allow_repeats,
        },
        "regime_switch" => return Err(usage("regime_switch needs a --spec file")),
        other => return Err(usage(format!("unknown source kind {other:?}"))),
    })
}

fn synth_cmd(cli: &Cli, a: &crate::SynthArgs) -> Result<Done> {
    let out = require_out(&cli.out, "synth")?;
    let spec = SourceSpec {
        source: synth_source(cli, a)?,
        n_symbols: a.n,
        n_users: a.users,
        seed: cli.seed,
    };
    let generated = generate(&spec)?;
    let outputs = pipeline::write_synth(&generated, &out)?;
    let t = &generated.ground_truth;
    if let Some(h) = t.collapsed_entropy_rate_bits.or(t.entropy_rate_bits) {
        println!("entropy rate {h} bits/symbol");
    }
    Ok(Done {
        anchor: out,
        outputs,
        config: json!({ "command": "synth", "spec": spec }),
        dataset_hash: Some(pipeline::dataset_hash(&generated.dataset)?),
    })
}

fn characterize_cmd(cli: &Cli, a: &crate::CharacterizeArgs) -> Result<Done> {
    let out = require_out(&cli.out, "characterize")?;
    let ds = load(&a.dataset)?;
    let params = CharacterizeParams {
        d_max: a.dmax,
        decay: DecayConfig {
            eps_fit: a.eps_fit,
            eps_depth: a.eps_depth,
        },
        fano_alphabet: match a.fano_alphabet.as_str() {
            "per_user" => FanoAlphabet::PerUser,
            "global" => FanoAlphabet::Global,
            other => return Err(usage(format!("fano alphabet must be per_user or global, got {other:?}"))),
        },
        entropy_scope: parse_scope(&a.entropy_scope)?,
        mi_scope: parse_scope(&a.mi_scope)?,
        ..CharacterizeParams::default()
    };
    let c = characterize(&ds, &params)?;
    let outputs = pipeline::write_characterization(&c, &out)?;
    let r = &c.report;
    println!(
        "{}: {} users, {} POIs, entropy {:.3} bits, predictability {:.4}, ldd depth {}",
        r.dataset,
        r.n_users,
        r.n_pois,
        r.entropy_bits.mean,
        r.predictability.mean,
        r.ldd_depth.map_or("none".to_string(), |d| d.to_string())
    );
    Ok(Done {
        anchor: out,
        outputs,
        config: json!({ "command": "characterize", "params": params }),
        dataset_hash: Some(pipeline::dataset_hash(&ds)?),
    })
}

fn print_evaluation(e: &Evaluation) {
    let bits = e.bits_per_symbol_weighted.map_or("n/a".to_string(), |b| format!("{b:.4}"));
    println!(
        "{} under {}{}: accuracy {:.4} (weighted {:.4}), bits/symbol {bits}, {} predictions",
        e.model,
        e.scheme,
        if e.leaky { " [leaky]" } else { "" },
        e.accuracy,
        e.accuracy_weighted,
        e.n_predictions
    );
}

fn validate_cmd(cli: &Cli, a: &crate::ValidateArgs) -> Result<Done> {
    let out = require_out(&cli.out, "validate")?;
    let ds = load(&a.dataset)?;
    let model = match &a.from_recommendation {
        Some(path) => {
            let r: Recommendation = pipeline::read_json(path)?;
            if r.verdict != Verdict::MarkovClass {
                bail!("recommended class {} has no built-in predictor; only markov_class can be chained", r.verdict);
            }
            ModelSpec::Native(PredictorSpec::markov(1))
        }
        None => model_spec(&a.model)?,
    };
    let plan = ValidationPlan {
        scheme: parse_scheme(&a.scheme)?,
        per_user: !a.pooled,
        seed: cli.seed,
    };
    let e = evaluate(&ds, &model, &plan)?;
    for u in &e.excluded_users {
        warn!("user {u} excluded from evaluation");
    }
    print_evaluation(&e);
    let outputs = pipeline::write_evaluation(&e, &out)?;
    Ok(Done {
        anchor: out,
        outputs,
        config: json!({ "command": "validate", "model": model, "plan": plan }),
        dataset_hash: Some(pipeline::dataset_hash(&ds)?),
    })
}

fn sensitivity_cmd(cli: &Cli, a: &crate::SensitivityArgs) -> Result<Done> {
    let out = require_out(&cli.out, "sensitivity")?;
    let ds = load(&a.dataset)?;
    let model = model_spec(&a.model)?;
    let schemes = if a.schemes.is_empty() {
        default_sensitivity_schemes()
    } else {
        a.schemes.iter().map(|s| parse_scheme(s)).collect::<Result<Vec<_>>>()?
    };
    let t: SensitivityTable = validation_sensitivity(&ds, &model, &schemes, cli.seed)?;
    print!("{}", t.to_csv());
    let outputs = pipeline::write_sensitivity(&t, &out)?;
    Ok(Done {
        anchor: out,
        outputs,
        config: json!({ "command": "sensitivity", "model": model, "schemes": schemes, "seed": cli.seed }),
        dataset_hash: Some(pipeline::dataset_hash(&ds)?),
    })
}

fn compress_cmd(cli: &Cli, a: &crate::CompressArgs) -> Result<Done> {
    let out = require_out(&cli.out, "compress")?;
    let ds = load(&a.dataset)?;
    let models = a
        .models
        .iter()
        .map(|m| Ok(ModelSpec::Native(parse_model(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let plan = ValidationPlan::new(parse_scheme(&a.scheme)?).with_seed(cli.seed);
    let entries = compression_ratio(&ds, &models, &plan)?;
    let csv = pipeline::compression_csv(&entries);
    print!("{csv}");
    pipeline::write_bytes(&out, csv.as_bytes())?;
    Ok(Done {
        anchor: out.clone(),
        outputs: vec![out],
        config: json!({ "command": "compress", "models": models, "plan": plan }),
        dataset_hash: Some(pipeline::dataset_hash(&ds)?),
    })
}

fn recommend_cmd(cli: &Cli, a: &crate::RecommendArgs) -> Result<Done> {
    let out = cli.out.clone().unwrap_or_else(|| {
        a.report
            .parent()
            .unwrap_or(Path::new(""))
            .join("recommendation.json")
    });
    let report: MetaAttributeReport = pipeline::read_json(&a.report)?;
    let rules = match &a.rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default_rules(),
    };
    let r = recommend(&report, &rules)?;
    print!("{}", r.render());
    pipeline::write_json(&out, &r)?;
    Ok(Done {
        anchor: out.clone(),
        outputs: vec![out],
        config: json!({ "command": "recommend", "rules": rules }),
        dataset_hash: None,
    })
}

fn report_cmd(cli: &Cli, a: &crate::ReportArgs) -> Result<Done> {
    let out = require_out(&cli.out, "report")?;
    let mut inputs: Vec<(&str, &Path)> = vec![("dataset", &a.dataset), ("characterization", &a.characterization)];
    inputs.extend(a.evaluations.iter().map(|p| ("evaluation", p.as_path())));
    inputs.extend(a.sensitivity.iter().map(|p| ("sensitivity", p.as_path())));
    inputs.extend(a.recommendation.iter().map(|p| ("recommendation", p.as_path())));
    let missing: Vec<String> = inputs
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(what, p)| format!("{what} ({})", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(mobsel_core::Error::Missing(format!("report inputs: {}", missing.join(", "))).into());
    }
    let ds = load(&a.dataset)?;
    let inputs = ReportInputs {
        characterization: Some(pipeline::read_json(&a.characterization)?),
        evaluations: a
            .evaluations
            .iter()
            .map(|p| pipeline::read_json(p))
            .collect::<Result<Vec<_>, _>>()?,
        sensitivity: a.sensitivity.as_deref().map(pipeline::read_json).transpose()?,
        recommendation: a.recommendation.as_deref().map(pipeline::read_json).transpose()?,
    };
    let outputs = pipeline::write_report(&ds, &inputs, &out)?;
    print!("{}", fs::read_to_string(out.join("table.txt"))?);
    Ok(Done {
        anchor: out,
        outputs,
        config: json!({
            "command": "report",
            "evaluations": a.evaluations.len(),
            "sensitivity": a.sensitivity.is_some(),
            "recommendation": a.recommendation.is_some(),
        }),
        dataset_hash: Some(pipeline::dataset_hash(&ds)?),
    })
}

fn serve_cmd(cli: &Cli, a: &crate::ServeArgs) -> Result<()> {
    let spec = parse_model(&a.model)?;
    let n = match (a.alphabet, &a.dataset) {
        (Some(n), _) => n,
        (None, Some(dir)) => load(dir)?.alphabet().len(),
        (None, None) => return Err(usage("serve-predictor needs --alphabet or --dataset")),
    };
    serve(&spec, n, cli.seed, io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}
