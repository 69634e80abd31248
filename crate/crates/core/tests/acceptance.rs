//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Oracles here are independent brute-force
//! reimplementations, not calls back into the library.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mobsel_core::meta::entropy::binary_entropy;
use mobsel_core::meta::mi::{fit_power_law, pmi_from_counts};
use mobsel_core::meta::{
    characterize, fano_predictability, lz_entropy_rate, match_structure, mi_decay_curve,
    mutual_information_at_distance, CharacterizeParams, DecayConfig, PairTable, Pmi, PowerLawFit,
};
use mobsel_core::pipeline::{self, ReportInputs};
use mobsel_core::predictors::{Fallback, PredictorKind, PredictorSpec};
use mobsel_core::selector::{recommend, recommend_attributes, Attributes, RuleSet, Verdict};
use mobsel_core::synthgen::analytic::markov_entropy_rate;
use mobsel_core::synthgen::{generate, generate_stream, random_no_repeat_chain, SourceKind, SourceSpec, SplitMix64};
use mobsel_core::validation::{evaluate, make_folds, ModelSpec, Scheme, ValidationPlan};
use mobsel_core::{PoiId, SymbolStream, Visit};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // a NaN must fail the check
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn lib<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_seq(rng: &mut SplitMix64, n: usize, m: usize) -> Vec<PoiId> {
    (0..n).map(|_| rng.below(m) as PoiId).collect()
}

// ---------------------------------------------------------------- oracles

struct PairCounts {
    n: u64,
    joint: BTreeMap<(PoiId, PoiId), u64>,
    left: BTreeMap<PoiId, u64>,
    right: BTreeMap<PoiId, u64>,
}

fn enumerate_pairs(s: &[PoiId], d: usize) -> PairCounts {
    let mut c = PairCounts {
        n: 0,
        joint: BTreeMap::new(),
        left: BTreeMap::new(),
        right: BTreeMap::new(),
    };
    for i in 0..s.len() - d {
        *c.joint.entry((s[i], s[i + d])).or_default() += 1;
        *c.left.entry(s[i]).or_default() += 1;
        *c.right.entry(s[i + d]).or_default() += 1;
        c.n += 1;
    }
    c
}

fn entropy_of<'a>(counts: impl Iterator<Item = &'a u64>, n: f64) -> f64 {
    counts
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Smallest `delta > 0` such that the window of length `len` at `pos`
/// reappears `delta` positions earlier; plain quadratic scan.
fn brute_delta(s: &[PoiId], pos: usize, len: usize) -> Option<usize> {
    (1..=pos).find(|&delta| (0..len).all(|j| s[pos - delta + j] == s[pos + j]))
}

// ---------------------------------------------------------------- criteria

fn mi_identity_and_oracle() -> Check {
    let mut rng = SplitMix64::new(0x5eed_0001);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let m = 2 + rng.below(15);
        let s = random_seq(&mut rng, 500, m);
        let stream = SymbolStream::plain(s.clone());
        for d in [1, 2, 3, 5] {
            let t = lib(PairTable::build(&stream, d))?;
            let o = enumerate_pairs(&s, d);
            ensure!(t.n_pairs == o.n, "case {case} d {d}: pair count");
            let joint: Vec<((PoiId, PoiId), u64)> = o.joint.iter().map(|(&k, &v)| (k, v)).collect();
            ensure!(t.joint == joint, "case {case} d {d}: joint counts differ");
            let left: Vec<(PoiId, u64)> = o.left.iter().map(|(&k, &v)| (k, v)).collect();
            let right: Vec<(PoiId, u64)> = o.right.iter().map(|(&k, &v)| (k, v)).collect();
            ensure!(t.left == left && t.right == right, "case {case} d {d}: marginals differ");

            let n = o.n as f64;
            let kl: f64 = o
                .joint
                .iter()
                .map(|(&(x, y), &c)| {
                    let pxy = c as f64 / n;
                    let px = o.left[&x] as f64 / n;
                    let py = o.right[&y] as f64 / n;
                    pxy * (pxy / (px * py)).log2()
                })
                .sum();
            let got = lib(mutual_information_at_distance(&stream, d))?;
            ensure!(got.to_bits() == kl.to_bits(), "case {case} d {d}: {got} vs oracle {kl}");

            let hx = entropy_of(o.left.values(), n);
            let hy = entropy_of(o.right.values(), n);
            let hxy = entropy_of(o.joint.values(), n);
            let h_y_given_x: f64 = o
                .joint
                .iter()
                .map(|(&(x, _), &c)| -(c as f64 / n) * (c as f64 / o.left[&x] as f64).log2())
                .sum();
            let (ex, ey, exy) = t.entropies();
            for (form, v) in [
                ("H(X)+H(Y)-H(X,Y)", hx + hy - hxy),
                ("H(Y)-H(Y|X)", hy - h_y_given_x),
                ("library entropies", ex + ey - exy),
            ] {
                let err = (v - got).abs();
                worst = worst.max(err);
                ensure!(err <= 1e-9, "case {case} d {d}: {form} = {v}, KL form = {got}");
            }
        }
    }
    Ok(format!("400 tables exact; worst identity gap {worst:.1e}"))
}

// the expected value is written out on purpose
#[allow(clippy::approx_constant)]
fn pmi_arithmetic() -> Check {
    // 100 pairs, a and b each 10 times, together 10 times: ratio 10
    let ten = lib(pmi_from_counts(100, 10, 10, 10))?;
    ensure!(ten == Pmi::Bits(10f64.log2()), "got {ten:?}");
    ensure!(
        (10f64.log2() - 3.3219).abs() < 5e-5,
        "log2(10) reference drifted"
    );
    let indep = lib(pmi_from_counts(100, 20, 5, 1))?;
    ensure!(indep == Pmi::Bits(0.0), "independence gave {indep:?}");
    let never = lib(pmi_from_counts(100, 20, 5, 0))?;
    ensure!(never == Pmi::NeverCoOccurs, "zero co-occurrence gave {never:?}");
    Ok("log2(10), independence and never-co-occurs all exact".into())
}

fn entropy_estimator() -> Check {
    let mut rng = SplitMix64::new(0x5eed_0003);
    let iid = random_seq(&mut rng, 100_000, 4);
    let h = lib(lz_entropy_rate(&iid))?;
    ensure!((h - 2.0).abs() <= 0.1, "iid uniform-4: {h}");
    let mut notes = vec![format!("iid {h:.4}")];
    for m in [4, 6, 8] {
        let kind = random_no_repeat_chain(m, &mut rng);
        let SourceKind::MarkovOrderK { alphabet, order, rows } = &kind else {
            unreachable!()
        };
        let truth = markov_entropy_rate(*alphabet, *order, rows).ok_or("no stationary law")?;
        let s = generate_stream(&kind, 100_000, &mut rng);
        let est = lib(lz_entropy_rate(&s))?;
        let rel = (est - truth) / truth;
        ensure!(rel.abs() <= 0.05, "order-1 chain m={m}: {est} vs analytic {truth}");
        notes.push(format!("m={m} {rel:+.2}%", rel = rel * 100.0));
    }
    let constant = vec![3 as PoiId; 100_000];
    let hc = lib(lz_entropy_rate(&constant))?;
    ensure!(hc <= 0.02, "constant: {hc}");
    notes.push(format!("constant {hc:.4}"));
    Ok(notes.join(", "))
}

fn fano_solver() -> Check {
    for n in [2usize, 10, 1000] {
        let p0 = lib(fano_predictability(0.0, n))?;
        ensure!((p0 - 1.0).abs() <= 1e-9, "N={n}: S=0 gave {p0}");
        let s_max = (n as f64).log2();
        let pmax = lib(fano_predictability(s_max, n))?;
        ensure!((pmax - 1.0 / n as f64).abs() <= 1e-9, "N={n}: S=log2 N gave {pmax}");
        // the solution satisfies the bound itself
        let mid = lib(fano_predictability(s_max / 2.0, n))?;
        let lhs = binary_entropy(mid) + (1.0 - mid) * ((n - 1) as f64).log2();
        ensure!((lhs - s_max / 2.0).abs() <= 1e-9, "N={n}: residual {lhs}");
        let grid: Vec<f64> = (0..100)
            .map(|i| fano_predictability(s_max * i as f64 / 99.0, n))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure!(
            grid.windows(2).all(|w| w[1] <= w[0]) && grid[99] < grid[0],
            "N={n}: not monotone decreasing"
        );
    }
    Ok("endpoints to 1e-9, monotone on 100-point grids for N in {2, 10, 1000}".into())
}

fn ldd_detection() -> Check {
    let cfg = DecayConfig::default();
    let mut notes = Vec::new();
    for k in [2, 5, 10] {
        let kind = SourceKind::CopyWithGap {
            k,
            noise: 0.0,
            alphabet: 8,
            no_repeat: false,
        };
        let s = generate_stream(&kind, 100_000, &mut SplitMix64::new(k as u64));
        let decay = lib(mi_decay_curve(&SymbolStream::plain(s), 50, &cfg))?;
        let depth = decay.ldd_depth.ok_or(format!("k={k}: no depth"))?;
        ensure!(depth >= k, "k={k}: depth {depth}");
        notes.push(format!("k={k} depth {depth}"));
    }
    let iid = generate_stream(
        &SourceKind::Iid { weights: vec![0.125; 8] },
        100_000,
        &mut SplitMix64::new(77),
    );
    let decay = lib(mi_decay_curve(&SymbolStream::plain(iid), 50, &cfg))?;
    ensure!(
        decay.fit == PowerLawFit::NoMeasurableDependence && decay.ldd_depth.is_none(),
        "iid: {:?}, depth {:?}",
        decay.fit,
        decay.ldd_depth
    );
    notes.push("iid none".into());
    let curve: Vec<(usize, f64)> = (1..=200).map(|d| (d, 1.7 * (d as f64).powf(-0.8))).collect();
    let alpha = fit_power_law(&curve, cfg.eps_fit).alpha().ok_or("exact curve not fitted")?;
    ensure!((alpha - 0.8).abs() <= 1e-6, "alpha {alpha}");
    notes.push(format!("alpha err {:.1e}", (alpha - 0.8).abs()));
    Ok(notes.join(", "))
}

fn match_structure_oracle() -> Check {
    let mut rng = SplitMix64::new(0x5eed_0006);
    let lengths = [1, 2, 3, 4, 8];
    let mut compared = 0usize;
    for case in 0..20 {
        let m = 2 + rng.below(6);
        let full = random_seq(&mut rng, 10_000, m);
        let prefix = &full[..500];
        let got = match_structure(&SymbolStream::plain(prefix.to_vec()), &lengths);
        let mut want = Vec::new();
        for &len in &lengths {
            for pos in 0..=prefix.len() - len {
                want.push((pos, len, brute_delta(prefix, pos, len)));
            }
        }
        let got: Vec<(usize, usize, Option<usize>)> = got.iter().map(|r| (r.pos, r.len, r.delta)).collect();
        let mut want_sorted = want.clone();
        want_sorted.sort_by_key(|w| (w.1, w.0));
        ensure!(got == want_sorted, "case {case}: triples differ");
        compared += got.len();
    }
    Ok(format!("{compared} triples identical"))
}

fn random_spec(rng: &mut SplitMix64) -> PredictorSpec {
    let kind = match rng.below(5) {
        0 => PredictorKind::RandomUniform,
        1 => PredictorKind::TopFrequency,
        2 => PredictorKind::Mmc { states: 1 + rng.below(5) },
        _ => PredictorKind::Markov { k: 1 + rng.below(3) },
    };
    let alpha = [0.0, 0.01, 1.0, rng.next_f64() * 3.0][rng.below(4)];
    let fallback = if rng.below(2) == 0 { Fallback::Backoff } else { Fallback::Uniform };
    PredictorSpec::new(kind).with_alpha(alpha).with_fallback(fallback)
}

fn predictor_exactness() -> Check {
    let ds = lib(generate(&SourceSpec {
        source: SourceKind::Periodic { pattern: vec![0, 1, 2] },
        n_symbols: 3000,
        n_users: 5,
        seed: 1,
    }))?
    .dataset;
    let m1 = ModelSpec::Native(PredictorSpec::markov(1));
    let e = lib(evaluate(&ds, &m1, &ValidationPlan::new(Scheme::BlockRolling { k: 10, p: 1 })))?;
    let bits = e.bits_per_symbol.ok_or("no bits")?;
    ensure!(e.accuracy == 1.0 && bits <= 0.02, "cycle: acc {} bits {bits}", e.accuracy);

    let mixed = lib(generate(&SourceSpec {
        source: random_no_repeat_chain(6, &mut SplitMix64::new(5)),
        n_symbols: 2000,
        n_users: 4,
        seed: 2,
    }))?
    .dataset;
    for m in ["markov:1", "markov:2", "markov:3", "mmc:3", "top"] {
        let spec = ModelSpec::Native(lib(m.parse::<PredictorSpec>())?);
        let a = lib(evaluate(&mixed, &spec, &ValidationPlan::new(Scheme::Window10Cumulative)))?;
        let b = lib(evaluate(&mixed, &spec, &ValidationPlan::new(Scheme::Rolling { k: 10, p: 1 })))?;
        ensure!(a.folds == b.folds, "{m}: cumulative training differs from retraining");
    }

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        any::<u64>(),
        2usize..9,
        proptest::collection::vec(any::<u32>(), 4..60),
        proptest::collection::vec(any::<u32>(), 0..6),
    );
    let outcome = runner.run(&strategy, |(seed, n, train, ctx)| {
        let mut rng = SplitMix64::new(seed);
        let spec = random_spec(&mut rng);
        let train: Vec<Visit> = train
            .iter()
            .enumerate()
            .map(|(i, &x)| Visit { poi: x % n as u32, t: i as i64 })
            .collect();
        let ctx: Vec<Visit> = ctx.iter().map(|&x| Visit { poi: x % n as u32, t: 0 }).collect();
        let mut model = spec.build(n, seed).unwrap();
        model.fit(&[&train]).unwrap();
        let p = model.predict(&ctx).unwrap();
        let d = p.distribution.expect("native models emit distributions");
        let sum: f64 = d.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "{spec}: sum {sum}");
        prop_assert_eq!(d.probs().len(), n);
        prop_assert!(d.probs().iter().all(|&x| (0.0..=1.0).contains(&x)));
        Ok(())
    });
    ensure!(outcome.is_ok(), "normalization: {}", outcome.unwrap_err());
    Ok(format!(
        "cycle acc 1.0, {bits:.4} bits/symbol; cumulative == retrain for 5 models; 10000 distributions normalized"
    ))
}

fn leakage_freedom() -> Check {
    let mut rng = SplitMix64::new(0x5eed_0008);
    let (mut plans, mut folds, mut infeasible) = (0usize, 0usize, 0usize);
    for _ in 0..3000 {
        let n = 2 + rng.below(3000);
        let k = 2 + rng.below(30);
        let p = 1 + rng.below(k - 1);
        let scheme = match rng.below(3) {
            0 => Scheme::Rolling { k, p },
            1 => Scheme::BlockRolling { k, p },
            _ => Scheme::Window10Cumulative,
        };
        let emitted = match make_folds(&ValidationPlan::new(scheme), n) {
            Ok(f) => f,
            Err(e) => {
                ensure!(
                    e.kind() == mobsel_core::ErrorKind::InfeasiblePlan,
                    "{scheme} on n={n}: {e}"
                );
                infeasible += 1;
                continue;
            }
        };
        plans += 1;
        if let Scheme::BlockRolling { k, p } = scheme {
            ensure!(emitted.len() == k - p, "{scheme} on n={n}: {} folds", emitted.len());
        }
        for f in &emitted {
            let max_train = f.train.iter().map(|r| r.end - 1).max().ok_or("empty train")?;
            let min_test = f.test.iter().map(|r| r.start).min().ok_or("empty test")?;
            ensure!(max_train < min_test, "{scheme} on n={n}: fold {} leaks", f.index);
            folds += 1;
        }
    }
    Ok(format!("{plans} plans, {folds} folds leak-free ({infeasible} infeasible plans rejected)"))
}

fn regime_rows(offsets: [f64; 4]) -> Vec<Vec<f64>> {
    (0..5)
        .map(|x| {
            let mut row = vec![0.0; 5];
            for (o, &p) in offsets.iter().enumerate() {
                row[(x + o + 1) % 5] = p;
            }
            row
        })
        .collect()
}

fn validation_sensitivity() -> Check {
    let a = SourceKind::MarkovOrderK {
        alphabet: 5,
        order: 1,
        rows: regime_rows([0.5, 0.1, 0.2, 0.2]),
    };
    let b = SourceKind::MarkovOrderK {
        alphabet: 5,
        order: 1,
        rows: regime_rows([0.05, 0.9, 0.025, 0.025]),
    };
    let switching = lib(generate(&SourceSpec {
        source: SourceKind::RegimeSwitch {
            a: Box::new(a.clone()),
            b: Box::new(b),
            switch_fraction: 0.5,
        },
        n_symbols: 5000,
        n_users: 10,
        seed: 11,
    }))?;
    let stationary = lib(generate(&SourceSpec {
        source: a,
        n_symbols: 5000,
        n_users: 10,
        seed: 11,
    }))?;
    let model = ModelSpec::Native(PredictorSpec::markov(1));
    let holdouts = [0.8, 0.7, 0.6].map(|f| Scheme::Holdout { train_fraction: f });
    let spread = |ds| -> Result<(f64, Vec<f64>), String> {
        let acc: Vec<f64> = holdouts
            .iter()
            .map(|s| lib(evaluate(ds, &model, &ValidationPlan::new(*s))).map(|e| e.accuracy))
            .collect::<Result<_, _>>()?;
        let max = acc.iter().copied().fold(f64::MIN, f64::max);
        let min = acc.iter().copied().fold(f64::MAX, f64::min);
        Ok((max - min, acc))
    };
    let (s_switch, acc_switch) = spread(&switching.dataset)?;
    let (s_stat, acc_stat) = spread(&stationary.dataset)?;
    ensure!(s_switch >= 0.05, "switching spread {s_switch} ({acc_switch:?})");
    ensure!(s_stat <= 0.03, "stationary spread {s_stat} ({acc_stat:?})");

    let e = lib(evaluate(
        &switching.dataset,
        &model,
        &ValidationPlan::new(Scheme::BlockRolling { k: 10, p: 1 }),
    ))?;
    let curve: Vec<f64> = e.fold_summaries.iter().map(|f| f.accuracy).collect();
    // first fold whose test block starts at or after every user's boundary
    let n = switching.dataset.sequences()[0].len();
    let folds = lib(make_folds(&ValidationPlan::new(Scheme::BlockRolling { k: 10, p: 1 }), n))?;
    let boundary = switching.ground_truth.regime_boundaries[0];
    let at = folds
        .iter()
        .position(|f| f.test_hull().end > boundary)
        .ok_or("boundary outside the test blocks")?;
    let lowest = curve
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|x| x.0)
        .unwrap();
    ensure!(at > 0 && lowest == at, "drop expected at fold {at}, curve {curve:?}");
    ensure!(curve[at] < curve[at - 1] - 0.2, "no clear drop at fold {at}: {curve:?}");
    Ok(format!(
        "holdout spread {s_switch:.3} switching vs {s_stat:.3} stationary; block-rolling drop at fold {at} ({:.3} -> {:.3})",
        curve[at - 1],
        curve[at]
    ))
}

fn selector_conformance() -> Check {
    let rules = RuleSet::default_rules();
    let attrs = |pois: f64, mi: f64, depth: f64, span: f64| Attributes {
        pois_per_user: pois,
        mi_bits: mi,
        mi_distance: Some(2),
        ldd_depth: depth,
        avg_trajectory_length: 500.0,
        span_months: span,
    };
    for (a, want) in [
        (attrs(80.0, 1.5, 1.0, 12.0), Verdict::MarkovClass),
        (attrs(80.0, 2.5, 1.0, 12.0), Verdict::RnnLstmClass),
        (attrs(150.0, 0.5, 4.0, 30.0), Verdict::HmRnnClass),
    ] {
        let r = recommend_attributes(&a, &rules);
        ensure!(r.verdict == want, "{a:?}: {} instead of {want}", r.verdict);
        ensure!(r.trace.len() == rules.rules.len(), "trace incomplete");
        ensure!(r.trace.iter().filter(|t| t.fired).count() == 1, "not exactly one fired rule");
        ensure!(
            r.trace.iter().all(|t| t.conditions.len() == rules.rules.iter().find(|x| x.id == t.rule).unwrap().conditions.len()),
            "trace misses conditions"
        );
    }
    let mut rng = SplitMix64::new(0x5eed_0010);
    for _ in 0..10_000 {
        let a = Attributes {
            pois_per_user: rng.next_f64() * 400.0,
            mi_bits: rng.next_f64() * 6.0,
            mi_distance: Some(2 + rng.below(100)),
            ldd_depth: rng.below(20) as f64,
            avg_trajectory_length: rng.next_f64() * 1e4,
            span_months: rng.next_f64() * 60.0,
        };
        let r = recommend_attributes(&a, &rules);
        ensure!(r.trace.iter().filter(|t| t.fired).count() == 1, "no verdict for {a:?}");
    }
    Ok("three threshold examples with full traces; 10000-point grid total".into())
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn full_pipeline(root: &Path, seed: u64) -> Result<(), String> {
    let synth = lib(generate(&SourceSpec {
        source: SourceKind::CopyWithGap {
            k: 4,
            noise: 0.2,
            alphabet: 9,
            no_repeat: true,
        },
        n_symbols: 4000,
        n_users: 5,
        seed,
    }))?;
    let ds_dir = root.join("dataset");
    lib(pipeline::write_synth(&synth, &ds_dir))?;
    let ds = lib(mobsel_core::ingest::load_dataset(&ds_dir))?;
    let c = lib(characterize(&ds, &CharacterizeParams { d_max: 40, ..Default::default() }))?;
    lib(pipeline::write_characterization(&c, &root.join("char/report.json")))?;
    let model = ModelSpec::Native(PredictorSpec::markov(2));
    let plan = ValidationPlan::new(Scheme::BlockRolling { k: 10, p: 1 }).with_seed(seed);
    let e = lib(evaluate(&ds, &model, &plan))?;
    lib(pipeline::write_evaluation(&e, &root.join("validate/folds.csv")))?;
    let r = lib(recommend(&c.report, &RuleSet::default_rules()))?;
    lib(pipeline::write_json(&root.join("recommendation.json"), &r))?;
    let inputs = ReportInputs {
        characterization: Some(c.report),
        evaluations: vec![e],
        sensitivity: None,
        recommendation: Some(r),
    };
    lib(pipeline::write_report(&ds, &inputs, &root.join("bundle")))?;
    Ok(())
}

fn end_to_end_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    full_pipeline(&a, 42)?;
    full_pipeline(&b, 42)?;
    let files = files_under(&a);
    ensure!(files == files_under(&b), "different file sets");
    ensure!(files.len() >= 10, "only {} files written", files.len());
    for f in &files {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        ensure!(x == y, "{} differs between runs", f.display());
    }
    let c = tmp.path().join("c");
    full_pipeline(&c, 43)?;
    let changed = std::fs::read(a.join("dataset/sequences.jsonl")).unwrap()
        != std::fs::read(c.join("dataset/sequences.jsonl")).unwrap();
    ensure!(changed, "seed has no effect");
    Ok(format!("{} files byte-identical across reruns", files.len()))
}

// ---------------------------------------------------------------- harness

/// Number, name, runtime budget in seconds, check.
type Criterion = (u32, &'static str, Option<u64>, fn() -> Check);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "MI identity and oracle equivalence", Some(10), mi_identity_and_oracle),
        (2, "PMI correctness", None, pmi_arithmetic),
        (3, "entropy estimator consistency", Some(60), entropy_estimator),
        (4, "Fano solver", None, fano_solver),
        (5, "LDD detection", None, ldd_detection),
        (6, "match-structure oracle", None, match_structure_oracle),
        (7, "predictor exactness", None, predictor_exactness),
        (8, "leakage freedom", None, leakage_freedom),
        (9, "validation sensitivity", Some(120), validation_sensitivity),
        (10, "selector conformance", None, selector_conformance),
        (11, "end-to-end determinism", None, end_to_end_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if took > Duration::from_secs(b) => {
                Err(format!("took {:.1}s, budget {b}s", took.as_secs_f64()))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} [{:.2}s]: {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{:.2}s]: {why}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
