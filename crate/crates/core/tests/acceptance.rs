//! Acceptance suite. Each test prints one PASS/FAIL line straight to stdout
//! (bypassing the test harness capture) and then asserts.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use graphmut::backends::{
    optimized_interpret, reference_interpret, Backend, CaptureOptions, ExecutionTrace, LayerOutput, Stage,
    StageStatus,
};
use graphmut::campaign::{
    campaign_input, evaluate, read_jsonl, read_seed_dir, run_campaign, CampaignResult, LINEAGE_FILE, RESULTS_FILE,
    SEEDS_DIR,
};
use graphmut::engine::{replay, CampaignConfig, LegalityStatus, MutantRecord, SeedPool, SeedSource};
use graphmut::ir::native::model_hash;
use graphmut::ir::{generate_seed, AttrValue, InputSpec, SeedKind};
use graphmut::operators::OperatorCode;
use graphmut::oracles::{
    inconsistency_oracle, layer_distance, rate_series, DistanceSeries, LayerDistance, OracleConfig, TaxonomyId,
};
use graphmut::stats::{format_percent, operator_stats, MutantResult};
use graphmut::{GraphModel, LayerKind, LayerNode, Tensor};
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

/// Runs one criterion, prints its line, fails the test on FAIL.
fn criterion(name: &str, limit: Option<Duration>, body: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let mut outcome = body();
    let took = start.elapsed();
    if let (Ok(_), Some(limit)) = (&outcome, limit) {
        if took > limit {
            outcome = Err(format!("took {took:.1?}, limit {limit:?}"));
        }
    }
    let line = match &outcome {
        Ok(detail) => format!("PASS  {name} ({took:.1?}) {detail}"),
        Err(why) => format!("FAIL  {name} ({took:.1?}) {why}"),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    drop(out);
    if let Err(why) = outcome {
        panic!("{name}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn done_trace(id: &str, layers: Vec<LayerOutput>) -> ExecutionTrace {
    let mut t = ExecutionTrace::new(id);
    for s in Stage::ALL {
        t.stage_status.insert(s, StageStatus::Ok);
    }
    t.layer_outputs = layers;
    t
}

/// Mean absolute difference with compensated summation.
fn brute_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let v = (*x as f64 - *y as f64).abs();
        let t = sum + v;
        c += if sum.abs() >= v { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum + c) / a.len() as f64
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn metric_exactness() {
    criterion("metric exactness", Some(Duration::from_secs(10)), || {
        let cfg = OracleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut worst = 0.0f64;
        for case in 0..1000 {
            let layers = rng.random_range(1..12);
            let mut la = Vec::new();
            let mut lb = Vec::new();
            for l in 0..layers {
                let n = rng.random_range(1..300);
                let scale = 10f32.powi(rng.random_range(-6..3));
                let a: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
                let b: Vec<f32> = a
                    .iter()
                    .map(|v| v + rng.random_range(-1.0f32..1.0) * scale * 1e-3)
                    .collect();
                let node = format!("l{l}");
                la.push(LayerOutput {
                    node: node.clone(),
                    tensor: Tensor::new(vec![n], a).unwrap(),
                });
                lb.push(LayerOutput {
                    node,
                    tensor: Tensor::new(vec![n], b).unwrap(),
                });
            }
            let (ta, tb) = (done_trace("a", la), done_trace("b", lb));
            let d = layer_distance(&ta, &tb).map_err(|e| e.to_string())?;
            let r = rate_series(&d, &cfg);
            let brute_d: Vec<f64> = ta
                .layer_outputs
                .iter()
                .zip(&tb.layer_outputs)
                .map(|(x, y)| brute_distance(&x.tensor.data, &y.tensor.data))
                .collect();
            ensure(d.values.len() == brute_d.len(), || format!("case {case}: length"))?;
            for (got, want) in d.values.iter().zip(&brute_d) {
                let got = got.d.ok_or("unexpected flagged layer")?;
                worst = worst.max(rel(got, *want));
            }
            ensure(r.values.len() == brute_d.len() - 1, || format!("case {case}: rate length"))?;
            for (i, got) in r.values.iter().enumerate() {
                let want = ((brute_d[i + 1] - brute_d[i]) / (brute_d[i] + 1e-7)).abs();
                worst = worst.max(rel(got.r, want));
            }
        }
        ensure(worst <= 1e-12, || format!("relative error {worst:e}"))?;

        let series = |ds: &[f64]| DistanceSeries {
            pair: ("a".into(), "b".into()),
            values: ds
                .iter()
                .enumerate()
                .map(|(i, d)| LayerDistance {
                    node: format!("n{i}"),
                    d: Some(*d),
                })
                .collect(),
        };
        let boundary = rate_series(&series(&[0.0, 1e-4]), &cfg);
        ensure(inconsistency_oracle(&[boundary], &cfg).is_none(), || {
            "R = 1e-4/1e-7 fired the inconsistency oracle".into()
        })?;
        let above = rate_series(&series(&[0.0, 1.001e-4]), &cfg);
        ensure(inconsistency_oracle(&[above], &cfg).is_some(), || "R just above t did not fire".into())?;
        let eps = rate_series(&series(&[0.0, 1e-7]), &cfg);
        ensure((eps.values[0].r - 1.0).abs() < 1e-12, || {
            format!("epsilon not honored: R = {}", eps.values[0].r)
        })?;
        Ok(format!("worst relative error {worst:.1e} over 1000 traces"))
    });
}

#[test]
fn operator_law_suite() {
    criterion("operator law suite", Some(Duration::from_secs(60)), || {
        let results: Vec<Result<usize, String>> = OperatorCode::ALL
            .par_iter()
            .map(|&code| {
                let mut runner = TestRunner::new(PropConfig {
                    cases: 200,
                    failure_persistence: None,
                    ..PropConfig::default()
                });
                let strategy = (
                    proptest::sample::select(SeedKind::ALL.to_vec()),
                    0u64..10_000,
                    0usize..1000,
                    proptest::num::u64::ANY,
                );
                let applied = std::sync::atomic::AtomicUsize::new(0);
                runner
                    .run(&strategy, |(k, w, pick, step)| match common::check(code, k, w, pick, step) {
                        Ok(hit) => {
                            applied.fetch_add(usize::from(hit), std::sync::atomic::Ordering::Relaxed);
                            Ok(())
                        }
                        Err(e) => Err(TestCaseError::fail(e)),
                    })
                    .map_err(|e| format!("{code:?}: {e}"))?;
                Ok(applied.into_inner())
            })
            .collect();
        let mut applied = 0;
        for r in results {
            applied += r?;
        }
        Ok(format!("14 operators x 200 cases, {applied} applications, 0 violations"))
    });
}

fn recall_config() -> CampaignConfig {
    CampaignConfig {
        rng_seed: 0,
        budget: 200,
        backends: vec!["faulty".into(), "reference".into()],
        faults: Some(
            [
                "relu6-nan-mishandle",
                "conv-nan-emit",
                "pad-crash",
                "flatten-slowdown(1.4586)",
                "flatten-alloc-fail",
                "mul-inconsistency",
            ]
            .map(String::from)
            .to_vec(),
        ),
        seeds: vec![
            SeedSource::Builtin {
                kind: SeedKind::TinyCnn,
                rng_seed: 0,
            },
            SeedSource::Builtin {
                kind: SeedKind::TinyResblock,
                rng_seed: 0,
            },
        ],
        ..CampaignConfig::default()
    }
}

fn campaign(cfg: &CampaignConfig) -> (CampaignResult, SeedPool) {
    let pool = SeedPool::from_config(cfg, Path::new(".")).unwrap();
    run_campaign(cfg, pool, cfg.budget).unwrap()
}

#[test]
fn seeded_defect_recall() {
    criterion("seeded-defect recall", Some(Duration::from_secs(300)), || {
        let (result, _) = campaign(&recall_config());
        let found: BTreeSet<TaxonomyId> = result.defects.iter().map(|d| d.report.taxonomy_id).collect();
        let wanted = [TaxonomyId::F2, TaxonomyId::G2, TaxonomyId::E1, TaxonomyId::B1, TaxonomyId::F1];
        let missing: Vec<_> = wanted.iter().filter(|t| !found.contains(t)).collect();
        ensure(missing.is_empty(), || format!("no unique report for {missing:?}"))?;
        let slowdown = result
            .defects
            .iter()
            .filter(|d| d.report.taxonomy_id == TaxonomyId::E1)
            .filter_map(|d| d.report.evidence.metrics.get("layer_time_ratio"))
            .any(|r| (r - 1.4586).abs() < 1e-9);
        ensure(slowdown, || "no E1 report carries the 1.4586 Flatten ratio".into())?;
        let counts: BTreeMap<String, usize> = wanted
            .iter()
            .map(|t| {
                let n = result.defects.iter().filter(|d| d.report.taxonomy_id == *t).count();
                (t.to_string(), n)
            })
            .collect();
        Ok(format!("{} mutants, unique per class {counts:?}", result.records.len()))
    });
}

fn dense_model(weight: f32) -> GraphModel {
    let mut m = GraphModel::new(
        "huge",
        InputSpec {
            name: "input".into(),
            shape: vec![1, 1],
        },
    );
    m.nodes.push(
        LayerNode::new("d", LayerKind::Dense, vec!["input".into()])
            .with_attr("units", AttrValue::Int(1))
            .with_weights(vec![
                Tensor::filled(vec![1, 1], weight),
                Tensor::zeros(vec![1]),
            ]),
    );
    m.outputs = vec!["d".into()];
    m
}

#[test]
fn legality_filtering() {
    criterion("legality filtering", None, || {
        let cfg = CampaignConfig {
            backends: vec!["faulty".into(), "reference".into()],
            ..CampaignConfig::default()
        };
        let backends = cfg.resolve_backends().map_err(|e| e.to_string())?;
        let both_plain = [Backend::Reference, Backend::Optimized];

        let huge = dense_model(3e38);
        let x = campaign_input(&huge, cfg.rng_seed).data[0].abs();
        ensure(x > 0.01, || format!("input {x} too small for the range case"))?;

        let mut broken = generate_seed(SeedKind::TinyMlp, 0);
        broken.node_mut("dense2").unwrap().weights[0].data.truncate(5);

        let mut nan = generate_seed(SeedKind::TinyMlp, 0);
        nan.node_mut("dense5").unwrap().weights[1].data[0] = f32::NAN;

        let cases: [(&str, &GraphModel, &[Backend], &str); 3] = [
            ("range", &huge, &backends, "range"),
            ("crash everywhere", &broken, &backends, "universal-crash"),
            ("NaN everywhere", &nan, &both_plain, "universal-nan"),
        ];
        for (name, model, bs, reason) in cases {
            let ev = evaluate(model, name, bs, &cfg).map_err(|e| e.to_string())?;
            ensure(ev.legality == LegalityStatus::Illegal(reason.into()), || {
                format!("{name}: got {}", ev.legality)
            })?;
            ensure(ev.reports.is_empty(), || format!("{name}: produced reports"))?;
        }

        // contrast: NaN on one backend only is legal and reported
        let mut masked = generate_seed(SeedKind::TinyCnn, 0);
        for v in &mut masked.node_mut("bn1").unwrap().weights[3].data {
            *v = -*v;
        }
        let ev = evaluate(&masked, "masked", &backends, &cfg).map_err(|e| e.to_string())?;
        ensure(ev.legality.is_legal(), || format!("masked NaN judged {}", ev.legality))?;
        ensure(ev.reports.iter().any(|r| r.taxonomy_id == TaxonomyId::F2), || {
            "masked NaN not reported as F2".into()
        })?;
        Ok("range, universal-crash, universal-nan filtered; one-sided NaN kept".into())
    });
}

#[test]
fn determinism() {
    criterion("determinism", None, || {
        let cfg = CampaignConfig {
            budget: 80,
            rng_seed: 17,
            ..recall_config()
        };
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let (result, pool) = campaign(&cfg);
            result.write(d.path(), &pool, &cfg).map_err(|e| e.to_string())?;
        }
        for f in ["reports.jsonl", "lineage.jsonl", "defects.json", "results.jsonl", "curves.csv"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            ensure(a == b, || format!("{f} differs between runs"))?;
        }

        let dir = dirs[0].path();
        let records: Vec<MutantRecord> = read_jsonl(&dir.join(LINEAGE_FILE)).map_err(|e| e.to_string())?;
        let results: Vec<MutantResult> = read_jsonl(&dir.join(RESULTS_FILE)).map_err(|e| e.to_string())?;
        let pool = read_seed_dir(&dir.join(SEEDS_DIR)).map_err(|e| e.to_string())?;
        let backends = cfg.resolve_backends().map_err(|e| e.to_string())?;
        let checked: Vec<Result<(), String>> = records
            .par_iter()
            .zip(&results)
            .map(|(rec, res)| {
                let model = replay(rec, &pool).map_err(|e| format!("{}: {e}", rec.id))?;
                ensure(model_hash(&model) == rec.model_hash, || format!("{}: hash differs", rec.id))?;
                let ev = evaluate(&model, &rec.id, &backends, &cfg).map_err(|e| e.to_string())?;
                ensure(ev.legality == rec.legality, || format!("{}: legality differs", rec.id))?;
                let keys: Vec<String> = ev.reports.iter().map(|r| r.dedup_key.clone()).collect();
                ensure(keys == res.report_keys, || format!("{}: verdict differs", rec.id))
            })
            .collect();
        for c in checked {
            c?;
        }
        Ok(format!("{} lineages replayed and re-triggered", records.len()))
    });
}

#[test]
fn backend_agreement() {
    criterion("backend agreement", None, || {
        let capture = CaptureOptions::default();
        let worst: Vec<Result<f32, String>> = SeedKind::ALL
            .par_iter()
            .flat_map(|&kind| (0..100u64).into_par_iter().map(move |i| (kind, i)))
            .map(|(kind, i)| {
                let m = generate_seed(kind, 0);
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
                let n: usize = m.input.shape.iter().product();
                let x = Tensor::new(
                    m.input.shape.clone(),
                    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                )
                .unwrap();
                let a = reference_interpret(&m, &x, &capture);
                let b = optimized_interpret(&m, &x, &capture);
                ensure(a.completed() && b.completed(), || format!("{kind:?} input {i} did not complete"))?;
                let mut worst = 0.0f32;
                for (la, lb) in a.layer_outputs.iter().zip(&b.layer_outputs) {
                    for (p, q) in la.tensor.data.iter().zip(&lb.tensor.data) {
                        worst = worst.max((p - q).abs());
                    }
                }
                ensure(worst < 1e-4, || format!("{kind:?} input {i}: difference {worst:e}"))?;
                Ok(worst)
            })
            .collect();
        let mut max = 0.0f32;
        for w in worst {
            max = max.max(w?);
        }
        Ok(format!("3 seeds x 100 inputs, max per-layer difference {max:.2e}"))
    });
}

#[test]
fn cap_compliance() {
    criterion("cap compliance", None, || {
        let mut summary = Vec::new();
        for (kind, lr_cap, arfm_cap, budget) in [(SeedKind::TinyCnn, 5, 5, 700), (SeedKind::TinyResblock, 20, 10, 300)] {
            let cfg = CampaignConfig {
                rng_seed: 3,
                budget,
                backends: vec!["reference".into(), "optimized".into()],
                seeds: vec![SeedSource::Builtin { kind, rng_seed: 0 }],
                ..CampaignConfig::default()
            };
            let (result, pool) = campaign(&cfg);
            let dir = tempfile::tempdir().unwrap();
            result.write(dir.path(), &pool, &cfg).map_err(|e| e.to_string())?;
            ensure(result.caps[&OperatorCode::LR] == lr_cap && result.caps[&OperatorCode::ARFm] == arfm_cap, || {
                format!("{kind:?}: wrong tier {:?}", result.caps)
            })?;
            ensure(
                OperatorCode::ALL
                    .iter()
                    .filter(|c| c.family() == graphmut::operators::Family::Weight)
                    .all(|c| result.caps[c] == 100),
                || "weight caps are not 100".into(),
            )?;
            // audit the lineage file: each record's newest step is the one it added
            let records: Vec<MutantRecord> =
                read_jsonl(&dir.path().join(LINEAGE_FILE)).map_err(|e| e.to_string())?;
            let mut counts: BTreeMap<OperatorCode, usize> = BTreeMap::new();
            for r in &records {
                *counts.entry(r.operator().ok_or("record without steps")?).or_default() += 1;
            }
            for (code, n) in &counts {
                ensure(*n <= result.caps[code], || {
                    format!("{kind:?}: {code:?} used {n} times, cap {}", result.caps[code])
                })?;
            }
            let full: Vec<_> = counts
                .iter()
                .filter(|(c, n)| **n == result.caps[*c])
                .map(|(c, _)| c.name())
                .collect();
            summary.push(format!("{}: {} mutants, at cap {full:?}", kind.name(), records.len()));
        }
        Ok(summary.join("; "))
    });
}

#[test]
fn stats_formatting() {
    criterion("stats formatting", None, || {
        let result = |legal: bool| MutantResult {
            id: "m".into(),
            order: 1,
            operator: OperatorCode::PM,
            legality: if legal {
                LegalityStatus::Legal
            } else {
                LegalityStatus::Illegal("range".into())
            },
            execution_ms: legal.then_some(1.0),
            max_r: BTreeMap::new(),
            report_keys: Vec::new(),
        };
        let rs: Vec<MutantResult> = (0..1000).map(|i| result(i >= 363)).collect();
        let stats = operator_stats(&rs);
        let rate = stats.rows[0].illegal_rate;
        ensure(rate == 363.0 / 1000.0, || format!("illegal rate {rate}"))?;
        ensure(format_percent(rate) == "36.30%", || format!("rendered {}", format_percent(rate)))?;
        let table = stats.render();
        ensure(table.contains("36.30%"), || format!("table lacks 36.30%:\n{table}"))?;
        Ok("363/1000 renders 36.30%".into())
    });
}
