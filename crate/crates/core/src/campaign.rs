//! Campaign driver: generate, execute, filter, test, deduplicate, persist.
//!
//! Mutants are generated in batches from one pool state, executed in
//! parallel, and merged back in generation order, so output files depend
//! only on the configuration and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{execute, Backend};
use crate::engine::{legality_check, CampaignConfig, Engine, LegalityStatus, MutantRecord, SeedPool};
use crate::error::{Error, Result};
use crate::ir::native::{read_model, write_model};
use crate::ir::GraphModel;
use crate::operators::OperatorCode;
use crate::oracles::{pair_rates, run_oracles, DefectReport, Deduper, TraceSet, UniqueDefect};
use crate::stats::{operator_stats, MutantResult, OperatorStats};
use crate::tensor::Tensor;

pub const LINEAGE_FILE: &str = "lineage.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const DEFECTS_FILE: &str = "defects.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STATS_TEXT_FILE: &str = "stats.txt";
pub const STATS_JSON_FILE: &str = "stats.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SEEDS_DIR: &str = "seeds";

/// Test input for a model: uniform in [-1, 1), fixed by `rng_seed`.
pub fn campaign_input(model: &GraphModel, rng_seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n: usize = model.input.shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(model.input.shape.clone(), data).expect("length matches shape")
}

/// One mutant run on every backend, with its verdicts.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub traces: TraceSet,
    pub legality: LegalityStatus,
    /// Empty for illegal mutants.
    pub reports: Vec<DefectReport>,
    pub max_r: BTreeMap<String, f64>,
    pub execution_ms: Option<f64>,
}

pub fn pair_name(pair: &(String, String)) -> String {
    format!("{}|{}", pair.0, pair.1)
}

pub fn evaluate(
    model: &GraphModel,
    mutant_id: &str,
    backends: &[Backend],
    config: &CampaignConfig,
) -> Result<Evaluation> {
    let input = campaign_input(model, config.rng_seed);
    let capture = config.capture();
    let traces: TraceSet = backends
        .par_iter()
        .map(|b| execute(b, model, &input, &capture).map(|t| (t.backend_id.clone(), t)))
        .collect::<Result<_>>()?;
    let legality = legality_check(&traces, config)?;
    if !legality.is_legal() {
        return Ok(Evaluation {
            traces,
            legality,
            reports: Vec::new(),
            max_r: BTreeMap::new(),
            execution_ms: None,
        });
    }
    let max_r = pair_rates(&traces, &config.oracle)
        .iter()
        .filter_map(|s| s.max().map(|m| (pair_name(&s.pair), m.r)))
        .collect();
    let completed: Vec<f64> = traces
        .values()
        .filter(|t| t.completed())
        .map(|t| t.total_ms)
        .collect();
    let execution_ms = (!completed.is_empty()).then(|| completed.iter().sum::<f64>() / completed.len() as f64);
    let reports = run_oracles(&traces, model, mutant_id, &config.oracle);
    Ok(Evaluation {
        traces,
        legality,
        reports,
        max_r,
        execution_ms,
    })
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub records: Vec<MutantRecord>,
    pub results: Vec<MutantResult>,
    /// Every report, in generation order.
    pub reports: Vec<DefectReport>,
    pub defects: Vec<UniqueDefect>,
    pub caps: BTreeMap<OperatorCode, usize>,
    pub used: BTreeMap<OperatorCode, usize>,
    /// True when the run ended because every cap was spent.
    pub caps_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mutants: usize,
    pub legal: usize,
    pub illegal: BTreeMap<String, usize>,
    pub reports: usize,
    pub unique_defects: usize,
    pub unique_by_taxonomy: BTreeMap<String, usize>,
    pub max_order: usize,
    pub caps: BTreeMap<OperatorCode, usize>,
    pub used: BTreeMap<OperatorCode, usize>,
    pub caps_exhausted: bool,
}

/// One line of the curves file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub order: usize,
    pub operator: OperatorCode,
    pub pair: String,
    pub max_r: Option<f64>,
    pub legal: bool,
}

impl CampaignResult {
    /// 0 when defects were found, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.defects.is_empty() {
            1
        } else {
            0
        }
    }

    pub fn stats(&self) -> OperatorStats {
        operator_stats(&self.results)
    }

    pub fn summary(&self) -> Summary {
        let mut illegal = BTreeMap::new();
        for r in &self.records {
            if let LegalityStatus::Illegal(reason) = &r.legality {
                *illegal.entry(reason.clone()).or_insert(0) += 1;
            }
        }
        let mut unique_by_taxonomy = BTreeMap::new();
        for d in &self.defects {
            *unique_by_taxonomy
                .entry(d.report.taxonomy_id.to_string())
                .or_insert(0) += 1;
        }
        Summary {
            mutants: self.records.len(),
            legal: self.records.iter().filter(|r| r.legality.is_legal()).count(),
            illegal,
            reports: self.reports.len(),
            unique_defects: self.defects.len(),
            unique_by_taxonomy,
            max_order: self.records.iter().map(MutantRecord::order).max().unwrap_or(0),
            caps: self.caps.clone(),
            used: self.used.clone(),
            caps_exhausted: self.caps_exhausted,
        }
    }

    /// One row per mutant and backend pair, sorted by order; ties keep
    /// generation order. Illegal mutants have no rate.
    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let pairs: Vec<String> = {
            let mut p: Vec<String> = self.results.iter().flat_map(|r| r.max_r.keys().cloned()).collect();
            p.sort();
            p.dedup();
            p
        };
        let mut rows: Vec<CurveRow> = self
            .results
            .iter()
            .flat_map(|r| {
                pairs.iter().map(move |p| CurveRow {
                    order: r.order,
                    operator: r.operator,
                    pair: p.clone(),
                    max_r: r.max_r.get(p).copied(),
                    legal: r.legality.is_legal(),
                })
            })
            .collect();
        rows.sort_by_key(|r| r.order);
        rows
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("order,operator,pair,maxR,legal\n");
        for r in self.curve_rows() {
            let max_r = r.max_r.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.order,
                r.operator.name(),
                r.pair,
                max_r,
                u8::from(r.legal)
            ));
        }
        out
    }

    /// Writes every artifact of the run into `dir`, seeds included so the
    /// lineage can be replayed from the directory alone.
    pub fn write(&self, dir: &Path, pool: &SeedPool, config: &CampaignConfig) -> Result<()> {
        fs::create_dir_all(dir.join(SEEDS_DIR))?;
        for (id, model) in pool.seeds() {
            write_model(&dir.join(SEEDS_DIR).join(format!("{id}.json")), model)?;
        }
        write_jsonl(&dir.join(LINEAGE_FILE), &self.records)?;
        write_jsonl(&dir.join(REPORTS_FILE), &self.reports)?;
        write_jsonl(&dir.join(RESULTS_FILE), &self.results)?;
        fs::write(dir.join(DEFECTS_FILE), serde_json::to_string_pretty(&self.defects)? + "\n")?;
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&self.summary())? + "\n")?;
        let stats = self.stats();
        fs::write(dir.join(STATS_TEXT_FILE), stats.render())?;
        fs::write(dir.join(STATS_JSON_FILE), serde_json::to_string_pretty(&stats)? + "\n")?;
        fs::write(dir.join(CURVES_FILE), self.curves_csv())?;
        fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Seeds stored by [`CampaignResult::write`].
pub fn read_seed_dir(dir: &Path) -> Result<SeedPool> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut pool = SeedPool::new(64);
    for e in entries {
        let path = e.path();
        if path.extension().is_some_and(|x| x == "json") {
            let id = path.file_stem().expect("has a name").to_string_lossy().into_owned();
            pool.add_seed(id, read_model(&path)?)?;
        }
    }
    Ok(pool)
}

/// Runs until `budget` mutants were evaluated or every cap is spent.
pub fn run_campaign(config: &CampaignConfig, pool: SeedPool, budget: usize) -> Result<(CampaignResult, SeedPool)> {
    let backends = config.resolve_backends()?;
    let mut engine = Engine::new(config.clone(), pool)?;
    let mut result = CampaignResult {
        records: Vec::new(),
        results: Vec::new(),
        reports: Vec::new(),
        defects: Vec::new(),
        caps: engine.caps().clone(),
        used: BTreeMap::new(),
        caps_exhausted: false,
    };
    let mut dedup = Deduper::default();
    while result.records.len() < budget && !result.caps_exhausted {
        let want = config.batch.min(budget - result.records.len());
        let mut batch = Vec::with_capacity(want);
        for _ in 0..want {
            match engine.next_mutant() {
                Ok(m) => batch.push(m),
                Err(Error::CampaignComplete) => {
                    result.caps_exhausted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let evals: Vec<Evaluation> = batch
            .par_iter()
            .map(|(rec, model)| evaluate(model, &rec.id, &backends, config))
            .collect::<Result<_>>()?;
        for ((mut rec, model), ev) in batch.into_iter().zip(evals) {
            rec.legality = ev.legality.clone();
            result.results.push(MutantResult {
                id: rec.id.clone(),
                order: rec.order(),
                operator: rec.operator().expect("mutants have a step"),
                legality: rec.legality.clone(),
                execution_ms: ev.execution_ms,
                max_r: ev.max_r,
                report_keys: ev.reports.iter().map(|r| r.dedup_key.clone()).collect(),
            });
            for r in ev.reports {
                dedup.push(r.clone());
                result.reports.push(r);
            }
            if rec.legality.is_legal() {
                engine.admit(rec.clone(), model);
            }
            result.records.push(rec);
        }
    }
    result.defects = dedup.into_uniques();
    result.used = engine.used().clone();
    Ok((result, engine.pool))
}

/// Loads a config file, resolves its seeds relative to the file, runs the
/// campaign and writes artifacts to `out`.
pub fn run_campaign_file(path: &Path, budget: Option<usize>, out: &Path) -> Result<CampaignResult> {
    let config = CampaignConfig::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let pool = SeedPool::from_config(&config, base)?;
    let (result, pool) = run_campaign(&config, pool, budget.unwrap_or(config.budget))?;
    result.write(out, &pool, &config)?;
    Ok(result)
}
