//! Test oracles: turn divergence between backend traces into defect reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{ExecutionTrace, Stage};
use crate::error::{Error, Result};
use crate::ir::GraphModel;

mod metrics;

pub use metrics::{layer_distance, rate_series, DistanceSeries, LayerDistance, LayerRate, RateSeries};

/// Traces of one mutant keyed by backend id.
pub type TraceSet = BTreeMap<String, ExecutionTrace>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub epsilon: f64,
    pub threshold_t: f64,
    pub efficiency_ratio: f64,
    pub memory_ratio: f64,
    pub legality_bound: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            threshold_t: 1e3,
            efficiency_ratio: 1.3,
            memory_ratio: 2.0,
            legality_bound: 1e36,
        }
    }
}

impl OracleConfig {
    pub fn check(&self) -> Result<()> {
        let fields = [
            ("epsilon", self.epsilon),
            ("threshold_t", self.threshold_t),
            ("efficiency_ratio", self.efficiency_ratio),
            ("memory_ratio", self.memory_ratio),
            ("legality_bound", self.legality_bound),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("oracle.{name} must be positive, got {v}")));
        }
        if self.threshold_t < 1.0 {
            return Err(Error::Config(format!(
                "oracle.threshold_t must be at least 1, got {}",
                self.threshold_t
            )));
        }
        Ok(())
    }
}

/// Strictly greater, with values within a few ulps of the threshold treated
/// as equal to it. Decimal inputs such as `1e-4 / 1e-7` otherwise land one
/// ulp above `1e3`.
pub fn exceeds(value: f64, threshold: f64) -> bool {
    value > threshold && value - threshold > 4.0 * f64::EPSILON * threshold.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectKind {
    Crash,
    #[serde(rename = "NAN")]
    Nan,
    Inconsistency,
    Efficiency,
    Memory,
}

impl DefectKind {
    pub const ALL: [DefectKind; 5] = [
        DefectKind::Crash,
        DefectKind::Nan,
        DefectKind::Inconsistency,
        DefectKind::Efficiency,
        DefectKind::Memory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Crash => "Crash",
            DefectKind::Nan => "NAN",
            DefectKind::Inconsistency => "Inconsistency",
            DefectKind::Efficiency => "Efficiency",
            DefectKind::Memory => "Memory",
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Defect taxonomy identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaxonomyId {
    G1,
    G2,
    G3,
    F1,
    F2,
    E1,
    B1,
}

impl TaxonomyId {
    pub fn describe(self) -> &'static str {
        match self {
            TaxonomyId::G1 => "model build or compilation failure",
            TaxonomyId::G2 => "failure during inference",
            TaxonomyId::G3 => "model or weight loading failure",
            TaxonomyId::F1 => "outputs disagree across backends",
            TaxonomyId::F2 => "wrong or non-finite result",
            TaxonomyId::E1 => "slow execution",
            TaxonomyId::B1 => "memory error",
        }
    }
}

impl fmt::Display for TaxonomyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Backends whose behaviour set them apart, or the compared pair.
    pub backends: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
    /// Named metric values, e.g. `max_r`, `time_ratio`, `peak_ratio`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub kind: DefectKind,
    pub taxonomy_id: TaxonomyId,
    pub mutant: String,
    pub evidence: Evidence,
    pub dedup_key: String,
}

impl DefectReport {
    fn new(kind: DefectKind, evidence: Evidence) -> Self {
        let mut r = Self {
            kind,
            taxonomy_id: TaxonomyId::F1,
            mutant: String::new(),
            evidence,
            dedup_key: String::new(),
        };
        r.taxonomy_id = classify(&r);
        r
    }
}

fn crashed_ids(traces: &TraceSet) -> Vec<&str> {
    traces
        .iter()
        .filter(|(_, t)| t.crashed())
        .map(|(id, _)| id.as_str())
        .collect()
}

/// Some but not all backends crashed.
pub fn crash_oracle(traces: &TraceSet, _cfg: &OracleConfig) -> Option<DefectReport> {
    let crashed = crashed_ids(traces);
    if crashed.is_empty() || crashed.len() == traces.len() {
        return None;
    }
    // the earliest stage among the crashed backends, ties by backend id
    let (id, stage, sig) = crashed
        .iter()
        .map(|id| {
            let (stage, sig) = traces[*id].crash().expect("crashed");
            (*id, stage, sig)
        })
        .min_by_key(|(_, stage, _)| *stage)?;
    Some(DefectReport::new(
        DefectKind::Crash,
        Evidence {
            backends: vec![id.to_string()],
            node: crash_node(sig),
            stage: Some(stage),
            signature: Some(sig.to_string()),
            ..Evidence::default()
        },
    ))
}

/// The first backtick-quoted identifier in a crash signature.
fn crash_node(sig: &str) -> Option<String> {
    let start = sig.find('`')? + 1;
    let len = sig[start..].find('`')?;
    Some(sig[start..start + len].to_string())
}

/// Some layer is non-finite on some but not all completed backends. The
/// evidence names the first such layer in capture order and the backends
/// that produced NaN or an infinity there. Layers a backend did not capture
/// are skipped; final outputs are checked last.
pub fn nan_oracle(traces: &TraceSet, _cfg: &OracleConfig) -> Option<DefectReport> {
    let done: Vec<(&String, &ExecutionTrace)> =
        traces.iter().filter(|(_, t)| t.completed()).collect();
    if done.len() < 2 {
        return None;
    }
    let (_, first) = done[0];
    let candidates = first
        .layer_outputs
        .iter()
        .map(|l| (l.node.as_str(), false))
        .chain(first.outputs.iter().map(|o| (o.node.as_str(), true)));
    for (node, is_output) in candidates {
        let mut bad = Vec::new();
        let mut good = 0;
        for (id, t) in &done {
            let tensor = if is_output {
                t.outputs.iter().find(|o| o.node == node).map(|o| &o.tensor)
            } else {
                t.layer(node)
            };
            match tensor.map(|x| x.has_non_finite()) {
                Some(true) => bad.push(id.to_string()),
                Some(false) => good += 1,
                None => {}
            }
        }
        if !bad.is_empty() && good > 0 {
            return Some(DefectReport::new(
                DefectKind::Nan,
                Evidence {
                    backends: bad,
                    node: Some(node.to_string()),
                    ..Evidence::default()
                },
            ));
        }
    }
    None
}

/// Rate series for every backend pair that shares an executed layer.
pub fn pair_rates(traces: &TraceSet, cfg: &OracleConfig) -> Vec<RateSeries> {
    let ids: Vec<&String> = traces.keys().collect();
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if let Ok(d) = layer_distance(&traces[*a], &traces[*b]) {
                out.push(rate_series(&d, cfg));
            }
        }
    }
    out
}

/// Some pair's change rate exceeds `threshold_t`.
pub fn inconsistency_oracle(series: &[RateSeries], cfg: &OracleConfig) -> Option<DefectReport> {
    let (s, top) = series
        .iter()
        .filter_map(|s| s.max().map(|m| (s, m)))
        .fold(None, |best: Option<(&RateSeries, &LayerRate)>, cur| match best {
            Some(b) if b.1.r >= cur.1.r => Some(b),
            _ => Some(cur),
        })?;
    if !exceeds(top.r, cfg.threshold_t) {
        return None;
    }
    Some(DefectReport::new(
        DefectKind::Inconsistency,
        Evidence {
            backends: vec![s.pair.0.clone(), s.pair.1.clone()],
            node: Some(top.node.clone()),
            metrics: BTreeMap::from([("max_r".to_string(), top.r)]),
            ..Evidence::default()
        },
    ))
}

fn ratio(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo > 0.0 {
        hi / lo
    } else if hi > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Total or per-layer time ratio between the slowest and fastest backend
/// exceeds `efficiency_ratio`. Every backend must have completed with timing.
pub fn efficiency_oracle(traces: &TraceSet, cfg: &OracleConfig) -> Option<DefectReport> {
    if traces.len() < 2 || traces.values().any(|t| !t.completed() || t.total_ms <= 0.0) {
        return None;
    }
    let (slow_id, slow) = traces
        .iter()
        .max_by(|a, b| a.1.total_ms.total_cmp(&b.1.total_ms))?;
    let fast = traces
        .values()
        .min_by(|a, b| a.total_ms.total_cmp(&b.total_ms))?;
    let total_ratio = ratio(slow.total_ms, fast.total_ms);

    // per-layer ratio between the extremes of every layer all backends timed
    let mut worst: Option<(String, f64, String)> = None;
    let (_, first) = traces.iter().next()?;
    for lt in &first.layer_times {
        let times: Vec<(&String, f64)> = traces
            .iter()
            .filter_map(|(id, t)| t.layer_time(&lt.node).map(|ms| (id, ms)))
            .collect();
        if times.len() != traces.len() {
            continue;
        }
        let hi = times.iter().max_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
        let lo = times.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let r = ratio(hi.1, lo);
        if worst.as_ref().is_none_or(|w| r > w.1) {
            worst = Some((lt.node.clone(), r, hi.0.clone()));
        }
    }
    let layer_fires = worst.as_ref().is_some_and(|w| exceeds(w.1, cfg.efficiency_ratio));
    if !exceeds(total_ratio, cfg.efficiency_ratio) && !layer_fires {
        return None;
    }
    let mut metrics = BTreeMap::from([("time_ratio".to_string(), total_ratio)]);
    let (node, culprit) = match &worst {
        Some((node, r, id)) if layer_fires => {
            metrics.insert("layer_time_ratio".into(), *r);
            (Some(node.clone()), id.clone())
        }
        _ => (None, slow_id.clone()),
    };
    Some(DefectReport::new(
        DefectKind::Efficiency,
        Evidence {
            backends: vec![culprit],
            node,
            metrics,
            ..Evidence::default()
        },
    ))
}

/// Some but not all backends failed to allocate, or peak memory estimates
/// of the backends that ran differ by more than `memory_ratio`. A peak of
/// zero means the backend did not report one.
pub fn memory_oracle(traces: &TraceSet, cfg: &OracleConfig) -> Option<DefectReport> {
    let failed: Vec<&str> = traces
        .iter()
        .filter(|(_, t)| t.alloc_failed)
        .map(|(id, _)| id.as_str())
        .collect();
    if !failed.is_empty() && failed.len() < traces.len() {
        let t = &traces[failed[0]];
        let (stage, sig) = t.crash().map_or((None, None), |(s, g)| (Some(s), Some(g.to_string())));
        return Some(DefectReport::new(
            DefectKind::Memory,
            Evidence {
                backends: failed.iter().map(|s| s.to_string()).collect(),
                node: sig.as_deref().and_then(crash_node),
                stage,
                signature: sig,
                metrics: BTreeMap::from([("alloc_failed".to_string(), 1.0)]),
                ..Evidence::default()
            },
        ));
    }
    let peaks: Vec<(&String, u64)> = traces
        .iter()
        .filter(|(_, t)| !t.crashed() && t.peak_mem_bytes > 0)
        .map(|(id, t)| (id, t.peak_mem_bytes))
        .collect();
    let hi = peaks.iter().max_by_key(|p| p.1)?;
    let lo = peaks.iter().map(|p| p.1).min()?;
    let r = ratio(hi.1 as f64, lo as f64);
    if !exceeds(r, cfg.memory_ratio) {
        return None;
    }
    Some(DefectReport::new(
        DefectKind::Memory,
        Evidence {
            backends: vec![hi.0.clone()],
            metrics: BTreeMap::from([("peak_ratio".to_string(), r)]),
            ..Evidence::default()
        },
    ))
}

pub fn classify(report: &DefectReport) -> TaxonomyId {
    match report.kind {
        DefectKind::Crash => match report.evidence.stage {
            Some(Stage::Build) => TaxonomyId::G1,
            Some(Stage::Load) => TaxonomyId::G3,
            Some(Stage::Infer) | None => TaxonomyId::G2,
        },
        DefectKind::Nan => TaxonomyId::F2,
        DefectKind::Inconsistency => TaxonomyId::F1,
        DefectKind::Efficiency => TaxonomyId::E1,
        DefectKind::Memory => TaxonomyId::B1,
    }
}

/// Replaces digit runs with `#` and backtick-quoted names with `*`, so
/// signatures that differ only in sizes or node ids compare equal.
pub fn normalize_signature(sig: &str) -> String {
    let mut out = String::with_capacity(sig.len());
    let mut chars = sig.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            while chars.peek().is_some_and(|d| d.is_ascii_digit() || *d == '.') {
                chars.next();
            }
            out.push('#');
        } else if c == '`' {
            for d in chars.by_ref() {
                if d == '`' {
                    break;
                }
            }
            out.push_str("`*`");
        } else {
            out.push(c);
        }
    }
    out
}

fn decade(v: f64) -> String {
    if v.is_finite() && v > 0.0 {
        format!("1e{}", v.log10().floor() as i64)
    } else {
        "inf".into()
    }
}

/// `kind|taxonomy|layer kind|signature or metric bucket`.
pub fn dedup_key(report: &DefectReport) -> String {
    let e = &report.evidence;
    let layer = e.layer_kind.as_deref().unwrap_or("-");
    let bucket = match report.kind {
        DefectKind::Crash => e.signature.as_deref().map(normalize_signature).unwrap_or_default(),
        DefectKind::Inconsistency => e.metrics.get("max_r").map(|r| decade(*r)).unwrap_or_default(),
        DefectKind::Memory if e.metrics.contains_key("alloc_failed") => "alloc".into(),
        DefectKind::Memory => "peak".into(),
        DefectKind::Nan | DefectKind::Efficiency => "-".into(),
    };
    format!("{}|{}|{layer}|{bucket}", report.kind, report.taxonomy_id)
}

/// Runs every oracle on a legal mutant's traces. Reports come back
/// classified, keyed, and attributed to `mutant`, in a fixed oracle order.
pub fn run_oracles(
    traces: &TraceSet,
    model: &GraphModel,
    mutant: &str,
    cfg: &OracleConfig,
) -> Vec<DefectReport> {
    let rates = pair_rates(traces, cfg);
    let found = [
        crash_oracle(traces, cfg),
        nan_oracle(traces, cfg),
        inconsistency_oracle(&rates, cfg),
        efficiency_oracle(traces, cfg),
        memory_oracle(traces, cfg),
    ];
    found
        .into_iter()
        .flatten()
        .map(|mut r| {
            r.mutant = mutant.to_string();
            if let Some(node) = r.evidence.node.as_deref().and_then(|n| model.node(n)) {
                r.evidence.layer_kind = Some(node.kind.name().to_string());
            }
            r.taxonomy_id = classify(&r);
            r.dedup_key = dedup_key(&r);
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueDefect {
    pub report: DefectReport,
    pub count: usize,
}

/// Keeps the first report per dedup key and counts the rest.
#[derive(Debug, Default, Clone)]
pub struct Deduper {
    index: HashMap<String, usize>,
    uniques: Vec<UniqueDefect>,
}

impl Deduper {
    /// Returns true when the report opens a new key.
    pub fn push(&mut self, report: DefectReport) -> bool {
        match self.index.get(&report.dedup_key) {
            Some(&i) => {
                self.uniques[i].count += 1;
                false
            }
            None => {
                self.index.insert(report.dedup_key.clone(), self.uniques.len());
                self.uniques.push(UniqueDefect { report, count: 1 });
                true
            }
        }
    }

    pub fn uniques(&self) -> &[UniqueDefect] {
        &self.uniques
    }

    pub fn into_uniques(self) -> Vec<UniqueDefect> {
        self.uniques
    }
}

pub fn dedup(reports: Vec<DefectReport>) -> Vec<UniqueDefect> {
    let mut d = Deduper::default();
    for r in reports {
        d.push(r);
    }
    d.into_uniques()
}
