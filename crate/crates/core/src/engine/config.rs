//! Campaign configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{AdapterCommand, Backend, CaptureOptions, FaultSpec, TimingMode};
use crate::error::{Error, Result};
use crate::ir::native::read_model;
use crate::ir::{generate_seed, GraphModel, SeedKind};
use crate::operators::{Family, MutationOperator, OperatorCode};
use crate::oracles::OracleConfig;

/// Environment variable that may hold the adapter launch command.
pub const ADAPTER_ENV: &str = "GRAPHMUT_ADAPTER";

/// A seed model: a built-in generator or a native model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SeedSource {
    Builtin {
        kind: SeedKind,
        #[serde(default)]
        rng_seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl SeedSource {
    pub fn id(&self) -> String {
        match self {
            SeedSource::Builtin { kind, rng_seed: 0 } => kind.name().to_string(),
            SeedSource::Builtin { kind, rng_seed } => format!("{}-{rng_seed}", kind.name()),
            SeedSource::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        }
    }

    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<GraphModel> {
        match self {
            SeedSource::Builtin { kind, rng_seed } => Ok(generate_seed(*kind, *rng_seed)),
            SeedSource::File { path } => read_model(&base.join(path)),
        }
    }
}

/// Family weights and per-operator weights within a family. An operator's
/// share is its family weight times its fraction of the family's operator
/// weights, so default family frequencies stay 4:2:1:2 regardless of how
/// many operators a family has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorWeights {
    pub families: BTreeMap<Family, f64>,
    pub operators: BTreeMap<OperatorCode, f64>,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        Self {
            families: BTreeMap::from([
                (Family::Structure, 4.0),
                (Family::Input, 2.0),
                (Family::Parameter, 1.0),
                (Family::Weight, 2.0),
            ]),
            operators: BTreeMap::new(),
        }
    }
}

impl OperatorWeights {
    fn op_weight(&self, code: OperatorCode) -> f64 {
        self.operators.get(&code).copied().unwrap_or(1.0)
    }

    /// Effective sampling weight of one operator.
    pub fn weight(&self, code: OperatorCode) -> f64 {
        let family = code.family();
        let fw = self.families.get(&family).copied().unwrap_or(0.0);
        let total: f64 = OperatorCode::ALL
            .iter()
            .filter(|c| c.family() == family)
            .map(|c| self.op_weight(*c))
            .sum();
        if total > 0.0 {
            fw * self.op_weight(code) / total
        } else {
            0.0
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = self.families.values().chain(self.operators.values());
        if let Some(w) = all.clone().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("operator weight {w} is negative or not finite")));
        }
        if OperatorCode::ALL.iter().all(|c| self.weight(*c) == 0.0) {
            return Err(Error::Config("every operator weight is zero".into()));
        }
        Ok(())
    }
}

/// Timing used for campaign traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimingChoice {
    /// Deterministic cost model; keeps report files byte-identical.
    #[default]
    Modeled,
    /// Wall clock, median of `timing_reps` runs.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub rng_seed: u64,
    /// Mutant budget; `--budget` on the command line overrides it.
    pub budget: usize,
    pub seeds: Vec<SeedSource>,
    pub backends: Vec<String>,
    /// Faults for the `faulty` backend. Absent means every fault at defaults.
    pub faults: Option<Vec<String>>,
    /// Launch command for `external` backends; falls back to `GRAPHMUT_ADAPTER`.
    pub adapter: Option<String>,
    /// Per-operator cap overrides on top of the depth-tier defaults.
    pub rounds: BTreeMap<OperatorCode, usize>,
    pub operator_weights: OperatorWeights,
    /// Per-operator parameter overrides, e.g. `GF = { sigma = 0.2 }`.
    pub params: BTreeMap<OperatorCode, BTreeMap<String, f64>>,
    pub backbone_bias: f64,
    pub order_bias: f64,
    pub legality_bound: f64,
    pub pool_bound: usize,
    /// Mutants generated from one pool state and executed in parallel.
    pub batch: usize,
    pub timing: TimingChoice,
    pub timing_reps: usize,
    pub oracle: OracleConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            budget: 200,
            seeds: vec![SeedSource::Builtin {
                kind: SeedKind::TinyCnn,
                rng_seed: 0,
            }],
            backends: vec!["reference".into(), "optimized".into()],
            faults: None,
            adapter: None,
            rounds: BTreeMap::new(),
            operator_weights: OperatorWeights::default(),
            params: BTreeMap::new(),
            backbone_bias: 0.7,
            order_bias: 0.97,
            legality_bound: 1e36,
            pool_bound: 64,
            batch: 8,
            timing: TimingChoice::Modeled,
            timing_reps: 3,
            oracle: OracleConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: CampaignConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        // the bound may be given at top level or under [oracle]; either fills the other
        let default = OracleConfig::default().legality_bound;
        if cfg.oracle.legality_bound == default {
            cfg.oracle.legality_bound = cfg.legality_bound;
        } else if cfg.legality_bound == default {
            cfg.legality_bound = cfg.oracle.legality_bound;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        self.operator_weights.check()?;
        self.oracle.check()?;
        if !(0.0..=1.0).contains(&self.backbone_bias) {
            return Err(Error::Config(format!(
                "backbone_bias {} is outside [0, 1]",
                self.backbone_bias
            )));
        }
        if !(self.order_bias > 0.0 && self.order_bias <= 1.0) {
            return Err(Error::Config(format!("order_bias {} is outside (0, 1]", self.order_bias)));
        }
        if self.legality_bound.is_nan() || self.legality_bound <= 0.0 {
            return Err(Error::Config("legality_bound must be positive".into()));
        }
        if self.oracle.legality_bound != self.legality_bound {
            return Err(Error::Config(format!(
                "oracle.legality_bound {} disagrees with legality_bound {}",
                self.oracle.legality_bound, self.legality_bound
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds configured".into()));
        }
        if self.backends.len() < 2 {
            return Err(Error::Config("differential testing needs at least two backends".into()));
        }
        if self.pool_bound == 0 || self.batch == 0 {
            return Err(Error::Config("pool_bound and batch must be at least 1".into()));
        }
        for code in self.params.keys() {
            self.operator(*code)?;
        }
        if let Some(f) = &self.faults {
            FaultSpec::parse_list(f)?;
        }
        Ok(())
    }

    /// The operator with configured parameter overrides applied.
    pub fn operator(&self, code: OperatorCode) -> Result<MutationOperator> {
        let mut op = MutationOperator::new(code);
        if let Some(params) = self.params.get(&code) {
            for (k, v) in params {
                op = op.with_param(k, *v)?;
            }
        }
        Ok(op)
    }

    pub fn capture(&self) -> CaptureOptions {
        CaptureOptions {
            per_layer: true,
            timing: match self.timing {
                TimingChoice::Modeled => TimingMode::Modeled,
                TimingChoice::Measured => TimingMode::Measured {
                    reps: self.timing_reps.max(1),
                },
            },
        }
    }

    pub fn fault_spec(&self) -> Result<FaultSpec> {
        match &self.faults {
            Some(names) => FaultSpec::parse_list(names),
            None => Ok(FaultSpec::all()),
        }
    }

    /// Resolves backend names. `external` without a command uses the
    /// `adapter` key, then the `GRAPHMUT_ADAPTER` variable.
    pub fn resolve_backends(&self) -> Result<Vec<Backend>> {
        let mut out: Vec<Backend> = Vec::new();
        for name in &self.backends {
            let b = match name.as_str() {
                "faulty" => Backend::Faulty(self.fault_spec()?),
                "external" => {
                    let cmd = self
                        .adapter
                        .clone()
                        .or_else(|| std::env::var(ADAPTER_ENV).ok())
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "backend `external` needs `adapter` or {ADAPTER_ENV}"
                            ))
                        })?;
                    Backend::External(AdapterCommand::parse(&cmd)?)
                }
                other => other.parse()?,
            };
            if out.iter().any(|o| o.id() == b.id()) {
                return Err(Error::Config(format!("backend `{}` listed twice", b.id())));
            }
            out.push(b);
        }
        Ok(out)
    }
}
