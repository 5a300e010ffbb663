//! Mutation scheduling: operator and site selection, round caps, the seed
//! pool, legality filtering and lineage replay.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::native::model_hash;
use crate::ir::{validate_graph, GraphModel, RegionTag};
use crate::operators::{applicable_sites, apply_seeded, Family, MutationOperator, MutationSite, OperatorCode};
use crate::oracles::TraceSet;

mod config;

pub use config::{CampaignConfig, OperatorWeights, SeedSource, TimingChoice, ADAPTER_ENV};

/// Default per-operator caps for a model of the given depth.
pub fn default_caps(depth: usize) -> BTreeMap<OperatorCode, usize> {
    let (lr, arfm, others) = match depth {
        0..=14 => (5, 5, 10),
        15..=40 => (20, 10, 40),
        _ => (50, 20, 100),
    };
    OperatorCode::ALL
        .iter()
        .map(|&c| {
            let cap = match c {
                OperatorCode::LR => lr,
                OperatorCode::ARFm => arfm,
                _ if c.family() == Family::Weight => 100,
                _ => others,
            };
            (c, cap)
        })
        .collect()
}

/// Campaign-wide caps: the tier of the deepest seed, then config overrides.
pub fn campaign_caps<'a>(
    seeds: impl IntoIterator<Item = &'a GraphModel>,
    config: &CampaignConfig,
) -> BTreeMap<OperatorCode, usize> {
    let depth = seeds.into_iter().map(GraphModel::depth).max().unwrap_or(0);
    let mut caps = default_caps(depth);
    caps.extend(config.rounds.iter().map(|(k, v)| (*k, *v)));
    caps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub operator: MutationOperator,
    pub site: MutationSite,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason")]
pub enum LegalityStatus {
    Pending,
    Legal,
    Illegal(String),
}

impl LegalityStatus {
    pub fn is_legal(&self) -> bool {
        *self == LegalityStatus::Legal
    }
}

impl fmt::Display for LegalityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LegalityStatus::Pending => f.write_str("pending"),
            LegalityStatus::Legal => f.write_str("legal"),
            LegalityStatus::Illegal(r) => write!(f, "illegal ({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantRecord {
    pub id: String,
    pub seed_id: String,
    /// Id of the live mutant this one was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub steps: Vec<Step>,
    pub legality: LegalityStatus,
    /// Hash of the native serialization of the mutant.
    pub model_hash: String,
}

impl MutantRecord {
    pub fn order(&self) -> usize {
        self.steps.len()
    }

    /// The operator of the newest step.
    pub fn operator(&self) -> Option<OperatorCode> {
        self.steps.last().map(|s| s.operator.code)
    }
}

/// A legal mutant kept as a base for higher-order mutation.
#[derive(Debug, Clone)]
pub struct LiveMutant {
    pub record: MutantRecord,
    pub model: GraphModel,
}

#[derive(Debug, Clone)]
pub struct SeedPool {
    seeds: BTreeMap<String, GraphModel>,
    live: Vec<LiveMutant>,
    bound: usize,
}

impl SeedPool {
    pub fn new(bound: usize) -> Self {
        Self {
            seeds: BTreeMap::new(),
            live: Vec::new(),
            bound: bound.max(1),
        }
    }

    pub fn add_seed(&mut self, id: impl Into<String>, model: GraphModel) -> Result<()> {
        let id = id.into();
        let report = validate_graph(&model);
        if !report.is_valid() {
            return Err(Error::InvalidGraph(format!("seed `{id}`: {}", report.to_string().trim_end())));
        }
        if self.seeds.contains_key(&id) {
            return Err(Error::Config(format!("seed id `{id}` used twice")));
        }
        self.seeds.insert(id, model);
        Ok(())
    }

    /// Resolves every configured seed; relative paths resolve against `base`.
    pub fn from_config(config: &CampaignConfig, base: &std::path::Path) -> Result<Self> {
        let mut pool = SeedPool::new(config.pool_bound);
        for src in &config.seeds {
            pool.add_seed(src.id(), src.load(base)?)?;
        }
        Ok(pool)
    }

    pub fn seed(&self, id: &str) -> Option<&GraphModel> {
        self.seeds.get(id)
    }

    pub fn seeds(&self) -> impl Iterator<Item = (&String, &GraphModel)> {
        self.seeds.iter()
    }

    pub fn live(&self) -> &[LiveMutant] {
        &self.live
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty() && self.live.is_empty()
    }

    /// Adds a legal mutant. Above the bound the highest-order live mutant
    /// goes, the most recent one among equals.
    pub fn admit(&mut self, record: MutantRecord, model: GraphModel) {
        self.live.push(LiveMutant { record, model });
        while self.live.len() > self.bound {
            let (idx, _) = self
                .live
                .iter()
                .enumerate()
                .max_by_key(|(i, m)| (m.record.order(), *i))
                .expect("pool is non-empty");
            self.live.remove(idx);
        }
    }
}

/// Samples an operator among `allowed` codes proportionally to configured
/// weights. Parameters come from the config.
pub fn select_operator_among<R: Rng + ?Sized>(
    config: &CampaignConfig,
    allowed: &[OperatorCode],
    rng: &mut R,
) -> Result<MutationOperator> {
    let weights: Vec<f64> = allowed
        .iter()
        .map(|c| config.operator_weights.weight(*c))
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|_| Error::Config("no operator with positive weight to choose from".into()))?;
    config.operator(allowed[dist.sample(rng)])
}

pub fn select_operator<R: Rng + ?Sized>(config: &CampaignConfig, rng: &mut R) -> Result<MutationOperator> {
    select_operator_among(config, &OperatorCode::ALL, rng)
}

/// Picks a site, preferring backbone sites with probability `backbone_bias`.
/// An empty preferred region falls back to all sites.
pub fn select_site<R: Rng + ?Sized>(
    model: &GraphModel,
    op: &MutationOperator,
    config: &CampaignConfig,
    rng: &mut R,
) -> Result<MutationSite> {
    let sites = applicable_sites(model, op);
    if sites.is_empty() {
        return Err(Error::Inapplicable {
            op: op.code.name().to_string(),
        });
    }
    let want = if rng.random_bool(config.backbone_bias) {
        RegionTag::Backbone
    } else {
        RegionTag::TaskHead
    };
    let region: Vec<&MutationSite> = sites
        .iter()
        .filter(|s| model.region_of(&s.node_id) == want)
        .collect();
    let site = if region.is_empty() {
        &sites[rng.random_range(0..sites.len())]
    } else {
        region[rng.random_range(0..region.len())]
    };
    Ok(site.clone())
}

/// Drives mutant generation for one campaign.
#[derive(Debug)]
pub struct Engine {
    pub config: CampaignConfig,
    pub pool: SeedPool,
    caps: BTreeMap<OperatorCode, usize>,
    used: BTreeMap<OperatorCode, usize>,
    rng: ChaCha8Rng,
    generated: usize,
}

impl Engine {
    pub fn new(config: CampaignConfig, pool: SeedPool) -> Result<Self> {
        config.check()?;
        if pool.is_empty() {
            return Err(Error::Config("seed pool is empty".into()));
        }
        let caps = campaign_caps(pool.seeds().map(|(_, m)| m), &config);
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            pool,
            caps,
            used: BTreeMap::new(),
            rng,
            generated: 0,
        })
    }

    pub fn caps(&self) -> &BTreeMap<OperatorCode, usize> {
        &self.caps
    }

    /// Steps generated so far per operator.
    pub fn used(&self) -> &BTreeMap<OperatorCode, usize> {
        &self.used
    }

    fn remaining(&self, code: OperatorCode) -> usize {
        let cap = self.caps.get(&code).copied().unwrap_or(0);
        cap.saturating_sub(self.used.get(&code).copied().unwrap_or(0))
    }

    /// Produces the next mutant with legality `Pending`.
    pub fn next_mutant(&mut self) -> Result<(MutantRecord, GraphModel)> {
        let open: Vec<OperatorCode> = OperatorCode::ALL
            .iter()
            .copied()
            .filter(|c| self.remaining(*c) > 0 && self.config.operator_weights.weight(*c) > 0.0)
            .collect();
        if open.is_empty() {
            return Err(Error::CampaignComplete);
        }

        // Bases: seeds at order 0, then live mutants.
        struct Base<'a> {
            seed_id: &'a str,
            parent: Option<&'a MutantRecord>,
            model: &'a GraphModel,
        }
        let mut bases: Vec<Base> = self
            .pool
            .seeds
            .iter()
            .map(|(id, m)| Base {
                seed_id: id,
                parent: None,
                model: m,
            })
            .chain(self.pool.live.iter().map(|l| Base {
                seed_id: &l.record.seed_id,
                parent: Some(&l.record),
                model: &l.model,
            }))
            .collect();
        let mut base_weights: Vec<f64> = bases
            .iter()
            .map(|b| {
                let order = b.parent.map_or(0, MutantRecord::order);
                self.config.order_bias.powi(order as i32)
            })
            .collect();

        while !bases.is_empty() {
            let bi = WeightedIndex::new(&base_weights)
                .map(|d| d.sample(&mut self.rng))
                .unwrap_or(0);
            let base = &bases[bi];
            let mut ops = open.clone();
            while !ops.is_empty() {
                let op = select_operator_among(&self.config, &ops, &mut self.rng)?;
                let site = match select_site(base.model, &op, &self.config, &mut self.rng) {
                    Ok(s) => s,
                    Err(Error::Inapplicable { .. }) => {
                        ops.retain(|c| *c != op.code);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let step_seed: u64 = self.rng.random();
                let outcome = apply_seeded(base.model, &op, &site, step_seed);
                let model = match outcome {
                    Ok(o) => o.model,
                    Err(Error::RepairFailed { .. } | Error::Precondition(_)) => continue,
                    Err(e) => return Err(e),
                };
                let mut steps = base.parent.map(|p| p.steps.clone()).unwrap_or_default();
                steps.push(Step {
                    operator: op.clone(),
                    site,
                    rng_seed: step_seed,
                });
                let record = MutantRecord {
                    id: format!("m{:05}", self.generated),
                    seed_id: base.seed_id.to_string(),
                    parent: base.parent.map(|p| p.id.clone()),
                    steps,
                    legality: LegalityStatus::Pending,
                    model_hash: model_hash(&model),
                };
                self.generated += 1;
                *self.used.entry(op.code).or_default() += 1;
                return Ok((record, model));
            }
            bases.remove(bi);
            base_weights.remove(bi);
        }
        Err(Error::CampaignComplete)
    }

    pub fn admit(&mut self, record: MutantRecord, model: GraphModel) {
        self.pool.admit(record, model);
    }
}

/// Decides whether a mutant's traces are worth testing at all.
pub fn legality_check(traces: &TraceSet, config: &CampaignConfig) -> Result<LegalityStatus> {
    if traces.len() < 2 {
        return Err(Error::Precondition(format!(
            "legality needs at least two traces, got {}",
            traces.len()
        )));
    }
    if traces.values().all(|t| t.crashed()) {
        return Ok(LegalityStatus::Illegal("universal-crash".into()));
    }
    if traces.values().all(|t| !t.crashed() && t.final_non_finite()) {
        return Ok(LegalityStatus::Illegal("universal-nan".into()));
    }
    if traces
        .values()
        .filter(|t| !t.crashed())
        .all(|t| f64::from(t.final_max_abs()) > config.legality_bound)
    {
        return Ok(LegalityStatus::Illegal("range".into()));
    }
    Ok(LegalityStatus::Legal)
}

/// Rebuilds a mutant from its seed by reapplying every stored step.
pub fn replay(record: &MutantRecord, pool: &SeedPool) -> Result<GraphModel> {
    let mut model = pool
        .seed(&record.seed_id)
        .ok_or_else(|| Error::MissingSeed(record.seed_id.clone()))?
        .clone();
    for (i, step) in record.steps.iter().enumerate() {
        model = apply_seeded(&model, &step.operator, &step.site, step.rng_seed)
            .map_err(|e| Error::ReplayDrift {
                step: i,
                reason: e.to_string(),
            })?
            .model;
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
