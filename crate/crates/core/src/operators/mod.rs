//! The fourteen mutation operators, their site predicates and shape repair.
//!
//! Every operator is a pure function from a model to a new model. Structure
//! and input operators may leave edges with mismatched shapes; those are
//! closed by [`repair_shapes`], which inserts Pad or Reshape adapters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::schema::MUTABLE_ATTRIBUTES;
use crate::ir::{validate_graph, GraphModel, LayerKind, LayerNode};
use crate::tensor::{Shape, Tensor};

mod repair;
mod structure;
mod weight;

pub use repair::repair_shapes;

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorCode {
    LA,
    LR,
    LC,
    LS,
    ARFm,
    ARFp,
    SM,
    DM,
    PM,
    WS,
    NS,
    GF,
    NAI,
    NEB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Structure,
    Input,
    Parameter,
    Weight,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Structure,
        Family::Input,
        Family::Parameter,
        Family::Weight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Structure => "structure",
            Family::Input => "input",
            Family::Parameter => "parameter",
            Family::Weight => "weight",
        }
    }
}

impl OperatorCode {
    pub const ALL: [OperatorCode; 14] = [
        OperatorCode::LA,
        OperatorCode::LR,
        OperatorCode::LC,
        OperatorCode::LS,
        OperatorCode::ARFm,
        OperatorCode::ARFp,
        OperatorCode::SM,
        OperatorCode::DM,
        OperatorCode::PM,
        OperatorCode::WS,
        OperatorCode::NS,
        OperatorCode::GF,
        OperatorCode::NAI,
        OperatorCode::NEB,
    ];

    pub fn family(self) -> Family {
        use OperatorCode::*;
        match self {
            LA | LR | LC | LS | ARFm | ARFp => Family::Structure,
            SM | DM => Family::Input,
            PM => Family::Parameter,
            WS | NS | GF | NAI | NEB => Family::Weight,
        }
    }

    pub fn name(self) -> &'static str {
        use OperatorCode::*;
        match self {
            LA => "LA",
            LR => "LR",
            LC => "LC",
            LS => "LS",
            ARFm => "ARFm",
            ARFp => "ARFp",
            SM => "SM",
            DM => "DM",
            PM => "PM",
            WS => "WS",
            NS => "NS",
            GF => "GF",
            NAI => "NAI",
            NEB => "NEB",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Parameter names and defaults this operator understands.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        use OperatorCode::*;
        match self {
            GF => &[("sigma", 0.1)],
            NAI | NEB => &[("fraction", 0.3)],
            WS | NS => &[("block", 0.5)],
            SM | DM => &[("scale", 2.0)],
            _ => &[],
        }
    }
}

impl fmt::Display for OperatorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s).ok_or_else(|| Error::Config(format!("unknown operator `{s}`")))
    }
}

/// An operator code together with its numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationOperator {
    pub code: OperatorCode,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl MutationOperator {
    /// The operator with every parameter at its default.
    pub fn new(code: OperatorCode) -> Self {
        Self {
            code,
            params: code
                .default_params()
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }

    pub fn family(&self) -> Family {
        self.code.family()
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        if !self.code.default_params().iter().any(|(k, _)| *k == name) {
            return Err(Error::Config(format!(
                "operator {} has no parameter `{name}`",
                self.code
            )));
        }
        self.params.insert(name.to_string(), value);
        self.check()?;
        Ok(self)
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or_else(|| {
            self.code
                .default_params()
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        })
    }

    pub(crate) fn scale(&self) -> usize {
        self.param("scale") as usize
    }

    /// Range checks on parameter values.
    pub fn check(&self) -> Result<()> {
        for (name, &v) in &self.params {
            let ok = match name.as_str() {
                "sigma" => v > 0.0 && v.is_finite(),
                "fraction" | "block" => v > 0.0 && v <= 1.0,
                "scale" => v >= 2.0 && v.fract() == 0.0 && v <= 64.0,
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "parameter {}.{name} = {v} is out of range",
                    self.code
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MutationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        if !self.params.is_empty() {
            let parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", parts.join(","))?;
        }
        Ok(())
    }
}

/// Where an operator acts. `detail` is the second node for LS, the attribute
/// for PM, the weight index for weight operators and the axis for SM.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MutationSite {
    pub node_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl MutationSite {
    pub fn node(id: impl Into<String>) -> Self {
        Self {
            node_id: id.into(),
            detail: None,
        }
    }

    pub fn with_detail(id: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            node_id: id.into(),
            detail: Some(detail.into()),
        }
    }
}

impl fmt::Display for MutationSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            Some(d) => write!(f, "{}:{d}", self.node_id),
            None => f.write_str(&self.node_id),
        }
    }
}

impl FromStr for MutationSite {
    type Err = Error;

    /// Parses `ID` or `ID:DETAIL`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((id, d)) if !id.is_empty() && !d.is_empty() => Ok(Self::with_detail(id, d)),
            None if !s.is_empty() => Ok(Self::node(s)),
            _ => Err(Error::Config(format!("malformed site `{s}`"))),
        }
    }
}

/// One adapter inserted by shape repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEntry {
    pub node_id: String,
    pub kind: LayerKind,
    pub producer: String,
    pub consumer: String,
    pub from: Shape,
    pub to: Shape,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct MutationOutcome {
    pub model: GraphModel,
    pub repair_log: Vec<RepairEntry>,
}

/// Copy of `model` whose weight tensors keep their shapes but drop their data.
/// Shape inference and validation only look at shapes, so trial applications
/// run on skeletons without copying weights.
pub(crate) fn skeleton(model: &GraphModel) -> GraphModel {
    GraphModel {
        name: model.name.clone(),
        input: model.input.clone(),
        nodes: model
            .nodes
            .iter()
            .map(|n| LayerNode {
                id: n.id.clone(),
                kind: n.kind,
                attributes: n.attributes.clone(),
                weights: n
                    .weights
                    .iter()
                    .map(|w| Tensor {
                        shape: w.shape.clone(),
                        data: Vec::new(),
                    })
                    .collect(),
                inputs: n.inputs.clone(),
            })
            .collect(),
        outputs: model.outputs.clone(),
        regions: model.regions.clone(),
    }
}

/// Sites `op` can act on, in deterministic order.
///
/// Structure and input operators are trial-applied to a weightless copy so
/// every returned site is known to yield a valid outcome.
pub fn applicable_sites(model: &GraphModel, op: &MutationOperator) -> Vec<MutationSite> {
    use OperatorCode::*;
    let non_output = || {
        model
            .nodes
            .iter()
            .filter(|n| !model.is_output(&n.id))
            .map(|n| n.id.clone())
    };
    let candidates: Vec<MutationSite> = match op.code {
        WS | NS | GF | NAI | NEB => {
            return model
                .nodes
                .iter()
                .filter(|n| !n.weights.is_empty())
                .map(|n| MutationSite::node(&n.id))
                .collect()
        }
        ARFm | ARFp => model
            .nodes
            .iter()
            .filter(|n| n.kind.is_activation())
            .map(|n| MutationSite::node(&n.id))
            .collect(),
        LR => model.nodes.iter().map(|n| MutationSite::node(&n.id)).collect(),
        LA | LC | DM => non_output().map(MutationSite::node).collect(),
        SM => {
            let Ok(shapes) = crate::ir::infer_shapes(model) else {
                return Vec::new();
            };
            let mut sites = Vec::new();
            for id in non_output() {
                let node = model.node(&id).expect("listed id");
                let first = &node.inputs[0];
                let shape = if *first == model.input.name {
                    model.input.shape.clone()
                } else {
                    shapes[first].clone()
                };
                for axis in structure::spatial_axes(shape.len()) {
                    sites.push(MutationSite::with_detail(&id, axis.to_string()));
                }
            }
            sites
        }
        LS => {
            let ids: Vec<String> = non_output().collect();
            let mut pairs = Vec::new();
            for (i, a) in ids.iter().enumerate() {
                for b in &ids[i + 1..] {
                    pairs.push(MutationSite::with_detail(a, b));
                }
            }
            pairs
        }
        PM => model
            .nodes
            .iter()
            .filter(|n| MUTABLE_ATTRIBUTES.iter().any(|a| n.attributes.contains_key(*a)))
            .map(|n| MutationSite::node(&n.id))
            .collect(),
    };
    let skel = skeleton(model);
    candidates
        .into_iter()
        .filter(|site| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            structure::apply(&skel, op, site, &mut rng)
                .map(|o| validate_graph(&o.model).is_valid())
                .unwrap_or(false)
        })
        .collect()
}

/// Applies `op` at `site`, returning a new model plus the repair log.
pub fn apply<R: Rng + ?Sized>(
    model: &GraphModel,
    op: &MutationOperator,
    site: &MutationSite,
    rng: &mut R,
) -> Result<MutationOutcome> {
    op.check()?;
    if !model.contains(&site.node_id) {
        return Err(Error::Precondition(format!(
            "site `{}` is not a node of the model",
            site.node_id
        )));
    }
    let outcome = match op.family() {
        Family::Weight => weight::apply(model, op, site, rng)?,
        _ => structure::apply(model, op, site, rng)?,
    };
    let report = validate_graph(&outcome.model);
    if !report.is_valid() {
        return Err(Error::RepairFailed {
            node: site.node_id.clone(),
            reason: report.to_string().trim_end().to_string(),
        });
    }
    Ok(outcome)
}

/// [`apply`] with a ChaCha8 stream seeded by `seed`, the form in which
/// campaign steps are recorded and replayed.
pub fn apply_seeded(
    model: &GraphModel,
    op: &MutationOperator,
    site: &MutationSite,
    seed: u64,
) -> Result<MutationOutcome> {
    apply(model, op, site, &mut ChaCha8Rng::seed_from_u64(seed))
}
