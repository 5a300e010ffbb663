//! Backbone / task-head tagging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GraphModel, LayerKind, RegionTag};

/// How to split a model into backbone and task head.
///
/// The default marks the trailing run of Dense/Softmax/Reshape layers as the
/// task head, provided something precedes it. `force` tags every node alike;
/// `overrides` win over both.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegionPolicy {
    #[serde(default)]
    pub force: Option<RegionTag>,
    #[serde(default)]
    pub overrides: BTreeMap<String, RegionTag>,
}

impl RegionPolicy {
    pub fn all(tag: RegionTag) -> Self {
        Self {
            force: Some(tag),
            overrides: BTreeMap::new(),
        }
    }
}

const HEAD_KINDS: [LayerKind; 3] = [LayerKind::Dense, LayerKind::Softmax, LayerKind::Reshape];

pub fn tag_regions(model: &GraphModel, policy: &RegionPolicy) -> GraphModel {
    let mut out = model.clone();
    let order = model
        .topo_order()
        .unwrap_or_else(|_| (0..model.nodes.len()).collect());

    let head_len = order
        .iter()
        .rev()
        .take_while(|&&i| HEAD_KINDS.contains(&model.nodes[i].kind))
        .count();
    let head_len = if head_len == order.len() { 0 } else { head_len };

    out.regions.clear();
    for (pos, &i) in order.iter().enumerate() {
        let id = &model.nodes[i].id;
        let tag = if let Some(t) = policy.overrides.get(id) {
            *t
        } else if let Some(t) = policy.force {
            t
        } else if pos >= order.len() - head_len {
            RegionTag::TaskHead
        } else {
            RegionTag::Backbone
        };
        out.regions.insert(id.clone(), tag);
    }
    out
}
