//! Shared helpers for integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use graphmut::ir::native::to_native;
use graphmut::ir::{generate_seed, validate_graph, SeedKind};
use graphmut::operators::{applicable_sites, apply, MutationOperator, OperatorCode};
use graphmut::GraphModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(m: &GraphModel) -> Vec<&str> {
    m.nodes.iter().map(|n| n.id.as_str()).collect()
}

fn same_topology(a: &GraphModel, b: &GraphModel) -> bool {
    a.nodes.len() == b.nodes.len()
        && a.outputs == b.outputs
        && a.nodes
            .iter()
            .zip(&b.nodes)
            .all(|(x, y)| x.id == y.id && x.kind == y.kind && x.inputs == y.inputs)
}

fn sorted(v: &[f32]) -> Vec<u32> {
    let mut s: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
    s.sort_unstable();
    s
}

/// Checks the laws for one application; `Ok(false)` when the model has no
/// site for the operator.
pub fn check(code: OperatorCode, kind: SeedKind, weights_seed: u64, site_pick: usize, step_seed: u64) -> Result<bool, String> {
    use OperatorCode::*;
    let model = generate_seed(kind, weights_seed);
    let before = to_native(&model);
    let op = MutationOperator::new(code);
    let sites = applicable_sites(&model, &op);
    if sites.is_empty() {
        return Ok(false);
    }
    let site = &sites[site_pick % sites.len()];
    let out = apply(&model, &op, site, &mut ChaCha8Rng::seed_from_u64(step_seed))
        .map_err(|e| format!("{code:?} at {site}: {e}"))?;
    if to_native(&model) != before {
        return Err("input model was modified".into());
    }
    let m = &out.model;
    let repairs = out.repair_log.len() as i64;
    let delta = m.nodes.len() as i64 - model.nodes.len() as i64;
    let fail = |what: &str| Err(format!("{code:?} at {site}: {what}"));

    match code {
        LA | LR | LC | LS | ARFm | ARFp | SM | DM => {
            if !validate_graph(m).is_valid() {
                return fail(&format!("invalid after repair: {}", validate_graph(m)));
            }
            let expected = match code {
                LA | LC => 1 + repairs,
                LR | ARFm => -1 + repairs,
                LS | ARFp => repairs,
                // input operators add their own adapters on top of repairs
                _ => delta.max(repairs),
            };
            if delta != expected {
                return fail(&format!("node count changed by {delta}, expected {expected}"));
            }
            if matches!(code, ARFm | ARFp) && repairs != 0 {
                return fail("activation edits needed repair");
            }
            if code == ARFp {
                let (a, b) = (model.node(&site.node_id).unwrap(), m.node(&site.node_id).unwrap());
                if a.kind == b.kind || !b.kind.is_activation() {
                    return fail("activation kind not replaced");
                }
            }
            if code == LS {
                let a: BTreeSet<&str> = ids(&model).into_iter().collect();
                if !a.iter().all(|id| m.contains(id)) {
                    return fail("LS lost a node");
                }
            }
        }
        PM => {
            if !same_topology(&model, m) {
                return fail("topology changed");
            }
            let changed: Vec<&str> = model
                .nodes
                .iter()
                .zip(&m.nodes)
                .filter(|(a, b)| a.attributes != b.attributes)
                .map(|(a, _)| a.id.as_str())
                .collect();
            if changed != [site.node_id.as_str()] {
                return fail(&format!("attributes changed on {changed:?}"));
            }
        }
        WS | NS | GF | NAI | NEB => {
            if !same_topology(&model, m) {
                return fail("topology changed");
            }
            for (a, b) in model.nodes.iter().zip(&m.nodes) {
                if a.id != site.node_id {
                    if !a.bit_eq(b) {
                        return fail(&format!("node `{}` off site changed", a.id));
                    }
                    continue;
                }
                if a.weights.len() != b.weights.len() {
                    return fail("weight count changed");
                }
                for (ta, tb) in a.weights.iter().zip(&b.weights) {
                    if ta.shape != tb.shape {
                        return fail("weight shape changed");
                    }
                    match code {
                        WS if sorted(&ta.data) != sorted(&tb.data) => return fail("WS changed the multiset"),
                        NAI if ta.data.iter().zip(&tb.data).any(|(x, y)| x.abs() != y.abs()) => {
                            return fail("NAI changed a magnitude")
                        }
                        NEB => {
                            let nz = |v: &[f32]| v.iter().filter(|x| **x != 0.0).count();
                            if !ta.data.contains(&0.0) && nz(&tb.data) >= nz(&ta.data) {
                                return fail("NEB zeroed nothing");
                            }
                        }
                        _ => {}
                    }
                }
            }
            if code == NAI {
                let flipped = model
                    .node(&site.node_id)
                    .unwrap()
                    .weights
                    .iter()
                    .zip(&m.node(&site.node_id).unwrap().weights)
                    .flat_map(|(ta, tb)| ta.data.iter().zip(&tb.data))
                    .any(|(x, y)| *x != 0.0 && *x == -*y);
                if !flipped {
                    return fail("NAI flipped no sign");
                }
            }
        }
    }
    Ok(true)
}
