use super::*;
use crate::backends::{LayerOutput, Stage};
use crate::ir::native::to_native;
use crate::ir::{generate_seed, SeedKind};
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Binomial count within three standard deviations of `n * p`.
fn within_3_sigma(hits: usize, n: usize, p: f64) -> bool {
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - n as f64 * p).abs() <= 3.0 * sigma
}

fn only(code: OperatorCode) -> CampaignConfig {
    let mut cfg = CampaignConfig::default();
    for c in OperatorCode::ALL {
        cfg.operator_weights.operators.insert(c, 0.0);
    }
    cfg.operator_weights.operators.insert(code, 1.0);
    cfg
}

fn pool_of(kinds: &[SeedKind]) -> SeedPool {
    let mut pool = SeedPool::new(64);
    for k in kinds {
        pool.add_seed(k.name(), generate_seed(*k, 0)).unwrap();
    }
    pool
}

#[test]
fn degenerate_weights_always_pick_that_operator() {
    let cfg = only(OperatorCode::GF);
    let mut r = rng(1);
    for _ in 0..500 {
        assert_eq!(select_operator(&cfg, &mut r).unwrap().code, OperatorCode::GF);
    }
}

#[test]
fn structure_family_frequency_matches_its_weight() {
    let cfg = CampaignConfig::default();
    let mut r = rng(2);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| select_operator(&cfg, &mut r).unwrap().family() == Family::Structure)
        .count();
    assert!(within_3_sigma(hits, n, 4.0 / 9.0), "{hits}");
}

#[test]
fn empty_operator_set_is_a_config_error() {
    let cfg = CampaignConfig::default();
    assert!(matches!(
        select_operator_among(&cfg, &[], &mut rng(0)),
        Err(Error::Config(_))
    ));
    let mut zero = CampaignConfig::default();
    zero.operator_weights.families.clear();
    assert!(matches!(select_operator(&zero, &mut rng(0)), Err(Error::Config(_))));
}

#[test]
fn configured_parameters_reach_the_operator() {
    let mut cfg = only(OperatorCode::GF);
    cfg.params
        .insert(OperatorCode::GF, BTreeMap::from([("sigma".to_string(), 0.25)]));
    assert_eq!(select_operator(&cfg, &mut rng(0)).unwrap().param("sigma"), 0.25);
}

#[test]
fn full_backbone_bias_stays_in_the_backbone() {
    let m = generate_seed(SeedKind::TinyCnn, 0);
    let op = MutationOperator::new(OperatorCode::GF);
    let sites = applicable_sites(&m, &op);
    assert!(sites.iter().any(|s| m.region_of(&s.node_id) == RegionTag::TaskHead));
    let cfg = CampaignConfig {
        backbone_bias: 1.0,
        ..CampaignConfig::default()
    };
    let mut r = rng(3);
    for _ in 0..300 {
        let s = select_site(&m, &op, &cfg, &mut r).unwrap();
        assert_eq!(m.region_of(&s.node_id), RegionTag::Backbone);
    }
}

#[test]
fn all_backbone_model_ignores_the_bias() {
    let mut m = generate_seed(SeedKind::TinyCnn, 0);
    m.regions.clear();
    let op = MutationOperator::new(OperatorCode::GF);
    let cfg = CampaignConfig {
        backbone_bias: 0.0,
        ..CampaignConfig::default()
    };
    let mut r = rng(4);
    for _ in 0..100 {
        let s = select_site(&m, &op, &cfg, &mut r).unwrap();
        assert_eq!(m.region_of(&s.node_id), RegionTag::Backbone);
    }
}

#[test]
fn backbone_fraction_matches_the_bias() {
    let m = generate_seed(SeedKind::TinyCnn, 0);
    let op = MutationOperator::new(OperatorCode::GF);
    let cfg = CampaignConfig::default();
    let mut r = rng(5);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| {
            let s = select_site(&m, &op, &cfg, &mut r).unwrap();
            m.region_of(&s.node_id) == RegionTag::Backbone
        })
        .count();
    assert!(within_3_sigma(hits, n, 0.7), "{hits}");
}

#[test]
fn no_site_is_an_inapplicability_signal() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    // tiny-mlp has no attribute PM can change
    let op = MutationOperator::new(OperatorCode::PM);
    if applicable_sites(&m, &op).is_empty() {
        assert!(matches!(
            select_site(&m, &op, &CampaignConfig::default(), &mut rng(0)),
            Err(Error::Inapplicable { .. })
        ));
    }
    let mut single = generate_seed(SeedKind::TinyMlp, 0);
    single.nodes.clear();
    assert!(applicable_sites(&single, &MutationOperator::new(OperatorCode::LR)).is_empty());
}

#[test]
fn cap_tiers() {
    let shallow = default_caps(13);
    assert_eq!(shallow[&OperatorCode::LR], 5);
    assert_eq!(shallow[&OperatorCode::ARFm], 5);
    assert_eq!(shallow[&OperatorCode::GF], 100);
    assert_eq!(shallow[&OperatorCode::LA], 10);
    let mid = default_caps(15);
    assert_eq!((mid[&OperatorCode::LR], mid[&OperatorCode::ARFm], mid[&OperatorCode::SM]), (20, 10, 40));
    assert_eq!(mid[&OperatorCode::NAI], 100);
    let deep = default_caps(41);
    assert_eq!((deep[&OperatorCode::LR], deep[&OperatorCode::ARFm], deep[&OperatorCode::PM]), (50, 20, 100));
}

#[test]
fn first_mutant_has_one_step() {
    let mut e = Engine::new(CampaignConfig::default(), pool_of(&[SeedKind::TinyCnn])).unwrap();
    let (rec, model) = e.next_mutant().unwrap();
    assert_eq!(rec.order(), 1);
    assert_eq!(rec.legality, LegalityStatus::Pending);
    assert_eq!(rec.model_hash, model_hash(&model));
    assert!(validate_graph(&model).is_valid());
}

#[test]
fn caps_are_never_exceeded() {
    let mut cfg = CampaignConfig::default();
    cfg.rounds.insert(OperatorCode::LR, 5);
    cfg.operator_weights.operators.insert(OperatorCode::LR, 50.0);
    let mut e = Engine::new(cfg, pool_of(&[SeedKind::TinyCnn])).unwrap();
    let mut lr = 0;
    for _ in 0..120 {
        let (rec, model) = e.next_mutant().unwrap();
        if rec.operator() == Some(OperatorCode::LR) {
            lr += 1;
        }
        e.admit(rec, model);
    }
    assert_eq!(lr, 5);
    for (code, used) in e.used() {
        assert!(*used <= e.caps()[code], "{code:?}");
    }
}

#[test]
fn exhausted_caps_complete_the_campaign() {
    let mut cfg = CampaignConfig::default();
    for c in OperatorCode::ALL {
        cfg.rounds.insert(c, 1);
    }
    let mut e = Engine::new(cfg, pool_of(&[SeedKind::TinyCnn])).unwrap();
    let mut n = 0;
    loop {
        match e.next_mutant() {
            Ok(_) => n += 1,
            Err(Error::CampaignComplete) => break,
            Err(other) => panic!("{other}"),
        }
    }
    assert!(n <= OperatorCode::ALL.len());
    assert!(matches!(e.next_mutant(), Err(Error::CampaignComplete)));
}

#[test]
fn equal_seeds_give_equal_lineages() {
    let run = || {
        let cfg = CampaignConfig {
            rng_seed: 11,
            ..CampaignConfig::default()
        };
        let mut e = Engine::new(cfg, pool_of(&[SeedKind::TinyCnn, SeedKind::TinyResblock])).unwrap();
        (0..40)
            .map(|_| {
                let (rec, model) = e.next_mutant().unwrap();
                e.admit(rec.clone(), model);
                rec
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn replay_reproduces_every_mutant() {
    let cfg = CampaignConfig {
        rng_seed: 3,
        ..CampaignConfig::default()
    };
    let mut e = Engine::new(cfg, pool_of(&[SeedKind::TinyCnn, SeedKind::TinyMlp])).unwrap();
    for _ in 0..60 {
        let (rec, model) = e.next_mutant().unwrap();
        let again = replay(&rec, &e.pool).unwrap();
        assert_eq!(to_native(&again), to_native(&model), "{}", rec.id);
        e.admit(rec, model);
    }
    assert!(e.pool.live().iter().any(|l| l.record.order() > 1));
}

#[test]
fn replay_edge_cases() {
    let pool = pool_of(&[SeedKind::TinyMlp]);
    let mut rec = MutantRecord {
        id: "m0".into(),
        seed_id: "tiny-mlp".into(),
        parent: None,
        steps: Vec::new(),
        legality: LegalityStatus::Pending,
        model_hash: String::new(),
    };
    let seed = pool.seed("tiny-mlp").unwrap();
    assert_eq!(to_native(&replay(&rec, &pool).unwrap()), to_native(seed));

    rec.steps.push(Step {
        operator: MutationOperator::new(OperatorCode::GF),
        site: MutationSite::node("no-such-node"),
        rng_seed: 0,
    });
    assert!(matches!(replay(&rec, &pool), Err(Error::ReplayDrift { step: 0, .. })));

    rec.seed_id = "ghost".into();
    assert!(matches!(replay(&rec, &pool), Err(Error::MissingSeed(_))));
}

#[test]
fn pool_evicts_the_highest_order() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let mut pool = SeedPool::new(2);
    let rec = |id: &str, order: usize| MutantRecord {
        id: id.into(),
        seed_id: "s".into(),
        parent: None,
        steps: (0..order)
            .map(|_| Step {
                operator: MutationOperator::new(OperatorCode::GF),
                site: MutationSite::node("dense1"),
                rng_seed: 0,
            })
            .collect(),
        legality: LegalityStatus::Legal,
        model_hash: String::new(),
    };
    pool.admit(rec("a", 1), m.clone());
    pool.admit(rec("b", 3), m.clone());
    pool.admit(rec("c", 2), m.clone());
    let ids: Vec<&str> = pool.live().iter().map(|l| l.record.id.as_str()).collect();
    assert_eq!(ids, ["a", "c"]);
}

#[test]
fn invalid_seeds_are_rejected() {
    let mut m = generate_seed(SeedKind::TinyMlp, 0);
    m.outputs = vec!["nowhere".into()];
    assert!(SeedPool::new(4).add_seed("bad", m).is_err());
}

#[test]
fn low_orders_dominate() {
    // every mutant admitted, as if all were legal
    let mut e = Engine::new(CampaignConfig::default(), pool_of(&[SeedKind::TinyCnn])).unwrap();
    let mut orders = Vec::new();
    for _ in 0..200 {
        let Ok((rec, model)) = e.next_mutant() else { break };
        orders.push(rec.order());
        e.admit(rec, model);
    }
    orders.sort_unstable();
    let median = orders[orders.len() / 2];
    let max = *orders.last().unwrap();
    assert!(2 * median <= max, "median {median}, max {max}");
}

fn trace(id: &str, crash: bool, out: Option<f32>) -> crate::backends::ExecutionTrace {
    let mut t = crate::backends::ExecutionTrace::new(id);
    t.mark_ok(Stage::Build);
    if crash {
        t.mark_crash(Stage::Load, "boom");
        return t;
    }
    t.mark_ok(Stage::Load);
    t.mark_ok(Stage::Infer);
    if let Some(v) = out {
        t.outputs.push(LayerOutput {
            node: "out".into(),
            tensor: Tensor::new(vec![2], vec![v, 1.0]).unwrap(),
        });
    }
    t
}

fn set(ts: Vec<crate::backends::ExecutionTrace>) -> TraceSet {
    ts.into_iter().map(|t| (t.backend_id.clone(), t)).collect()
}

#[test]
fn legality_examples() {
    let cfg = CampaignConfig::default();
    let check = |ts| legality_check(&set(ts), &cfg).unwrap();
    assert_eq!(
        check(vec![trace("a", true, None), trace("b", true, None)]),
        LegalityStatus::Illegal("universal-crash".into())
    );
    assert_eq!(
        check(vec![trace("a", false, Some(f32::NAN)), trace("b", false, Some(0.5))]),
        LegalityStatus::Legal
    );
    assert_eq!(
        check(vec![trace("a", false, Some(f32::NAN)), trace("b", false, Some(f32::INFINITY))]),
        LegalityStatus::Illegal("universal-nan".into())
    );
    assert_eq!(
        check(vec![trace("a", false, Some(1e37)), trace("b", false, Some(-1e37))]),
        LegalityStatus::Illegal("range".into())
    );
    assert_eq!(
        check(vec![trace("a", false, Some(1e37)), trace("b", true, None)]),
        LegalityStatus::Illegal("range".into())
    );
    assert_eq!(
        check(vec![trace("a", false, Some(1e37)), trace("b", false, Some(1.0))]),
        LegalityStatus::Legal
    );
    assert_eq!(
        check(vec![trace("a", false, Some(1.0)), trace("b", true, None)]),
        LegalityStatus::Legal
    );
}

#[test]
fn legality_needs_two_traces() {
    let cfg = CampaignConfig::default();
    assert!(legality_check(&set(vec![trace("a", false, Some(1.0))]), &cfg).is_err());
}

#[test]
fn records_round_trip_through_json() {
    let mut e = Engine::new(CampaignConfig::default(), pool_of(&[SeedKind::TinyCnn])).unwrap();
    let (mut rec, _) = e.next_mutant().unwrap();
    rec.legality = LegalityStatus::Illegal("range".into());
    let text = serde_json::to_string(&rec).unwrap();
    assert!(text.contains(r#""legality":{"status":"Illegal","reason":"range"}"#), "{text}");
    assert_eq!(serde_json::from_str::<MutantRecord>(&text).unwrap(), rec);
}
