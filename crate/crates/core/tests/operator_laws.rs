//! Family effect laws for every mutation operator, checked on generated seeds.

mod common;

use common::check;
use graphmut::ir::SeedKind;
use graphmut::operators::OperatorCode;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = SeedKind> {
    prop::sample::select(SeedKind::ALL.to_vec())
}

macro_rules! law {
    ($name:ident, $code:expr) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn $name(k in kind(), w in 0u64..10_000, pick in 0usize..1000, step in any::<u64>()) {
                let r = check($code, k, w, pick, step);
                prop_assert!(r.is_ok(), "{}", r.unwrap_err());
            }
        }
    };
}

law!(layer_addition, OperatorCode::LA);
law!(layer_removal, OperatorCode::LR);
law!(layer_copy, OperatorCode::LC);
law!(layer_switch, OperatorCode::LS);
law!(activation_removal, OperatorCode::ARFm);
law!(activation_replacement, OperatorCode::ARFp);
law!(spatial_mutation, OperatorCode::SM);
law!(dimension_mutation, OperatorCode::DM);
law!(parameter_mutation, OperatorCode::PM);
law!(weight_shuffle, OperatorCode::WS);
law!(neuron_switch, OperatorCode::NS);
law!(gaussian_fuzz, OperatorCode::GF);
law!(neuron_inversion, OperatorCode::NAI);
law!(neuron_elimination, OperatorCode::NEB);

#[test]
fn every_operator_applies_to_some_seed() {
    for code in OperatorCode::ALL {
        let found = SeedKind::ALL
            .iter()
            .any(|k| check(code, *k, 0, 0, 0) == Ok(true));
        assert!(found, "{code:?} has no site on any seed");
    }
}
