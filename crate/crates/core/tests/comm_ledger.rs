//! Closed-form communication counts against traffic measured during runs.

use sfl_core::data::{gen_synthetic, partition_dirichlet, SyntheticSpec};
use sfl_core::protocol::{RoundConfig, Simulation, Traffic, Variant};
use sfl_core::{LayeredModel, ModelSpec, OptimizerKind};

fn add(a: &mut Traffic, b: &Traffic) {
    a.activations_up += b.activations_up;
    a.labels_up += b.labels_up;
    a.gradients_down += b.gradients_down;
    a.weights_up += b.weights_up;
    a.weights_down += b.weights_down;
}

#[test]
fn measured_traffic_equals_closed_form() {
    let ds = gen_synthetic(&SyntheticSpec { num_classes: 4, dim: 5, per_class: 30, class_sep: 2.0 }, 3).unwrap();
    let part = partition_dirichlet(&ds, 4, 0.5, 3, 5).unwrap();
    let init = LayeredModel::build(&ModelSpec::mlp(5, &[7, 6, 5], 4), 3).unwrap();
    let rounds = 3;
    let mut cases = vec![(Variant::FedAvg, 0, false), (Variant::Centralized, 0, false)];
    for cut in 1..=3 {
        cases.extend([(Variant::SflV1, cut, false), (Variant::SflV2, cut, false), (Variant::SflV2, cut, true)]);
        cases.push((Variant::Sl, cut, false));
    }
    for (variant, cut, wrap) in cases {
        let mut cfg = RoundConfig::new(variant, cut, OptimizerKind::Sgd, 0.05);
        cfg.batch_size = 8;
        cfg.epochs = 2;
        cfg.wrap_short_clients = wrap;
        let mut sim = Simulation::new(&ds, &part, cfg, &init).unwrap();
        let ledger = sim.comm_ledger(rounds);
        let mut measured = vec![Traffic::default(); part.num_clients()];
        for _ in 0..rounds {
            let m = sim.step().unwrap();
            for (acc, t) in measured.iter_mut().zip(&m.traffic) {
                add(acc, t);
            }
            assert_eq!(m.uplink(), ledger.round_uplink(), "{variant:?} cut {cut}");
            assert_eq!(m.downlink(), ledger.round_downlink(), "{variant:?} cut {cut}");
        }
        for (got, want) in measured.iter().zip(&ledger.per_client) {
            let mut expect = Traffic::default();
            for _ in 0..rounds {
                add(&mut expect, want);
            }
            assert_eq!(*got, expect, "{variant:?} cut {cut} wrap {wrap}");
        }
        assert_eq!(ledger, sim.comm_ledger(rounds));
    }
}
