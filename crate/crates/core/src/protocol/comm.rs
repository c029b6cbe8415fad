//! Communication accounting in tensor elements.

use alloc::vec::Vec;

use super::{RoundConfig, Variant};
use crate::data::{batches_per_epoch, Partition};
use crate::CutPayloadProfile;

/// Elements moved for one client in one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub activations_up: u64,
    pub labels_up: u64,
    pub gradients_down: u64,
    pub weights_up: u64,
    pub weights_down: u64,
}

impl Traffic {
    pub fn uplink(&self) -> u64 {
        self.activations_up + self.labels_up + self.weights_up
    }

    pub fn downlink(&self) -> u64 {
        self.gradients_down + self.weights_down
    }
}

/// Closed-form traffic for a run. Every round moves the same amounts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommLedger {
    pub rounds: usize,
    pub per_client: Vec<Traffic>,
}

impl CommLedger {
    pub fn round_uplink(&self) -> u64 {
        self.per_client.iter().map(Traffic::uplink).sum()
    }

    pub fn round_downlink(&self) -> u64 {
        self.per_client.iter().map(Traffic::downlink).sum()
    }

    pub fn total_uplink(&self) -> u64 {
        self.round_uplink() * self.rounds as u64
    }

    pub fn total_downlink(&self) -> u64 {
        self.round_downlink() * self.rounds as u64
    }
}

/// Local optimizer steps per client per round: `E · ⌈D_k / B⌉`.
pub fn local_steps(partition: &Partition, config: &RoundConfig) -> Vec<usize> {
    partition.sizes().iter().map(|&d| config.epochs * batches_per_epoch(d, config.batch_size)).collect()
}

/// Exact per-round element counts for `config` over `rounds` rounds.
///
/// Split protocols send `a` activation elements and one label per processed
/// sample and receive `a` gradient elements back; over `E` epochs a client
/// processes `E·D_k` samples. SFL-V2 with wrapping runs every client for the
/// longest client's step count, i.e. `q` full epochs plus `r` full batches.
/// Weight sync is one download and one upload per round of whatever the MSS
/// averages (or SL relays): the full model for FedAvg, both halves for
/// SFL-V1, the client half otherwise.
pub fn comm_cost(config: &RoundConfig, partition: &Partition, profile: &CutPayloadProfile, rounds: usize) -> CommLedger {
    let steps = local_steps(partition, config);
    let longest = steps.iter().copied().max().unwrap_or(0);
    let full = (profile.client_param_count + profile.server_param_count) as u64;
    let act = profile.activation_elems as u64;
    let per_client = partition
        .sizes()
        .iter()
        .map(|&d| {
            let samples = if config.variant == Variant::SflV2 && config.wrap_short_clients {
                let per_epoch = batches_per_epoch(d, config.batch_size);
                (longest / per_epoch * d + longest % per_epoch * config.batch_size) as u64
            } else {
                (config.epochs * d) as u64
            };
            let weights = match config.variant {
                Variant::FedAvg | Variant::SflV1 => full,
                Variant::SflV2 | Variant::Sl => profile.client_param_count as u64,
                Variant::Centralized => 0,
            };
            match config.variant {
                Variant::FedAvg | Variant::Centralized => Traffic { weights_up: weights, weights_down: weights, ..Traffic::default() },
                Variant::Sl | Variant::SflV1 | Variant::SflV2 => Traffic {
                    activations_up: samples * act,
                    labels_up: samples,
                    gradients_down: samples * act,
                    weights_up: weights,
                    weights_down: weights,
                },
            }
        })
        .collect();
    CommLedger { rounds, per_client }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::OptimizerKind;
    use alloc::vec;

    fn partition(sizes: &[usize]) -> Partition {
        let mut start = 0;
        let a = sizes
            .iter()
            .map(|&d| {
                let v: Vec<usize> = (start..start + d).collect();
                start += d;
                v
            })
            .collect();
        Partition::from_assignments(a, start).unwrap()
    }

    fn profile() -> CutPayloadProfile {
        CutPayloadProfile { activation_elems: 8, label_bytes_per_sample: 4, client_param_count: 40, server_param_count: 171 }
    }

    #[test]
    fn fedavg_has_no_activation_traffic() {
        let cfg = RoundConfig::new(Variant::FedAvg, 0, OptimizerKind::Sgd, 0.1);
        let ledger = comm_cost(&cfg, &partition(&[64, 100]), &profile(), 3);
        for t in &ledger.per_client {
            assert_eq!(t.weights_up, 211);
            assert_eq!(t.activations_up + t.gradients_down + t.labels_up, 0);
        }
        assert_eq!(ledger.total_uplink(), 3 * 2 * 211);
    }

    #[test]
    fn sflv2_activation_uplink() {
        // τ_k = 5 full batches of 64 samples, 8 elements each
        let mut cfg = RoundConfig::new(Variant::SflV2, 1, OptimizerKind::Adam, 0.001);
        cfg.epochs = 5;
        let ledger = comm_cost(&cfg, &partition(&[64]), &profile(), 1);
        assert_eq!(local_steps(&partition(&[64]), &cfg), vec![5]);
        assert_eq!(ledger.per_client[0].activations_up, 5 * 64 * 8);
        assert_eq!(ledger.per_client[0].activations_up, 2560);
    }

    #[test]
    fn v1_syncs_more_than_v2() {
        let p = partition(&[30, 50]);
        let v1 = comm_cost(&RoundConfig::new(Variant::SflV1, 1, OptimizerKind::Sgd, 0.1), &p, &profile(), 1);
        let v2 = comm_cost(&RoundConfig::new(Variant::SflV2, 1, OptimizerKind::Sgd, 0.1), &p, &profile(), 1);
        for (a, b) in v1.per_client.iter().zip(&v2.per_client) {
            assert!(a.weights_up + a.weights_down >= b.weights_up + b.weights_down);
        }
    }
}
