use alloc::vec::Vec;

use super::{
    comm_cost, run_centralized_round, run_fedavg_round, run_sflv1_round, run_sflv2_round, run_sl_round, ClientState,
    CommLedger, RoundConfig, RoundContext, RoundMetrics, TrainingServerState, Variant,
};
use crate::data::{Dataset, Partition};
use crate::{CutPayloadProfile, LayeredModel, OptimizerState, Result, SplitModel};

enum State {
    FedAvg { global: LayeredModel, clients: Vec<ClientState> },
    SflV1 { client: LayeredModel, server: LayeredModel, clients: Vec<ClientState>, ts: TrainingServerState },
    SflV2 { client: LayeredModel, clients: Vec<ClientState>, ts: TrainingServerState },
    Sl { relay: LayeredModel, clients: Vec<ClientState>, ts: TrainingServerState },
    Centralized { model: LayeredModel, optimizer: OptimizerState },
}

/// Drives one protocol round after round from a common initial model.
pub struct Simulation<'a> {
    dataset: &'a Dataset,
    partition: &'a Partition,
    config: RoundConfig,
    state: State,
    profile: CutPayloadProfile,
    round: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(dataset: &'a Dataset, partition: &'a Partition, config: RoundConfig, initial: &LayeredModel) -> Result<Self> {
        config.validate(initial.num_blocks())?;
        let lr = config.lr.at(0);
        let kind = config.optimizer;
        let k = partition.num_clients();
        let clients_from = |model: &LayeredModel| -> Result<Vec<ClientState>> {
            (0..k).map(|id| ClientState::new(id, model.clone(), kind, lr)).collect()
        };
        let split = SplitModel::split_limit(initial, if config.variant.is_split() { config.cut } else { initial.num_blocks() })?;
        let profile = split.payload_profile();
        let (client, server) = split.into_halves();
        let state = match config.variant {
            Variant::FedAvg => State::FedAvg { global: initial.clone(), clients: clients_from(initial)? },
            Variant::SflV1 => State::SflV1 {
                clients: clients_from(&client)?,
                ts: TrainingServerState::per_client(&server, k, kind, lr)?,
                client,
                server,
            },
            Variant::SflV2 => State::SflV2 {
                clients: clients_from(&client)?,
                ts: TrainingServerState::shared(&server, kind, lr)?,
                client,
            },
            Variant::Sl => {
                State::Sl { clients: clients_from(&client)?, ts: TrainingServerState::shared(&server, kind, lr)?, relay: client }
            }
            Variant::Centralized => State::Centralized { model: initial.clone(), optimizer: OptimizerState::new(kind, lr)? },
        };
        Ok(Self { dataset, partition, config, state, profile, round: 0 })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn payload_profile(&self) -> CutPayloadProfile {
        self.profile
    }

    /// Closed-form traffic for `rounds` rounds of this configuration.
    pub fn comm_ledger(&self, rounds: usize) -> CommLedger {
        comm_cost(&self.config, self.partition, &self.profile, rounds)
    }

    pub fn step(&mut self) -> Result<RoundMetrics> {
        let ctx = RoundContext { dataset: self.dataset, partition: self.partition, config: &self.config, round: self.round };
        let metrics = match &mut self.state {
            State::FedAvg { global, clients } => {
                let (next, m) = run_fedavg_round(clients, global, &ctx)?;
                *global = next;
                m
            }
            State::SflV1 { client, server, clients, ts } => {
                let (c, s, m) = run_sflv1_round(clients, ts, client, server, &ctx)?;
                *client = c;
                *server = s;
                m
            }
            State::SflV2 { client, clients, ts } => {
                let (c, m) = run_sflv2_round(clients, ts, client, &ctx)?;
                *client = c;
                m
            }
            State::Sl { relay, clients, ts } => {
                let (c, m) = run_sl_round(clients, ts, relay, &ctx)?;
                *relay = c;
                m
            }
            State::Centralized { model, optimizer } => run_centralized_round(model, optimizer, &ctx)?,
        };
        self.round += 1;
        Ok(metrics)
    }

    /// The current global model; split protocols return the stitched halves.
    pub fn global_model(&self) -> LayeredModel {
        let shared = |client: &LayeredModel, ts: &TrainingServerState| match ts {
            TrainingServerState::Shared { model, .. } => LayeredModel::concat(client, model),
            TrainingServerState::PerClient { .. } => unreachable!("per-client servers only in SFL-V1"),
        };
        match &self.state {
            State::FedAvg { global, .. } => global.clone(),
            State::SflV1 { client, server, .. } => LayeredModel::concat(client, server).expect("halves compose"),
            State::SflV2 { client, ts, .. } => shared(client, ts).expect("halves compose"),
            State::Sl { relay, ts, .. } => shared(relay, ts).expect("halves compose"),
            State::Centralized { model, .. } => model.clone(),
        }
    }
}
