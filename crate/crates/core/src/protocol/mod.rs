//! Training protocols: FedAvg, vanilla split learning, SFL-V1, SFL-V2 and a
//! centralized reference loop.
//!
//! Cross-client reductions (aggregation, loss averages) always run in
//! ascending client id, so a run is bitwise reproducible from its seed.

mod aggregate;
mod comm;
mod eval;
mod rounds;
mod simulation;

use alloc::format;
use alloc::vec::Vec;

use crate::data::{self, Dataset, Partition};
use crate::rng::{self, Purpose};
use crate::{Error, LayeredModel, Loss, OptimizerKind, OptimizerState, Result};

pub use aggregate::aggregate_weighted;
pub use comm::{comm_cost, local_steps, CommLedger, Traffic};
pub use eval::{evaluate, Evaluation};
pub use rounds::{
    run_centralized_round, run_fedavg_round, run_sflv1_round, run_sflv2_round, run_sl_round, server_visit_order,
    sflv2_client_batches,
};
pub use simulation::Simulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    FedAvg,
    /// Vanilla split learning: clients take turns against one server half.
    Sl,
    SflV1,
    SflV2,
    /// One model trained on the pooled data; no clients.
    Centralized,
}

impl Variant {
    pub fn is_split(self) -> bool {
        matches!(self, Variant::Sl | Variant::SflV1 | Variant::SflV2)
    }
}

/// Learning rate `η^t` per round.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Rate for round `t` is `table[min(t, len − 1)]`.
    PerRound(Vec<f64>),
}

impl LrSchedule {
    pub fn at(&self, round: usize) -> f64 {
        match self {
            LrSchedule::Constant(lr) => *lr,
            LrSchedule::PerRound(table) => table[round.min(table.len() - 1)],
        }
    }

    /// Rates for rounds `0..rounds`.
    pub fn table(&self, rounds: usize) -> Vec<f64> {
        (0..rounds).map(|t| self.at(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub variant: Variant,
    /// Cut block index `L_c`. Ignored by FedAvg and centralized runs.
    pub cut: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    pub seed: u64,
    pub loss: Loss,
    /// SFL-V2: draw one server visiting order per round instead of one per step.
    pub permute_per_round: bool,
    /// SFL-V2: clients with fewer local batches than the longest client keep
    /// cycling through further epochs instead of sitting out the remaining steps.
    pub wrap_short_clients: bool,
    /// Record every client's parameters before each local step.
    pub record_snapshots: bool,
}

impl RoundConfig {
    pub fn new(variant: Variant, cut: usize, optimizer: OptimizerKind, lr: f64) -> Self {
        Self {
            variant,
            cut,
            epochs: 1,
            batch_size: 64,
            optimizer,
            lr: LrSchedule::Constant(lr),
            seed: 0,
            loss: Loss::CrossEntropy,
            permute_per_round: false,
            wrap_short_clients: false,
            record_snapshots: false,
        }
    }

    /// SL and SFL-V1 need `1 ≤ cut ≤ L−1`; SFL-V2 also accepts the limit cuts
    /// `0` and `L`.
    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        match &self.lr {
            LrSchedule::PerRound(t) if t.is_empty() => {
                return Err(Error::InvalidArgument("empty learning-rate table".into()))
            }
            LrSchedule::PerRound(t) => {
                if let Some(&bad) = t.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::LearningRate(bad));
                }
            }
            LrSchedule::Constant(v) if !(v.is_finite() && *v >= 0.0) => return Err(Error::LearningRate(*v)),
            LrSchedule::Constant(_) => {}
        }
        let (min, max) = match self.variant {
            Variant::Sl | Variant::SflV1 => (1, num_blocks.saturating_sub(1)),
            Variant::SflV2 => (0, num_blocks),
            Variant::FedAvg | Variant::Centralized => return Ok(()),
        };
        if self.cut < min || self.cut > max {
            return Err(Error::CutOutOfRange { cut: self.cut, min, max });
        }
        Ok(())
    }
}

/// Everything a round needs to read.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub dataset: &'a Dataset,
    pub partition: &'a Partition,
    pub config: &'a RoundConfig,
    pub round: usize,
}

impl RoundContext<'_> {
    pub fn lr(&self) -> f64 {
        self.config.lr.at(self.round)
    }

    /// Client `k`'s batches for this round: `E` epoch streams back to back.
    pub fn client_batches(&self, k: usize) -> Vec<Vec<usize>> {
        (0..self.config.epochs)
            .flat_map(|e| {
                data::minibatch_stream(self.partition, k, self.config.batch_size, self.config.seed, self.round, e)
            })
            .collect()
    }
}

/// Client-side state: the local model (`θ^C_k`, or the full model for
/// FedAvg) and its optimizer, which persists across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: LayeredModel,
    pub optimizer: OptimizerState,
}

impl ClientState {
    pub fn new(id: usize, model: LayeredModel, kind: OptimizerKind, lr: f64) -> Result<Self> {
        Ok(Self { id, model, optimizer: OptimizerState::new(kind, lr)? })
    }
}

/// Server halves held by the training server.
#[derive(Debug, Clone)]
pub enum TrainingServerState {
    /// SFL-V1: one server half and optimizer per client.
    PerClient { models: Vec<LayeredModel>, optimizers: Vec<OptimizerState> },
    /// SFL-V2 and SL: one shared server half.
    Shared { model: LayeredModel, optimizer: OptimizerState },
}

impl TrainingServerState {
    pub fn per_client(server: &LayeredModel, clients: usize, kind: OptimizerKind, lr: f64) -> Result<Self> {
        let optimizers = (0..clients).map(|_| OptimizerState::new(kind, lr)).collect::<Result<_>>()?;
        Ok(TrainingServerState::PerClient { models: alloc::vec![server.clone(); clients], optimizers })
    }

    pub fn shared(server: &LayeredModel, kind: OptimizerKind, lr: f64) -> Result<Self> {
        Ok(TrainingServerState::Shared { model: server.clone(), optimizer: OptimizerState::new(kind, lr)? })
    }

    pub fn model_count(&self) -> usize {
        match self {
            TrainingServerState::PerClient { models, .. } => models.len(),
            TrainingServerState::Shared { .. } => 1,
        }
    }
}

/// Per-round outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// `Σ_k α_k · (mean batch loss of client k)`; clients without steps count as 0.
    pub train_loss: f64,
    pub client_losses: Vec<f64>,
    /// Optimizer steps taken by each client's local model.
    pub steps: Vec<usize>,
    /// Elements that actually crossed the wire, per client.
    pub traffic: Vec<Traffic>,
    /// `snapshots[k][i]` = client k's full parameter vector before local step `i`.
    pub snapshots: Option<Vec<Vec<Vec<f64>>>>,
}

impl RoundMetrics {
    pub fn uplink(&self) -> u64 {
        self.traffic.iter().map(Traffic::uplink).sum()
    }

    pub fn downlink(&self) -> u64 {
        self.traffic.iter().map(Traffic::downlink).sum()
    }
}

pub(crate) fn weighted_loss(partition: &Partition, losses: &[f64]) -> f64 {
    partition.weights().iter().zip(losses).map(|(a, l)| a * l).sum()
}

pub(crate) fn check_clients(clients: &[ClientState], partition: &Partition) -> Result<()> {
    if clients.len() != partition.num_clients() {
        return Err(Error::Protocol(format!(
            "{} client states for a {}-client partition",
            clients.len(),
            partition.num_clients()
        )));
    }
    if clients.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(Error::Protocol("client states must be ordered by id".into()));
    }
    Ok(())
}

pub(crate) fn order_stream(seed: u64, coords: &[u64]) -> rng::Stream {
    rng::stream(seed, Purpose::ServerOrder, coords)
}
