use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{
    aggregate_weighted, check_clients, order_stream, weighted_loss, ClientState, RoundConfig, RoundContext,
    RoundMetrics, Traffic, TrainingServerState,
};
use crate::data::{self, Dataset};
use crate::rng::{self, Purpose};
use crate::split;
use crate::{Error, LayeredModel, Loss, OptimizerState, Result};

#[derive(Default)]
struct ClientLog {
    traffic: Traffic,
    loss_sum: f64,
    steps: usize,
    snapshots: Vec<Vec<f64>>,
}

impl ClientLog {
    fn mean_loss(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.loss_sum / self.steps as f64
        }
    }
}

fn finish(logs: Vec<ClientLog>, ctx: &RoundContext) -> RoundMetrics {
    let client_losses: Vec<f64> = logs.iter().map(ClientLog::mean_loss).collect();
    let steps = logs.iter().map(|l| l.steps).collect();
    let traffic = logs.iter().map(|l| l.traffic).collect();
    let snapshots = ctx.config.record_snapshots.then(|| logs.into_iter().map(|l| l.snapshots).collect());
    RoundMetrics { train_loss: weighted_loss(ctx.partition, &client_losses), client_losses, steps, traffic, snapshots }
}

fn full_step(model: &mut LayeredModel, opt: &mut OptimizerState, ds: &Dataset, batch: &[usize], loss: Loss) -> Result<f64> {
    let (x, y) = ds.gather(batch);
    let logits = model.forward(x)?;
    let (value, grad) = loss.evaluate(&logits, &y)?;
    let (grads, _) = model.backward(grad)?;
    opt.step(model.params_mut(), &grads)?;
    Ok(value)
}

/// One client→server→client iteration: the server steps its half, returns
/// the cut gradient computed in the same backward pass, and the client steps.
#[allow(clippy::too_many_arguments)]
fn split_step(
    client: &mut LayeredModel,
    client_opt: &mut OptimizerState,
    server: &mut LayeredModel,
    server_opt: &mut OptimizerState,
    ds: &Dataset,
    batch: &[usize],
    loss: Loss,
    traffic: &mut Traffic,
) -> Result<f64> {
    let (x, y) = ds.gather(batch);
    let activations = split::client_forward(client, x)?;
    traffic.activations_up += activations.len() as u64;
    traffic.labels_up += y.len() as u64;
    let pass = split::server_forward_backward(server, activations, &y, loss)?;
    server_opt.step(server.params_mut(), &pass.param_grads)?;
    traffic.gradients_down += pass.grad_activations.len() as u64;
    let grads = split::client_backward(client, pass.grad_activations)?;
    client_opt.step(client.params_mut(), &grads)?;
    Ok(pass.loss)
}

fn joined_params(client: &LayeredModel, server: &LayeredModel) -> Vec<f64> {
    let mut v = client.flatten_params();
    v.extend(server.flatten_params());
    v
}

fn set_lr(opt: &mut OptimizerState, ctx: &RoundContext) -> Result<()> {
    opt.set_lr(ctx.lr())
}

/// FedAvg: every client trains the full model on its own batches, then the
/// MSS averages the results with weights `α_k`.
pub fn run_fedavg_round(
    clients: &mut [ClientState],
    global: &LayeredModel,
    ctx: &RoundContext,
) -> Result<(LayeredModel, RoundMetrics)> {
    check_clients(clients, ctx.partition)?;
    let full = global.param_count() as u64;
    let mut logs = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        let mut log = ClientLog::default();
        client.model.copy_params_from(global)?;
        log.traffic.weights_down += full;
        set_lr(&mut client.optimizer, ctx)?;
        for batch in ctx.client_batches(client.id) {
            if ctx.config.record_snapshots {
                log.snapshots.push(client.model.flatten_params());
            }
            log.loss_sum += full_step(&mut client.model, &mut client.optimizer, ctx.dataset, &batch, ctx.config.loss)?;
            log.steps += 1;
        }
        log.traffic.weights_up += full;
        logs.push(log);
    }
    let models: Vec<&LayeredModel> = clients.iter().map(|c| &c.model).collect();
    let next = aggregate_weighted(&models, ctx.partition.weights())?;
    Ok((next, finish(logs, ctx)))
}

/// SFL-V1: each client pairs with its own server half; both halves are
/// averaged at the end of the round.
pub fn run_sflv1_round(
    clients: &mut [ClientState],
    ts: &mut TrainingServerState,
    client_global: &LayeredModel,
    server_global: &LayeredModel,
    ctx: &RoundContext,
) -> Result<(LayeredModel, LayeredModel, RoundMetrics)> {
    check_clients(clients, ctx.partition)?;
    let TrainingServerState::PerClient { models: servers, optimizers } = ts else {
        return Err(Error::Protocol("SFL-V1 needs one server model per client".into()));
    };
    if servers.len() != clients.len() {
        return Err(Error::Protocol("server model count differs from client count".into()));
    }
    let sync = (client_global.param_count() + server_global.param_count()) as u64;
    let mut logs = Vec::with_capacity(clients.len());
    for ((client, server), server_opt) in clients.iter_mut().zip(servers.iter_mut()).zip(optimizers.iter_mut()) {
        let mut log = ClientLog::default();
        client.model.copy_params_from(client_global)?;
        server.copy_params_from(server_global)?;
        log.traffic.weights_down += sync;
        set_lr(&mut client.optimizer, ctx)?;
        set_lr(server_opt, ctx)?;
        for batch in ctx.client_batches(client.id) {
            if ctx.config.record_snapshots {
                log.snapshots.push(joined_params(&client.model, server));
            }
            log.loss_sum += split_step(
                &mut client.model,
                &mut client.optimizer,
                server,
                server_opt,
                ctx.dataset,
                &batch,
                ctx.config.loss,
                &mut log.traffic,
            )?;
            log.steps += 1;
        }
        log.traffic.weights_up += sync;
        logs.push(log);
    }
    let weights = ctx.partition.weights();
    let client_models: Vec<&LayeredModel> = clients.iter().map(|c| &c.model).collect();
    let server_models: Vec<&LayeredModel> = servers.iter().collect();
    let next_client = aggregate_weighted(&client_models, weights)?;
    let next_server = aggregate_weighted(&server_models, weights)?;
    Ok((next_client, next_server, finish(logs, ctx)))
}

/// Order in which the shared server visits the `active` clients at `step`.
/// A fresh permutation per step, or with `permute_per_round` one permutation
/// of all clients per round restricted to the active ones.
pub fn server_visit_order(config: &RoundConfig, num_clients: usize, round: usize, step: usize, active: &[bool]) -> Vec<usize> {
    if config.permute_per_round {
        let mut all: Vec<usize> = (0..num_clients).collect();
        all.shuffle(&mut order_stream(config.seed, &[round as u64]));
        all.into_iter().filter(|&k| active[k]).collect()
    } else {
        let mut order: Vec<usize> = (0..num_clients).filter(|&k| active[k]).collect();
        order.shuffle(&mut order_stream(config.seed, &[round as u64, step as u64 + 1]));
        order
    }
}

/// Client `k`'s SFL-V2 batches for a round whose longest client takes
/// `longest` steps. Without wrapping this is the plain `E`-epoch stream.
pub fn sflv2_client_batches(ctx: &RoundContext, k: usize, longest: usize) -> Vec<Vec<usize>> {
    let mut batches = ctx.client_batches(k);
    if ctx.config.wrap_short_clients && !batches.is_empty() {
        let mut epoch = ctx.config.epochs;
        while batches.len() < longest {
            batches.extend(data::minibatch_stream(
                ctx.partition,
                k,
                ctx.config.batch_size,
                ctx.config.seed,
                ctx.round,
                epoch,
            ));
            epoch += 1;
        }
        batches.truncate(longest);
    }
    batches
}

/// SFL-V2: one shared server half. At step `i` the server visits, in a
/// random order, every client that still has an `i`-th batch and updates
/// after each one. Only client halves are averaged.
pub fn run_sflv2_round(
    clients: &mut [ClientState],
    ts: &mut TrainingServerState,
    client_global: &LayeredModel,
    ctx: &RoundContext,
) -> Result<(LayeredModel, RoundMetrics)> {
    check_clients(clients, ctx.partition)?;
    let TrainingServerState::Shared { model: server, optimizer: server_opt } = ts else {
        return Err(Error::Protocol("SFL-V2 needs a shared server model".into()));
    };
    let k_count = clients.len();
    let sync = client_global.param_count() as u64;
    let mut logs: Vec<ClientLog> = (0..k_count).map(|_| ClientLog::default()).collect();
    set_lr(server_opt, ctx)?;
    for (client, log) in clients.iter_mut().zip(logs.iter_mut()) {
        client.model.copy_params_from(client_global)?;
        log.traffic.weights_down += sync;
        set_lr(&mut client.optimizer, ctx)?;
    }
    let longest = (0..k_count).map(|k| ctx.client_batches(k).len()).max().unwrap_or(0);
    let batches: Vec<Vec<Vec<usize>>> = (0..k_count).map(|k| sflv2_client_batches(ctx, k, longest)).collect();
    for step in 0..longest {
        let active: Vec<bool> = batches.iter().map(|b| b.len() > step).collect();
        for k in server_visit_order(ctx.config, k_count, ctx.round, step, &active) {
            let client = &mut clients[k];
            let log = &mut logs[k];
            if ctx.config.record_snapshots {
                log.snapshots.push(joined_params(&client.model, server));
            }
            log.loss_sum += split_step(
                &mut client.model,
                &mut client.optimizer,
                server,
                server_opt,
                ctx.dataset,
                &batches[k][step],
                ctx.config.loss,
                &mut log.traffic,
            )?;
            log.steps += 1;
        }
    }
    for log in &mut logs {
        log.traffic.weights_up += sync;
    }
    let client_models: Vec<&LayeredModel> = clients.iter().map(|c| &c.model).collect();
    let next = aggregate_weighted(&client_models, ctx.partition.weights())?;
    Ok((next, finish(logs, ctx)))
}

/// Vanilla split learning: clients train one after another (ascending id)
/// against the shared server half, each handing its client half to the next.
/// Returns the client half held by the last client.
pub fn run_sl_round(
    clients: &mut [ClientState],
    ts: &mut TrainingServerState,
    relay: &LayeredModel,
    ctx: &RoundContext,
) -> Result<(LayeredModel, RoundMetrics)> {
    check_clients(clients, ctx.partition)?;
    let TrainingServerState::Shared { model: server, optimizer: server_opt } = ts else {
        return Err(Error::Protocol("split learning needs a shared server model".into()));
    };
    let sync = relay.param_count() as u64;
    set_lr(server_opt, ctx)?;
    let mut current = relay.clone();
    let mut logs = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        let mut log = ClientLog::default();
        client.model.copy_params_from(&current)?;
        log.traffic.weights_down += sync;
        set_lr(&mut client.optimizer, ctx)?;
        for batch in ctx.client_batches(client.id) {
            if ctx.config.record_snapshots {
                log.snapshots.push(joined_params(&client.model, server));
            }
            log.loss_sum += split_step(
                &mut client.model,
                &mut client.optimizer,
                server,
                server_opt,
                ctx.dataset,
                &batch,
                ctx.config.loss,
                &mut log.traffic,
            )?;
            log.steps += 1;
        }
        current.copy_params_from(&client.model)?;
        log.traffic.weights_up += sync;
        logs.push(log);
    }
    Ok((current, finish(logs, ctx)))
}

/// Centralized reference: `E` shuffled epochs over every partitioned sample.
pub fn run_centralized_round(model: &mut LayeredModel, opt: &mut OptimizerState, ctx: &RoundContext) -> Result<RoundMetrics> {
    set_lr(opt, ctx)?;
    let mut pool: Vec<usize> = ctx.partition.assignments().iter().flatten().copied().collect();
    pool.sort_unstable();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for epoch in 0..ctx.config.epochs {
        let mut order = pool.clone();
        order.shuffle(&mut rng::stream(ctx.config.seed, Purpose::Centralized, &[ctx.round as u64, epoch as u64]));
        for batch in order.chunks(ctx.config.batch_size) {
            loss_sum += full_step(model, opt, ctx.dataset, batch, ctx.config.loss)?;
            steps += 1;
        }
    }
    let mean = if steps == 0 { 0.0 } else { loss_sum / steps as f64 };
    let k = ctx.partition.num_clients();
    Ok(RoundMetrics {
        train_loss: mean,
        client_losses: vec![mean],
        steps: vec![steps],
        traffic: vec![Traffic::default(); k],
        snapshots: None,
    })
}
