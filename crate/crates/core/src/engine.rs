//! Federated rounds: distribute the global model, train selected clients on
//! their round subsets, average, repeat until the schedule is exhausted.

use rayon::prelude::*;

use crate::client::ClientState;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::fedavg::{compute_weights, early_stop_check, fedavg, select_clients, SelectionPolicy, WeightingScheme};
use crate::ledger::{CostLedger, Direction};
use crate::model::{evaluate, Metrics, ModelSpec};
use crate::params::ParameterVector;
use crate::scalar::Scalar;
use crate::schedule::{next_subset, CommLevel, ScheduleCursor, SchedulePlan};
use crate::train::{train_on_batches, TrainConfig};

/// Everything a federated run needs besides the clients and the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    pub schedule: SchedulePlan,
    pub weighting: WeightingScheme,
    pub selection: SelectionPolicy,
    pub spec: ModelSpec,
    /// Learning rate, batch size and shuffle seed of local training.
    pub train: TrainConfig,
    /// Bytes charged per transfer; defaults to the serialized model size.
    pub model_bytes: Option<u64>,
    pub count_downlink: bool,
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.spec.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: usize,
    pub cumulative_bytes: u64,
    /// One entry per evaluation set, in the order they were supplied.
    pub metrics: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState<T> {
    pub round_index: usize,
    pub global_params: ParameterVector<T>,
    pub history: Vec<RoundRecord>,
}

impl<T: Scalar> GlobalState<T> {
    pub fn new(initial: ParameterVector<T>) -> Self {
        Self {
            round_index: 0,
            global_params: initial,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome<T> {
    /// The round ran; ids of the clients that contributed, in id order.
    Completed {
        state: GlobalState<T>,
        participants: Vec<String>,
    },
    /// No selected client had data this round. State is returned unchanged.
    Skipped(GlobalState<T>),
}

struct LocalResult<T> {
    position: usize,
    params: Option<ParameterVector<T>>,
    cursor: ScheduleCursor,
}

fn train_client<T: Scalar>(
    client: &ClientState<T>,
    global: &ParameterVector<T>,
    cfg: &FederatedConfig,
) -> Result<(Option<ParameterVector<T>>, ScheduleCursor)> {
    let seed = cfg.train.seed;
    let batch = cfg.train.batch_size;
    let lr = cfg.train.learning_rate;
    match cfg.schedule.level {
        CommLevel::Convergence {
            patience,
            max_epochs,
        } => {
            if client.dataset_size() == 0 {
                return Ok((None, client.cursor));
            }
            let dev = client.dev.as_deref().unwrap_or(&client.dataset);
            let mut probe = client.clone();
            let mut params = global.clone();
            let mut accuracy = Vec::new();
            for _ in 0..max_epochs {
                let subset = next_subset(&probe, &cfg.schedule, batch, seed);
                params = train_on_batches(&params, &cfg.spec, &client.dataset, &subset.indices, &subset.batches, lr)?;
                probe.cursor = subset.next_cursor;
                accuracy.push(evaluate(&params, &cfg.spec, dev)?.accuracy);
                if early_stop_check(&accuracy, patience) {
                    break;
                }
            }
            Ok((Some(params), probe.cursor))
        }
        _ => {
            let subset = next_subset(client, &cfg.schedule, batch, seed);
            if subset.is_empty() {
                return Ok((None, subset.next_cursor));
            }
            let params = train_on_batches(global, &cfg.spec, &client.dataset, &subset.indices, &subset.batches, lr)?;
            Ok((Some(params), subset.next_cursor))
        }
    }
}

/// One round: reset selected clients to the global model, train each on its
/// round subset, and average the results.
///
/// Clients with an empty subset sit the round out and the weights renormalize
/// over the rest. Local training runs in parallel; the reduction always runs
/// in client-id order, so results do not depend on scheduling.
pub fn run_round<T: Scalar>(
    global: GlobalState<T>,
    clients: &mut [ClientState<T>],
    cfg: &FederatedConfig,
    draw: u64,
    ledger: &mut CostLedger,
) -> Result<RoundOutcome<T>> {
    let selected = select_clients(clients, &cfg.selection, draw)?;
    let incoming = &global.global_params;
    let results: Vec<LocalResult<T>> = selected
        .par_iter()
        .map(|&pos| {
            let (params, cursor) = train_client(&clients[pos], incoming, cfg)?;
            Ok(LocalResult {
                position: pos,
                params,
                cursor,
            })
        })
        .collect::<Result<_>>()?;

    let mut models = Vec::new();
    let mut sizes = Vec::new();
    let mut participants = Vec::new();
    for r in results {
        let client = &mut clients[r.position];
        client.cursor = r.cursor;
        client.local_params = incoming.clone();
        if let Some(p) = r.params {
            client.local_params = p;
            models.push(r.position);
            sizes.push(client.dataset_size());
            participants.push(client.client_id.clone());
        }
    }
    if models.is_empty() {
        return Ok(RoundOutcome::Skipped(global));
    }

    let weights: Vec<T> = compute_weights(cfg.weighting, &sizes)?;
    let trained: Vec<&ParameterVector<T>> = models.iter().map(|&p| &clients[p].local_params).collect();
    let averaged = fedavg(&trained, &weights)?;

    let round = global.round_index + 1;
    for id in &participants {
        ledger.record_transfer(round, id, Direction::Down);
        ledger.record_transfer(round, id, Direction::Up);
    }
    Ok(RoundOutcome::Completed {
        state: GlobalState {
            round_index: round,
            global_params: averaged,
            history: global.history,
        },
        participants,
    })
}

/// Outcome of [`run_federated`].
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun {
    pub history: Vec<RoundRecord>,
    pub ledger: CostLedger,
}

fn evaluate_all<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    eval_sets: &[&LabeledDataset<T>],
) -> Result<Vec<Metrics>> {
    eval_sets.iter().map(|d| evaluate(params, spec, d)).collect()
}

/// Rounds until the schedule ends: a fixed number of epochs for batch- and
/// epoch-level plans, one round after local convergence for the convergence
/// level. After every completed round the global model is scored on each of
/// `eval_sets`.
pub fn run_federated<T: Scalar>(
    initial: ParameterVector<T>,
    clients: &mut [ClientState<T>],
    cfg: &FederatedConfig,
    eval_sets: &[&LabeledDataset<T>],
) -> Result<(ParameterVector<T>, FederatedRun)> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::invalid("federated run without clients"));
    }
    for c in clients.iter() {
        initial.check_layout(&c.local_params)?;
    }
    let model_bytes = cfg.model_bytes.unwrap_or_else(|| initial.byte_len());
    let mut ledger = CostLedger::new(model_bytes, cfg.count_downlink);
    let mut state = GlobalState::new(initial);

    let step = |state: GlobalState<T>, clients: &mut [ClientState<T>], draw: u64, ledger: &mut CostLedger| -> Result<GlobalState<T>> {
        match run_round(state, clients, cfg, draw, ledger)? {
            RoundOutcome::Skipped(s) => Ok(s),
            RoundOutcome::Completed { mut state, participants } => {
                let metrics = evaluate_all(&state.global_params, &cfg.spec, eval_sets)?;
                state.history.push(RoundRecord {
                    round: state.round_index,
                    participants: participants.len(),
                    cumulative_bytes: ledger.total_bytes(),
                    metrics,
                });
                Ok(state)
            }
        }
    };

    match cfg.schedule.level {
        CommLevel::Epoch { .. } => {
            let rounds = cfg.schedule.epoch_level_rounds().unwrap_or(0);
            for draw in 1..=rounds as u64 {
                state = step(state, clients, draw, &mut ledger)?;
            }
        }
        CommLevel::Batch { .. } => {
            let mut epochs_done = 0;
            let mut draw = 1u64;
            while epochs_done < cfg.schedule.epoch_budget {
                if clients.iter().all(|c| c.cursor.offset >= c.dataset_size()) {
                    for c in clients.iter_mut() {
                        c.cursor = ScheduleCursor {
                            epoch: c.cursor.epoch + 1,
                            offset: 0,
                        };
                    }
                    epochs_done += 1;
                    continue;
                }
                state = step(state, clients, draw, &mut ledger)?;
                draw += 1;
            }
        }
        CommLevel::Convergence { .. } => {
            if cfg.schedule.epoch_budget > 0 {
                state = step(state, clients, 1, &mut ledger)?;
            }
        }
    }

    Ok((
        state.global_params,
        FederatedRun {
            history: state.history,
            ledger,
        },
    ))
}
