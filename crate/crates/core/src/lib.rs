//! Federated averaging simulator.
//!
//! The numeric core ([`params`], [`model`], [`train`], [`fedavg`], [`engine`])
//! is generic over [`Scalar`] (`f32` or `f64`). The harness, partitioner and
//! command line work in `f64`; the aliases below name those instantiations.

pub mod client;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod ledger;
pub mod model;
pub mod params;
pub mod partition;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod train;

pub use client::ClientState;
pub use dataset::{LabeledDataset, Matrix};
pub use engine::{run_federated, run_round, FederatedConfig, FederatedRun, GlobalState, RoundOutcome, RoundRecord};
pub use error::{Error, Result};
pub use fedavg::{
    compute_weights, delta_form_average, early_stop_check, fedavg, select_clients, SelectionMode, SelectionPolicy,
    WeightingScheme,
};
pub use ledger::{CostLedger, Direction, Transfer};
pub use model::{
    evaluate, finite_diff_gradient, finite_diff_gradient_with, forward, gradient, init_model, loss, Activation,
    Metrics, ModelSpec,
};
pub use params::{Layout, ParameterVector, TensorShape};
pub use scalar::Scalar;
pub use schedule::{
    b_level_batching, communication_events, make_chunks, next_subset, ChunkPlan, CommLevel, RoundSubset,
    ScheduleCursor, SchedulePlan,
};
pub use train::{sgd_step, train_local, TrainConfig};

pub type Params = ParameterVector<f64>;
pub type Dataset = LabeledDataset<f64>;
pub type Client = ClientState<f64>;
pub type Global = GlobalState<f64>;

pub type Params32 = ParameterVector<f32>;
pub type Dataset32 = LabeledDataset<f32>;
