use std::sync::Arc;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::params::ParameterVector;
use crate::rng::string_key;
use crate::scalar::Scalar;
use crate::schedule::ScheduleCursor;

/// One simulated client and its private data.
#[derive(Debug, Clone)]
pub struct ClientState<T> {
    pub client_id: String,
    pub dataset: Arc<LabeledDataset<T>>,
    /// Held-out local data for convergence-level early stopping.
    pub dev: Option<Arc<LabeledDataset<T>>>,
    pub local_params: ParameterVector<T>,
    pub cursor: ScheduleCursor,
    key: u64,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(
        client_id: impl Into<String>,
        dataset: Arc<LabeledDataset<T>>,
        local_params: ParameterVector<T>,
    ) -> Result<Self> {
        let client_id = client_id.into();
        if client_id.is_empty() {
            return Err(Error::invalid("client id must not be empty"));
        }
        Ok(Self {
            key: string_key(&client_id),
            client_id,
            dataset,
            dev: None,
            local_params,
            cursor: ScheduleCursor::default(),
        })
    }

    pub fn with_dev(mut self, dev: Arc<LabeledDataset<T>>) -> Self {
        self.dev = Some(dev);
        self
    }

    /// Overrides the shuffle stream key, e.g. to make replicas of one client
    /// see identical example orders.
    pub fn with_stream_key(mut self, key: u64) -> Self {
        self.key = key;
        self
    }

    /// `|D_n|`, the number of local training examples.
    pub fn dataset_size(&self) -> usize {
        self.dataset.len()
    }

    /// Stream key derived from the client id.
    pub fn key(&self) -> u64 {
        self.key
    }
}
