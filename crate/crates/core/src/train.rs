//! Plain minibatch SGD.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{batch_gradient, ModelSpec};
use crate::params::ParameterVector;
use crate::rng::{keyed_rng, permutation};
use crate::scalar::Scalar;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Seed of the example order a client sees in a given epoch.
///
/// Both plain local training and the chunk scheduler draw epoch orders from
/// here, which is what makes a one-client federation reproduce local training.
pub fn epoch_seed(seed: u64, client_key: u64, epoch: u64) -> u64 {
    keyed_rng(seed, &[0x5f0f_u64, client_key, epoch]).random()
}

/// Shuffled example order of one epoch.
pub fn epoch_order(len: usize, seed: u64, client_key: u64, epoch: u64) -> Vec<usize> {
    permutation(len, epoch_seed(seed, client_key, epoch), &[])
}

/// Consecutive batch sizes covering `len` examples; the last batch may be short.
pub fn fixed_batches(len: usize, batch_size: usize) -> Vec<usize> {
    let mut out = vec![batch_size; len / batch_size];
    if len % batch_size != 0 {
        out.push(len % batch_size);
    }
    out
}

/// `params - lr * grad`.
pub fn sgd_step<T: Scalar>(
    params: &ParameterVector<T>,
    grad: &ParameterVector<T>,
    lr: T,
) -> Result<ParameterVector<T>> {
    params.check_layout(grad)?;
    let mut out = params.clone();
    apply_step(out.values_mut(), grad.values(), lr);
    Ok(out)
}

fn apply_step<T: Scalar>(params: &mut [T], grad: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Runs SGD over `order`, consuming it left to right in batches of the given sizes.
pub fn train_on_batches<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
    order: &[usize],
    batches: &[usize],
    learning_rate: f64,
) -> Result<ParameterVector<T>> {
    let total: usize = batches.iter().sum();
    if total > order.len() {
        return Err(Error::invalid(format!(
            "batch plan needs {total} examples, only {} given",
            order.len()
        )));
    }
    let lr = T::from_f64_lossy(learning_rate);
    let mut out = params.clone();
    let mut start = 0;
    for &b in batches.iter().filter(|&&b| b > 0) {
        let grad = batch_gradient(&out, spec, data, &order[start..start + b]);
        apply_step(out.values_mut(), &grad, lr);
        start += b;
    }
    if !out.is_finite() {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    Ok(out)
}

/// Minibatch SGD on `data`: `steps` minibatches when given, otherwise
/// `config.epochs` full passes. Epoch `e` visits examples in
/// [`epoch_order`]`(.., config.seed, client_key, e)`.
pub fn train_local<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
    config: &TrainConfig,
    steps: Option<usize>,
    client_key: u64,
) -> Result<ParameterVector<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = params.clone();
    let mut remaining = steps;
    let mut epoch = 0u64;
    loop {
        match remaining {
            Some(0) => break,
            None if epoch as usize >= config.epochs => break,
            _ => {}
        }
        let order = epoch_order(data.len(), config.seed, client_key, epoch);
        let mut batches = fixed_batches(order.len(), config.batch_size);
        if let Some(left) = remaining.as_mut() {
            batches.truncate(*left);
            *left -= batches.len();
        }
        out = train_on_batches(&out, spec, data, &order, &batches, config.learning_rate)?;
        epoch += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;
    use crate::model::{init_model, Activation};

    fn data() -> LabeledDataset<f64> {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 5.0]).collect();
        let labels = (0..10).map(|i| usize::from(i >= 5)).collect();
        LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 3,
            epochs: 2,
            seed: 11,
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParameterVector::from_flat(vec![1.0, 2.0]);
        let g = ParameterVector::from_flat(vec![1.0, -1.0]);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap().values(), &[0.5, 2.5]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        let twice = sgd_step(&sgd_step(&p, &g, 0.5).unwrap(), &g, 0.5).unwrap();
        assert_eq!(twice.values(), &[0.0, 3.0]);
    }

    #[test]
    fn sgd_step_layout_mismatch() {
        let p = ParameterVector::from_flat(vec![1.0, 2.0]);
        let g = ParameterVector::from_flat(vec![1.0]);
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn fixed_batches_cover_length() {
        assert_eq!(fixed_batches(10, 4), vec![4, 4, 2]);
        assert_eq!(fixed_batches(8, 4), vec![4, 4]);
        assert!(fixed_batches(0, 4).is_empty());
    }

    #[test]
    fn zero_steps_is_identity_and_runs_are_deterministic() {
        let spec = ModelSpec::new(2, vec![4], 2, Activation::Tanh).unwrap();
        let p: ParameterVector<f64> = init_model(&spec, 5).unwrap();
        let d = data();
        assert_eq!(train_local(&p, &spec, &d, &config(), Some(0), 1).unwrap(), p);
        let a = train_local(&p, &spec, &d, &config(), None, 1).unwrap();
        let b = train_local(&p, &spec, &d, &config(), None, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p);
    }

    #[test]
    fn steps_equal_to_epoch_batches_match_epoch_mode() {
        let spec = ModelSpec::new(2, vec![4], 2, Activation::Tanh).unwrap();
        let p: ParameterVector<f64> = init_model(&spec, 5).unwrap();
        let d = data();
        // 10 examples at batch 3 -> 4 batches per epoch
        let by_epochs = train_local(&p, &spec, &d, &config(), None, 9).unwrap();
        let by_steps = train_local(&p, &spec, &d, &config(), Some(8), 9).unwrap();
        assert_eq!(by_epochs, by_steps);
    }
}
