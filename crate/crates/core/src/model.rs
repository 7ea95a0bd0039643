//! Feed-forward classifier: initialization, forward pass, mean cross-entropy,
//! backpropagation and a central-difference gradient oracle.

use std::sync::Arc;

use rand::Rng;

use crate::dataset::{LabeledDataset, Matrix};
use crate::error::{Error, Result};
use crate::params::{Layout, ParameterVector, TensorShape};
use crate::rng::keyed_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_classes: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_classes);
        w
    }

    /// Weight `[fan_out, fan_in]` then bias `[fan_out]` for every layer.
    pub fn layout(&self) -> Layout {
        let widths = self.widths();
        let mut tensors = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            tensors.push(TensorShape::new(
                format!("layer{l}.weight"),
                vec![pair[1], pair[0]],
            ));
            tensors.push(TensorShape::new(format!("layer{l}.bias"), vec![pair[1]]));
        }
        Layout::new(tensors)
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut offset = 0;
        self.widths()
            .windows(2)
            .map(|p| {
                let view = LayerView {
                    fan_in: p[0],
                    fan_out: p[1],
                    weight: offset,
                    bias: offset + p[0] * p[1],
                };
                offset += p[0] * p[1] + p[1];
                view
            })
            .collect()
    }

    fn check_params<T: Scalar>(&self, params: &ParameterVector<T>) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        Ok(())
    }

    fn check_features<T: Scalar>(&self, features: &Matrix<T>) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: features.cols(),
            });
        }
        Ok(())
    }

    fn check_dataset<T: Scalar>(&self, data: &LabeledDataset<T>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_features(data.features())?;
        if data.classes() != self.output_classes {
            return Err(Error::DimensionMismatch {
                expected: self.output_classes,
                found: data.classes(),
            });
        }
        Ok(())
    }
}

/// Weights uniform in `(-1, 1) / sqrt(fan_in)`, biases zero.
pub fn init_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParameterVector<T>> {
    spec.validate()?;
    let mut rng = keyed_rng(seed, &[0x1a17]);
    let mut params = ParameterVector::zeros(Arc::new(spec.layout()));
    let values = params.values_mut();
    for layer in spec.layers() {
        let scale = 1.0 / (layer.fan_in as f64).sqrt();
        for v in &mut values[layer.weight..layer.bias] {
            let u: f64 = rng.random_range(-1.0..1.0);
            *v = T::from_f64_lossy(u * scale);
        }
    }
    Ok(params)
}

/// Per-layer outputs for a batch; the last entry holds log-probabilities.
fn forward_all<T: Scalar>(
    params: &[T],
    spec: &ModelSpec,
    features: &Matrix<T>,
) -> Vec<Matrix<T>> {
    let layers = spec.layers();
    let n = features.rows();
    let mut outputs: Vec<Matrix<T>> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let input = if l == 0 { features } else { &outputs[l - 1] };
        let mut out = Matrix::zeros(n, layer.fan_out);
        let w = &params[layer.weight..layer.bias];
        let b = &params[layer.bias..layer.bias + layer.fan_out];
        let last = l + 1 == layers.len();
        for r in 0..n {
            let x = input.row(r);
            let y = out.row_mut(r);
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z = row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                *yo = if last { z } else { spec.activation.apply(z) };
            }
            if last {
                log_softmax_in_place(y);
            }
        }
        outputs.push(out);
    }
    outputs
}

fn log_softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for v in z {
        *v -= lse;
    }
}

/// Class log-probabilities, one row per input row.
pub fn forward<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    features: &Matrix<T>,
) -> Result<Matrix<T>> {
    spec.check_params(params)?;
    spec.check_features(features)?;
    Ok(forward_all(params.values(), spec, features)
        .pop()
        .expect("model has at least one layer"))
}

fn mean_nll<T: Scalar>(log_probs: &Matrix<T>, labels: &[usize]) -> T {
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -log_probs.row(r)[y])
        .sum();
    total / T::from_usize(labels.len()).expect("dataset length fits the scalar")
}

/// Mean cross-entropy of the true labels.
pub fn loss<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
) -> Result<T> {
    spec.check_params(params)?;
    spec.check_dataset(data)?;
    let lp = forward_all(params.values(), spec, data.features())
        .pop()
        .expect("model has at least one layer");
    Ok(mean_nll(&lp, data.labels()))
}

/// Exact gradient of [`loss`] by backpropagation.
pub fn gradient<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
) -> Result<ParameterVector<T>> {
    spec.check_params(params)?;
    spec.check_dataset(data)?;
    let mut grad = vec![T::zero(); params.len()];
    backprop(params.values(), spec, data.features(), data.labels(), &mut grad);
    Ok(params.with_values(grad))
}

fn backprop<T: Scalar>(
    params: &[T],
    spec: &ModelSpec,
    features: &Matrix<T>,
    labels: &[usize],
    grad: &mut [T],
) {
    let layers = spec.layers();
    let outputs = forward_all(params, spec, features);
    let n = features.rows();
    let inv_n = T::one() / T::from_usize(n).expect("batch length fits the scalar");

    // dL/dlogits = (softmax - onehot) / n
    let last = outputs.last().expect("model has at least one layer");
    let mut delta = Matrix::zeros(n, spec.output_classes);
    for r in 0..n {
        let d = delta.row_mut(r);
        for (c, (dc, &lp)) in d.iter_mut().zip(last.row(r)).enumerate() {
            let target = if c == labels[r] { T::one() } else { T::zero() };
            *dc = (lp.exp() - target) * inv_n;
        }
    }

    for l in (0..layers.len()).rev() {
        let layer = layers[l];
        let input = if l == 0 { features } else { &outputs[l - 1] };
        let (w_grad, rest) = grad[layer.weight..].split_at_mut(layer.fan_in * layer.fan_out);
        let b_grad = &mut rest[..layer.fan_out];
        for r in 0..n {
            let d = delta.row(r);
            let x = input.row(r);
            for (o, &dv) in d.iter().enumerate() {
                b_grad[o] += dv;
                let wg = &mut w_grad[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, &xi) in wg.iter_mut().zip(x) {
                    *g += dv * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &params[layer.weight..layer.bias];
        let mut prev = Matrix::zeros(n, layer.fan_in);
        for r in 0..n {
            let d = delta.row(r);
            let a = input.row(r);
            let p = prev.row_mut(r);
            for (o, &dv) in d.iter().enumerate() {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (pi, &wi) in p.iter_mut().zip(row) {
                    *pi += wi * dv;
                }
            }
            for (pi, &ai) in p.iter_mut().zip(a) {
                *pi *= spec.activation.derivative_from_output(ai);
            }
        }
        delta = prev;
    }
}

/// Central-difference gradient of an arbitrary objective.
pub fn finite_diff_gradient_with<T, F>(params: &ParameterVector<T>, h: T, mut objective: F) -> Result<ParameterVector<T>>
where
    T: Scalar,
    F: FnMut(&ParameterVector<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let two_h = h + h;
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = params.values()[j];
        probe.values_mut()[j] = orig + h;
        let plus = objective(&probe)?;
        probe.values_mut()[j] = orig - h;
        let minus = objective(&probe)?;
        probe.values_mut()[j] = orig;
        out.push((plus - minus) / two_h);
    }
    Ok(params.with_values(out))
}

/// Central-difference approximation of [`gradient`]; the test oracle.
pub fn finite_diff_gradient<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
    h: T,
) -> Result<ParameterVector<T>> {
    finite_diff_gradient_with(params, h, |p| loss(p, spec, data))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
) -> Result<Metrics> {
    spec.check_params(params)?;
    spec.check_dataset(data)?;
    let lp = forward_all(params.values(), spec, data.features())
        .pop()
        .expect("model has at least one layer");
    let correct = data
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(lp.row(r)) == y)
        .count();
    Ok(Metrics {
        loss: mean_nll(&lp, data.labels()).to_f64_lossy(),
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Gradient of the mean loss over the rows `indices` without materializing a subset.
pub(crate) fn batch_gradient<T: Scalar>(
    params: &ParameterVector<T>,
    spec: &ModelSpec,
    data: &LabeledDataset<T>,
    indices: &[usize],
) -> Vec<T> {
    let batch = data.select(indices);
    let mut grad = vec![T::zero(); params.len()];
    backprop(params.values(), spec, batch.features(), batch.labels(), &mut grad);
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ModelSpec {
        ModelSpec::new(2, vec![3], 2, Activation::Tanh).unwrap()
    }

    fn toy_data(classes: usize) -> LabeledDataset<f64> {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3 - 1.0, (i % 3) as f64]).collect();
        let labels = (0..6).map(|i| i % classes).collect();
        LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = tiny_spec();
        let a: ParameterVector<f64> = init_model(&spec, 7).unwrap();
        let b: ParameterVector<f64> = init_model(&spec, 7).unwrap();
        assert_eq!(a.values(), b.values());
        for layer in spec.layers() {
            assert!(a.values()[layer.bias..layer.bias + layer.fan_out].iter().all(|&v| v == 0.0));
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            assert!(a.values()[layer.weight..layer.bias].iter().all(|v| v.abs() < bound));
        }
    }

    #[test]
    fn parameter_count_by_hand() {
        let spec = ModelSpec::new(4, vec![8, 8], 3, Activation::Relu).unwrap();
        let p: ParameterVector<f64> = init_model(&spec, 1).unwrap();
        assert_eq!(p.len(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(p.len(), 139);
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let spec = ModelSpec::new(3, vec![4], 4, Activation::Tanh).unwrap();
        let p = ParameterVector::<f64>::zeros(Arc::new(spec.layout()));
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let out = forward(&p, &spec, &x).unwrap();
        assert_eq!(out.rows(), 1);
        for &v in out.row(0) {
            assert!((v.exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = tiny_spec();
        let p: ParameterVector<f64> = init_model(&spec, 0).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(forward(&p, &spec, &x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_params_loss_is_log_classes() {
        for classes in [2usize, 4] {
            let spec = ModelSpec::new(2, vec![3], classes, Activation::Tanh).unwrap();
            let p = ParameterVector::<f64>::zeros(Arc::new(spec.layout()));
            let l = loss(&p, &spec, &toy_data(classes)).unwrap();
            assert!((l - (classes as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let spec = tiny_spec();
        let p: ParameterVector<f64> = init_model(&spec, 0).unwrap();
        let empty = LabeledDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(matches!(loss(&p, &spec, &empty), Err(Error::EmptyDataset)));
        assert!(matches!(gradient(&p, &spec, &empty), Err(Error::EmptyDataset)));
        assert!(matches!(evaluate(&p, &spec, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn duplicated_dataset_same_loss_and_gradient() {
        let spec = tiny_spec();
        let p: ParameterVector<f64> = init_model(&spec, 3).unwrap();
        let d = toy_data(2);
        let dd = LabeledDataset::concat(&[&d, &d]).unwrap();
        assert!((loss(&p, &spec, &d).unwrap() - loss(&p, &spec, &dd).unwrap()).abs() < 1e-15);
        let g1 = gradient(&p, &spec, &d).unwrap();
        let g2 = gradient(&p, &spec, &dd).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_diff_exact_on_quadratic() {
        let p = ParameterVector::from_flat(vec![1.0f64, -2.0, 0.5]);
        let g = finite_diff_gradient_with(&p, 1e-3, |q| {
            Ok(q.values().iter().map(|v| 1.5 * v * v).sum())
        })
        .unwrap();
        for (gi, &v) in g.values().iter().zip(p.values()) {
            assert!((gi - 3.0 * v).abs() < 1e-9);
        }
        assert_eq!(g.layout(), p.layout());
    }

    #[test]
    fn finite_diff_rejects_nonpositive_step() {
        let p = ParameterVector::from_flat(vec![1.0]);
        assert!(finite_diff_gradient_with(&p, 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn zero_params_accuracy_equals_class0_share() {
        let spec = tiny_spec();
        let p = ParameterVector::<f64>::zeros(Arc::new(spec.layout()));
        let d = toy_data(2);
        let m = evaluate(&p, &spec, &d).unwrap();
        let share = d.labels().iter().filter(|&&l| l == 0).count() as f64 / d.len() as f64;
        assert_eq!(m.accuracy, share);
        assert!((m.loss - loss(&p, &spec, &d).unwrap()).abs() < 1e-12);
    }
}
