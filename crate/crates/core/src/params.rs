//! Flat parameter vectors with tensor layout metadata.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(name: impl Into<String>, dims: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            dims,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Ordered tensor shapes describing how a flat vector maps onto model tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    tensors: Vec<TensorShape>,
}

impl Layout {
    pub fn new(tensors: Vec<TensorShape>) -> Self {
        Self { tensors }
    }

    /// Single unnamed vector of `len` entries.
    pub fn flat(len: usize) -> Self {
        Self::new(vec![TensorShape::new("flat", vec![len])])
    }

    pub fn tensors(&self) -> &[TensorShape] {
        &self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(TensorShape::numel).sum()
    }

    /// Start offset of every tensor in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.tensors
            .iter()
            .map(|t| {
                let start = acc;
                acc += t.numel();
                start
            })
            .collect()
    }
}

/// Flat model parameters. Aggregation, deltas and SGD steps all operate here.
///
/// The layout is shared behind an `Arc`; two vectors are compatible when their
/// layouts compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T> {
    values: Vec<T>,
    layout: Arc<Layout>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn new(values: Vec<T>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameter values must be finite"));
        }
        Ok(Self { values, layout })
    }

    /// Vector over a single flat tensor.
    pub fn from_flat(values: Vec<T>) -> Self {
        let layout = Arc::new(Layout::flat(values.len()));
        Self::new(values, layout).expect("flat layout matches its own length")
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![T::zero(); layout.total_len()],
            layout,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Size of the serialized vector: values only, layout excluded.
    pub fn byte_len(&self) -> u64 {
        (self.values.len() * T::BYTES) as u64
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub(crate) fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{} entries vs {} entries with different tensor layout",
                self.len(),
                other.len()
            )))
        }
    }

    /// Replace the values while keeping the layout.
    pub(crate) fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: Arc::clone(&self.layout),
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// `self - other`, e.g. the update a client contributed in a round.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: T) -> Self {
        self.with_values(self.values.iter().map(|&v| v * factor).collect())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }
}
