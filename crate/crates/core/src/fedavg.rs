//! Aggregation weights, the parameter-average step, client selection and the
//! early-stopping rule.

use std::borrow::Borrow;

use rand::seq::index;

use crate::client::ClientState;
use crate::error::{Error, Result};
use crate::params::ParameterVector;
use crate::rng::keyed_rng;
use crate::scalar::Scalar;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingScheme {
    /// `1 / N` for each of the N selected clients.
    Mean,
    /// Proportional to the number of local training examples.
    Weighted,
}

impl WeightingScheme {
    pub fn short_name(self) -> &'static str {
        match self {
            WeightingScheme::Mean => "M",
            WeightingScheme::Weighted => "W",
        }
    }
}

/// Averaging weights for the selected clients, given their dataset sizes.
///
/// Weighted normalizes over the selected subset only, so the weights always
/// sum to one.
pub fn compute_weights<T: Scalar>(scheme: WeightingScheme, sizes: &[usize]) -> Result<Vec<T>> {
    if sizes.is_empty() {
        return Err(Error::invalid("no clients selected"));
    }
    match scheme {
        WeightingScheme::Mean => {
            let w = T::one() / T::from_usize(sizes.len()).expect("client count fits the scalar");
            Ok(vec![w; sizes.len()])
        }
        WeightingScheme::Weighted => {
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::invalid("weighted averaging over clients without data"));
            }
            let total = T::from_usize(total).expect("size fits the scalar");
            Ok(sizes
                .iter()
                .map(|&s| T::from_usize(s).expect("size fits the scalar") / total)
                .collect())
        }
    }
}

fn check_models<T: Scalar, P: Borrow<ParameterVector<T>>>(models: &[P], weights: &[T]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("nothing to average"))?
        .borrow();
    if weights.len() != models.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} models",
            weights.len(),
            models.len()
        )));
    }
    for m in &models[1..] {
        first.check_layout(m.borrow())?;
    }
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(Error::invalid("averaging weights must be finite and nonnegative"));
    }
    let sum: f64 = weights.iter().map(|w| w.to_f64_lossy()).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid(format!("averaging weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `Σ weights[n] * vectors[n]`, reduced pairwise in slice order.
fn weighted_pairwise_sum<T: Scalar, P: Borrow<ParameterVector<T>>>(vectors: &[P], weights: &[T]) -> Vec<T> {
    if vectors.len() == 1 {
        let w = weights[0];
        return vectors[0].borrow().values().iter().map(|&v| w * v).collect();
    }
    let mid = vectors.len() / 2;
    let mut left = weighted_pairwise_sum(&vectors[..mid], &weights[..mid]);
    let right = weighted_pairwise_sum(&vectors[mid..], &weights[mid..]);
    for (l, r) in left.iter_mut().zip(right) {
        *l += r;
    }
    left
}

/// New global model `Σ α_n W_n`.
///
/// Models are reduced pairwise in the order given. Each entry is clamped to
/// the range spanned by the inputs: the exact convex combination lies inside
/// it, so only rounding is removed, and identical inputs come back bitwise.
pub fn fedavg<T: Scalar, P: Borrow<ParameterVector<T>>>(models: &[P], weights: &[T]) -> Result<ParameterVector<T>> {
    check_models(models, weights)?;
    let mut out = weighted_pairwise_sum(models, weights);
    for (j, v) in out.iter_mut().enumerate() {
        let (lo, hi) = models.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), m| {
            let x = m.borrow().values()[j];
            (lo.min(x), hi.max(x))
        });
        *v = v.max(lo).min(hi);
    }
    Ok(models[0].borrow().with_values(out))
}

/// `W_prev + Σ α_n ΔW_n`: the update-averaging form of [`fedavg`].
pub fn delta_form_average<T: Scalar, P: Borrow<ParameterVector<T>>>(
    prev_global: &ParameterVector<T>,
    deltas: &[P],
    weights: &[T],
) -> Result<ParameterVector<T>> {
    check_models(deltas, weights)?;
    prev_global.check_layout(deltas[0].borrow())?;
    let step = weighted_pairwise_sum(deltas, weights);
    Ok(prev_global.with_values(
        prev_global
            .values()
            .iter()
            .zip(step)
            .map(|(&p, s)| p + s)
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    All,
    RandomN(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionPolicy {
    pub mode: SelectionMode,
    pub seed: u64,
}

impl SelectionPolicy {
    pub fn all() -> Self {
        Self {
            mode: SelectionMode::All,
            seed: 0,
        }
    }
}

/// Positions (into `clients`) of the clients taking part in `round`, in
/// client-id order.
///
/// Random draws sample the id-sorted population, so the result does not
/// depend on the order clients are listed in.
pub fn select_clients<T: Scalar>(
    clients: &[ClientState<T>],
    policy: &SelectionPolicy,
    round: u64,
) -> Result<Vec<usize>> {
    let mut by_id: Vec<usize> = (0..clients.len()).collect();
    by_id.sort_by(|&a, &b| clients[a].client_id.cmp(&clients[b].client_id));
    if let Some(w) = by_id
        .windows(2)
        .find(|w| clients[w[0]].client_id == clients[w[1]].client_id)
    {
        return Err(Error::invalid(format!(
            "duplicate client id `{}`",
            clients[w[0]].client_id
        )));
    }
    match policy.mode {
        SelectionMode::All => Ok(by_id),
        SelectionMode::RandomN(n) => {
            if n == 0 || n > clients.len() {
                return Err(Error::invalid(format!(
                    "cannot select {n} of {} clients",
                    clients.len()
                )));
            }
            let mut rng = keyed_rng(policy.seed, &[0x5e1ec7, round]);
            let mut picked = index::sample(&mut rng, clients.len(), n).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| by_id[i]).collect())
        }
    }
}

/// True once `patience` entries have followed the best value without a
/// strictly greater one appearing.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let Some(first) = history.first() else {
        return false;
    };
    let mut best = (0, *first);
    for (i, &v) in history.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    history.len() - 1 - best.0 >= patience.max(1)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::{LabeledDataset, Matrix};

    fn pv(v: &[f64]) -> ParameterVector<f64> {
        ParameterVector::from_flat(v.to_vec())
    }

    fn clients(ids: &[&str]) -> Vec<ClientState<f64>> {
        ids.iter()
            .map(|id| {
                let d = LabeledDataset::new(Matrix::zeros(1, 1), vec![0], 1).unwrap();
                ClientState::new(*id, Arc::new(d), pv(&[0.0])).unwrap()
            })
            .collect()
    }

    #[test]
    fn weights() {
        assert_eq!(compute_weights::<f64>(WeightingScheme::Mean, &[3, 1, 4, 1]).unwrap(), vec![0.25; 4]);
        assert_eq!(compute_weights::<f64>(WeightingScheme::Weighted, &[1, 3]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(
            compute_weights::<f64>(WeightingScheme::Weighted, &[5, 5, 5]).unwrap(),
            compute_weights::<f64>(WeightingScheme::Mean, &[5, 5, 5]).unwrap()
        );
        assert!(compute_weights::<f64>(WeightingScheme::Mean, &[]).is_err());
        assert!(compute_weights::<f64>(WeightingScheme::Weighted, &[0, 0]).is_err());
    }

    #[test]
    fn fedavg_arithmetic() {
        assert_eq!(fedavg(&[pv(&[1.0, 3.0]), pv(&[3.0, 5.0])], &[0.5, 0.5]).unwrap().values(), &[2.0, 4.0]);
        assert_eq!(fedavg(&[pv(&[0.0, 0.0]), pv(&[4.0, 8.0])], &[0.25, 0.75]).unwrap().values(), &[3.0, 6.0]);
    }

    #[test]
    fn fedavg_identical_models_bitwise() {
        let w = pv(&[0.1, -7.3, 1e-300, 3.0]);
        let third = 1.0 / 3.0;
        let out = fedavg(&[w.clone(), w.clone(), w.clone()], &[third, third, third]).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn fedavg_rejects_bad_input() {
        assert!(fedavg::<f64, ParameterVector<f64>>(&[], &[]).is_err());
        assert!(fedavg(&[pv(&[1.0])], &[0.5, 0.5]).is_err());
        assert!(fedavg(&[pv(&[1.0]), pv(&[2.0])], &[0.5, 0.6]).is_err());
        assert!(matches!(
            fedavg(&[pv(&[1.0]), pv(&[2.0, 3.0])], &[0.5, 0.5]),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn delta_form_cases() {
        let prev = pv(&[1.0, 2.0]);
        let zero = pv(&[0.0, 0.0]);
        assert_eq!(delta_form_average(&prev, &[zero.clone(), zero], &[0.5, 0.5]).unwrap(), prev);
        let d = pv(&[0.5, -1.0]);
        assert_eq!(delta_form_average(&prev, &[d.clone()], &[1.0]).unwrap(), prev.add(&d).unwrap());
    }

    #[test]
    fn select_all_is_id_sorted() {
        let cs = clients(&["c", "a", "e", "b", "d"]);
        let picked = select_clients(&cs, &SelectionPolicy::all(), 1).unwrap();
        let ids: Vec<_> = picked.iter().map(|&i| cs[i].client_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn select_random_exhaustive_and_bounds() {
        let cs = clients(&["c", "a", "e", "b", "d"]);
        let policy = SelectionPolicy {
            mode: SelectionMode::RandomN(5),
            seed: 3,
        };
        assert_eq!(select_clients(&cs, &policy, 4).unwrap().len(), 5);
        let too_many = SelectionPolicy {
            mode: SelectionMode::RandomN(6),
            seed: 3,
        };
        assert!(select_clients(&cs, &too_many, 4).is_err());
    }

    #[test]
    fn select_random_is_keyed_by_round() {
        let cs = clients(&["a", "b", "c", "d", "e"]);
        let policy = SelectionPolicy {
            mode: SelectionMode::RandomN(2),
            seed: 42,
        };
        let ids = |round| -> Vec<String> {
            select_clients(&cs, &policy, round)
                .unwrap()
                .into_iter()
                .map(|i| cs[i].client_id.clone())
                .collect()
        };
        assert_eq!(ids(3), ids(3));
        let first = ids(1);
        assert!((2..=20).any(|r| ids(r) != first));
        // independent of declaration order
        let reversed: Vec<_> = cs.iter().rev().cloned().collect();
        let rev_ids: Vec<String> = select_clients(&reversed, &policy, 3)
            .unwrap()
            .into_iter()
            .map(|i| reversed[i].client_id.clone())
            .collect();
        assert_eq!(rev_ids, ids(3));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let cs = clients(&["a", "b", "a"]);
        assert!(select_clients(&cs, &SelectionPolicy::all(), 0).is_err());
    }

    #[test]
    fn early_stopping_boundaries() {
        let increasing: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(!early_stop_check(&increasing, 10));
        let mut h = vec![0.9];
        h.extend(std::iter::repeat(0.5).take(10));
        assert!(early_stop_check(&h, 10));
        assert!(!early_stop_check(&h[..10], 10));
        // ties do not count as improvement
        let ties = vec![0.7; 11];
        assert!(early_stop_check(&ties, 10));
        assert!(!early_stop_check(&[], 10));
    }
}
