//! Communication schedules: when clients talk to the server and which part
//! of their data they train on in between.

use std::fmt;
use std::ops::Range;

use crate::client::ClientState;
use crate::error::{Error, Result};
use crate::rng::permutation;
use crate::scalar::Scalar;
use crate::train::{epoch_order, epoch_seed, fixed_batches};

/// Chunks per epoch used by default for fractional-epoch communication.
pub const DEFAULT_CHUNKS_PER_EPOCH: usize = 8;
/// Local early-stopping patience used by default for convergence-level runs.
pub const DEFAULT_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommLevel {
    /// Communicate after `k` minibatches.
    Batch { k: usize },
    /// Communicate after `period_chunks` chunks, with `chunks_per_epoch`
    /// chunks making up one pass over a client's data.
    Epoch {
        period_chunks: usize,
        chunks_per_epoch: usize,
    },
    /// Communicate once, after every client has trained to local convergence.
    Convergence { patience: usize, max_epochs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulePlan {
    pub level: CommLevel,
    /// Number of passes over client data for batch- and epoch-level plans.
    pub epoch_budget: usize,
}

impl SchedulePlan {
    pub fn validate(&self) -> Result<()> {
        match self.level {
            CommLevel::Batch { k: 0 } => Err(Error::invalid("batch level needs k >= 1")),
            CommLevel::Epoch {
                period_chunks,
                chunks_per_epoch,
            } if period_chunks == 0 || chunks_per_epoch == 0 => {
                Err(Error::invalid("epoch level needs positive period and chunk count"))
            }
            CommLevel::Convergence {
                patience,
                max_epochs,
            } if patience == 0 || max_epochs == 0 => {
                Err(Error::invalid("convergence level needs positive patience and epoch cap"))
            }
            _ => Ok(()),
        }
    }

    /// Round count of an epoch-level plan: enough periods to cover the budget.
    pub fn epoch_level_rounds(&self) -> Option<usize> {
        match self.level {
            CommLevel::Epoch {
                period_chunks,
                chunks_per_epoch,
            } => Some((self.epoch_budget * chunks_per_epoch).div_ceil(period_chunks)),
            _ => None,
        }
    }
}

impl fmt::Display for SchedulePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            CommLevel::Batch { k } => write!(f, "B({k})"),
            CommLevel::Epoch {
                period_chunks,
                chunks_per_epoch,
            } => {
                let g = gcd(period_chunks, chunks_per_epoch);
                let (num, den) = (period_chunks / g, chunks_per_epoch / g);
                if den == 1 {
                    write!(f, "E({num})")
                } else {
                    write!(f, "E({num}/{den})")
                }
            }
            CommLevel::Convergence { .. } => write!(f, "C"),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Shuffled order of a client's examples cut into near-equal contiguous chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    order: Vec<usize>,
    boundaries: Vec<Range<usize>>,
}

impl ChunkPlan {
    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.iter().map(|r| r.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Example indices of chunk `i`.
    pub fn chunk(&self, i: usize) -> &[usize] {
        &self.order[self.boundaries[i].clone()]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// Splits a shuffled `0..dataset_size` into `n_chunks` contiguous ranges.
/// Leading chunks take the remainder, so sizes differ by at most one.
pub fn make_chunks(dataset_size: usize, n_chunks: usize, seed: u64) -> ChunkPlan {
    let n_chunks = n_chunks.max(1);
    let order = permutation(dataset_size, seed, &[]);
    let base = dataset_size / n_chunks;
    let extra = dataset_size % n_chunks;
    let mut boundaries = Vec::with_capacity(n_chunks);
    let mut start = 0;
    for i in 0..n_chunks {
        let len = base + usize::from(i < extra);
        boundaries.push(start..start + len);
        start += len;
    }
    ChunkPlan { order, boundaries }
}

/// Per-client position in the schedule.
///
/// For epoch-level plans `offset` counts chunks consumed in `epoch`; for
/// batch-level plans it counts examples consumed in `epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScheduleCursor {
    pub epoch: u64,
    pub offset: usize,
}

/// The examples one client trains on in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSubset {
    pub client_id: String,
    /// Example indices in training order.
    pub indices: Vec<usize>,
    /// Minibatch sizes consuming `indices` left to right.
    pub batches: Vec<usize>,
    /// Cursor after this subset has been trained.
    pub next_cursor: ScheduleCursor,
}

impl RoundSubset {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Batch sizes for the next batch-level round given `remaining` untrained examples.
///
/// Enough data gives `k` full batches. Less than `k` full batches shrinks the
/// batch size so that `k` batches still fit, with the remainder going to the
/// leading batches. Fewer than `k` examples gives single-example batches.
pub fn b_level_batching(remaining: usize, k: usize, batch_size: usize) -> Vec<usize> {
    if remaining == 0 || k == 0 {
        return Vec::new();
    }
    if remaining >= k * batch_size {
        return vec![batch_size; k];
    }
    if remaining >= k {
        let base = remaining / k;
        let extra = remaining % k;
        return (0..k).map(|i| base + usize::from(i < extra)).collect();
    }
    vec![1; remaining]
}

/// Training subset of `client` for its next round under `plan`.
///
/// Epoch order and chunking are keyed by `(seed, client, epoch)`. An empty
/// subset means the client has nothing left to contribute this epoch.
pub fn next_subset<T: Scalar>(
    client: &ClientState<T>,
    plan: &SchedulePlan,
    batch_size: usize,
    seed: u64,
) -> RoundSubset {
    let size = client.dataset_size();
    let cursor = client.cursor;
    let key = client.key();
    let (indices, batches, next_cursor) = match plan.level {
        CommLevel::Epoch {
            period_chunks,
            chunks_per_epoch,
        } => {
            let mut indices = Vec::new();
            let mut batches = Vec::new();
            let mut cur = cursor;
            let mut plan_epoch = None;
            let mut segment = 0;
            for _ in 0..period_chunks {
                if plan_epoch.as_ref().map(|(e, _)| *e) != Some(cur.epoch) {
                    batches.extend(fixed_batches(segment, batch_size));
                    segment = 0;
                    let chunks = make_chunks(size, chunks_per_epoch, epoch_seed(seed, key, cur.epoch));
                    plan_epoch = Some((cur.epoch, chunks));
                }
                let chunk = plan_epoch.as_ref().map(|(_, c)| c.chunk(cur.offset)).unwrap_or(&[]);
                indices.extend_from_slice(chunk);
                segment += chunk.len();
                cur.offset += 1;
                if cur.offset == chunks_per_epoch {
                    cur.epoch += 1;
                    cur.offset = 0;
                }
            }
            batches.extend(fixed_batches(segment, batch_size));
            (indices, batches, cur)
        }
        CommLevel::Batch { k } => {
            let remaining = size.saturating_sub(cursor.offset);
            let batches = b_level_batching(remaining, k, batch_size);
            let take: usize = batches.iter().sum();
            let order = epoch_order(size, seed, key, cursor.epoch);
            let indices = order[cursor.offset..cursor.offset + take].to_vec();
            (
                indices,
                batches,
                ScheduleCursor {
                    epoch: cursor.epoch,
                    offset: cursor.offset + take,
                },
            )
        }
        CommLevel::Convergence { .. } => {
            let indices = epoch_order(size, seed, key, cursor.epoch);
            let batches = fixed_batches(size, batch_size);
            (
                indices,
                batches,
                ScheduleCursor {
                    epoch: cursor.epoch + 1,
                    offset: 0,
                },
            )
        }
    };
    RoundSubset {
        client_id: client.client_id.clone(),
        indices,
        batches,
        next_cursor,
    }
}

/// Closed-form participation count for `clients` clients holding uniform data.
///
/// Batch-level counts depend on client data sizes and only come from a ledger.
pub fn communication_events(plan: &SchedulePlan, clients: usize) -> Result<u64> {
    match plan.level {
        CommLevel::Epoch {
            period_chunks,
            chunks_per_epoch,
        } => {
            let total_chunks = plan.epoch_budget * chunks_per_epoch;
            if total_chunks % period_chunks != 0 {
                return Err(Error::NotClosedForm(format!(
                    "{total_chunks} chunks are not a multiple of the {period_chunks}-chunk period"
                )));
            }
            Ok((clients * total_chunks / period_chunks) as u64)
        }
        CommLevel::Convergence { .. } => Ok(clients as u64),
        CommLevel::Batch { .. } => Err(Error::NotClosedForm(
            "batch-level participation depends on client data sizes".into(),
        )),
    }
}
