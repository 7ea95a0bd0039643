//! Synthetic non-IID classification task standing in for a speech corpus.
//!
//! Each class is a mixture of Gaussian modes. Every client ("speaker") has a
//! label distribution skewed toward one dominant class and a private feature
//! offset. The server holds IID data with no offset.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{LabeledDataset, Matrix};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

const MODES_PER_CLASS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub n_clients: usize,
    pub classes: usize,
    pub input_dim: usize,
    /// Training examples per client; dev and test get a quarter each.
    pub per_client_examples: usize,
    /// Probability mass moved onto each client's dominant class.
    pub client_skew: f64,
    pub server_examples: usize,
    /// Size of the initial and unseen evaluation sets.
    pub eval_examples: usize,
    pub unseen_clients: usize,
    /// Scale of the class-mode centers relative to unit noise.
    pub class_separation: f64,
    /// Standard deviation of each client's feature offset.
    pub speaker_shift: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            n_clients: 50,
            classes: 4,
            input_dim: 16,
            per_client_examples: 60,
            client_skew: 0.7,
            server_examples: 600,
            eval_examples: 600,
            unseen_clients: 10,
            class_separation: 0.6,
            speaker_shift: 0.4,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.classes < 2 || self.input_dim == 0 {
            return Err(Error::invalid("task needs clients, two or more classes and features"));
        }
        if self.per_client_examples == 0 || self.server_examples == 0 || self.eval_examples == 0 {
            return Err(Error::invalid("task set sizes must be positive"));
        }
        if self.unseen_clients == 0 || self.unseen_clients > self.eval_examples {
            return Err(Error::invalid("unseen clients must be between 1 and the eval size"));
        }
        if !(0.0..=1.0).contains(&self.client_skew) {
            return Err(Error::invalid("client skew must lie in [0, 1]"));
        }
        if !(self.class_separation > 0.0 && self.speaker_shift >= 0.0) {
            return Err(Error::invalid("separation must be positive and shift nonnegative"));
        }
        Ok(())
    }

    pub fn dev_examples(&self) -> usize {
        (self.per_client_examples / 4).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskClient {
    pub id: String,
    pub train: LabeledDataset<f64>,
    pub dev: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
}

/// The three evaluation sets reported for every run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplits {
    /// Server distribution, like the data behind the initial model.
    pub initial: LabeledDataset<f64>,
    /// Union of the federated clients' held-out examples.
    pub federated: LabeledDataset<f64>,
    /// Clients that never take part in training.
    pub unseen: LabeledDataset<f64>,
}

impl EvalSplits {
    pub const NAMES: [&'static str; 3] = ["initial", "federated", "unseen"];

    pub fn as_array(&self) -> [&LabeledDataset<f64>; 3] {
        [&self.initial, &self.federated, &self.unseen]
    }

    /// Sizes and label counts; equal signatures mean the same splits in practice.
    pub fn signature(&self) -> String {
        Self::NAMES
            .iter()
            .zip(self.as_array())
            .map(|(n, d)| format!("{n}:{}:{:?}", d.len(), d.class_counts()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub server: LabeledDataset<f64>,
    pub clients: Vec<TaskClient>,
    pub eval: EvalSplits,
}

impl SyntheticTask {
    /// Server data plus every client's training set, clients in id order.
    pub fn complete_train(&self) -> Result<LabeledDataset<f64>> {
        let mut clients: Vec<&TaskClient> = self.clients.iter().collect();
        clients.sort_by(|a, b| a.id.cmp(&b.id));
        let mut parts = vec![&self.server];
        parts.extend(clients.iter().map(|c| &c.train));
        LabeledDataset::concat(&parts)
    }
}

struct Sampler {
    centers: Vec<Vec<f64>>,
    classes: usize,
    dim: usize,
    noise: Normal<f64>,
}

struct Speaker {
    label_probs: Vec<f64>,
    shift: Vec<f64>,
}

impl Sampler {
    fn speaker(&self, dominant: Option<usize>, skew: f64, shift_sd: f64, rng: &mut ChaCha8Rng) -> Speaker {
        let base = match dominant {
            Some(_) => (1.0 - skew) / self.classes as f64,
            None => 1.0 / self.classes as f64,
        };
        let mut label_probs = vec![base; self.classes];
        if let Some(d) = dominant {
            label_probs[d] += skew;
        }
        let shift = (0..self.dim).map(|_| shift_sd * self.noise.sample(rng)).collect();
        Speaker { label_probs, shift }
    }

    fn draw(&self, who: &Speaker, n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset<f64>> {
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut label = self.classes - 1;
            for (c, p) in who.label_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    label = c;
                    break;
                }
            }
            let mode = rng.random_range(0..MODES_PER_CLASS);
            let center = &self.centers[label * MODES_PER_CLASS + mode];
            for j in 0..self.dim {
                data.push(center[j] + who.shift[j] + self.noise.sample(rng));
            }
            labels.push(label);
        }
        LabeledDataset::new(Matrix::new(n, self.dim, data)?, labels, self.classes)
    }
}

fn client_id(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:04}")
}

/// Deterministic in `(spec, seed)`.
pub fn generate_synthetic_task(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = keyed_rng(seed, &[0x7a5c, 0]);
    let centers = (0..spec.classes * MODES_PER_CLASS)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| spec.class_separation * noise.sample(&mut rng))
                .collect()
        })
        .collect();
    let sampler = Sampler {
        centers,
        classes: spec.classes,
        dim: spec.input_dim,
        noise,
    };

    let server_speaker = Speaker {
        label_probs: vec![1.0 / spec.classes as f64; spec.classes],
        shift: vec![0.0; spec.input_dim],
    };
    let mut rng = keyed_rng(seed, &[0x7a5c, 1]);
    let server = sampler.draw(&server_speaker, spec.server_examples, &mut rng)?;
    let initial = sampler.draw(&server_speaker, spec.eval_examples, &mut rng)?;

    let dev_n = spec.dev_examples();
    let clients = (0..spec.n_clients)
        .map(|i| {
            let mut rng = keyed_rng(seed, &[0x7a5c, 2, i as u64]);
            let who = sampler.speaker(Some(i % spec.classes), spec.client_skew, spec.speaker_shift, &mut rng);
            Ok(TaskClient {
                id: client_id("client", i),
                train: sampler.draw(&who, spec.per_client_examples, &mut rng)?,
                dev: sampler.draw(&who, dev_n, &mut rng)?,
                test: sampler.draw(&who, dev_n, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let federated = LabeledDataset::concat(&clients.iter().map(|c| &c.test).collect::<Vec<_>>())?;

    let mut unseen_parts = Vec::with_capacity(spec.unseen_clients);
    for u in 0..spec.unseen_clients {
        let mut rng = keyed_rng(seed, &[0x7a5c, 3, u as u64]);
        let dominant = rng.random_range(0..spec.classes);
        let who = sampler.speaker(Some(dominant), spec.client_skew, spec.speaker_shift, &mut rng);
        let n = spec.eval_examples / spec.unseen_clients + usize::from(u < spec.eval_examples % spec.unseen_clients);
        unseen_parts.push(sampler.draw(&who, n, &mut rng)?);
    }
    let unseen = LabeledDataset::concat(&unseen_parts.iter().collect::<Vec<_>>())?;

    Ok(SyntheticTask {
        spec: spec.clone(),
        server,
        clients,
        eval: EvalSplits {
            initial,
            federated,
            unseen,
        },
    })
}
