//! `key = value` experiment configuration.
//!
//! Keys are dotted (`model.*`, `train.*`, `schedule.*`, `selection.*`,
//! `cost.*`, `seeds.*`, `task.*`, `partition.*`) plus the bare keys `label`,
//! `weighting` and `reference`. `#` starts a comment. Only `schedule.level`
//! is required; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::engine::FederatedConfig;
use crate::error::{Error, Result};
use crate::fedavg::{SelectionMode, SelectionPolicy, WeightingScheme};
use crate::model::{Activation, ModelSpec};
use crate::partition::{PartitionConfig, SplitRatios, DEFAULT_FL_THRESHOLD};
use crate::schedule::{CommLevel, SchedulePlan, DEFAULT_CHUNKS_PER_EPOCH, DEFAULT_PATIENCE};
use crate::train::TrainConfig;

use super::task::SyntheticTaskSpec;

/// Federated epochs run after the initial model unless configured otherwise.
pub const DEFAULT_FL_EPOCHS: usize = 12;
/// Server-side epochs for the initial model.
pub const DEFAULT_INITIAL_EPOCHS: usize = 24;
pub const DEFAULT_MAX_LOCAL_EPOCHS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub selection: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            init: 2,
            selection: 3,
            shuffle: 4,
        }
    }
}

impl Seeds {
    /// Applies `name=value`, e.g. from a command line override.
    pub fn set(&mut self, name: &str, value: u64) -> Result<()> {
        let slot = match name {
            "data" => &mut self.data,
            "init" => &mut self.init,
            "selection" => &mut self.selection,
            "shuffle" => &mut self.shuffle,
            other => return Err(Error::config(format!("seeds.{other}"), "unknown seed")),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostConfig {
    /// `None` charges the serialized model size.
    pub model_bytes: Option<u64>,
    pub count_downlink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub model: ModelSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub initial_epochs: usize,
    pub schedule: SchedulePlan,
    pub weighting: WeightingScheme,
    pub selection: SelectionMode,
    pub cost: CostConfig,
    pub seeds: Seeds,
    pub task: SyntheticTaskSpec,
    pub partition: PartitionConfig,
    /// Also train the centralized reference model.
    pub reference: bool,
}

impl ExperimentConfig {
    /// Default desk-scale experiment with the given schedule.
    pub fn with_schedule(level: CommLevel) -> Self {
        let task = SyntheticTaskSpec::default();
        Self {
            label: None,
            model: ModelSpec {
                input_dim: task.input_dim,
                hidden_dims: vec![32],
                output_classes: task.classes,
                activation: Activation::Tanh,
            },
            learning_rate: 0.05,
            batch_size: 8,
            initial_epochs: DEFAULT_INITIAL_EPOCHS,
            schedule: SchedulePlan {
                level,
                epoch_budget: DEFAULT_FL_EPOCHS,
            },
            weighting: WeightingScheme::Mean,
            selection: SelectionMode::All,
            cost: CostConfig::default(),
            seeds: Seeds::default(),
            task,
            partition: PartitionConfig::default(),
            reference: false,
        }
    }

    /// Epoch-level plan with `period_chunks` of `DEFAULT_CHUNKS_PER_EPOCH`.
    pub fn epoch_level(period_chunks: usize) -> Self {
        Self::with_schedule(CommLevel::Epoch {
            period_chunks,
            chunks_per_epoch: DEFAULT_CHUNKS_PER_EPOCH,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| r.map_err(|e| Error::config(key, e.to_string()));
        wrap("model", self.model.validate())?;
        wrap("train", self.train_config(self.initial_epochs).validate())?;
        wrap("schedule", self.schedule.validate())?;
        wrap("task", self.task.validate())?;
        wrap("partition", self.partition.validate())?;
        if self.task.input_dim != self.model.input_dim || self.task.classes != self.model.output_classes {
            return Err(Error::config("task", "task shape disagrees with model"));
        }
        if let SelectionMode::RandomN(n) = self.selection {
            if n == 0 || n > self.task.n_clients {
                return Err(Error::config("selection.n", format!("cannot select {n} of {} clients", self.task.n_clients)));
            }
        }
        Ok(())
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs,
            seed: self.seeds.shuffle,
        }
    }

    pub fn federated_config(&self) -> FederatedConfig {
        FederatedConfig {
            schedule: self.schedule,
            weighting: self.weighting,
            selection: SelectionPolicy {
                mode: self.selection,
                seed: self.seeds.selection,
            },
            spec: self.model.clone(),
            train: self.train_config(self.schedule.epoch_budget),
            model_bytes: self.cost.model_bytes,
            count_downlink: self.cost.count_downlink,
        }
    }

    /// Label used in reports, e.g. `E(1/2)-M` or `E(1)-100-W`.
    pub fn run_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.selection {
            SelectionMode::All => format!("{}-{}", self.schedule, self.weighting.short_name()),
            SelectionMode::RandomN(n) => format!("{}-{n}-{}", self.schedule, self.weighting.short_name()),
        }
    }

    /// Text form accepted by [`parse_config`]; every key is written out.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(l) = &self.label {
            kv("label", l.clone());
        }
        kv("model.input_dim", self.model.input_dim.to_string());
        kv(
            "model.hidden",
            self.model.hidden_dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        kv("model.classes", self.model.output_classes.to_string());
        kv("model.activation", self.model.activation.name().into());
        kv("train.learning_rate", self.learning_rate.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.initial_epochs", self.initial_epochs.to_string());
        kv("schedule.epochs", self.schedule.epoch_budget.to_string());
        match self.schedule.level {
            CommLevel::Batch { k } => {
                kv("schedule.level", "B".into());
                kv("schedule.k", k.to_string());
            }
            CommLevel::Epoch {
                period_chunks,
                chunks_per_epoch,
            } => {
                kv("schedule.level", "E".into());
                kv("schedule.chunks", chunks_per_epoch.to_string());
                kv("schedule.period", fraction(period_chunks, chunks_per_epoch));
            }
            CommLevel::Convergence {
                patience,
                max_epochs,
            } => {
                kv("schedule.level", "C".into());
                kv("schedule.patience", patience.to_string());
                kv("schedule.max_epochs", max_epochs.to_string());
            }
        }
        kv("weighting", self.weighting.short_name().into());
        kv(
            "selection.n",
            match self.selection {
                SelectionMode::All => "all".into(),
                SelectionMode::RandomN(n) => n.to_string(),
            },
        );
        kv(
            "cost.model_bytes",
            self.cost.model_bytes.map_or_else(|| "auto".into(), |b| b.to_string()),
        );
        kv("cost.count_downlink", self.cost.count_downlink.to_string());
        kv("seeds.data", self.seeds.data.to_string());
        kv("seeds.init", self.seeds.init.to_string());
        kv("seeds.selection", self.seeds.selection.to_string());
        kv("seeds.shuffle", self.seeds.shuffle.to_string());
        kv("task.clients", self.task.n_clients.to_string());
        kv("task.examples_per_client", self.task.per_client_examples.to_string());
        kv("task.skew", self.task.client_skew.to_string());
        kv("task.server_examples", self.task.server_examples.to_string());
        kv("task.eval_examples", self.task.eval_examples.to_string());
        kv("task.unseen_clients", self.task.unseen_clients.to_string());
        kv("task.class_separation", self.task.class_separation.to_string());
        kv("task.speaker_shift", self.task.speaker_shift.to_string());
        kv("partition.threshold", self.partition.fl_threshold.to_string());
        kv("partition.initial_fraction", self.partition.initial_fraction.to_string());
        let r = self.partition.client_split;
        kv("partition.split", format!("{},{},{}", r.train, r.test, r.dev));
        kv("reference", self.reference.to_string());
        s
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn fraction(num: usize, den: usize) -> String {
    let g = gcd(num, den);
    if den / g == 1 {
        (num / g).to_string()
    } else {
        format!("{}/{}", num / g, den / g)
    }
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if map.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(Error::config(k, "given more than once"));
            }
        }
        Ok(Self { map })
    }

    fn take_raw(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(key, format!("invalid value `{v}`"))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_keys().next() {
            Some(k) => Err(Error::config(k, "unknown key")),
            None => Ok(()),
        }
    }
}

/// Parses `2`, `1`, `1/2`, `0.25` into a positive rational `(num, den)`.
fn parse_period(key: &str, v: &str, chunks: usize) -> Result<usize> {
    let bad = || Error::config(key, format!("invalid period `{v}`"));
    let value = match v.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => v.parse::<f64>().map_err(|_| bad())?,
    };
    let period = value * chunks as f64;
    let rounded = period.round();
    if !(value > 0.0) || (period - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::config(
            key,
            format!("period `{v}` is not a whole number of the {chunks} chunks per epoch"),
        ));
    }
    Ok(rounded as usize)
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(key, format!("invalid list entry `{p}`")))
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut e = Entries::parse(text)?;
    let level = e
        .take_raw("schedule.level")
        .ok_or_else(|| Error::config("schedule.level", "missing required key"))?;
    let defaults = ExperimentConfig::epoch_level(DEFAULT_CHUNKS_PER_EPOCH);

    let input_dim = e.take("model.input_dim", defaults.model.input_dim)?;
    let hidden = match e.take_raw("model.hidden") {
        Some(v) => parse_list("model.hidden", &v)?,
        None => defaults.model.hidden_dims.clone(),
    };
    let classes = e.take("model.classes", defaults.model.output_classes)?;
    let activation = e.take("model.activation", defaults.model.activation.name().to_owned())?;
    let activation = Activation::from_str(&activation).map_err(|err| Error::config("model.activation", err.to_string()))?;
    let model = ModelSpec {
        input_dim,
        hidden_dims: hidden,
        output_classes: classes,
        activation,
    };

    let level = match level.as_str() {
        "B" | "b" | "batch" => CommLevel::Batch {
            k: e.take("schedule.k", 1)?,
        },
        "E" | "e" | "epoch" => {
            let chunks = e.take("schedule.chunks", DEFAULT_CHUNKS_PER_EPOCH)?;
            if chunks == 0 {
                return Err(Error::config("schedule.chunks", "must be positive"));
            }
            let period = e.take_raw("schedule.period").unwrap_or_else(|| "1".into());
            CommLevel::Epoch {
                period_chunks: parse_period("schedule.period", &period, chunks)?,
                chunks_per_epoch: chunks,
            }
        }
        "C" | "c" | "convergence" => CommLevel::Convergence {
            patience: e.take("schedule.patience", DEFAULT_PATIENCE)?,
            max_epochs: e.take("schedule.max_epochs", DEFAULT_MAX_LOCAL_EPOCHS)?,
        },
        other => return Err(Error::config("schedule.level", format!("expected B, E or C, got `{other}`"))),
    };
    let schedule = SchedulePlan {
        level,
        epoch_budget: e.take("schedule.epochs", DEFAULT_FL_EPOCHS)?,
    };

    let weighting = match e.take_raw("weighting").as_deref() {
        None | Some("M") | Some("m") | Some("mean") => WeightingScheme::Mean,
        Some("W") | Some("w") | Some("weighted") => WeightingScheme::Weighted,
        Some(other) => return Err(Error::config("weighting", format!("expected M or W, got `{other}`"))),
    };
    let selection = match e.take_raw("selection.n").as_deref() {
        None | Some("all") => SelectionMode::All,
        Some(n) => SelectionMode::RandomN(
            n.parse()
                .map_err(|_| Error::config("selection.n", format!("expected `all` or a count, got `{n}`")))?,
        ),
    };
    let model_bytes = match e.take_raw("cost.model_bytes").as_deref() {
        None | Some("auto") => None,
        Some(b) => Some(
            b.parse()
                .map_err(|_| Error::config("cost.model_bytes", format!("invalid value `{b}`")))?,
        ),
    };
    let cost = CostConfig {
        model_bytes,
        count_downlink: e.take("cost.count_downlink", false)?,
    };

    let d = Seeds::default();
    let seeds = Seeds {
        data: e.take("seeds.data", d.data)?,
        init: e.take("seeds.init", d.init)?,
        selection: e.take("seeds.selection", d.selection)?,
        shuffle: e.take("seeds.shuffle", d.shuffle)?,
    };

    let t = SyntheticTaskSpec::default();
    let task = SyntheticTaskSpec {
        n_clients: e.take("task.clients", t.n_clients)?,
        classes: model.output_classes,
        input_dim: model.input_dim,
        per_client_examples: e.take("task.examples_per_client", t.per_client_examples)?,
        client_skew: e.take("task.skew", t.client_skew)?,
        server_examples: e.take("task.server_examples", t.server_examples)?,
        eval_examples: e.take("task.eval_examples", t.eval_examples)?,
        unseen_clients: e.take("task.unseen_clients", t.unseen_clients)?,
        class_separation: e.take("task.class_separation", t.class_separation)?,
        speaker_shift: e.take("task.speaker_shift", t.speaker_shift)?,
    };

    let p = PartitionConfig::default();
    let split = match e.take_raw("partition.split") {
        None => p.client_split,
        Some(v) => {
            let r: Vec<f64> = parse_list("partition.split", &v)?;
            if r.len() != 3 {
                return Err(Error::config("partition.split", "expected train,test,dev ratios"));
            }
            SplitRatios {
                train: r[0],
                test: r[1],
                dev: r[2],
            }
        }
    };
    let partition = PartitionConfig {
        fl_threshold: e.take("partition.threshold", DEFAULT_FL_THRESHOLD)?,
        client_split: split,
        initial_fraction: e.take("partition.initial_fraction", p.initial_fraction)?,
        seed: seeds.data,
    };

    let config = ExperimentConfig {
        label: e.take_raw("label"),
        model,
        learning_rate: e.take("train.learning_rate", defaults.learning_rate)?,
        batch_size: e.take("train.batch_size", defaults.batch_size)?,
        initial_epochs: e.take("train.initial_epochs", defaults.initial_epochs)?,
        schedule,
        weighting,
        selection,
        cost,
        seeds,
        task,
        partition,
        reference: e.take("reference", false)?,
    };
    e.finish()?;
    config.validate()?;
    Ok(config)
}
