//! Initial training, federated rounds, evaluation.

use std::sync::Arc;

use crate::client::ClientState;
use crate::engine::run_federated;
use crate::error::Result;
use crate::model::{evaluate, init_model, Metrics};
use crate::params::ParameterVector;
use crate::rng::string_key;
use crate::train::train_local;

use super::config::ExperimentConfig;
use super::report::{ReportRow, RunReport};
use super::task::{generate_synthetic_task, SyntheticTask};

pub const INITIAL_LABEL: &str = "Initial";
pub const REFERENCE_LABEL: &str = "Ref";

/// Reports of one experiment: the initial model, the federated run and,
/// when requested, the centralized reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub initial: RunReport,
    pub federated: RunReport,
    pub reference: Option<RunReport>,
    pub final_params: ParameterVector<f64>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<&RunReport> {
        let mut out = vec![&self.initial, &self.federated];
        out.extend(self.reference.as_ref());
        out
    }
}

fn evaluate_splits(params: &ParameterVector<f64>, config: &ExperimentConfig, task: &SyntheticTask) -> Result<[Metrics; 3]> {
    let [a, b, c] = task.eval.as_array();
    Ok([
        evaluate(params, &config.model, a)?,
        evaluate(params, &config.model, b)?,
        evaluate(params, &config.model, c)?,
    ])
}

fn single_row_report(label: &str, metrics: [Metrics; 3], config: &ExperimentConfig, task: &SyntheticTask) -> RunReport {
    RunReport {
        label: label.to_owned(),
        rows: Vec::new(),
        summary: ReportRow {
            round: 0,
            participants: 0,
            metrics,
            cumulative_bytes: 0,
        },
        config_echo: config.to_config_string(),
        eval_signature: Some(task.eval.signature()),
    }
}

/// Generates the task from `config.task` and `config.seeds.data`, then runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let task = generate_synthetic_task(&config.task, config.seeds.data)?;
    run_experiment_on_task(config, &task)
}

/// Runs the three phases on a prebuilt task. The order of `task.clients`
/// does not affect the result.
pub fn run_experiment_on_task(config: &ExperimentConfig, task: &SyntheticTask) -> Result<ExperimentOutcome> {
    config.validate()?;
    let start = init_model::<f64>(&config.model, config.seeds.init)?;
    let initial_params = train_local(
        &start,
        &config.model,
        &task.server,
        &config.train_config(config.initial_epochs),
        None,
        string_key("server"),
    )?;
    let initial_metrics = evaluate_splits(&initial_params, config, task)?;
    let initial = single_row_report(INITIAL_LABEL, initial_metrics, config, task);

    let mut clients = task
        .clients
        .iter()
        .map(|c| {
            Ok(ClientState::new(c.id.clone(), Arc::new(c.train.clone()), initial_params.clone())?
                .with_dev(Arc::new(c.dev.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    let fed_cfg = config.federated_config();
    let eval_sets = task.eval.as_array();
    let (final_params, run) = run_federated(initial_params.clone(), &mut clients, &fed_cfg, &eval_sets)?;

    let mut rows = vec![ReportRow {
        round: 0,
        participants: 0,
        metrics: initial_metrics,
        cumulative_bytes: 0,
    }];
    for r in &run.history {
        rows.push(ReportRow {
            round: r.round,
            participants: r.participants,
            metrics: [r.metrics[0], r.metrics[1], r.metrics[2]],
            cumulative_bytes: r.cumulative_bytes,
        });
    }
    let last = *rows.last().expect("round 0 row");
    let federated = RunReport {
        label: config.run_label(),
        summary: ReportRow {
            round: last.round,
            participants: run.ledger.uplinks(),
            metrics: last.metrics,
            cumulative_bytes: run.ledger.total_bytes(),
        },
        rows,
        config_echo: config.to_config_string(),
        eval_signature: Some(task.eval.signature()),
    };

    let reference = if config.reference {
        let complete = task.complete_train()?;
        let epochs = config.initial_epochs + config.schedule.epoch_budget;
        let params = train_local(
            &start,
            &config.model,
            &complete,
            &config.train_config(epochs),
            None,
            string_key("complete"),
        )?;
        let metrics = evaluate_splits(&params, config, task)?;
        Some(single_row_report(REFERENCE_LABEL, metrics, config, task))
    } else {
        None
    };

    Ok(ExperimentOutcome {
        initial,
        federated,
        reference,
        final_params,
    })
}
