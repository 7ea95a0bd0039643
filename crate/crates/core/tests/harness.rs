use statrs::distribution::{ChiSquared, ContinuousCDF};

use fedsim_core::harness::{
    compare_runs, export_csv, generate_synthetic_task, parse_config, read_report_csv, run_experiment,
    ExperimentConfig, SyntheticTaskSpec,
};
use fedsim_core::{CommLevel, Error};

fn small_config(text: &str) -> ExperimentConfig {
    let base = "task.clients = 8\ntask.examples_per_client = 24\ntask.server_examples = 120\n\
                task.eval_examples = 80\ntask.unseen_clients = 4\ntrain.initial_epochs = 3\nschedule.epochs = 2\n";
    parse_config(&format!("{base}{text}")).unwrap()
}

fn csv(report: &fedsim_core::harness::RunReport) -> String {
    let mut buf = Vec::new();
    export_csv(report, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn iid_clients_share_a_label_distribution() {
    let spec = SyntheticTaskSpec {
        n_clients: 10,
        per_client_examples: 1000,
        client_skew: 0.0,
        ..SyntheticTaskSpec::default()
    };
    let task = generate_synthetic_task(&spec, 3).unwrap();
    let table: Vec<Vec<usize>> = task.clients.iter().map(|c| c.train.class_counts()).collect();
    let total: f64 = 10_000.0;
    let col: Vec<f64> = (0..spec.classes)
        .map(|k| table.iter().map(|r| r[k] as f64).sum())
        .collect();
    let mut stat = 0.0;
    for row in &table {
        let row_total: f64 = row.iter().map(|&x| x as f64).sum();
        for (k, &obs) in row.iter().enumerate() {
            let expected = row_total * col[k] / total;
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let df = ((table.len() - 1) * (spec.classes - 1)) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat} on {df} df, p = {p}");
}

#[test]
fn full_skew_gives_single_class_clients() {
    let spec = SyntheticTaskSpec {
        client_skew: 1.0,
        ..SyntheticTaskSpec::default()
    };
    let task = generate_synthetic_task(&spec, 4).unwrap();
    for c in &task.clients {
        let counts = c.train.class_counts();
        let top = *counts.iter().max().unwrap();
        assert!(top as f64 >= 0.9 * c.train.len() as f64, "{}: {counts:?}", c.id);
    }
}

#[test]
fn zero_federated_epochs_report_only_the_initial_model() {
    let mut c = small_config("schedule.level = E\n");
    c.schedule.epoch_budget = 0;
    let out = run_experiment(&c).unwrap();
    assert_eq!(out.federated.rows.len(), 1);
    assert_eq!(out.federated.rows[0].round, 0);
    assert_eq!(out.federated.summary.cumulative_bytes, 0);
    assert_eq!(out.federated.summary.metrics, out.initial.summary.metrics);
    assert_eq!(csv(&out.federated).lines().count(), 3);
}

#[test]
fn halving_the_period_doubles_cost() {
    let e2 = run_experiment(&small_config("schedule.level = E\nschedule.period = 2\n")).unwrap();
    let e1 = run_experiment(&small_config("schedule.level = E\nschedule.period = 1\n")).unwrap();
    let ratio = e1.federated.summary.cumulative_bytes as f64 / e2.federated.summary.cumulative_bytes as f64;
    assert!((ratio - 2.0).abs() <= 0.02, "ratio {ratio}");
}

#[test]
fn cumulative_cost_never_decreases_and_ends_at_ledger_total() {
    for level in ["E\nschedule.period = 1/4", "B\nschedule.k = 2", "C\nschedule.max_epochs = 5"] {
        let out = run_experiment(&small_config(&format!("schedule.level = {level}\nselection.n = 5\n"))).unwrap();
        let rows = &out.federated.rows;
        assert!(rows.len() > 1, "{level}");
        assert!(rows.windows(2).all(|w| w[0].cumulative_bytes <= w[1].cumulative_bytes));
        assert_eq!(rows.last().unwrap().cumulative_bytes, out.federated.summary.cumulative_bytes);
    }
}

#[test]
fn convergence_level_runs_one_round() {
    let out = run_experiment(&small_config("schedule.level = C\nschedule.patience = 2\n")).unwrap();
    assert_eq!(out.federated.rows.len(), 2);
    assert_eq!(out.federated.rows[1].participants, 8);
    assert!(matches!(
        small_config("schedule.level = C\n").schedule.level,
        CommLevel::Convergence { patience: 10, .. }
    ));
}

#[test]
fn report_csv_reads_back_and_compares() {
    let mut c = small_config("schedule.level = E\nreference = true\n");
    let out = run_experiment(&c).unwrap();
    let text = csv(&out.federated);
    let back = read_report_csv(text.as_bytes(), &out.federated.label).unwrap();
    assert_eq!(csv(&back), text);

    let table = compare_runs(&out.reports()).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["Initial", "E(1)-M", "Ref"]);

    c.seeds.data += 1;
    let other = run_experiment(&c).unwrap();
    assert!(matches!(compare_runs(&[&out.federated, &other.federated]), Err(Error::Integrity(_))));
}
