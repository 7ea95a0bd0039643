//! `fedsim`: partition manifests, generate synthetic tasks, run experiments
//! and compare their reports.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim_core::harness::{
    compare_runs, export_csv, generate_synthetic_task, parse_config, read_report_csv, run_experiment,
    ExperimentConfig, RunReport,
};
use fedsim_core::partition::{
    load_manifest, partition, summarize, synth_manifest, write_partition, write_summary, PartitionConfig,
    UtteranceCounts, DEFAULT_FL_THRESHOLD,
};
use fedsim_core::{Dataset, Error, Result};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reorganize an utterance manifest into initial, federated and evaluation sets.
    Partition {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FL_THRESHOLD)]
        threshold: usize,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        initial_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the synthetic task of a config (or a synthetic manifest) to files.
    Synth {
        #[arg(long, required_unless_present = "manifest_speakers")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "seed-override", value_name = "K=V")]
        seed_override: Vec<String>,
        /// Write `manifest.tsv` with this many speakers instead of a task.
        #[arg(long, conflicts_with = "config")]
        manifest_speakers: Option<usize>,
        /// Utterances per speaker are drawn uniformly from MIN..=MAX.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [20, 200])]
        utterances: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "seed-override", value_name = "K=V")]
        seed_override: Vec<String>,
    },
    /// Merge report CSVs into one table.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut config = parse_config(&fs::read_to_string(path)?)?;
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
            key: "--seed-override".into(),
            message: format!("expected name=value, got `{o}`"),
        })?;
        let value = v.trim().parse().map_err(|_| Error::Config {
            key: format!("seeds.{}", k.trim()),
            message: format!("invalid seed `{v}`"),
        })?;
        config.seeds.set(k.trim(), value)?;
    }
    config.partition.seed = config.seeds.data;
    config.validate()?;
    Ok(config)
}

/// `/` cannot appear in file names; `%` is escaped so decoding is exact.
fn encode_label(label: &str) -> String {
    label.replace('%', "%25").replace('/', "%2F")
}

fn decode_label(stem: &str) -> String {
    stem.replace("%2F", "/").replace("%25", "%")
}

fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.input_dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "label,{}", header.join(","))?;
    for (i, label) in data.labels().iter().enumerate() {
        let row: Vec<String> = data.features().row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{label},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_partition(manifest: &Path, out: &Path, threshold: usize, initial_fraction: f64, seed: u64) -> Result<()> {
    let manifest = load_manifest(BufReader::new(File::open(manifest)?))?;
    let config = PartitionConfig {
        fl_threshold: threshold,
        initial_fraction,
        seed,
        ..PartitionConfig::default()
    };
    config.validate().map_err(|e| Error::Config {
        key: "partition".into(),
        message: e.to_string(),
    })?;
    let result = partition(&manifest, &config)?;
    write_partition(&result, out)?;
    write_summary(&summarize(&result), std::io::stdout().lock())
}

fn cmd_synth_task(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let task = generate_synthetic_task(&config.task, config.seeds.data)?;
    fs::create_dir_all(out.join("clients"))?;
    fs::create_dir_all(out.join("eval"))?;
    write_dataset(&task.server, &out.join("server.csv"))?;
    for c in &task.clients {
        let dir = out.join("clients").join(&c.id);
        fs::create_dir_all(&dir)?;
        write_dataset(&c.train, &dir.join("train.csv"))?;
        write_dataset(&c.dev, &dir.join("dev.csv"))?;
        write_dataset(&c.test, &dir.join("test.csv"))?;
    }
    for (name, set) in fedsim_core::harness::EvalSplits::NAMES.iter().zip(task.eval.as_array()) {
        write_dataset(set, &out.join("eval").join(format!("{name}.csv")))?;
    }
    println!(
        "{} clients, {} server examples, eval splits {}",
        task.clients.len(),
        task.server.len(),
        task.eval.signature()
    );
    Ok(())
}

fn cmd_synth_manifest(speakers: usize, utterances: &[usize], seed: u64, out: &Path) -> Result<()> {
    let counts = UtteranceCounts::Uniform {
        min: utterances[0],
        max: utterances[1],
    };
    fs::create_dir_all(out)?;
    let manifest = synth_manifest(speakers, &counts, seed);
    let mut w = BufWriter::new(File::create(out.join("manifest.tsv"))?);
    manifest.write(&mut w)?;
    w.flush()?;
    println!("{} utterances from {speakers} speakers", manifest.len());
    Ok(())
}

fn write_report(report: &RunReport, out: &Path) -> Result<()> {
    let stem = encode_label(&report.label);
    let mut w = BufWriter::new(File::create(out.join(format!("{stem}.csv")))?);
    export_csv(report, &mut w)?;
    w.flush()?;
    fs::write(out.join(format!("{stem}.config")), &report.config_echo)?;
    Ok(())
}

fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = run_experiment(config)?;
    fs::create_dir_all(out)?;
    for r in outcome.reports() {
        write_report(r, out)?;
    }
    print!("{}", compare_runs(&outcome.reports())?);
    Ok(())
}

/// Reads a report and, when its `.config` sidecar exists, the signature of
/// the evaluation splits it was scored on.
fn load_report(path: &Path) -> Result<RunReport> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad report path {}", path.display())))?;
    let mut report = read_report_csv(BufReader::new(File::open(path)?), &decode_label(stem))?;
    let sidecar = path.with_extension("config");
    if sidecar.exists() {
        let text = fs::read_to_string(&sidecar)?;
        let config = parse_config(&text)?;
        let task = generate_synthetic_task(&config.task, config.seeds.data)?;
        report.eval_signature = Some(task.eval.signature());
        report.config_echo = text;
    }
    Ok(report)
}

fn cmd_compare(paths: &[PathBuf]) -> Result<()> {
    let reports = paths.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    print!("{}", compare_runs(&reports.iter().collect::<Vec<_>>())?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition {
            manifest,
            out,
            threshold,
            initial_fraction,
            seed,
        } => cmd_partition(&manifest, &out, threshold, initial_fraction, seed),
        Command::Synth {
            config,
            out,
            seed_override,
            manifest_speakers,
            utterances,
            seed,
        } => match (manifest_speakers, config) {
            (Some(n), _) => cmd_synth_manifest(n, &utterances, seed, &out),
            (None, Some(path)) => cmd_synth_task(&load_config(&path, &seed_override)?, &out),
            (None, None) => unreachable!("clap requires one of --config and --manifest-speakers"),
        },
        Command::Run {
            config,
            out,
            seed_override,
        } => cmd_run(&load_config(&config, &seed_override)?, &out),
        Command::Compare { reports } => cmd_compare(&reports),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_survive_file_names() {
        for label in ["E(1/2)-M", "E(1/4)-100-W", "odd%2F", "Ref"] {
            let stem = encode_label(label);
            assert!(!stem.contains('/'));
            assert_eq!(decode_label(&stem), label);
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
