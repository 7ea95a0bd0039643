//! Corpus manifests and their reorganization into server and client sets.

mod manifest;
mod pipeline;
mod synth;
mod validate;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use manifest::{load_manifest, merge_supersets, Manifest, ManifestRecord, SourceSplit};
pub use pipeline::{
    build_complete, carve_final_sets, partition, reduce_initial, split_client, split_fl_speakers, ClientSplit,
    FinalSets, PartitionConfig, PartitionInProgress, PartitionResult, SplitRatios, DEFAULT_FL_THRESHOLD,
};
pub use synth::{synth_manifest, UtteranceCounts};
pub use validate::{validate_partition, Violation};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: &'static str,
    pub set: &'static str,
    pub utterances: usize,
    pub hours: f64,
}

fn row(group: &'static str, set: &'static str, sets: &[&Manifest]) -> SummaryRow {
    SummaryRow {
        group,
        set,
        utterances: sets.iter().map(|m| m.len()).sum(),
        hours: sets.iter().map(|m| m.total_hours()).sum(),
    }
}

/// Utterance counts and hours per set, grouped as training / test / dev.
pub fn summarize(result: &PartitionResult) -> Vec<SummaryRow> {
    let fl_train: Vec<&Manifest> = result.fl_clients.values().map(|c| &c.train).collect();
    let f = &result.final_sets;
    vec![
        row("train", "initial", &[&result.initial_train]),
        row("train", "federated", &fl_train),
        row("train", "complete", &[&result.complete_train]),
        row("test", "initial", &[&f.pre_test]),
        row("test", "federated", &[&f.fl_test]),
        row("test", "unseen", &[&f.unseen_test]),
        row("dev", "initial", &[&f.pre_dev]),
        row("dev", "federated", &[&f.fl_dev]),
        row("dev", "unseen", &[&f.unseen_dev]),
    ]
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut sink: W) -> Result<()> {
    writeln!(sink, "group\tset\tutterances\thours")?;
    for r in rows {
        writeln!(sink, "{}\t{}\t{}\t{:.1}", r.group, r.set, r.utterances, r.hours)?;
    }
    Ok(())
}

/// One `.tsv` manifest per output set under `dir`, plus `summary.tsv`.
pub fn write_partition(result: &PartitionResult, dir: &Path) -> Result<()> {
    let mut sets = result.named_sets();
    sets.push(("complete_train".into(), &result.complete_train));
    for (name, set) in sets {
        let path = dir.join(format!("{name}.tsv"));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        set.write(&mut w)?;
        w.flush()?;
    }
    let mut w = BufWriter::new(fs::File::create(dir.join("summary.tsv"))?);
    write_summary(&summarize(result), &mut w)?;
    w.flush()?;
    Ok(())
}
