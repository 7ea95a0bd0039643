//! Tab-separated utterance manifests:
//! `utterance_id<TAB>speaker_id<TAB>duration_seconds<TAB>source_split`.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceSplit {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SourceSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceSplit::Train => "train",
            SourceSplit::Dev => "dev",
            SourceSplit::Test => "test",
        })
    }
}

impl FromStr for SourceSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SourceSplit::Train),
            "dev" => Ok(SourceSplit::Dev),
            "test" => Ok(SourceSplit::Test),
            other => Err(format!("unknown source split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub duration_seconds: f64,
    pub source_split: SourceSplit,
}

impl ManifestRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        duration_seconds: f64,
        source_split: SourceSplit,
    ) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            duration_seconds,
            source_split,
        }
    }

    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty utterance or speaker id".into()));
        }
        let duration: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad duration `{}`", fields[2])))?;
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(err(format!("duration must be a nonnegative number, got `{}`", fields[2])));
        }
        let split = fields[3].parse().map_err(err)?;
        Ok(Self::new(fields[0], fields[1], duration, split))
    }
}

/// Ordered list of records with unique utterance ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate utterance id `{}`", r.utterance_id)));
            }
        }
        Ok(Self { records })
    }

    /// Caller guarantees unique ids.
    pub(crate) fn from_unique(records: Vec<ManifestRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ManifestRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_hours(&self) -> f64 {
        self.records.iter().map(|r| r.duration_seconds).sum::<f64>() / 3600.0
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for r in &self.records {
            writeln!(
                sink,
                "{}\t{}\t{}\t{}",
                r.utterance_id, r.speaker_id, r.duration_seconds, r.source_split
            )?;
        }
        Ok(())
    }

    fn sorted(mut records: Vec<ManifestRecord>) -> Self {
        records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        Self { records }
    }

    pub(crate) fn sorted_unique(records: Vec<ManifestRecord>) -> Self {
        Self::sorted(records)
    }
}

/// Reads a manifest, one record per line. Blank lines are ignored.
pub fn load_manifest<R: BufRead>(source: R) -> Result<Manifest> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        records.push(ManifestRecord::parse(line, i + 1)?);
    }
    Manifest::new(records)
}

/// Concatenation of manifests whose utterance ids must not collide.
pub fn merge_supersets(parts: &[Manifest]) -> Result<Manifest> {
    Manifest::new(parts.iter().flat_map(|m| m.records.iter().cloned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_well_formed_lines() {
        let text = "u1\ts1\t3.5\ttrain\nu2\ts1\t1\tdev\nu3\ts2\t12.25\ttest\n";
        let m = load_manifest(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records()[2].source_split, SourceSplit::Test);
        assert_eq!(m.records()[0].duration_seconds, 3.5);
    }

    #[test]
    fn empty_stream_is_empty_manifest() {
        assert!(load_manifest("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_is_integrity_error() {
        let text = "u1\ts1\t3.5\ttrain\nu1\ts2\t1\tdev\n";
        match load_manifest(text.as_bytes()) {
            Err(Error::Integrity(msg)) => assert!(msg.contains("u1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "u1\ts1\t3.5\ttrain\nu2\ts1\tlong\ttrain\n";
        assert!(matches!(load_manifest(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let text = "u1\ts1\t3.5\n";
        assert!(matches!(load_manifest(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let text = "u1\ts1\t3.5\tvalid\n";
        assert!(matches!(load_manifest(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_load() {
        let text = "u1\ts1\t3.5\ttrain\nu2\ts1\t1\tdev\n";
        let m = load_manifest(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        m.write(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn merge_rules() {
        let a = load_manifest("a1\ts\t1\ttest\na2\ts\t1\ttest\n".as_bytes()).unwrap();
        let b = load_manifest("b1\tt\t1\ttest\nb2\tt\t1\ttest\nb3\tt\t1\ttest\n".as_bytes()).unwrap();
        assert_eq!(merge_supersets(&[a.clone(), b.clone()]).unwrap().len(), 5);
        assert_eq!(merge_supersets(&[a.clone()]).unwrap(), a);
        assert!(matches!(merge_supersets(&[a.clone(), a]), Err(Error::Integrity(_))));
    }
}
