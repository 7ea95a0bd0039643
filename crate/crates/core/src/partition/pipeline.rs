//! Speaker-based reorganization of a corpus into server-side and client sets.
//!
//! Steps, in order:
//! 1. speakers with more than `fl_threshold` utterances become clients;
//! 2. each client's utterances are split into train/test/dev;
//! 3. the remaining train speakers are cut down to `initial_fraction` of the
//!    client train total, whole speakers at a time;
//! 4. one utterance per speaker is carved out into the final evaluation sets;
//! 5. `complete_train` is the union of initial and client train sets.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::rng::{permutation, string_key};

use super::manifest::{Manifest, ManifestRecord, SourceSplit};

/// Client speakers need strictly more utterances than this.
pub const DEFAULT_FL_THRESHOLD: usize = 116;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub dev: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            test: 0.2,
            dev: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.test, self.dev];
        if all.iter().any(|r| !(*r > 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must be positive and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub fl_threshold: usize,
    pub client_split: SplitRatios,
    pub initial_fraction: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            fl_threshold: DEFAULT_FL_THRESHOLD,
            client_split: SplitRatios::default(),
            initial_fraction: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        self.client_split.validate()?;
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::invalid("initial fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientSplit {
    pub train: Manifest,
    pub test: Manifest,
    pub dev: Manifest,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinalSets {
    pub unseen_dev: Manifest,
    pub unseen_test: Manifest,
    pub pre_dev: Manifest,
    pub pre_test: Manifest,
    pub fl_dev: Manifest,
    pub fl_test: Manifest,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionResult {
    pub initial_train: Manifest,
    pub fl_clients: BTreeMap<String, ClientSplit>,
    pub final_sets: FinalSets,
    pub complete_train: Manifest,
    /// Server-side dev records of non-client speakers left after carving.
    pub server_dev: Manifest,
    /// Server-side test records of non-client speakers left after carving.
    pub server_test: Manifest,
    /// Non-client train records not chosen for `initial_train`.
    pub server_unused_train: Manifest,
}

impl PartitionResult {
    /// Every output set except `complete_train`, which is derived.
    pub fn named_sets(&self) -> Vec<(String, &Manifest)> {
        let mut out: Vec<(String, &Manifest)> = vec![
            ("initial_train".into(), &self.initial_train),
            ("final/unseen_dev".into(), &self.final_sets.unseen_dev),
            ("final/unseen_test".into(), &self.final_sets.unseen_test),
            ("final/pre_dev".into(), &self.final_sets.pre_dev),
            ("final/pre_test".into(), &self.final_sets.pre_test),
            ("final/fl_dev".into(), &self.final_sets.fl_dev),
            ("final/fl_test".into(), &self.final_sets.fl_test),
            ("server_dev".into(), &self.server_dev),
            ("server_test".into(), &self.server_test),
            ("server_unused_train".into(), &self.server_unused_train),
        ];
        for (id, c) in &self.fl_clients {
            out.push((format!("fl/{id}/train"), &c.train));
            out.push((format!("fl/{id}/test"), &c.test));
            out.push((format!("fl/{id}/dev"), &c.dev));
        }
        out
    }

    pub fn federated_train_len(&self) -> usize {
        self.fl_clients.values().map(|c| c.train.len()).sum()
    }
}

fn by_speaker(records: &[ManifestRecord]) -> BTreeMap<&str, Vec<&ManifestRecord>> {
    let mut map: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    }
    map
}

/// Client speakers (more than `threshold` utterances across all source
/// splits) and the manifest of everybody else.
pub fn split_fl_speakers(manifest: &Manifest, threshold: usize) -> (BTreeSet<String>, Manifest) {
    let counts = by_speaker(manifest.records());
    let fl: BTreeSet<String> = counts
        .iter()
        .filter(|(_, recs)| recs.len() > threshold)
        .map(|(s, _)| (*s).to_owned())
        .collect();
    let rest = manifest
        .records()
        .iter()
        .filter(|r| !fl.contains(&r.speaker_id))
        .cloned()
        .collect();
    (fl, Manifest::from_unique(rest))
}

fn floor_share(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Splits one speaker's records into train/test/dev.
///
/// Test and dev get `floor(ratio * n)` each; train keeps the rest.
pub fn split_client(records: &[ManifestRecord], ratios: &SplitRatios, seed: u64) -> Result<ClientSplit> {
    let first = records.first().ok_or_else(|| Error::invalid("client without utterances"))?;
    if records.iter().any(|r| r.speaker_id != first.speaker_id) {
        return Err(Error::invalid("client records span several speakers"));
    }
    let mut sorted: Vec<&ManifestRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let order = permutation(sorted.len(), seed, &[0xc11e, string_key(&first.speaker_id)]);
    let n = records.len();
    let n_test = floor_share(ratios.test, n);
    let n_dev = floor_share(ratios.dev, n);
    let pick = |range: std::ops::Range<usize>| {
        Manifest::sorted_unique(order[range].iter().map(|&i| sorted[i].clone()).collect())
    };
    Ok(ClientSplit {
        test: pick(0..n_test),
        dev: pick(n_test..n_test + n_dev),
        train: pick(n_test + n_dev..n),
    })
}

/// Whole speakers of `remainder_train`, in seeded order, until the selection
/// reaches `round(fraction * fl_train_total)`. A speaker that would push the
/// total past 105% of the target ends the selection.
///
/// Returns `(selected, unused)`.
pub fn reduce_initial(
    remainder_train: &[ManifestRecord],
    fl_train_total: usize,
    fraction: f64,
    seed: u64,
) -> (Manifest, Manifest) {
    let target = (fraction * fl_train_total as f64).round() as usize;
    let limit = target as f64 * 1.05;
    let speakers = by_speaker(remainder_train);
    let names: Vec<&str> = speakers.keys().copied().collect();
    let order = permutation(names.len(), seed, &[0x1217]);
    let mut chosen: HashSet<&str> = HashSet::new();
    let mut total = 0usize;
    for &i in &order {
        if total >= target {
            break;
        }
        let size = speakers[names[i]].len();
        if (total + size) as f64 > limit {
            break;
        }
        total += size;
        chosen.insert(names[i]);
    }
    let (selected, unused): (Vec<_>, Vec<_>) = remainder_train
        .iter()
        .cloned()
        .partition(|r| chosen.contains(r.speaker_id.as_str()));
    (Manifest::sorted_unique(selected), Manifest::sorted_unique(unused))
}

/// Moves one utterance per speaker out of `source`. Returns the moved records
/// and the remaining ones.
fn take_one_per_speaker(
    source: &Manifest,
    seed: u64,
    tag: u64,
    keep_at_least_one: bool,
) -> (Vec<(String, ManifestRecord)>, Vec<ManifestRecord>) {
    let groups = by_speaker(source.records());
    let mut moved_ids = HashSet::new();
    let mut moved = Vec::new();
    for (speaker, recs) in &groups {
        if keep_at_least_one && recs.len() < 2 {
            continue;
        }
        let pick = permutation(recs.len(), seed, &[tag, string_key(speaker)])[0];
        moved_ids.insert(recs[pick].utterance_id.as_str());
        moved.push(((*speaker).to_owned(), recs[pick].clone()));
    }
    let rest = source
        .records()
        .iter()
        .filter(|r| !moved_ids.contains(r.utterance_id.as_str()))
        .cloned()
        .collect();
    (moved, rest)
}

/// Alternates carved records between two sets by the parity of each
/// speaker's position in a seeded shuffle; the first speaker goes to `dev`.
fn alternate(moved: Vec<(String, ManifestRecord)>, seed: u64, tag: u64) -> (Manifest, Manifest) {
    let order = permutation(moved.len(), seed, &[tag]);
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let rec = moved[i].1.clone();
        if pos % 2 == 0 {
            dev.push(rec);
        } else {
            test.push(rec);
        }
    }
    (Manifest::sorted_unique(dev), Manifest::sorted_unique(test))
}

/// Sets built by the first steps, before the final evaluation sets are carved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionInProgress {
    pub initial_train: Manifest,
    pub fl_clients: BTreeMap<String, ClientSplit>,
    pub server_dev: Manifest,
    pub server_test: Manifest,
}

/// Carves the final evaluation sets, removing every moved record from its source.
///
/// * one utterance of every server dev/test speaker → unseen dev/test;
/// * one utterance of every initial-train speaker → pre dev or pre test;
/// * one utterance of every client's train split → fl dev or fl test.
///
/// Train speakers with a single remaining utterance are skipped so no
/// speaker loses all of its training data.
pub fn carve_final_sets(sets: &mut PartitionInProgress, seed: u64) -> FinalSets {
    let (unseen_dev, dev_rest) = take_one_per_speaker(&sets.server_dev, seed, 0xd0, false);
    let (unseen_test, test_rest) = take_one_per_speaker(&sets.server_test, seed, 0xd1, false);
    sets.server_dev = Manifest::from_unique(dev_rest);
    sets.server_test = Manifest::from_unique(test_rest);

    let (pre, initial_rest) = take_one_per_speaker(&sets.initial_train, seed, 0xd2, true);
    sets.initial_train = Manifest::from_unique(initial_rest);
    let (pre_dev, pre_test) = alternate(pre, seed, 0xd3);

    let mut fl_moved = Vec::new();
    for client in sets.fl_clients.values_mut() {
        let (moved, rest) = take_one_per_speaker(&client.train, seed, 0xd4, true);
        client.train = Manifest::from_unique(rest);
        fl_moved.extend(moved);
    }
    let (fl_dev, fl_test) = alternate(fl_moved, seed, 0xd5);

    let collect = |v: Vec<(String, ManifestRecord)>| Manifest::sorted_unique(v.into_iter().map(|(_, r)| r).collect());
    FinalSets {
        unseen_dev: collect(unseen_dev),
        unseen_test: collect(unseen_test),
        pre_dev,
        pre_test,
        fl_dev,
        fl_test,
    }
}

/// `initial_train ∪ client train sets`; overlapping ids are an integrity error.
pub fn build_complete(initial_train: &Manifest, fl_clients: &BTreeMap<String, ClientSplit>) -> Result<Manifest> {
    let mut parts = vec![initial_train.clone()];
    parts.extend(fl_clients.values().map(|c| c.train.clone()));
    let merged = super::manifest::merge_supersets(&parts)?;
    Ok(Manifest::sorted_unique(merged.into_records()))
}

/// Runs the whole reorganization on `manifest`.
pub fn partition(manifest: &Manifest, config: &PartitionConfig) -> Result<PartitionResult> {
    config.validate()?;
    let (fl_speakers, remainder) = split_fl_speakers(manifest, config.fl_threshold);

    let mut fl_clients = BTreeMap::new();
    let fl_records: Vec<ManifestRecord> = manifest
        .records()
        .iter()
        .filter(|r| fl_speakers.contains(&r.speaker_id))
        .cloned()
        .collect();
    for (speaker, recs) in by_speaker(&fl_records) {
        let owned: Vec<ManifestRecord> = recs.into_iter().cloned().collect();
        fl_clients.insert(speaker.to_owned(), split_client(&owned, &config.client_split, config.seed)?);
    }
    let fl_train_total: usize = fl_clients.values().map(|c| c.train.len()).sum();

    let pick_split = |split: SourceSplit| -> Vec<ManifestRecord> {
        remainder
            .records()
            .iter()
            .filter(|r| r.source_split == split)
            .cloned()
            .collect()
    };
    let (initial_train, server_unused_train) = reduce_initial(
        &pick_split(SourceSplit::Train),
        fl_train_total,
        config.initial_fraction,
        config.seed,
    );

    let mut sets = PartitionInProgress {
        initial_train,
        fl_clients,
        server_dev: Manifest::sorted_unique(pick_split(SourceSplit::Dev)),
        server_test: Manifest::sorted_unique(pick_split(SourceSplit::Test)),
    };
    let final_sets = carve_final_sets(&mut sets, config.seed);
    let complete_train = build_complete(&sets.initial_train, &sets.fl_clients)?;

    Ok(PartitionResult {
        initial_train: sets.initial_train,
        fl_clients: sets.fl_clients,
        final_sets,
        complete_train,
        server_dev: sets.server_dev,
        server_test: sets.server_test,
        server_unused_train,
    })
}
