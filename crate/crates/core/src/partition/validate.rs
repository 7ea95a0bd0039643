use std::collections::HashMap;
use std::fmt;

use super::manifest::Manifest;
use super::pipeline::PartitionResult;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An utterance appears in two output sets.
    SharedUtterance {
        utterance_id: String,
        first: String,
        second: String,
    },
    /// `complete_train` is not exactly initial ∪ client train sets.
    IncompleteUnion { missing: usize, unexpected: usize },
    /// A client's records belong to another speaker, or a client speaker
    /// shows up in `initial_train`.
    SpeakerLeak { speaker: String, set: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SharedUtterance {
                utterance_id,
                first,
                second,
            } => write!(f, "utterance {utterance_id} is in both {first} and {second}"),
            Violation::IncompleteUnion { missing, unexpected } => write!(
                f,
                "complete_train differs from the train union: {missing} missing, {unexpected} unexpected"
            ),
            Violation::SpeakerLeak { speaker, set } => write!(f, "speaker {speaker} leaks into {set}"),
        }
    }
}

/// Checks every structural property of a partition. An empty list means valid.
pub fn validate_partition(result: &PartitionResult) -> Vec<Violation> {
    let mut violations = Vec::new();

    let mut owner: HashMap<&str, String> = HashMap::new();
    for (name, set) in result.named_sets() {
        for r in set.records() {
            if let Some(first) = owner.insert(&r.utterance_id, name.clone()) {
                violations.push(Violation::SharedUtterance {
                    utterance_id: r.utterance_id.clone(),
                    first,
                    second: name.clone(),
                });
            }
        }
    }

    let mut expected: Vec<&str> = result
        .initial_train
        .records()
        .iter()
        .chain(result.fl_clients.values().flat_map(|c| c.train.records()))
        .map(|r| r.utterance_id.as_str())
        .collect();
    let mut actual: Vec<&str> = result
        .complete_train
        .records()
        .iter()
        .map(|r| r.utterance_id.as_str())
        .collect();
    expected.sort_unstable();
    actual.sort_unstable();
    if expected != actual {
        let (missing, unexpected) = multiset_difference(&expected, &actual);
        violations.push(Violation::IncompleteUnion { missing, unexpected });
    }

    for (id, client) in &result.fl_clients {
        for (part, set) in [("train", &client.train), ("test", &client.test), ("dev", &client.dev)] {
            if let Some(r) = set.records().iter().find(|r| &r.speaker_id != id) {
                violations.push(Violation::SpeakerLeak {
                    speaker: r.speaker_id.clone(),
                    set: format!("fl/{id}/{part}"),
                });
            }
        }
    }
    leaks_into(&result.initial_train, "initial_train", result, &mut violations);
    violations
}

fn leaks_into(set: &Manifest, name: &str, result: &PartitionResult, out: &mut Vec<Violation>) {
    let mut reported = std::collections::BTreeSet::new();
    for r in set.records() {
        if result.fl_clients.contains_key(&r.speaker_id) && reported.insert(r.speaker_id.clone()) {
            out.push(Violation::SpeakerLeak {
                speaker: r.speaker_id.clone(),
                set: name.to_owned(),
            });
        }
    }
}

/// Counts of `expected` entries absent from `actual` and vice versa; both sorted.
fn multiset_difference(expected: &[&str], actual: &[&str]) -> (usize, usize) {
    let (mut i, mut j) = (0, 0);
    let (mut missing, mut unexpected) = (0, 0);
    while i < expected.len() && j < actual.len() {
        match expected[i].cmp(actual[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                missing += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                unexpected += 1;
                j += 1;
            }
        }
    }
    (missing + expected.len() - i, unexpected + actual.len() - j)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::partition::manifest::{ManifestRecord, SourceSplit};
    use crate::partition::pipeline::ClientSplit;

    fn rec(u: &str, s: &str) -> ManifestRecord {
        ManifestRecord::new(u, s, 1.0, SourceSplit::Train)
    }

    fn base() -> PartitionResult {
        let initial = Manifest::new(vec![rec("i1", "si"), rec("i2", "si")]).unwrap();
        let mut clients = BTreeMap::new();
        clients.insert(
            "c".to_owned(),
            ClientSplit {
                train: Manifest::new(vec![rec("c1", "c"), rec("c2", "c")]).unwrap(),
                test: Manifest::new(vec![rec("c3", "c")]).unwrap(),
                dev: Manifest::new(vec![rec("c4", "c")]).unwrap(),
            },
        );
        let complete = Manifest::new(vec![rec("i1", "si"), rec("i2", "si"), rec("c1", "c"), rec("c2", "c")]).unwrap();
        PartitionResult {
            initial_train: initial,
            fl_clients: clients,
            complete_train: complete,
            ..Default::default()
        }
    }

    #[test]
    fn hand_built_valid() {
        assert!(validate_partition(&base()).is_empty());
    }

    #[test]
    fn shared_utterance_reported_once() {
        let mut r = base();
        r.final_sets.fl_test = Manifest::new(vec![rec("c3", "c")]).unwrap();
        let v = validate_partition(&r);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::SharedUtterance { utterance_id, .. } if utterance_id == "c3"));
    }

    #[test]
    fn incomplete_union_reported() {
        let mut r = base();
        r.complete_train = Manifest::new(vec![rec("i1", "si"), rec("c1", "c"), rec("c2", "c")]).unwrap();
        assert_eq!(
            validate_partition(&r),
            vec![Violation::IncompleteUnion {
                missing: 1,
                unexpected: 0
            }]
        );
    }

    #[test]
    fn client_speaker_in_initial_is_leak() {
        let mut r = base();
        r.initial_train = Manifest::new(vec![rec("i1", "si"), rec("i2", "c")]).unwrap();
        r.complete_train = Manifest::new(vec![rec("i1", "si"), rec("i2", "c"), rec("c1", "c"), rec("c2", "c")]).unwrap();
        let v = validate_partition(&r);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::SpeakerLeak { speaker, .. } if speaker == "c"));
    }
}
