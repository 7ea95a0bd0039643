use rand::Rng;

use crate::rng::keyed_rng;

use super::manifest::{Manifest, ManifestRecord, SourceSplit};

/// How many utterances each synthetic speaker gets.
#[derive(Debug, Clone, PartialEq)]
pub enum UtteranceCounts {
    Fixed(usize),
    /// Speaker `i` gets `counts[i % counts.len()]`.
    Cycle(Vec<usize>),
    /// Drawn uniformly from `min..=max`.
    Uniform { min: usize, max: usize },
}

/// Deterministic manifest of `n_speakers` speakers with durations uniform in
/// [1, 15] seconds. Each speaker lives in one source split (80% train, 10%
/// dev, 10% test).
pub fn synth_manifest(n_speakers: usize, counts: &UtteranceCounts, seed: u64) -> Manifest {
    let mut rng = keyed_rng(seed, &[0x5a17]);
    let mut records = Vec::new();
    for s in 0..n_speakers {
        let n = match counts {
            UtteranceCounts::Fixed(n) => *n,
            UtteranceCounts::Cycle(c) if c.is_empty() => 0,
            UtteranceCounts::Cycle(c) => c[s % c.len()],
            UtteranceCounts::Uniform { min, max } => rng.random_range(*min..=(*max).max(*min)),
        };
        let split = match rng.random_range(0..10) {
            0 => SourceSplit::Dev,
            1 => SourceSplit::Test,
            _ => SourceSplit::Train,
        };
        let speaker = format!("spk{s:05}");
        for u in 0..n {
            let duration: f64 = rng.random_range(1.0..=15.0);
            // keep durations short in text form
            let duration = (duration * 1000.0).round() / 1000.0;
            records.push(ManifestRecord::new(format!("{speaker}-{u:04}"), &speaker, duration, split));
        }
    }
    Manifest::from_unique(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::pipeline::split_fl_speakers;

    #[test]
    fn fixed_counts() {
        let m = synth_manifest(5, &UtteranceCounts::Fixed(4), 1);
        assert_eq!(m.len(), 20);
        assert!(m.records().iter().all(|r| (1.0..=15.0).contains(&r.duration_seconds)));
    }

    #[test]
    fn deterministic() {
        let c = UtteranceCounts::Uniform { min: 3, max: 9 };
        assert_eq!(synth_manifest(10, &c, 5), synth_manifest(10, &c, 5));
        assert_ne!(synth_manifest(10, &c, 5), synth_manifest(10, &c, 6));
    }

    #[test]
    fn mixed_counts_split_on_threshold() {
        let m = synth_manifest(6, &UtteranceCounts::Cycle(vec![200, 50]), 2);
        let (fl, _) = split_fl_speakers(&m, 116);
        assert_eq!(fl.len(), 3);
        assert!(fl.iter().all(|s| m.records().iter().filter(|r| &r.speaker_id == s).count() == 200));
    }
}
