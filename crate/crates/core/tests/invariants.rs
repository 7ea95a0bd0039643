use std::sync::Arc;

use proptest::prelude::*;

use fedsim_core::harness::{parse_config, ExperimentConfig};
use fedsim_core::partition::{partition, synth_manifest, validate_partition, PartitionConfig, UtteranceCounts};
use fedsim_core::{
    compute_weights, fedavg, make_chunks, CommLevel, CostLedger, Direction, Layout, Params, WeightingScheme,
};

fn models_and_weights() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..8, 1usize..40).prop_flat_map(|(n, len)| {
        (
            prop::collection::vec(prop::collection::vec(-1e3f64..1e3, len), n),
            prop::collection::vec(1e-3f64..1.0, n),
        )
    })
}

fn params(values: Vec<f64>, layout: &Arc<Layout>) -> Params {
    Params::new(values, layout.clone()).unwrap()
}

proptest! {
    #[test]
    fn fedavg_stays_in_convex_hull((models, raw) in models_and_weights()) {
        let layout = Arc::new(Layout::flat(models[0].len()));
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let ps: Vec<Params> = models.iter().map(|m| params(m.clone(), &layout)).collect();
        let avg = fedavg(&ps, &weights).unwrap();
        for (j, v) in avg.values().iter().enumerate() {
            let lo = models.iter().map(|m| m[j]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *v && *v <= hi);
        }
    }

    #[test]
    fn fedavg_of_copies_is_identity((models, raw) in models_and_weights()) {
        let layout = Arc::new(Layout::flat(models[0].len()));
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let w = params(models[0].clone(), &layout);
        let copies = vec![w.clone(); weights.len()];
        prop_assert_eq!(fedavg(&copies, &weights).unwrap(), w);
    }

    #[test]
    fn weights_sum_to_one(sizes in prop::collection::vec(1usize..10_000, 1..200)) {
        for scheme in [WeightingScheme::Mean, WeightingScheme::Weighted] {
            let w: Vec<f64> = compute_weights(scheme, &sizes).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn chunks_partition_the_epoch(size in 0usize..500, n in 1usize..20, seed in any::<u64>()) {
        let plan = make_chunks(size, n, seed);
        let sizes = plan.sizes();
        prop_assert_eq!(sizes.len(), n);
        prop_assert_eq!(sizes.iter().sum::<usize>(), size);
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        let mut all: Vec<usize> = (0..n).flat_map(|i| plan.chunk(i).to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..size).collect::<Vec<_>>());
        prop_assert_eq!(make_chunks(size, n, seed), plan);
    }

    #[test]
    fn ledger_total_is_linear(bytes in 1u64..1_000_000, rounds in 0usize..30, clients in 1usize..20, down in any::<bool>()) {
        let mut ledger = CostLedger::new(bytes, down);
        for r in 1..=rounds {
            for c in 0..clients {
                ledger.record_transfer(r, &format!("c{c}"), Direction::Down);
                ledger.record_transfer(r, &format!("c{c}"), Direction::Up);
            }
        }
        let per_event = if down { 2 } else { 1 };
        prop_assert_eq!(ledger.total_bytes(), bytes * (rounds * clients * per_event) as u64);
        prop_assert_eq!(ledger.total_bytes(), ledger.recomputed_total());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_conserves_and_repeats(speakers in 1usize..120, seed in any::<u64>(), max in 2usize..250) {
        let manifest = synth_manifest(speakers, &UtteranceCounts::Uniform { min: 1, max }, seed);
        let config = PartitionConfig { seed, ..PartitionConfig::default() };
        let r = partition(&manifest, &config).unwrap();
        prop_assert!(validate_partition(&r).is_empty(), "{:?}", validate_partition(&r));
        let placed: usize = r.named_sets().iter().map(|(_, m)| m.len()).sum();
        prop_assert_eq!(placed, manifest.len());
        prop_assert_eq!(r.complete_train.len(), r.initial_train.len() + r.federated_train_len());
        prop_assert_eq!(partition(&manifest, &config).unwrap(), r);
    }

    #[test]
    fn config_roundtrip(period in prop::sample::select(vec![16usize, 8, 4, 2, 1]), weighted in any::<bool>(),
                        lr in 1e-4f64..1.0, n in 1usize..50, data in any::<u64>(), reference in any::<bool>()) {
        let mut c = ExperimentConfig::epoch_level(period);
        c.learning_rate = lr;
        c.weighting = if weighted { WeightingScheme::Weighted } else { WeightingScheme::Mean };
        c.selection = fedsim_core::SelectionMode::RandomN(n);
        c.seeds.data = data;
        c.partition.seed = data;
        c.reference = reference;
        prop_assert_eq!(parse_config(&c.to_config_string()).unwrap(), c.clone());
        c.schedule.level = CommLevel::Convergence { patience: n, max_epochs: 2 * n };
        prop_assert_eq!(parse_config(&c.to_config_string()).unwrap(), c);
    }
}
