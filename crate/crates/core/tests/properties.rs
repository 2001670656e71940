use proptest::collection::vec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use videograph::analysis::{extract_activity_graph, node_sizes, track_node_distances, ActivationStack};
use videograph::features::Sobol;
use videograph::model::{ActivityModel, MeanPoolBaseline, VideoGraphConfig};
use videograph::synthetic::{permute_time, perturb_order, Label, PerturbMode, VideoSample};
use videograph::train::{average_precision, batch_ranges, epoch_order};
use videograph::{Tape, Tensor};

fn segments(t: &Tensor<f64>) -> Vec<Vec<u64>> {
    let stride = t.len() / t.shape()[0];
    let mut rows: Vec<Vec<u64>> = t.data().chunks(stride).map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
    rows.sort();
    rows
}

fn sample(t: usize, c: usize, values: &[f64]) -> VideoSample<f64> {
    VideoSample {
        features: Tensor::new(vec![t, 1, 1, c], values[..t * c].to_vec()).unwrap(),
        label: Label::Single(0),
        units: vec![0; t],
    }
}

proptest! {
    #[test]
    fn average_precision_is_a_probability(
        scores in vec(-5.0f64..5.0, 1..30),
        flags in vec(any::<bool>(), 30),
    ) {
        let labels: Vec<u8> = flags[..scores.len()].iter().map(|&b| u8::from(b)).collect();
        match average_precision(&scores, &labels) {
            Some(ap) => prop_assert!((0.0..=1.0).contains(&ap)),
            None => prop_assert!(labels.iter().all(|&l| l == 0)),
        }
    }

    #[test]
    fn average_precision_ignores_monotone_rescoring(
        scores in vec(-5.0f64..5.0, 1..30),
        flags in vec(any::<bool>(), 30),
    ) {
        let labels: Vec<u8> = flags[..scores.len()].iter().map(|&b| u8::from(b)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(average_precision(&scores, &labels), average_precision(&squashed, &labels));
    }

    #[test]
    fn perturbations_permute_whole_segments(
        t in 1usize..12,
        values in vec(-3.0f64..3.0, 48),
        seed in any::<u64>(),
    ) {
        let s = sample(t, 4, &values);
        prop_assert_eq!(&perturb_order(&s, PerturbMode::Natural, seed), &s);
        let rev = perturb_order(&s, PerturbMode::Reversed, seed);
        prop_assert_eq!(&perturb_order(&rev, PerturbMode::Reversed, seed), &s);
        for mode in [PerturbMode::Reversed, PerturbMode::Random] {
            let p = perturb_order(&s, mode, seed);
            prop_assert_eq!(&p.label, &s.label);
            prop_assert_eq!(segments(&p.features), segments(&s.features));
        }
        prop_assert_eq!(perturb_order(&s, PerturbMode::Random, seed), perturb_order(&s, PerturbMode::Random, seed));
    }

    #[test]
    fn node_distance_is_scale_invariant(
        rows in 2usize..8,
        values in vec(-2.0f64..2.0, 64),
        scale in 1e-3f64..1e3,
    ) {
        let y = Tensor::new(vec![rows, 8], values[..rows * 8].to_vec()).unwrap();
        let d = track_node_distances(&y).unwrap();
        let scaled = track_node_distances(&y.map(|v| v * scale)).unwrap();
        prop_assert!((d - scaled).abs() <= 1e-12, "{d} vs {scaled}");
        prop_assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn extraction_is_node_permutation_equivariant(
        dims in (1usize..4, 2usize..6, 1usize..4, 1usize..4),
        values in vec(0.0f64..5.0, 288),
        seed in any::<u64>(),
    ) {
        let (m, n, t, c) = dims;
        let data = values[..m * n * t * c].to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let block = t * c;
        let permuted: Vec<f64> = (0..m)
            .flat_map(|v| perm.iter().flat_map(move |&j| (0..block).map(move |k| (v * n + j) * block + k)))
            .map(|i| data[i])
            .collect();
        let g = extract_activity_graph(&ActivationStack::new(Tensor::new(vec![m, n, t, c], data).unwrap()).unwrap(), 1).unwrap();
        let gp = extract_activity_graph(&ActivationStack::new(Tensor::new(vec![m, n, t, c], permuted).unwrap()).unwrap(), 1).unwrap();
        g.validate().unwrap();
        for i in 0..n {
            prop_assert_eq!(gp.node_importance[i].to_bits(), g.node_importance[perm[i]].to_bits());
            for j in 0..n {
                prop_assert_eq!(gp.edge_weights[i][j].to_bits(), g.edge_weights[perm[i]][perm[j]].to_bits());
            }
        }
    }

    #[test]
    fn node_sizes_stay_in_range(importance in vec(0.0f64..100.0, 1..20)) {
        let sizes = node_sizes(&importance);
        prop_assert!(sizes.iter().all(|s| (0.2..=2.0).contains(s)));
        for (i, j) in (0..importance.len()).flat_map(|i| (0..importance.len()).map(move |j| (i, j))) {
            if importance[i] < importance[j] {
                prop_assert!(sizes[i] <= sizes[j]);
            }
        }
    }

    #[test]
    fn epoch_order_is_a_permutation(n in 1usize..200, seed in any::<u64>(), epoch in 0usize..50) {
        let mut order = epoch_order(n, seed, epoch);
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_everything_without_singletons(n in 1usize..200, batch in 1usize..40) {
        let ranges = batch_ranges(n, batch);
        prop_assert_eq!(ranges.first().unwrap().start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, n);
        for w in ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        if n > 1 && batch > 1 {
            prop_assert!(ranges.iter().all(|r| r.len() > 1));
        }
    }

    #[test]
    fn sobol_points_lie_in_unit_cube(dims in 1usize..40, count in 1usize..300) {
        for p in Sobol::new(dims).unwrap().take(count) {
            prop_assert_eq!(p.len(), dims);
            prop_assert!(p.iter().all(|x| (0.0..1.0).contains(x)));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        values in vec(-20.0f64..20.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let x = Tensor::new(vec![3, 4], values).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(x.clone());
        let b = tape.constant(x.map(|v| v + shift));
        let (sa, sb) = (tape.softmax(a, 1).unwrap(), tape.softmax(b, 1).unwrap());
        for (ra, rb) in tape.value(sa).data().chunks(4).zip(tape.value(sb).data().chunks(4)) {
            prop_assert!((ra.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for (p, q) in ra.iter().zip(rb) {
                prop_assert!((p - q).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn mean_pool_scores_are_bitwise_time_invariant(
        values in vec(-3.0f64..3.0, 16 * 16),
        seed in any::<u64>(),
    ) {
        let cfg = VideoGraphConfig { seed, ..VideoGraphConfig::desk() };
        let mut model = MeanPoolBaseline::<f64>::new(cfg).unwrap();
        let x = Tensor::new(vec![16, 1, 1, 16], values).unwrap();
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let px = permute_time(&x, &perm);
        let batch = |t: &Tensor<f64>| Tensor::new(vec![1, 16, 1, 1, 16], t.data().to_vec()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(batch(&x));
        model.forward_train(&mut tape, xv).unwrap();
        let a = model.predict(&batch(&x)).unwrap();
        let b = model.predict(&batch(&px)).unwrap();
        prop_assert_eq!(a, b);
    }
}
