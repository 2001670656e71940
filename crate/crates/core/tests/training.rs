use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use videograph::model::{ActivityModel, LabelMode, ModelKind, VideoGraphConfig};
use videograph::synthetic::{generate_dataset, PerturbMode, Regime, SyntheticSpec, VideoSample};
use videograph::train::{evaluate, evaluate_with, stack_batch, train, RunConfig, Trainer};
use videograph::{Error, Tensor};

fn spec(regime: Regime, per_class: usize) -> SyntheticSpec {
    SyntheticSpec {
        regime,
        num_classes: 4,
        num_units: 4,
        train_per_class: per_class,
        val_per_class: per_class,
        timesteps: 16,
        height: 1,
        width: 1,
        channels: 16,
        noise_sigma: 0.3,
        mixing: 0.1,
    }
}

#[test]
fn training_is_deterministic_in_f64() {
    let data = generate_dataset::<f64>(&spec(Regime::MarginalConfound, 4), 11).unwrap();
    let cfg = RunConfig::with_model(VideoGraphConfig::desk(), 3, 8);
    let (m1, log1) = train(cfg.clone(), &data.train, &data.val).unwrap();
    let (m2, log2) = train(cfg, &data.train, &data.val).unwrap();
    assert_eq!(log1.to_csv(), log2.to_csv());
    for (a, b) in m1.params().iter().zip(m2.params().iter()) {
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tensor), bits(&b.tensor), "{}", a.name);
    }
}

#[test]
fn loss_at_initialization_is_near_chance() {
    for seed in 0..3 {
        let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 8), seed).unwrap();
        let mut model = VideoGraphConfig::desk();
        model.seed = seed;
        let mut cfg = RunConfig::with_model(model, 1, 8);
        cfg.learning_rate = 0.0;
        let mut t = Trainer::new(cfg, &data.train).unwrap();
        let row = t.run_epoch(&data.train, &[]).unwrap();
        assert!((row.train_loss - 4f64.ln()).abs() <= 0.5, "seed {seed}: loss {}", row.train_loss);
        assert!(row.val_metric.is_nan());
    }
}

#[test]
fn uniform_random_predictor_scores_chance() {
    let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 100), 3).unwrap();
    assert_eq!(data.train.len(), 400);
    let predict = |batch: &Tensor<f32>| {
        let b = batch.shape()[0];
        let row = batch.len() / b;
        let scores: Vec<f32> = (0..b)
            .flat_map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(batch.data()[i * row].to_bits() as u64);
                (0..4).map(move |_| rng.random::<f32>())
            })
            .collect();
        Tensor::new(vec![b, 4], scores)
    };
    let ev = evaluate_with(predict, LabelMode::Single, 4, &data.train, PerturbMode::Natural, 0).unwrap();
    assert!((ev.metric - 0.25).abs() <= 0.05, "accuracy {}", ev.metric);
}

#[test]
fn natural_evaluation_matches_untouched_data() {
    let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 10), 5).unwrap();
    let mut t = Trainer::new(RunConfig::with_model(VideoGraphConfig::desk(), 2, 8), &data.train).unwrap();
    t.fit(&data.train, &[]).unwrap();
    let ev = evaluate(t.model(), &data.val, PerturbMode::Natural, 123).unwrap();
    let mut direct = Vec::new();
    for chunk in (0..data.val.len()).collect::<Vec<_>>().chunks(7) {
        direct.extend(t.model().predict(&stack_batch(&data.val, chunk)).unwrap().into_data());
    }
    assert_eq!(ev.scores.data(), &direct[..]);
}

#[test]
fn evaluation_does_not_depend_on_thread_count() {
    let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 20), 6).unwrap();
    let mut t = Trainer::new(RunConfig::with_model(VideoGraphConfig::desk(), 1, 8), &data.train).unwrap();
    t.fit(&data.train, &[]).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate(t.model(), &data.val, PerturbMode::Random, 9).unwrap().scores)
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn mean_pool_learns_distinct_actions() {
    let data = generate_dataset::<f32>(&spec(Regime::DistinctActions, 20), 4).unwrap();
    let mut cfg = RunConfig::with_model(VideoGraphConfig::desk(), 60, 8);
    cfg.model_kind = ModelKind::MeanPool;
    let (model, _) = train(cfg, &data.train, &[]).unwrap();
    let acc = evaluate(&model, &data.val, PerturbMode::Natural, 0).unwrap().metric;
    assert!(acc >= 0.9, "accuracy {acc}");
}

#[test]
fn mean_pool_ignores_time_order() {
    let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 8), 8).unwrap();
    let mut cfg = RunConfig::with_model(VideoGraphConfig::desk(), 3, 8);
    cfg.model_kind = ModelKind::MeanPool;
    let (model, _) = train(cfg, &data.train, &[]).unwrap();
    let natural = evaluate(&model, &data.val, PerturbMode::Natural, 1).unwrap();
    for mode in [PerturbMode::Reversed, PerturbMode::Random] {
        let other = evaluate(&model, &data.val, mode, 1).unwrap();
        assert_eq!(natural.scores, other.scores, "{mode:?}");
        assert_eq!(natural.metric, other.metric);
    }
}

#[test]
fn diverging_run_reports_epoch_and_batch() {
    let data: Vec<VideoSample<f32>> = generate_dataset(&spec(Regime::MarginalConfound, 8), 1).unwrap().train;
    let mut cfg = RunConfig::with_model(VideoGraphConfig::desk(), 5, 8);
    cfg.learning_rate = 1e30;
    let mut t = Trainer::new(cfg, &data).unwrap();
    let err = t.fit(&data, &[]).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn metric_rows_count_up_from_zero() {
    let data = generate_dataset::<f32>(&spec(Regime::MarginalConfound, 4), 2).unwrap();
    let (_, log) = train(RunConfig::with_model(VideoGraphConfig::desk(), 4, 8), &data.train, &data.val).unwrap();
    let epochs: Vec<usize> = log.rows().iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [0, 1, 2, 3]);
    assert!(log.initial_node_distance.is_some());
    assert!(log.rows().iter().all(|r| r.val_metric >= 0.0 && r.val_metric <= 1.0));
}
