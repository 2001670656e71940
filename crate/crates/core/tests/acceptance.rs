//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use videograph::analysis::{extract_activity_graph, ActivationStack};
use videograph::features::{decode_features, encode_features, Sobol};
use videograph::gradcheck::run_suite;
use videograph::model::{shape_inference, ActivityModel, InitStrategy, ModelKind, SigmaKind, VideoGraphConfig};
use videograph::synthetic::{generate_dataset, PerturbMode, Regime, SyntheticSpec};
use videograph::train::{evaluate, load_checkpoint, mean_average_precision, RunConfig, Trainer, WEIGHTS_FILE};
use videograph::{Error, Tensor};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

const SEEDS: [u64; 3] = [0, 1, 2];

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("shape contract", shape_contract),
        ("overfit", overfit),
        ("temporal-structure separation", separation),
        ("order-perturbation drop", perturbation_drop),
        ("node-distance growth", node_distance_growth),
        ("mAP oracle equivalence", map_oracle),
        ("persistence", persistence),
        ("Sobol reference", sobol_reference),
        ("extraction oracle", extraction_oracle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<30} {}  [{:.1}s] {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for seed in 0..10 {
        for e in run_suite(seed).expect("suite runs") {
            checks += 1;
            if e.report.max_relative_error >= worst.0 {
                worst = (e.report.max_relative_error, format!("{} (seed {seed})", e.name));
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.0 <= 1e-4 && elapsed < Duration::from_secs(120);
    (ok, format!("{checks} checks, worst {:.2e} in {}", worst.0, worst.1))
}

fn shape_contract() -> Outcome {
    let stages = shape_inference(&VideoGraphConfig::full()).expect("full config is valid");
    let get = |name: &str| stages.iter().find(|s| s.stage == name).map(|s| s.shape.clone());
    let found = [get("Z"), get("embedding 1"), get("embedding 2")];
    let want = [Some(vec![64, 128, 7, 7, 1024]), Some(vec![21, 42, 7, 7, 1024]), Some(vec![7, 14, 7, 7, 1024])];
    (found == want, format!("{found:?}"))
}

/// Two disjoint-unit activities, 16 videos each, trained 200 epochs.
fn overfit_config(seed: u64) -> (RunConfig, SyntheticSpec) {
    let mut model = VideoGraphConfig::desk();
    model.num_classes = 2;
    model.init_strategy = InitStrategy::Kmeans;
    model.sigma_kind = SigmaKind::SoftmaxOverNodes;
    model.seed = seed;
    let spec = SyntheticSpec {
        regime: Regime::DistinctActions,
        num_classes: 2,
        num_units: 2,
        train_per_class: 16,
        val_per_class: 0,
        timesteps: model.timesteps,
        height: 1,
        width: 1,
        channels: model.channels,
        noise_sigma: 0.3,
        mixing: 0.1,
    };
    (RunConfig::with_model(model, 200, 8), spec)
}

struct OverfitRun {
    best_train_acc: f64,
    initial_distance: f64,
    quarter_distance: f64,
    elapsed: Duration,
}

fn overfit_runs() -> &'static [OverfitRun] {
    static RUNS: std::sync::OnceLock<Vec<OverfitRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let (cfg, spec) = overfit_config(seed);
                let quarter = cfg.epochs / 4 - 1;
                let data = generate_dataset::<f32>(&spec, seed).expect("dataset");
                let mut trainer = Trainer::new(cfg, &data.train).expect("trainer");
                let log = trainer.fit(&data.train, &[]).expect("training");
                OverfitRun {
                    best_train_acc: log.rows().iter().map(|r| r.train_acc).fold(0.0, f64::max),
                    initial_distance: log.initial_node_distance.expect("videograph model"),
                    quarter_distance: log.rows()[quarter].mean_node_distance,
                    elapsed: start.elapsed(),
                }
            })
            .collect()
    })
}

fn overfit() -> Outcome {
    let runs = overfit_runs();
    let passes = runs.iter().filter(|r| r.best_train_acc >= 0.95 && r.elapsed < Duration::from_secs(300)).count();
    let accs: Vec<String> = runs.iter().map(|r| format!("{:.2}", r.best_train_acc)).collect();
    (passes >= 2, format!("{passes}/3 seeds, best train acc [{}]", accs.join(", ")))
}

fn node_distance_growth() -> Outcome {
    let runs = overfit_runs();
    let passes = runs.iter().filter(|r| r.quarter_distance >= 1.05 * r.initial_distance).count();
    let pairs: Vec<String> =
        runs.iter().map(|r| format!("{:.3}->{:.3}", r.initial_distance, r.quarter_distance)).collect();
    (passes >= 2, format!("{passes}/3 seeds, distance [{}]", pairs.join(", ")))
}

struct SeparationRun {
    graph_natural: f64,
    graph_random: f64,
    pool_natural: f64,
    pool_random: f64,
    pool_bitwise_invariant: bool,
    elapsed: Duration,
}

fn separation_runs() -> &'static [SeparationRun] {
    static RUNS: std::sync::OnceLock<Vec<SeparationRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let spec = SyntheticSpec {
                    regime: Regime::MarginalConfound,
                    num_classes: 4,
                    num_units: 4,
                    train_per_class: 25,
                    val_per_class: 25,
                    timesteps: 16,
                    height: 1,
                    width: 1,
                    channels: 16,
                    noise_sigma: 0.3,
                    mixing: 0.1,
                };
                let data = generate_dataset::<f32>(&spec, seed).expect("dataset");
                let mut model = VideoGraphConfig::desk();
                model.seed = seed;
                let cfg = RunConfig::with_model(model, 200, 8);
                let mut pool_cfg = cfg.clone();
                pool_cfg.model_kind = ModelKind::MeanPool;
                let mut graph = Trainer::new(cfg, &data.train).expect("trainer");
                graph.fit(&data.train, &[]).expect("training");
                let mut pool = Trainer::new(pool_cfg, &data.train).expect("trainer");
                pool.fit(&data.train, &[]).expect("training");
                let eval = |t: &Trainer<f32>, mode| evaluate(t.model(), &data.val, mode, seed).expect("eval");
                let (gn, gr) = (eval(&graph, PerturbMode::Natural), eval(&graph, PerturbMode::Random));
                let (pn, pr) = (eval(&pool, PerturbMode::Natural), eval(&pool, PerturbMode::Random));
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                SeparationRun {
                    graph_natural: gn.metric,
                    graph_random: gr.metric,
                    pool_natural: pn.metric,
                    pool_random: pr.metric,
                    pool_bitwise_invariant: bits(&pn.scores) == bits(&pr.scores),
                    elapsed: start.elapsed(),
                }
            })
            .collect()
    })
}

fn separation() -> Outcome {
    let runs = separation_runs();
    let passes = runs
        .iter()
        .filter(|r| r.graph_natural >= 0.55 && r.pool_natural <= 0.35 && r.elapsed < Duration::from_secs(900))
        .count();
    let cells: Vec<String> = runs.iter().map(|r| format!("{:.2}/{:.2}", r.graph_natural, r.pool_natural)).collect();
    (passes >= 2, format!("{passes}/3 seeds, videograph/mean-pool val acc [{}]", cells.join(", ")))
}

fn perturbation_drop() -> Outcome {
    let runs = separation_runs();
    let passes = runs
        .iter()
        .filter(|r| {
            r.graph_natural - r.graph_random >= 0.15 && r.pool_bitwise_invariant && r.pool_natural == r.pool_random
        })
        .count();
    let cells: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{:+.0}pp/{:+.0}pp{}",
                100.0 * (r.graph_random - r.graph_natural),
                100.0 * (r.pool_random - r.pool_natural),
                if r.pool_bitwise_invariant { "" } else { " (pool scores moved)" }
            )
        })
        .collect();
    (passes >= 2, format!("{passes}/3 seeds, random-order change videograph/mean-pool [{}]", cells.join(", ")))
}

/// Average precision by direct enumeration: an item outranks positive `i`
/// if it scores higher, or ties and comes no later.
fn brute_force_ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let outranks = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&i| {
            let rank = (0..scores.len()).filter(|&j| outranks(j, i)).count();
            let hits = positives.iter().filter(|&&j| outranks(j, i)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

fn map_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 100 {
        let v = rng.random_range(1..12);
        let k = rng.random_range(1..5);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..v * k)
            .map(|_| if coarse { rng.random_range(0..4) as f64 / 4.0 } else { rng.random::<f64>() })
            .collect();
        let labels: Vec<u8> = (0..v * k).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let per_class: Vec<f64> = (0..k)
            .filter_map(|c| {
                let s: Vec<f64> = (0..v).map(|i| scores[i * k + c]).collect();
                let l: Vec<u8> = (0..v).map(|i| labels[i * k + c]).collect();
                brute_force_ap(&s, &l)
            })
            .collect();
        let got = mean_average_precision(&scores, &labels, k);
        if per_class.is_empty() {
            if got.is_ok() {
                return (false, "mAP defined on an instance with no positives".into());
            }
            continue;
        }
        let want = per_class.iter().sum::<f64>() / per_class.len() as f64;
        worst = worst.max((got.expect("positives present") - want).abs());
        instances += 1;
    }
    (worst <= 1e-9, format!("{instances} instances, max deviation {worst:.1e}"))
}

fn persistence() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec {
        regime: Regime::MarginalConfound,
        num_classes: 4,
        num_units: 4,
        train_per_class: 6,
        val_per_class: 0,
        timesteps: 16,
        height: 1,
        width: 1,
        channels: 16,
        noise_sigma: 0.3,
        mixing: 0.1,
    };

    // Bitwise round trip of parameters and velocities.
    let data32 = generate_dataset::<f32>(&spec, 3).expect("dataset");
    let mut t32 = Trainer::new(RunConfig::with_model(VideoGraphConfig::desk(), 3, 8), &data32.train).expect("trainer");
    t32.fit(&data32.train, &[]).expect("training");
    let ck_dir = dir.path().join("f32");
    t32.save_checkpoint(&ck_dir).expect("save");
    let ck = load_checkpoint::<f32>(&ck_dir).expect("load");
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let params_equal = t32
        .model()
        .params()
        .iter()
        .zip(ck.model.params().iter())
        .all(|(a, b)| a.name == b.name && bits(a.tensor.data()) == bits(b.tensor.data()));
    let vel_equal = t32.optimizer().velocity().iter().zip(ck.optimizer.velocity()).all(|(a, b)| bits(a) == bits(b));
    ok &= params_equal && vel_equal;
    notes.push(format!("round trip bitwise: {}", params_equal && vel_equal));

    // Resume in 64-bit mode against the uninterrupted run.
    let data64 = generate_dataset::<f64>(&spec, 3).expect("dataset");
    let mut cfg = RunConfig::with_model(VideoGraphConfig::desk(), 4, 8);
    cfg.precision = videograph::train::Precision::F64;
    let mut straight = Trainer::<f64>::new(cfg, &data64.train).expect("trainer");
    for _ in 0..3 {
        straight.run_epoch(&data64.train, &[]).expect("epoch");
    }
    let ck64 = dir.path().join("f64");
    straight.save_checkpoint(&ck64).expect("save");
    let next = straight.run_epoch(&data64.train, &[]).expect("epoch").train_loss;
    let mut resumed = Trainer::<f64>::resume(&ck64).expect("resume");
    let again = resumed.run_epoch(&data64.train, &[]).expect("epoch").train_loss;
    let gap = (next - again).abs();
    ok &= gap <= 1e-6;
    notes.push(format!("resume loss gap {gap:.1e}"));

    // VGFT bitwise round trip.
    let feats = &data32.train[0].features;
    let bytes = encode_features(feats).expect("encode");
    let back = decode_features(&bytes).expect("decode");
    let vgft_ok = back.shape() == feats.shape() && bits(back.data()) == bits(feats.data());
    ok &= vgft_ok;
    notes.push(format!("VGFT round trip bitwise: {vgft_ok}"));

    // Every single-byte corruption of the checkpoint payload is rejected.
    let weights = ck_dir.join(WEIGHTS_FILE);
    let clean = std::fs::read(&weights).expect("payload");
    let mut missed = 0;
    for pos in 0..clean.len() {
        let mut bad = clean.clone();
        bad[pos] ^= 0x5a;
        std::fs::write(&weights, &bad).expect("write");
        if !matches!(load_checkpoint::<f32>(&ck_dir), Err(Error::Checksum { .. })) {
            missed += 1;
        }
    }
    std::fs::write(&weights, &clean).expect("restore");
    let header = videograph::features::HEADER_LEN;
    let vgft_missed = (header..bytes.len() - 4)
        .filter(|&pos| {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x5a;
            decode_features(&bad).is_ok()
        })
        .count();
    ok &= missed == 0 && vgft_missed == 0;
    notes.push(format!("undetected corruptions {missed}/{} checkpoint, {vgft_missed} VGFT", clean.len()));
    (ok, notes.join("; "))
}

/// Gray-code Sobol in one dimension with direction numbers 2^-k.
fn reference_sobol_1d(count: usize) -> Vec<f64> {
    (1..=count as u64)
        .map(|i| {
            let gray = i ^ (i >> 1);
            (0..32).filter(|b| gray >> b & 1 == 1).map(|b| 0.5f64.powi(b + 1)).sum::<f64>()
        })
        .collect()
}

fn sobol_reference() -> Outcome {
    let want = reference_sobol_1d(8);
    let literal = [0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125, 0.1875];
    let got: Vec<f64> = Sobol::new(1).expect("1-d").take(8).map(|p| p[0]).collect();
    let in_range = Sobol::new(64).expect("64-d").take(4096).flatten().all(|x| (0.0..1.0).contains(&x));
    let ok = got == want && got == literal && in_range;
    (ok, format!("first points {got:?}, all in [0,1): {in_range}"))
}

/// The hand-sized stack `[M=2, N'=3, T'=2, C=2]`.
fn hand_stack() -> Vec<f64> {
    vec![
        // video 0
        1.0, 2.0, 3.0, 4.0, // node 0, steps 0-1
        0.0, 0.5, 0.25, 1.5, // node 1
        2.0, 2.0, 2.0, 2.0, // node 2
        // video 1
        3.0, 0.0, 1.0, 2.0, //
        1.0, 0.75, 2.0, 0.5, //
        0.0, 4.0, 0.1, 6.0, //
    ]
}

fn extraction_oracle() -> Outcome {
    let (m, n, t, c) = (2, 3, 2, 2);
    let raw = hand_stack();
    let at = |v: usize, j: usize, s: usize, ch: usize| raw[((v * n + j) * t + s) * c + ch];
    // z2: mean over videos.
    let z2 = |j: usize, s: usize, ch: usize| (0..m).map(|v| at(v, j, s, ch)).sum::<f64>() / m as f64;
    // z3: mean over time.
    let z3: Vec<Vec<f64>> =
        (0..n).map(|j| (0..c).map(|ch| (0..t).map(|s| z2(j, s, ch)).sum::<f64>() / t as f64).collect()).collect();
    // z4: importance and pairwise distances.
    let importance: Vec<f64> = z3.iter().map(|r| r.iter().sum()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();

    let stack = ActivationStack::new(Tensor::new(vec![m, n, t, c], raw.clone()).expect("finite")).expect("stack");
    let g = extract_activity_graph(&stack, 0).expect("extract");
    let mut worst = 0.0f64;
    for i in 0..n {
        worst = worst.max((g.node_importance[i] - importance[i]).abs());
        for j in 0..n {
            worst = worst.max((g.edge_weights[i][j] - dist(&z3[i], &z3[j])).abs());
        }
    }

    let perm = [2usize, 0, 1];
    let permuted: Vec<f64> = (0..m)
        .flat_map(|v| perm.iter().flat_map(move |&j| (0..t).flat_map(move |s| (0..c).map(move |ch| (v, j, s, ch)))))
        .map(|(v, j, s, ch)| at(v, j, s, ch))
        .collect();
    let gp = extract_activity_graph(
        &ActivationStack::new(Tensor::new(vec![m, n, t, c], permuted).expect("finite")).expect("stack"),
        0,
    )
    .expect("extract");
    let equivariant = (0..n).all(|i| {
        gp.node_importance[i].to_bits() == g.node_importance[perm[i]].to_bits()
            && (0..n).all(|j| gp.edge_weights[i][j].to_bits() == g.edge_weights[perm[i]][perm[j]].to_bits())
    });
    (worst <= 1e-12 && equivariant, format!("max deviation {worst:.1e}, permutation-equivariant: {equivariant}"))
}
