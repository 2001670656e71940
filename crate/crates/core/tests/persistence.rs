use std::fs;
use std::path::Path;

use proptest::prelude::*;
use serde_json::Value;

use videograph::features::{decode_features, encode_features, read_feature_file, write_feature_file};
use videograph::model::{ActivityModel, ModelKind, VideoGraphConfig};
use videograph::synthetic::{generate_dataset, Regime, SyntheticSpec, VideoSample};
use videograph::train::{load_checkpoint, read_manifest, RunConfig, Trainer, MANIFEST_FILE, WEIGHTS_FILE};
use videograph::{Error, Tensor};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        regime: Regime::MarginalConfound,
        num_classes: 4,
        num_units: 4,
        train_per_class: 4,
        val_per_class: 0,
        timesteps: 16,
        height: 1,
        width: 1,
        channels: 16,
        noise_sigma: 0.3,
        mixing: 0.1,
    }
}

fn trained(kind: ModelKind, dir: &Path) -> Trainer<f32> {
    let data: Vec<VideoSample<f32>> = generate_dataset(&spec(), 9).unwrap().train;
    let mut cfg = RunConfig::with_model(VideoGraphConfig::desk(), 2, 8);
    cfg.model_kind = kind;
    let mut t = Trainer::new(cfg, &data).unwrap();
    t.fit(&data, &[]).unwrap();
    t.save_checkpoint(dir).unwrap();
    t
}

fn edit_manifest(dir: &Path, edit: impl FnOnce(&mut Value)) {
    let path = dir.join(MANIFEST_FILE);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut v);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn save_load_save_is_byte_identical() {
    for kind in [ModelKind::VideoGraph, ModelKind::MeanPool] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let t = trained(kind, a.path());
        let ck = load_checkpoint::<f32>(a.path()).unwrap();
        assert_eq!(ck.epoch, 2);
        assert_eq!(&ck.config, t.config());
        videograph::train::save_checkpoint(b.path(), &ck.config, ck.epoch, &ck.model, &ck.optimizer).unwrap();
        for f in [MANIFEST_FILE, WEIGHTS_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        for (x, y) in t.model().bn_stats().iter().zip(ck.model.bn_stats()) {
            assert_eq!(x, y);
        }
    }
}

#[test]
fn manifest_offsets_are_contiguous() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::VideoGraph, dir.path());
    let m = read_manifest(dir.path()).unwrap();
    let mut next = 0;
    for r in m.params.iter().chain(&m.velocities).chain(&m.bn_stats) {
        assert_eq!(r.offset, next, "{}", r.name);
        next += r.shape.iter().product::<usize>() as u64;
    }
    assert_eq!(next, m.payload_len);
    assert_eq!(fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len(), 4 * next);
}

#[test]
fn f64_models_reload_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<VideoSample<f64>> = generate_dataset(&spec(), 2).unwrap().train;
    let mut t = Trainer::new(RunConfig::with_model(VideoGraphConfig::desk(), 1, 8), &data).unwrap();
    t.fit(&data, &[]).unwrap();
    t.save_checkpoint(dir.path()).unwrap();
    let ck = load_checkpoint::<f64>(dir.path()).unwrap();
    for (a, b) in t.model().params().iter().zip(ck.model.params().iter()) {
        for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
            assert_eq!((*x as f32) as f64, *y);
        }
    }
}

#[test]
fn shape_edit_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::VideoGraph, dir.path());
    let name = read_manifest(dir.path()).unwrap().params[1].name.clone();
    edit_manifest(dir.path(), |v| {
        let shape = &mut v["params"][1]["shape"];
        let first = shape[0].as_u64().unwrap();
        shape[0] = Value::from(first + 1);
    });
    match load_checkpoint::<f32>(dir.path()) {
        Err(Error::Parameter { name: n, .. }) => assert_eq!(n, name),
        other => panic!("expected a parameter error, got {other:?}"),
    }
}

#[test]
fn missing_record_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::MeanPool, dir.path());
    let name = read_manifest(dir.path()).unwrap().params[0].name.clone();
    edit_manifest(dir.path(), |v| {
        v["params"].as_array_mut().unwrap().remove(0);
    });
    match load_checkpoint::<f32>(dir.path()) {
        Err(Error::Parameter { name: n, detail }) => {
            assert_eq!(n, name);
            assert!(detail.contains("missing"), "{detail}");
        }
        other => panic!("expected a parameter error, got {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::MeanPool, dir.path());
    edit_manifest(dir.path(), |v| v["format_version"] = Value::from(7));
    assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(Error::Version { found: 7, .. })));
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::MeanPool, dir.path());
    let path = dir.path().join(WEIGHTS_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(Error::Size { .. })));
}

#[test]
fn flipped_byte_fails_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelKind::MeanPool, dir.path());
    let path = dir.path().join(WEIGHTS_FILE);
    let clean = fs::read(&path).unwrap();
    for pos in [0, clean.len() / 2, clean.len() - 1] {
        let mut bad = clean.clone();
        bad[pos] = bad[pos].wrapping_add(1);
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(Error::Checksum { .. })), "byte {pos}");
    }
}

#[test]
fn vgft_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![3, 2, 1, 4], (0..24).map(|i| i as f32 * 0.37 - 4.0).collect()).unwrap();
    let path = dir.path().join("x.vgft");
    write_feature_file(&path, &t).unwrap();
    let back: Tensor<f32> = read_feature_file(&path).unwrap();
    assert_eq!(back, t);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(decode_features(&bytes).is_err());
}

proptest! {
    #[test]
    fn vgft_round_trip_is_bitwise(
        dims in (1usize..5, 1usize..3, 1usize..3, 1usize..6),
        seed in any::<u64>(),
    ) {
        let (t, h, w, c) = dims;
        let n = t * h * w * c;
        let data: Vec<f32> = (0..n as u64)
            .map(|i| f32::from_bits((seed.wrapping_mul(i + 1) >> 40) as u32 | 0x3f00_0000))
            .collect();
        let x = Tensor::new(vec![t, h, w, c], data).unwrap();
        let back = decode_features(&encode_features(&x).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.data()), bits(x.data()));
    }
}
