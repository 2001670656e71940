//! Checkpoint directory: `manifest.json` describing every stored array plus
//! `weights.bin`, the concatenated little-endian `f32` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::autograd::BatchNormStats;
use crate::error::{Error, Result};
use crate::model::{ActivityModel, AnyModel, ModelKind};
use crate::optim::Sgd;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Location of one array inside the payload, in `f32` elements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

impl ArrayRecord {
    fn len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub config: RunConfig,
    /// Completed training epochs.
    pub epoch: usize,
    pub params: Vec<ArrayRecord>,
    pub velocities: Vec<ArrayRecord>,
    pub bn_stats: Vec<ArrayRecord>,
    pub bn_initialized: Vec<bool>,
    pub payload_len: u64,
    pub crc32: u32,
}

/// A restored training state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: RunConfig,
    pub epoch: usize,
    pub model: AnyModel<T>,
    pub optimizer: Sgd<T>,
}

struct PayloadWriter {
    values: Vec<f32>,
    records: Vec<ArrayRecord>,
}

impl PayloadWriter {
    fn add<T: Scalar>(&mut self, name: String, shape: &[usize], data: &[T]) -> Result<()> {
        let offset = self.values.len() as u64;
        for &v in data {
            let f = v.to_f64_lossy() as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint array `{name}`")));
            }
            self.values.push(f);
        }
        self.records.push(ArrayRecord { name, shape: shape.to_vec(), offset });
        Ok(())
    }

    fn take(&mut self) -> Vec<ArrayRecord> {
        std::mem::take(&mut self.records)
    }
}

fn bn_names(i: usize) -> (String, String) {
    (format!("bn{i}.running_mean"), format!("bn{i}.running_var"))
}

pub fn save_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    config: &RunConfig,
    epoch: usize,
    model: &AnyModel<T>,
    optimizer: &Sgd<T>,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut w = PayloadWriter { values: Vec::new(), records: Vec::new() };
    for p in model.params().iter() {
        w.add(p.name.clone(), p.tensor.shape(), p.tensor.data())?;
    }
    let params = w.take();
    for (p, v) in model.params().iter().zip(optimizer.velocity()) {
        w.add(format!("{}.velocity", p.name), p.tensor.shape(), v)?;
    }
    let velocities = w.take();
    for (i, s) in model.bn_stats().iter().enumerate() {
        let (m, v) = bn_names(i);
        w.add(m, &[s.channels()], &s.mean)?;
        w.add(v, &[s.channels()], &s.var)?;
    }
    let bn_stats = w.take();
    let bytes: Vec<u8> = w.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut snapshot = config.clone();
    snapshot.model = model.config().clone();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        model_kind: model.kind(),
        config: snapshot,
        epoch,
        params,
        velocities,
        bn_stats,
        bn_initialized: model.bn_stats().iter().map(|s| s.initialized).collect(),
        payload_len: w.values.len() as u64,
        crc32: crc32fast::hash(&bytes),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, &bytes).map_err(|e| Error::io(&weights, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // Check the version before the rest of the schema so old or future
    // manifests fail with a clear message.
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::Version { found, expected: CHECKPOINT_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

fn fetch<'a>(records: &'a [ArrayRecord], name: &str, shape: &[usize], payload: &'a [f32]) -> Result<&'a [f32]> {
    let rec = records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Parameter { name: name.to_string(), detail: "missing from manifest".into() })?;
    if rec.shape != shape {
        return Err(Error::Parameter {
            name: name.to_string(),
            detail: format!("manifest shape {:?} does not match model shape {shape:?}", rec.shape),
        });
    }
    let end = rec.offset + rec.len();
    if end > payload.len() as u64 {
        return Err(Error::Parameter {
            name: name.to_string(),
            detail: format!("record ends at {end}, payload holds {} values", payload.len()),
        });
    }
    Ok(&payload[rec.offset as usize..end as usize])
}

fn check_layout(manifest: &CheckpointManifest) -> Result<()> {
    let mut next = 0u64;
    for r in manifest.params.iter().chain(&manifest.velocities).chain(&manifest.bn_stats) {
        if r.offset != next {
            return Err(Error::Parameter {
                name: r.name.clone(),
                detail: format!("offset {} breaks contiguous layout (expected {next})", r.offset),
            });
        }
        next += r.len();
    }
    if next != manifest.payload_len {
        return Err(Error::Size { expected: manifest.payload_len, actual: next });
    }
    Ok(())
}

fn cast<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect()
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if bytes.len() as u64 != manifest.payload_len * 4 {
        return Err(Error::Size { expected: manifest.payload_len, actual: bytes.len() as u64 / 4 });
    }
    let computed = crc32fast::hash(&bytes);
    if computed != manifest.crc32 {
        return Err(Error::Checksum { stored: manifest.crc32, computed });
    }
    let payload: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();

    let config = manifest.config.clone();
    let mut model = AnyModel::<T>::skeleton(manifest.model_kind, config.model.clone())?;
    let names: Vec<(String, Vec<usize>)> =
        model.params().iter().map(|p| (p.name.clone(), p.tensor.shape().to_vec())).collect();
    let mut velocity = Vec::with_capacity(names.len());
    for (i, (name, shape)) in names.iter().enumerate() {
        let data = fetch(&manifest.params, name, shape, &payload)?;
        let id = model.params().ids().nth(i).expect("index in range");
        model.params_mut().assign(id, &cast::<T>(data))?;
        velocity.push(cast(fetch(&manifest.velocities, &format!("{name}.velocity"), shape, &payload)?));
    }
    let n_stats = model.bn_stats().len();
    if manifest.bn_initialized.len() != n_stats {
        return Err(Error::Parameter {
            name: "bn_initialized".into(),
            detail: format!("{} flags for {n_stats} batch-norm sites", manifest.bn_initialized.len()),
        });
    }
    for i in 0..n_stats {
        let c = model.bn_stats()[i].channels();
        let (mname, vname) = bn_names(i);
        let mean = cast(fetch(&manifest.bn_stats, &mname, &[c], &payload)?);
        let var = cast(fetch(&manifest.bn_stats, &vname, &[c], &payload)?);
        model.bn_stats_mut()[i] = BatchNormStats { mean, var, initialized: manifest.bn_initialized[i] };
    }
    let expected = names.len() * 2 + n_stats * 2;
    let stored = manifest.params.len() + manifest.velocities.len() + manifest.bn_stats.len();
    if stored != expected {
        return Err(Error::InvalidArgument(format!("manifest lists {stored} arrays, model expects {expected}")));
    }
    check_layout(&manifest)?;
    let optimizer = Sgd::with_velocity(config.sgd(), model.params(), velocity)?;
    Ok(Checkpoint { config, epoch: manifest.epoch, model, optimizer })
}
