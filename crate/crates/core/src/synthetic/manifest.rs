//! JSON-lines dataset manifests: one record per video,
//! `{"feature_path": "...", "label": 3}` or `{"feature_path": "...", "labels": [0, 2]}`.
//! Relative feature paths resolve against the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, VideoSample};
use crate::error::{Error, Result};
use crate::features::{read_feature_file, write_feature_file};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub feature_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl ManifestRecord {
    pub fn new(feature_path: impl Into<String>, label: &Label) -> Self {
        let (single, multi) = match label {
            Label::Single(c) => (Some(*c), None),
            Label::Multi(cs) => (None, Some(cs.clone())),
        };
        ManifestRecord { feature_path: feature_path.into(), label: single, labels: multi }
    }

    pub fn to_label(&self) -> Result<Label> {
        match (&self.label, &self.labels) {
            (Some(c), None) => Ok(Label::Single(*c)),
            (None, Some(cs)) => Ok(Label::Multi(cs.clone())),
            _ => Err(Error::InvalidArgument(format!(
                "record `{}` must carry exactly one of `label` or `labels`",
                self.feature_path
            ))),
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)?;
        rec.to_label()?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes one VGFT file per sample into `dir/features/` and the manifest at
/// `dir/<name>.jsonl`. Returns the manifest path.
pub fn write_manifest<T: Scalar>(dir: impl AsRef<Path>, name: &str, samples: &[VideoSample<T>]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let manifest = dir.join(format!("{name}.jsonl"));
    let mut lines = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("features/{name}_{i:05}.vgft");
        write_feature_file(dir.join(&rel), &s.features)?;
        lines.push(serde_json::to_string(&ManifestRecord::new(rel, &s.label))?);
    }
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(manifest)
}

/// Videos loaded from a manifest.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub samples: Vec<VideoSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or(Path::new("."));
        let samples = read_manifest(manifest)?
            .into_iter()
            .map(|rec| {
                let p = Path::new(&rec.feature_path);
                let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                Ok(VideoSample { features: read_feature_file(full)?, label: rec.to_label()?, units: Vec::new() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
