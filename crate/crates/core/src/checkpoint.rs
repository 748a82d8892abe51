//! Checkpoint format: a JSON manifest listing entry names, shapes and
//! dtypes, plus one flat little-endian `f32` blob holding every entry's
//! values in manifest order. Trainable parameters come first (in creation
//! order), then the normalization running statistics.

use crate::error::{Error, Result};
use crate::model::Model;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ManifestMeta {
    /// Number of completed training epochs.
    pub epoch: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: ManifestMeta,
    pub entries: Vec<ManifestEntry>,
}

/// Manifest/blob file pair derived from a base path: `<base>.json` and
/// `<base>.bin`.
#[derive(Clone, Debug)]
pub struct CheckpointPaths {
    pub manifest: PathBuf,
    pub blob: PathBuf,
}

impl CheckpointPaths {
    pub fn new(base: impl AsRef<Path>) -> Self {
        let base = base.as_ref();
        CheckpointPaths {
            manifest: base.with_extension("json"),
            blob: base.with_extension("bin"),
        }
    }
}

fn state_entries(model: &Model) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for id in model.params.ids() {
        let v = model.params.value(id);
        out.push((model.params.name(id).to_string(), v.shape().to_vec(), v.data().to_vec()));
    }
    for st in model.bn.iter() {
        out.push((format!("{}.running_mean", st.name), vec![st.mean.len()], st.mean.clone()));
        out.push((format!("{}.running_var", st.name), vec![st.var.len()], st.var.clone()));
    }
    out
}

pub fn save_checkpoint(model: &Model, epoch: usize, base: impl AsRef<Path>) -> Result<()> {
    let paths = CheckpointPaths::new(base);
    let entries = state_entries(model);
    let manifest = Manifest {
        meta: ManifestMeta { epoch, num_classes: model.num_classes() },
        entries: entries
            .iter()
            .map(|(name, shape, _)| ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                dtype: "f32".into(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&paths.manifest, json).map_err(|e| Error::io(&paths.manifest, e))?;

    let mut blob: Vec<u8> = Vec::new();
    for (_, _, data) in &entries {
        for &v in data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(&paths.blob).map_err(|e| Error::io(&paths.blob, e))?;
    f.write_all(&blob).map_err(|e| Error::io(&paths.blob, e))?;
    Ok(())
}

pub fn read_manifest(base: impl AsRef<Path>) -> Result<Manifest> {
    let paths = CheckpointPaths::new(base);
    let json =
        std::fs::read_to_string(&paths.manifest).map_err(|e| Error::io(&paths.manifest, e))?;
    serde_json::from_str(&json).map_err(|e| Error::Data(format!("corrupt manifest: {e}")))
}

/// Loads a checkpoint into a freshly built model. Entry names and shapes
/// must match the model's state exactly (same architecture and order).
/// Returns the stored epoch count.
pub fn load_checkpoint(model: &mut Model, base: impl AsRef<Path>) -> Result<usize> {
    let paths = CheckpointPaths::new(&base);
    let manifest = read_manifest(&base)?;
    let mut blob = Vec::new();
    std::fs::File::open(&paths.blob)
        .map_err(|e| Error::io(&paths.blob, e))?
        .read_to_end(&mut blob)
        .map_err(|e| Error::io(&paths.blob, e))?;

    let expected = state_entries(model);
    if manifest.entries.len() != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} entries, model expects {}",
            manifest.entries.len(),
            expected.len()
        )));
    }
    let total: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(Error::Data(format!(
            "blob holds {} bytes, manifest describes {}",
            blob.len(),
            total * 4
        )));
    }

    let mut offset = 0usize;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(manifest.entries.len());
    for (entry, (name, shape, _)) in manifest.entries.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Data(format!(
                "checkpoint entry `{}` {:?} does not match model state `{}` {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        if entry.dtype != "f32" {
            return Err(Error::Data(format!("unsupported dtype `{}`", entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let b = &blob[(offset + k) * 4..(offset + k + 1) * 4];
            vals.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        offset += n;
        values.push(vals);
    }

    let mut it = values.into_iter();
    for id in model.params.ids().collect::<Vec<_>>() {
        let vals = it.next().expect("counted above");
        model.params.value_mut(id).data_mut().copy_from_slice(&vals);
    }
    for st in model.bn.iter_mut() {
        st.mean = it.next().expect("counted above");
        st.var = it.next().expect("counted above");
    }
    Ok(manifest.meta.epoch)
}
