//! On-disk dataset layout:
//!
//! ```text
//! root/meta.json                    num_classes, frame_size, channels, video_len
//! root/{train,val}/index.json      [{id, class_id, num_frames, tempo}, ...]
//! root/{train,val}/<id>.bin        flat little-endian f32 frames (t, c, h, w)
//! root/{train,val}/<id>.json       per-video sidecar
//! ```

use super::{Dataset, DatasetMeta, Frames, VideoRecord};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub class_id: usize,
    pub num_frames: usize,
    pub tempo: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoSidecar {
    pub id: String,
    pub class_id: usize,
    pub num_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub tempo: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("json serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("corrupt json at {path:?}: {e}")))
}

pub fn save_dataset(ds: &Dataset, root: impl AsRef<Path>, split: &str) -> Result<()> {
    let dir = root.as_ref().join(split);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&root.as_ref().join("meta.json"), &ds.meta)?;

    let mut index = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        index.push(IndexEntry {
            id: r.id.clone(),
            class_id: r.class_id,
            num_frames: r.frames.t,
            tempo: r.instance_tempo,
        });
        let sidecar = VideoSidecar {
            id: r.id.clone(),
            class_id: r.class_id,
            num_frames: r.frames.t,
            channels: r.frames.c,
            height: r.frames.h,
            width: r.frames.w,
            tempo: r.instance_tempo,
        };
        write_json(&dir.join(format!("{}.json", r.id)), &sidecar)?;

        let bin_path = dir.join(format!("{}.bin", r.id));
        let mut buf = Vec::with_capacity(r.frames.data.len() * 4);
        for &v in &r.frames.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&bin_path, e))?;
    }
    write_json(&dir.join("index.json"), &index)
}

pub fn load_dataset(root: impl AsRef<Path>, split: &str) -> Result<Dataset> {
    let root = root.as_ref();
    let meta: DatasetMeta = read_json(&root.join("meta.json"))?;
    let dir = root.join(split);
    let index: Vec<IndexEntry> = read_json(&dir.join("index.json"))?;
    if index.is_empty() {
        return Err(Error::Data(format!("empty dataset split at {dir:?}")));
    }

    let mut records = Vec::with_capacity(index.len());
    let mut classes_seen = std::collections::BTreeSet::new();
    for entry in &index {
        let sidecar: VideoSidecar = read_json(&dir.join(format!("{}.json", entry.id)))?;
        let bin_path = dir.join(format!("{}.bin", entry.id));
        let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let n = sidecar.num_frames * sidecar.channels * sidecar.height * sidecar.width;
        if bytes.len() != n * 4 {
            return Err(Error::Data(format!(
                "{bin_path:?}: expected {} bytes, found {}",
                n * 4,
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for k in 0..n {
            data.push(f32::from_le_bytes([
                bytes[k * 4],
                bytes[k * 4 + 1],
                bytes[k * 4 + 2],
                bytes[k * 4 + 3],
            ]));
        }
        classes_seen.insert(entry.class_id);
        records.push(VideoRecord {
            id: entry.id.clone(),
            class_id: entry.class_id,
            frames: Frames {
                t: sidecar.num_frames,
                c: sidecar.channels,
                h: sidecar.height,
                w: sidecar.width,
                data,
            },
            instance_tempo: entry.tempo,
        });
    }

    if let Some(&max_class) = classes_seen.iter().next_back() {
        if max_class >= meta.num_classes {
            return Err(Error::Data(format!(
                "index labels reach class {max_class} but meta.json declares {} classes",
                meta.num_classes
            )));
        }
    }
    Ok(Dataset { meta, records })
}
