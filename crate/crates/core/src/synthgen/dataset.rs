//! On-disk dataset layout.
//!
//! ```text
//! root/manifest.json   counts, shapes, dtypes, generator spec and seed
//! root/images.bin      H×W×C little-endian f32 per record, concatenated
//! root/labels.bin      H×W u8 per record, concatenated
//! ```
//!
//! Train records come first, followed by the eval records. The manifest is
//! written last and acts as the commit marker.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_scene, SceneSpec};
use crate::error::{LabError, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";
pub const LABELS_FILE: &str = "labels.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub train: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dtypes {
    pub images: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub counts: Counts,
    /// `[H, W, C]`
    pub image_shape: [usize; 3],
    pub dtypes: Dtypes,
    pub spec: SceneSpec,
    pub seed: u64,
}

impl Manifest {
    pub fn image_record_bytes(&self) -> usize {
        self.image_shape.iter().product::<usize>() * 4
    }

    pub fn label_record_bytes(&self) -> usize {
        self.image_shape[0] * self.image_shape[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// An opened, committed dataset. Immutable once written.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub root: PathBuf,
    pub manifest: Manifest,
    manifest_hash: String,
}

/// All records of one split, held in memory.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub len: usize,
    /// Row-major N×H×W×C.
    pub images: Vec<f32>,
    /// Row-major N×H×W.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the split, in batch order.
    pub indices: Vec<usize>,
    /// N×H×W×C
    pub images: Vec<f32>,
    /// N×H×W
    pub labels: Vec<u8>,
}

fn remove_partial(root: &Path) {
    for name in [IMAGES_FILE, LABELS_FILE, MANIFEST_FILE] {
        let _ = fs::remove_file(root.join(name));
    }
}

/// Generate `count` scenes (the last `eval_count` form the eval split) and
/// persist them under `root`.
pub fn write_dataset(
    spec: &SceneSpec,
    count: usize,
    eval_count: usize,
    seed: u64,
    root: &Path,
) -> Result<DatasetHandle> {
    if count == 0 {
        return Err(LabError::config("count", "must be positive"));
    }
    if eval_count >= count {
        return Err(LabError::config(
            "eval_count",
            format!("must be smaller than count ({eval_count} >= {count})"),
        ));
    }
    spec.validate()?;
    fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;
    match write_records(spec, count, seed, root) {
        Ok(()) => {}
        Err(e) => {
            remove_partial(root);
            return Err(e);
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        counts: Counts {
            total: count,
            train: count - eval_count,
            eval: eval_count,
        },
        image_shape: [spec.image_size, spec.image_size, spec.channels],
        dtypes: Dtypes {
            images: "f32le".into(),
            labels: "u8".into(),
        },
        spec: spec.clone(),
        seed,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    if let Err(e) = fs::write(&path, text) {
        remove_partial(root);
        return Err(LabError::io(path, e));
    }
    DatasetHandle::open(root)
}

fn write_records(spec: &SceneSpec, count: usize, seed: u64, root: &Path) -> Result<()> {
    let images_path = root.join(IMAGES_FILE);
    let labels_path = root.join(LABELS_FILE);
    // Stale manifest from an earlier write must not vouch for new data.
    let _ = fs::remove_file(root.join(MANIFEST_FILE));
    let open = |p: &Path| {
        fs::File::create(p)
            .map(BufWriter::new)
            .map_err(|e| LabError::io(p, e))
    };
    let mut images = open(&images_path)?;
    let mut labels = open(&labels_path)?;
    for i in 0..count {
        let sample = generate_scene(spec, seed::derive(seed, seed::SCENE, &[i as u64]))?;
        for v in &sample.image {
            images
                .write_all(&v.to_le_bytes())
                .map_err(|e| LabError::io(&images_path, e))?;
        }
        labels
            .write_all(&sample.labels)
            .map_err(|e| LabError::io(&labels_path, e))?;
    }
    images.flush().map_err(|e| LabError::io(&images_path, e))?;
    labels.flush().map_err(|e| LabError::io(&labels_path, e))?;
    Ok(())
}

impl DatasetHandle {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.counts.train + manifest.counts.eval != manifest.counts.total {
            return Err(LabError::Data {
                index: 0,
                message: "manifest split counts do not add up".into(),
            });
        }
        let handle = DatasetHandle {
            root: root.to_path_buf(),
            manifest,
            manifest_hash: hex::encode(Sha256::digest(&bytes)),
        };
        handle.check_sizes()?;
        Ok(handle)
    }

    /// SHA-256 of the manifest bytes; identifies the dataset contents.
    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.manifest.counts.train,
            Split::Eval => self.manifest.counts.eval,
        }
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    fn check_sizes(&self) -> Result<()> {
        let m = &self.manifest;
        for (name, per) in [
            (IMAGES_FILE, m.image_record_bytes()),
            (LABELS_FILE, m.label_record_bytes()),
        ] {
            let path = self.root.join(name);
            let len = fs::metadata(&path).map_err(|e| LabError::io(&path, e))?.len() as usize;
            let expected = per * m.counts.total;
            if len != expected {
                return Err(LabError::Data {
                    index: (len / per).min(m.counts.total),
                    message: format!("{name} holds {len} bytes, manifest implies {expected}"),
                });
            }
        }
        Ok(())
    }

    fn record_range(&self, split: Split) -> std::ops::Range<usize> {
        let c = &self.manifest.counts;
        match split {
            Split::Train => 0..c.train,
            Split::Eval => c.train..c.total,
        }
    }

    /// Read and validate every record of `split`.
    pub fn load(&self, split: Split) -> Result<SplitData> {
        self.check_sizes()?;
        let m = &self.manifest;
        let [h, w, c] = m.image_shape;
        let range = self.record_range(split);
        let img_rec = m.image_record_bytes();
        let lbl_rec = m.label_record_bytes();

        let images_path = self.root.join(IMAGES_FILE);
        let raw = fs::read(&images_path).map_err(|e| LabError::io(&images_path, e))?;
        let raw = &raw[range.start * img_rec..range.end * img_rec];
        let images: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let labels_path = self.root.join(LABELS_FILE);
        let all_labels = fs::read(&labels_path).map_err(|e| LabError::io(&labels_path, e))?;
        let labels = all_labels[range.start * lbl_rec..range.end * lbl_rec].to_vec();

        let per_img = h * w * c;
        for (i, rec) in images.chunks_exact(per_img).enumerate() {
            if rec.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 1.0) {
                return Err(LabError::Data {
                    index: range.start + i,
                    message: "image values outside [-1, 1]".into(),
                });
            }
        }
        let max_label = m.spec.max_objects as u8;
        for (i, rec) in labels.chunks_exact(h * w).enumerate() {
            if rec.iter().any(|&l| l > max_label) {
                return Err(LabError::Data {
                    index: range.start + i,
                    message: format!("label exceeds max_objects ({max_label})"),
                });
            }
        }
        Ok(SplitData {
            split,
            height: h,
            width: w,
            channels: c,
            len: range.len(),
            images,
            labels,
        })
    }
}

impl SplitData {
    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn label_len(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn labels_of(&self, i: usize) -> &[u8] {
        let n = self.label_len();
        &self.labels[i * n..(i + 1) * n]
    }

    /// Record order for one epoch: a seeded permutation for train, identity
    /// for eval.
    pub fn epoch_order(&self, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        if self.split == Split::Train {
            let mut rng = seed::rng(shuffle_seed, seed::DATA_ORDER, &[epoch]);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Index lists for every batch of one epoch; only the last may be short.
    pub fn epoch_batches(&self, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        assert!(batch_size > 0, "batch_size must be positive");
        self.epoch_order(shuffle_seed, epoch)
            .chunks(batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len.div_ceil(batch_size)
    }

    /// The batch consumed at global training step `step` (0-based).
    pub fn batch_at_step(&self, batch_size: usize, shuffle_seed: u64, step: u64) -> Batch {
        let per_epoch = self.batches_per_epoch(batch_size) as u64;
        let epoch = step / per_epoch;
        let pos = (step % per_epoch) as usize;
        let indices = self.epoch_batches(batch_size, shuffle_seed, epoch).swap_remove(pos);
        self.gather(&indices)
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len() * self.label_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.extend_from_slice(self.labels_of(i));
        }
        Batch {
            indices: indices.to_vec(),
            images,
            labels,
        }
    }
}
