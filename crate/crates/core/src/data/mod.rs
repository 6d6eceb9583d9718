//! Feature sequences, annotations and batches.

mod features;
mod manifest;
pub mod synth;

pub use features::{load_features, read_features, save_features, write_features, FEATURE_MAGIC};
pub use manifest::{
    load_annotations, save_annotations, AnnotationRecord, Manifest, ManifestEntry, Split,
};
pub use synth::{gen_synthetic, SynthSpec};

use thiserror::Error;

use crate::density::{make_ground_truth, AnnotationSet, DensityError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{path} line {line}: {msg}")]
    Line {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl DataError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Per-frame features of one video, `[T×D0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub features: Tensor,
    /// Source frames per stored frame.
    pub stride: usize,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Tensor, stride: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(DataError::Config(format!(
                "features must be [T×D0], got {:?}",
                features.shape()
            )));
        }
        if stride == 0 {
            return Err(DataError::Config("stride must be positive".into()));
        }
        if !features.is_finite() {
            return Err(DataError::Config("features contain non-finite values".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            features,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Keeps frames `0, s, 2s, ...` and multiplies the recorded stride by `s`.
pub fn apply_stride(seq: &FeatureSequence, s: usize) -> FeatureSequence {
    assert!(s >= 1, "stride must be positive");
    FeatureSequence {
        video_id: seq.video_id.clone(),
        features: seq.features.every_nth_row(s),
        stride: seq.stride * s,
    }
}

/// Maps annotations onto the frame grid produced by [`apply_stride`].
/// Each interval keeps its identity, so the count is preserved.
pub fn stride_annotations(ann: &AnnotationSet, s: usize, new_len: usize) -> AnnotationSet {
    assert!(s >= 1 && new_len >= 1);
    AnnotationSet::new(
        ann.intervals
            .iter()
            .map(|&[a, b]| [(a / s).min(new_len - 1), (b / s).min(new_len - 1)])
            .collect(),
    )
}

/// Zero-padded batch with per-item masks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub video_ids: Vec<String>,
    /// `[B×Tmax×D0]`
    pub features: Tensor,
    /// `[B×Tmax]`, 1 on real frames.
    pub masks: Tensor,
    /// `[B×Tmax]`
    pub ground_truth: Tensor,
    pub counts: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.features.shape()[2]
    }

    /// Padded features of item `i`, `[Tmax×D0]`.
    pub fn item_features(&self, i: usize) -> Tensor {
        let (t, d) = (self.max_len(), self.width());
        Tensor::new(
            vec![t, d],
            self.features.data()[i * t * d..(i + 1) * t * d].to_vec(),
        )
        .expect("batch layout")
    }

    pub fn item_mask(&self, i: usize) -> Vec<bool> {
        let t = self.max_len();
        self.masks.data()[i * t..(i + 1) * t]
            .iter()
            .map(|&m| m != 0.0)
            .collect()
    }

    pub fn item_ground_truth(&self, i: usize) -> Vec<f64> {
        let t = self.max_len();
        self.ground_truth.data()[i * t..(i + 1) * t].to_vec()
    }
}

pub fn make_batch(items: &[(FeatureSequence, AnnotationSet)]) -> Result<Batch> {
    let (first, _) = items
        .first()
        .ok_or_else(|| DataError::Config("cannot batch an empty list".into()))?;
    let d0 = first.width();
    if let Some((bad, _)) = items.iter().find(|(s, _)| s.width() != d0) {
        return Err(DataError::Config(format!(
            "mixed feature widths: {} has {} but {} has {d0}",
            bad.video_id,
            bad.width(),
            first.video_id
        )));
    }
    let tmax = items.iter().map(|(s, _)| s.len()).max().unwrap_or(1);
    let b = items.len();
    let mut feats = vec![0.0; b * tmax * d0];
    let mut masks = vec![0.0; b * tmax];
    let mut gt = vec![0.0; b * tmax];
    let mut counts = Vec::with_capacity(b);
    let mut lengths = Vec::with_capacity(b);
    for (i, (seq, ann)) in items.iter().enumerate() {
        let t = seq.len();
        feats[i * tmax * d0..i * tmax * d0 + t * d0].copy_from_slice(seq.features.data());
        masks[i * tmax..i * tmax + t].fill(1.0);
        let density = make_ground_truth(ann, t)?;
        gt[i * tmax..i * tmax + t].copy_from_slice(&density.values);
        counts.push(ann.len() as f64);
        lengths.push(t);
    }
    Ok(Batch {
        video_ids: items.iter().map(|(s, _)| s.video_id.clone()).collect(),
        features: Tensor::new(vec![b, tmax, d0], feats)?,
        masks: Tensor::new(vec![b, tmax], masks)?,
        ground_truth: Tensor::new(vec![b, tmax], gt)?,
        counts,
        lengths,
    })
}
