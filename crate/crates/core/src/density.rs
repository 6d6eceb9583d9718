//! Ground-truth density maps and count readout.
//!
//! Each annotated repetition contributes a Gaussian bump centred on its
//! mid-frame, truncated to the interval and renormalised to unit mass, so the
//! sum of a ground-truth map is exactly the number of repetitions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Floor on the Gaussian width so single-frame actions stay well defined.
pub const MIN_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("interval {index} ({start}, {end}) is out of range for {len} frames")]
    IntervalOutOfRange {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("density length mismatch: {pred} vs {gt}")]
    Length { pred: usize, gt: usize },
    #[error("mask length {mask} does not match {len} frames")]
    MaskLength { mask: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Repetition intervals of one video, frame-indexed after stride subsampling.
/// Endpoints are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet {
    pub intervals: Vec<[usize; 2]>,
}

impl AnnotationSet {
    pub fn new(intervals: Vec<[usize; 2]>) -> Self {
        Self { intervals }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn validate(&self, len: usize) -> Result<(), DensityError> {
        for (index, &[start, end]) in self.intervals.iter().enumerate() {
            if start > end || end >= len {
                return Err(DensityError::IntervalOutOfRange {
                    index,
                    start,
                    end,
                    len,
                });
            }
        }
        Ok(())
    }
}

/// Per-frame contribution to the total count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sum over all frames.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Builds the target density for `len` frames.
pub fn make_ground_truth(ann: &AnnotationSet, len: usize) -> Result<DensityMap, DensityError> {
    ann.validate(len)?;
    let mut values = vec![0.0; len];
    for &[start, end] in &ann.intervals {
        let mu = (start + end) as f64 / 2.0;
        let sigma = ((end - start) as f64 / 6.0).max(MIN_SIGMA);
        let bump: Vec<f64> = (start..=end)
            .map(|t| {
                let z = (t as f64 - mu) / sigma;
                (-0.5 * z * z).exp()
            })
            .collect();
        let mass: f64 = bump.iter().sum();
        for (v, b) in values[start..=end].iter_mut().zip(&bump) {
            *v += b / mass;
        }
    }
    Ok(DensityMap { values })
}

fn check_mask(mask: Option<&[bool]>, len: usize) -> Result<(), DensityError> {
    match mask {
        Some(m) if m.len() != len => Err(DensityError::MaskLength {
            mask: m.len(),
            len,
        }),
        _ => Ok(()),
    }
}

/// Predicted count: the sum of the map over unmasked frames.
pub fn count(map: &DensityMap, mask: Option<&[bool]>) -> Result<f64, DensityError> {
    check_mask(mask, map.len())?;
    Ok(match mask {
        Some(m) => map
            .values
            .iter()
            .zip(m)
            .filter(|(_, &keep)| keep)
            .map(|(v, _)| v)
            .sum(),
        None => map.total(),
    })
}

/// Squared Euclidean distance over unmasked frames.
pub fn density_loss(
    pred: &DensityMap,
    gt: &DensityMap,
    mask: Option<&[bool]>,
) -> Result<f64, DensityError> {
    if pred.len() != gt.len() {
        return Err(DensityError::Length {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    check_mask(mask, pred.len())?;
    Ok(pred
        .values
        .iter()
        .zip(&gt.values)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (p, g))| (p - g) * (p - g))
        .sum())
}

/// [`density_loss`] recorded on a tape. `pred` must be a length-T vector.
pub fn density_loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    gt: &DensityMap,
    mask: Option<&[bool]>,
) -> Result<Var, DensityError> {
    let len = tape.value(pred).len();
    if len != gt.len() {
        return Err(DensityError::Length {
            pred: len,
            gt: gt.len(),
        });
    }
    check_mask(mask, len)?;
    let target = tape.constant(Tensor::new(vec![len], gt.values.clone())?);
    let diff = tape.sub(pred, target)?;
    let diff = match mask {
        Some(m) => {
            let weights = m.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            tape.mul_const(diff, &Tensor::new(vec![len], weights)?)?
        }
        None => diff,
    };
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}
