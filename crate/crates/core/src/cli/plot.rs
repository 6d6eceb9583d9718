use std::path::{Path, PathBuf};

use super::{write_file, CliError};
use crate::data::FeatureSequence;
use crate::density::{make_ground_truth, AnnotationSet};
use crate::model::{forward_full, Checkpoint};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PlotFiles {
    pub density: PathBuf,
    pub similarity: PathBuf,
    pub bitmap: PathBuf,
}

/// Binary greyscale PGM of a `[rows×cols]` matrix, min-max scaled.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<(), CliError> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| ((v - lo) / span * 255.0).round() as u8));
    write_file(path, bytes)
}

/// First similarity head as a `[T×T]` row-major vector.
fn head0(similarity: &Tensor) -> Vec<f64> {
    let heads = similarity.shape()[2];
    similarity.data().iter().step_by(heads).copied().collect()
}

pub(super) fn plot_video(
    out_dir: &Path,
    seq: &FeatureSequence,
    ann: &AnnotationSet,
    ck: &Checkpoint,
) -> Result<PlotFiles, CliError> {
    let pred = forward_full(&seq.features, &ck.params, &ck.config, None)?;
    let gt = make_ground_truth(ann, seq.len())?;
    let id = &seq.video_id;

    let density = out_dir.join(format!("{id}.density.csv"));
    let mut s = String::from("frame,predicted,ground_truth\n");
    for (t, (p, g)) in pred.density.values.iter().zip(&gt.values).enumerate() {
        s.push_str(&format!("{t},{p:.9},{g:.9}\n"));
    }
    write_file(&density, s)?;

    let t = seq.len();
    let sim = head0(&pred.similarity);
    let similarity = out_dir.join(format!("{id}.tsm.csv"));
    let mut s = String::new();
    for row in sim.chunks(t) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_file(&similarity, s)?;

    let bitmap = out_dir.join(format!("{id}.tsm.pgm"));
    write_pgm(&bitmap, t, t, &sim)?;
    Ok(PlotFiles {
        density,
        similarity,
        bitmap,
    })
}
