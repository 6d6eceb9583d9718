//! Synthetic repetition videos with known ground truth.
//!
//! A smooth low-dimensional periodic motif is repeated `count` times, each
//! cycle stretched by `drift` relative to the previous one, and wrapped in
//! non-periodic lead-in and lead-out segments. The trajectory is embedded
//! into `d0` dimensions by a fixed random linear map and white noise is
//! added on top.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DataError, FeatureSequence, Result, Split};
use crate::density::AnnotationSet;
use crate::tensor::Tensor;

const HARMONICS: usize = 3;
const BACKGROUND_TONES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub video_id: String,
    pub len: usize,
    /// Frames in the first cycle.
    pub period: usize,
    pub count: usize,
    pub motif_seed: u64,
    pub noise_sigma: f64,
    /// Each cycle is `drift` times as long as the one before, rounded.
    pub drift: f64,
    /// Frames before the first cycle; `None` centres the repetitive span.
    pub lead_in: Option<usize>,
    pub d0: usize,
    pub motif_dim: usize,
    /// Seed of the shared embedding map. Videos of one dataset share it.
    pub embed_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            video_id: "synth".into(),
            len: 120,
            period: 20,
            count: 5,
            motif_seed: 0,
            noise_sigma: 0.0,
            drift: 1.0,
            lead_in: None,
            d0: 32,
            motif_dim: 8,
            embed_seed: 7,
        }
    }
}

impl SynthSpec {
    /// Length of every cycle after drift, rounded to whole frames.
    pub fn cycle_lengths(&self) -> Vec<usize> {
        (0..self.count)
            .map(|c| (self.period as f64 * self.drift.powi(c as i32)).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.len == 0 || self.d0 == 0 || self.motif_dim == 0 {
            return Err("len, d0 and motif_dim must be positive".into());
        }
        if self.period == 0 {
            return Err("period must be positive".into());
        }
        if !(self.drift.is_finite() && self.drift > 0.0) {
            return Err(format!("drift must be positive, got {}", self.drift));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(format!("noise must be non-negative, got {}", self.noise_sigma));
        }
        let lengths = self.cycle_lengths();
        if lengths.contains(&0) {
            return Err("drift shrinks a cycle to zero frames".into());
        }
        let span: usize = lengths.iter().sum();
        if span > self.len {
            return Err(format!(
                "count·period with drift needs {span} frames but len is {}",
                self.len
            ));
        }
        if let Some(lead) = self.lead_in {
            if lead + span > self.len {
                return Err(format!(
                    "lead_in {lead} plus {span} repetitive frames exceeds len {}",
                    self.len
                ));
            }
        }
        Ok(())
    }

    fn lead_in_frames(&self) -> usize {
        let span: usize = self.cycle_lengths().iter().sum();
        self.lead_in.unwrap_or((self.len - span) / 2)
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Shared embedding map `[motif_dim × d0]`.
fn embedding(spec: &SynthSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.embed_seed);
    normal_matrix(
        &mut rng,
        spec.motif_dim,
        spec.d0,
        1.0 / (spec.motif_dim as f64).sqrt(),
    )
}

struct Motif {
    cos: Vec<f64>,
    sin: Vec<f64>,
    dim: usize,
}

impl Motif {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let mut cos = normal_matrix(rng, HARMONICS, dim, 1.0);
        let mut sin = normal_matrix(rng, HARMONICS, dim, 1.0);
        for h in 0..HARMONICS {
            for m in 0..dim {
                cos[h * dim + m] /= (h + 1) as f64;
                sin[h * dim + m] /= (h + 1) as f64;
            }
        }
        Self { cos, sin, dim }
    }

    /// Point at phase `phi ∈ [0, 1)`.
    fn at(&self, phi: f64, out: &mut [f64]) {
        out.fill(0.0);
        for h in 0..HARMONICS {
            let ang = TAU * (h + 1) as f64 * phi;
            let (s, c) = ang.sin_cos();
            for m in 0..self.dim {
                out[m] += self.cos[h * self.dim + m] * c + self.sin[h * self.dim + m] * s;
            }
        }
    }
}

/// Slow aperiodic wander used outside the repetitive span.
struct Background {
    offset: Vec<f64>,
    amp: Vec<f64>,
    freq: Vec<f64>,
    phase: Vec<f64>,
    dim: usize,
}

impl Background {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            offset: normal_matrix(rng, 1, dim, 1.0),
            amp: normal_matrix(rng, BACKGROUND_TONES, dim, 0.6),
            freq: (0..BACKGROUND_TONES * dim)
                .map(|_| rng.random_range(0.03..0.15))
                .collect(),
            phase: (0..BACKGROUND_TONES * dim)
                .map(|_| rng.random_range(0.0..TAU))
                .collect(),
            dim,
        }
    }

    fn at(&self, t: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        for q in 0..BACKGROUND_TONES {
            for m in 0..self.dim {
                let i = q * self.dim + m;
                out[m] += self.amp[i] * (self.freq[i] * t as f64 + self.phase[i]).sin();
            }
        }
    }
}

/// Generates one video and its per-cycle annotations.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<(FeatureSequence, AnnotationSet)> {
    spec.validate()
        .map_err(|m| DataError::Config(format!("{}: {m}", spec.video_id)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.motif_seed);
    let motif = Motif::new(&mut rng, spec.motif_dim);
    let background = Background::new(&mut rng, spec.motif_dim);
    let embed = embedding(spec);

    let lengths = spec.cycle_lengths();
    let mut intervals = Vec::with_capacity(spec.count);
    let mut start = spec.lead_in_frames();
    for &l in &lengths {
        intervals.push([start, start + l - 1]);
        start += l;
    }

    let (dim, d0) = (spec.motif_dim, spec.d0);
    let mut traj = vec![0.0; spec.len * dim];
    let mut cycle = 0;
    for t in 0..spec.len {
        let row = &mut traj[t * dim..(t + 1) * dim];
        while cycle < intervals.len() && t > intervals[cycle][1] {
            cycle += 1;
        }
        match intervals.get(cycle) {
            Some(&[s, _]) if t >= s => {
                motif.at((t - s) as f64 / lengths[cycle] as f64, row);
            }
            _ => background.at(t, row),
        }
    }

    let mut feats = vec![0.0; spec.len * d0];
    for t in 0..spec.len {
        let out = &mut feats[t * d0..(t + 1) * d0];
        for m in 0..dim {
            let v = traj[t * dim + m];
            for (o, e) in out.iter_mut().zip(&embed[m * d0..(m + 1) * d0]) {
                *o += v * e;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        let mut nrng = ChaCha8Rng::seed_from_u64(spec.motif_seed ^ 0x9e37_79b9_7f4a_7c15);
        for v in feats.iter_mut() {
            *v += noise.sample(&mut nrng);
        }
    }

    let features = Tensor::new(vec![spec.len, d0], feats)?;
    Ok((
        FeatureSequence::new(spec.video_id.clone(), features, 1)?,
        AnnotationSet::new(intervals),
    ))
}

/// A list of synthetic videos, one per line of a dataset spec file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub videos: Vec<(Split, SynthSpec)>,
    /// 1-based source line of each video, for error messages.
    pub lines: Vec<usize>,
}

/// Parses a line-oriented dataset spec.
///
/// Blank lines and `#` comments are skipped. A line without `id=` sets
/// defaults (`d0`, `embed_seed`, `motif_dim`, `noise`, `drift`) for the
/// lines after it; every other line describes one video, e.g.
///
/// ```text
/// d0=32 embed_seed=7
/// split=train id=v00 len=40 period=8 count=3 seed=11 noise=0.05 drift=1.0 lead_in=5
/// ```
pub fn parse_dataset_spec(text: &str, origin: &str) -> Result<DatasetSpec> {
    let mut defaults = SynthSpec::default();
    let mut videos = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Line {
            path: origin.to_string(),
            line: lineno,
            msg,
        };
        let mut spec = defaults.clone();
        let mut split = Split::Train;
        let mut is_video = false;
        let mut required = [false; 4];
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {tok:?}")))?;
            let bad = |e: &dyn std::fmt::Display| err(format!("{k}: {e}"));
            match k {
                "split" => split = v.parse().map_err(|e| bad(&e))?,
                "id" => {
                    is_video = true;
                    spec.video_id = v.to_string();
                }
                "len" => {
                    required[0] = true;
                    spec.len = v.parse().map_err(|e| bad(&e))?
                }
                "period" => {
                    required[1] = true;
                    spec.period = v.parse().map_err(|e| bad(&e))?
                }
                "count" => {
                    required[2] = true;
                    spec.count = v.parse().map_err(|e| bad(&e))?
                }
                "seed" => {
                    required[3] = true;
                    spec.motif_seed = v.parse().map_err(|e| bad(&e))?
                }
                "noise" => spec.noise_sigma = v.parse().map_err(|e| bad(&e))?,
                "drift" => spec.drift = v.parse().map_err(|e| bad(&e))?,
                "lead_in" => spec.lead_in = Some(v.parse().map_err(|e| bad(&e))?),
                "d0" => spec.d0 = v.parse().map_err(|e| bad(&e))?,
                "motif_dim" => spec.motif_dim = v.parse().map_err(|e| bad(&e))?,
                "embed_seed" => spec.embed_seed = v.parse().map_err(|e| bad(&e))?,
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        if !is_video {
            defaults = spec;
            continue;
        }
        if let Some(missing) = ["len", "period", "count", "seed"]
            .iter()
            .zip(required)
            .find(|(_, set)| !set)
        {
            return Err(err(format!("missing {}", missing.0)));
        }
        spec.validate().map_err(err)?;
        videos.push((split, spec));
        lines.push(lineno);
    }
    if videos.is_empty() {
        return Err(DataError::Config(format!("{origin}: no videos")));
    }
    Ok(DatasetSpec { videos, lines })
}

/// Eight training videos with counts 2 to 9, four validation videos for
/// checkpoint selection and four held-out test videos.
pub const DEFAULT_DATASET_SPEC: &str = "\
# synthetic repetition dataset
d0=32 motif_dim=8 embed_seed=7 noise=0.05
split=train id=train00 count=2 period=10 drift=1.15 len=34 lead_in=6  seed=101
split=train id=train01 count=3 period=9  drift=1.00 len=39 lead_in=5  seed=102
split=train id=train02 count=4 period=8  drift=1.05 len=44 lead_in=4  seed=103
split=train id=train03 count=5 period=7  drift=1.00 len=45 lead_in=6  seed=104
split=train id=train04 count=6 period=9  drift=0.97 len=62 lead_in=5  seed=105
split=train id=train05 count=7 period=6  drift=1.00 len=52 lead_in=4  seed=106
split=train id=train06 count=8 period=8  drift=1.02 len=80 lead_in=7  seed=107
split=train id=train07 count=9 period=7  drift=1.00 len=75 lead_in=6  seed=108
split=val   id=val00   count=2 period=9  drift=1.08 len=30 lead_in=5  seed=301
split=val   id=val01   count=4 period=7  drift=1.00 len=40 lead_in=6  seed=302
split=val   id=val02   count=7 period=8  drift=0.98 len=66 lead_in=5  seed=303
split=val   id=val03   count=9 period=6  drift=1.00 len=64 lead_in=4  seed=304
split=test  id=test00  count=3 period=8  drift=1.10 len=38 lead_in=5  seed=201
split=test  id=test01  count=5 period=9  drift=1.00 len=57 lead_in=6  seed=202
split=test  id=test02  count=6 period=7  drift=1.03 len=56 lead_in=5  seed=203
split=test  id=test03  count=8 period=6  drift=1.00 len=60 lead_in=6  seed=204
";

/// Generates every video of `spec` into `out_dir` and writes
/// `annotations.jsonl` plus `manifest.json`.
pub fn write_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<super::Manifest> {
    use super::{save_annotations, save_features, AnnotationRecord, Manifest, ManifestEntry};
    std::fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;
    let mut records = Vec::new();
    let mut entries = Vec::new();
    for (split, s) in &spec.videos {
        let (seq, ann) = gen_synthetic(s)?;
        let file = format!("{}.frfeat", s.video_id);
        save_features(out_dir.join(&file), &seq)?;
        records.push(AnnotationRecord {
            video_id: s.video_id.clone(),
            num_frames: seq.len(),
            stride: seq.stride,
            intervals: ann,
        });
        entries.push(ManifestEntry {
            split: *split,
            features: file.into(),
            annotation_id: s.video_id.clone(),
        });
    }
    save_annotations(out_dir.join("annotations.jsonl"), &records)?;
    let manifest = Manifest {
        annotations: "annotations.jsonl".into(),
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seq: &FeatureSequence, t: usize) -> &[f64] {
        let d = seq.width();
        &seq.features.data()[t * d..(t + 1) * d]
    }

    #[test]
    fn interval_count_matches_spec() {
        let spec = SynthSpec {
            count: 5,
            period: 20,
            len: 120,
            ..Default::default()
        };
        let (seq, ann) = gen_synthetic(&spec).unwrap();
        assert_eq!(ann.len(), 5);
        assert_eq!(seq.len(), 120);
        assert!(ann.validate(120).is_ok());
        for w in ann.intervals.windows(2) {
            assert_eq!(w[0][1] + 1, w[1][0]);
        }
    }

    #[test]
    fn drift_schedule() {
        let spec = SynthSpec {
            drift: 1.1,
            count: 4,
            period: 10,
            len: 60,
            ..Default::default()
        };
        assert_eq!(spec.cycle_lengths(), vec![10, 11, 12, 13]);
        let (_, ann) = gen_synthetic(&spec).unwrap();
        let lens: Vec<usize> = ann.intervals.iter().map(|[s, e]| e - s + 1).collect();
        assert_eq!(lens, vec![10, 11, 12, 13]);
    }

    #[test]
    fn noiseless_span_is_exactly_periodic() {
        let spec = SynthSpec {
            count: 4,
            period: 9,
            len: 50,
            motif_seed: 3,
            ..Default::default()
        };
        let (seq, ann) = gen_synthetic(&spec).unwrap();
        let (s, e) = (ann.intervals[0][0], ann.intervals[3][1]);
        for t in s..=e - 9 {
            let dist: f64 = row(&seq, t)
                .iter()
                .zip(row(&seq, t + 9))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!(dist.sqrt() < 1e-12, "frame {t}");
        }
        // Across the lead-in boundary the pattern does not repeat.
        let dist: f64 = row(&seq, s - 1)
            .iter()
            .zip(row(&seq, s - 1 + 9))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!(dist.sqrt() > 1e-3);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            noise_sigma: 0.05,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    #[test]
    fn infeasible_spec_rejected() {
        let spec = SynthSpec {
            count: 7,
            period: 20,
            len: 120,
            ..Default::default()
        };
        assert!(matches!(gen_synthetic(&spec), Err(DataError::Config(_))));
    }

    #[test]
    fn default_dataset_spec_parses() {
        let ds = parse_dataset_spec(DEFAULT_DATASET_SPEC, "default").unwrap();
        let train: Vec<_> = ds.videos.iter().filter(|(s, _)| *s == Split::Train).collect();
        assert_eq!(train.len(), 8);
        let counts: Vec<usize> = train.iter().map(|(_, v)| v.count).collect();
        assert_eq!(counts, (2..=9).collect::<Vec<_>>());
        assert!(ds.videos.iter().all(|(_, v)| v.drift <= 1.15 && v.noise_sigma == 0.05));
        assert_eq!(ds.videos.iter().filter(|(s, _)| *s == Split::Test).count(), 4);
        assert_eq!(ds.videos.iter().filter(|(s, _)| *s == Split::Val).count(), 4);
    }

    #[test]
    fn spec_errors_name_the_line() {
        let text = "d0=8\n\nsplit=train id=a len=20 period=5 count=2 seed=1\nsplit=train id=b len=20 period=10 count=3 seed=2\n";
        match parse_dataset_spec(text, "spec.txt").unwrap_err() {
            DataError::Line { line, path, .. } => {
                assert_eq!(line, 4);
                assert_eq!(path, "spec.txt");
            }
            e => panic!("{e}"),
        }
        assert!(parse_dataset_spec("split=train id=a len=20 period=5 count=2", "x").is_err());
        assert!(parse_dataset_spec("id=a len=20 period=5 count=2 seed=1 colour=red", "x").is_err());
    }
}
