//! Annotation records (one JSON object per line) and dataset manifests.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{load_features, DataError, FeatureSequence, Result};
use crate::density::AnnotationSet;

/// One line of an annotation file. Frame indices are post-stride.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub num_frames: usize,
    pub stride: usize,
    pub intervals: AnnotationSet,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |msg: String| DataError::Line {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        rec.intervals
            .validate(rec.num_frames)
            .map_err(|e| line_err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_annotations(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("annotation serialises");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(DataError::Config(format!(
                "unknown split {s:?}, expected train, val or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: Split,
    /// Relative to the manifest's directory unless absolute.
    pub features: PathBuf,
    pub annotation_id: String,
}

/// Lists `(feature file, annotation id)` pairs per split, plus the
/// annotation file they resolve against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub annotations: PathBuf,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| DataError::Config(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every video of a split with its annotations, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(FeatureSequence, AnnotationSet)>> {
        let records = load_annotations(self.resolve(&self.annotations))?;
        let by_id: HashMap<&str, &AnnotationRecord> =
            records.iter().map(|r| (r.video_id.as_str(), r)).collect();
        self.split(split)
            .map(|entry| {
                let seq = load_features(self.resolve(&entry.features))?;
                let rec = by_id.get(entry.annotation_id.as_str()).ok_or_else(|| {
                    DataError::Config(format!("no annotation for {}", entry.annotation_id))
                })?;
                if rec.num_frames != seq.len() {
                    return Err(DataError::Config(format!(
                        "{}: annotation says {} frames, features have {}",
                        entry.annotation_id,
                        rec.num_frames,
                        seq.len()
                    )));
                }
                Ok((seq, rec.intervals.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_line_format() {
        let rec = AnnotationRecord {
            video_id: "v1".into(),
            num_frames: 40,
            stride: 5,
            intervals: AnnotationSet::new(vec![[0, 9], [10, 21]]),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            r#"{"video_id":"v1","num_frames":40,"stride":5,"intervals":[[0,9],[10,21]]}"#
        );
        let back: AnnotationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn invalid_interval_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.jsonl");
        std::fs::write(
            &p,
            "{\"video_id\":\"a\",\"num_frames\":5,\"stride\":1,\"intervals\":[[0,4]]}\n\n\
             {\"video_id\":\"b\",\"num_frames\":5,\"stride\":1,\"intervals\":[[0,5]]}\n",
        )
        .unwrap();
        match load_annotations(&p).unwrap_err() {
            DataError::Line { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn split_parsing() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
