//! `FRFEAT1` feature files.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! "FRFEAT1" | id_len | id bytes (UTF-8) | T | D0 | stride | T·D0 × f64 (LE, row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, FeatureSequence, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 7] = b"FRFEAT1";

pub fn write_features<W: Write>(mut w: W, seq: &FeatureSequence) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    let id = seq.video_id.as_bytes();
    w.write_all(&(id.len() as u64).to_le_bytes())?;
    w.write_all(id)?;
    for v in [seq.len(), seq.width(), seq.stride] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(seq.features.len() * 8);
    for v in seq.features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_features(&mut w, seq).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Parse {
                offset: self.pos,
                msg: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<(usize, u64)> {
        let at = self.pos;
        let b = self.take(8, what)?;
        Ok((at, u64::from_le_bytes(b.try_into().unwrap())))
    }
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(FEATURE_MAGIC.len(), "magic")? != FEATURE_MAGIC {
        return Err(DataError::Parse {
            offset: 0,
            msg: "bad magic, expected FRFEAT1".into(),
        });
    }
    let (_, id_len) = c.u64("video id length")?;
    let id_at = c.pos;
    let id = c.take(id_len as usize, "video id")?;
    let video_id = std::str::from_utf8(id)
        .map_err(|e| DataError::Parse {
            offset: id_at,
            msg: format!("video id is not UTF-8: {e}"),
        })?
        .to_string();
    let (t_at, t) = c.u64("frame count")?;
    let (d_at, d0) = c.u64("feature width")?;
    let (s_at, stride) = c.u64("stride")?;
    for (at, v, name) in [(t_at, t, "frame count"), (d_at, d0, "feature width"), (s_at, stride, "stride")] {
        if v == 0 {
            return Err(DataError::Parse {
                offset: at,
                msg: format!("{name} must be positive"),
            });
        }
    }
    let n = (t as usize)
        .checked_mul(d0 as usize)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or(DataError::Parse {
            offset: t_at,
            msg: format!("shape {t}×{d0} overflows"),
        })?;
    let body_at = c.pos;
    let body = c.take(n * 8, "feature data")?;
    if c.pos != bytes.len() {
        return Err(DataError::Parse {
            offset: c.pos,
            msg: format!("{} trailing bytes after feature data", bytes.len() - c.pos),
        });
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(DataError::Parse {
            offset: body_at + i * 8,
            msg: "non-finite feature value".into(),
        });
    }
    let features = Tensor::new(vec![t as usize, d0 as usize], data)?;
    FeatureSequence::new(video_id, features, stride as usize)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::io(path, e))?;
    read_features(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(seq: &FeatureSequence) -> Vec<u8> {
        let mut v = Vec::new();
        write_features(&mut v, seq).unwrap();
        v
    }

    fn sample() -> FeatureSequence {
        let data = vec![0.1, -2.5, 3.0e-300, f64::MIN_POSITIVE, 7.0, -0.0];
        FeatureSequence::new("clip-α", Tensor::new(vec![3, 2], data).unwrap(), 5).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = encode(&sample());
        assert_eq!(&b[..7], b"FRFEAT1");
        let id_len = u64::from_le_bytes(b[7..15].try_into().unwrap()) as usize;
        assert_eq!(&b[15..15 + id_len], "clip-α".as_bytes());
        let base = 15 + id_len;
        let t = u64::from_le_bytes(b[base..base + 8].try_into().unwrap());
        let d = u64::from_le_bytes(b[base + 8..base + 16].try_into().unwrap());
        let s = u64::from_le_bytes(b[base + 16..base + 24].try_into().unwrap());
        assert_eq!((t, d, s), (3, 2, 5));
        assert_eq!(b.len(), base + 24 + 6 * 8);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let b = encode(&sample());
        for cut in [3, 10, 20, b.len() - 1] {
            let err = read_features(&b[..cut]).unwrap_err();
            assert!(matches!(err, DataError::Parse { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn zero_frames_rejected_with_offset() {
        let mut b = encode(&sample());
        let base = 15 + "clip-α".len();
        b[base..base + 8].copy_from_slice(&0u64.to_le_bytes());
        match read_features(&b).unwrap_err() {
            DataError::Parse { offset, .. } => assert_eq!(offset, base),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut b = encode(&sample());
        b[0] = b'X';
        assert!(read_features(&b).is_err());
        let mut b = encode(&sample());
        b.push(0);
        assert!(read_features(&b).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.frfeat");
        save_features(&p, &sample()).unwrap();
        assert_eq!(load_features(&p).unwrap(), sample());
        assert!(matches!(
            load_features(dir.path().join("missing")),
            Err(DataError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            t in 1usize..6,
            d in 1usize..5,
            stride in 1usize..10,
            bits in prop::collection::vec(any::<u64>(), 30),
            id in "[a-z0-9_]{0,12}",
        ) {
            let data: Vec<f64> = bits.iter().take(t * d)
                .map(|&b| f64::from_bits(b))
                .map(|v| if v.is_finite() { v } else { 1.0 })
                .collect();
            let seq = FeatureSequence::new(id, Tensor::new(vec![t, d], data).unwrap(), stride).unwrap();
            let back = read_features(&encode(&seq)).unwrap();
            prop_assert_eq!(back.video_id, seq.video_id);
            prop_assert_eq!(back.stride, seq.stride);
            let a: Vec<u64> = back.features.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = seq.features.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
