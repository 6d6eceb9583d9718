//! Encoder → self-similarity → decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BoundParams, ModelConfig, ModelError, ModelParams, Positional, RowPool};
use crate::density::DensityMap;
use crate::tensor::{Tape, Tensor, Var};

type Result<T> = std::result::Result<T, ModelError>;

/// Validated frame mask. `None` means every frame is real.
#[derive(Debug, Clone, Copy)]
pub struct FrameMask<'a> {
    keep: Option<&'a [bool]>,
    valid: usize,
}

impl<'a> FrameMask<'a> {
    pub fn new(mask: Option<&'a [bool]>, len: usize) -> Result<Self> {
        match mask {
            None => Ok(Self {
                keep: None,
                valid: len,
            }),
            Some(m) => {
                if m.len() != len {
                    return Err(ModelError::Config(format!(
                        "mask has {} entries for {len} frames",
                        m.len()
                    )));
                }
                let valid = m.iter().filter(|&&k| k).count();
                if valid == 0 {
                    return Err(ModelError::Config("mask hides every frame".into()));
                }
                let keep = (valid < len).then_some(m);
                Ok(Self { keep, valid })
            }
        }
    }

    pub fn keep(&self) -> Option<&'a [bool]> {
        self.keep
    }

    pub fn valid(&self) -> usize {
        self.valid
    }

    fn is_kept(&self, t: usize) -> bool {
        self.keep.is_none_or(|m| m[t])
    }

    /// Zeroes padded rows of a `[T×C]` var.
    fn rows(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(m) = self.keep else { return Ok(x) };
        let c = tape.shape(x)[1];
        let f: Vec<f64> = m
            .iter()
            .flat_map(|&k| std::iter::repeat_n(if k { 1.0 } else { 0.0 }, c))
            .collect();
        Ok(tape.mul_const(x, &Tensor::new(vec![m.len(), c], f)?)?)
    }
}

/// Handles of the three intermediate stages of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[T×d_model]`
    pub embeddings: Var,
    /// `[T×T×heads]`
    pub similarity: Var,
    /// `[T]`
    pub density: Var,
}

/// Dilated residual TCN: 1×1 projection, then `num_blocks` blocks of
/// dilated conv → ReLU → 1×1 conv with a residual add. The input of block
/// `b+1` is the sum of the outputs of blocks `b` and `b-1` (the projection
/// counts as block `-1`).
pub fn encode_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    x: Var,
    mask: FrameMask<'_>,
) -> Result<Var> {
    let width = tape.shape(x)[1];
    if width != cfg.d0 {
        return Err(ModelError::Config(format!(
            "feature width {width} does not match d0 {}",
            cfg.d0
        )));
    }
    let h = tape.conv1d(x, p.var("enc.in.w"), p.var("enc.in.b"), 1)?;
    let h = mask.rows(tape, h)?;
    let (mut prev, mut input) = (h, h);
    let mut out = h;
    for b in 0..cfg.num_blocks {
        let dil = cfg.kernel_kind.dilation(b);
        let z = tape.conv1d(
            input,
            p.var(&format!("enc.block{b}.dil.w")),
            p.var(&format!("enc.block{b}.dil.b")),
            dil,
        )?;
        let z = tape.relu(z);
        let z = tape.conv1d(
            z,
            p.var(&format!("enc.block{b}.pw.w")),
            p.var(&format!("enc.block{b}.pw.b")),
            1,
        )?;
        let o = tape.add(input, z)?;
        out = mask.rows(tape, o)?;
        input = tape.add(out, prev)?;
        prev = out;
    }
    Ok(out)
}

/// Multi-head scaled dot-product scores between all frame pairs,
/// `[T×T×heads]`. Padded frames receive no attention mass.
pub fn similarity_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    x: Var,
    mask: FrameMask<'_>,
) -> Result<Var> {
    let q = tape.matmul(x, p.var("tsm.wq"))?;
    let k = tape.matmul(x, p.var("tsm.wk"))?;
    let heads = attention_maps(tape, q, k, cfg.heads, mask)?;
    Ok(tape.stack_last(&heads)?)
}

fn attention_maps(
    tape: &mut Tape,
    q: Var,
    k: Var,
    heads: usize,
    mask: FrameMask<'_>,
) -> Result<Vec<Var>> {
    let dm = tape.shape(q)[1];
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    (0..heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, scale);
            Ok(tape.softmax_rows(s, mask.keep())?)
        })
        .collect()
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let shape = tape.shape(x).to_vec();
            let n = shape.iter().product();
            let f = (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Ok(tape.mul_const(x, &Tensor::new(shape, f)?)?)
        }
        _ => Ok(x),
    }
}

fn sinusoidal(len: usize, dm: usize) -> Tensor {
    let mut data = vec![0.0; len * dm];
    for t in 0..len {
        for i in 0..dm {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dm as f64);
            let a = t as f64 * freq;
            data[t * dm + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(vec![len, dm], data).expect("positive extents")
}

/// Positional embeddings for the first `len` frames, `[len×d_model]`.
pub fn positions_on(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, len: usize) -> Result<Var> {
    if len > cfg.max_len {
        return Err(ModelError::Config(format!(
            "sequence of {len} frames exceeds max_len {}",
            cfg.max_len
        )));
    }
    match cfg.positional {
        Positional::Learned => Ok(tape.slice_rows(p.var("dec.pos"), 0, len)?),
        Positional::Sinusoidal => Ok(tape.constant(sinusoidal(len, cfg.d_model))),
    }
}

/// Decoder from the similarity map to a per-frame sequence `[T×d_model]`:
/// 3×3 conv over the map, ReLU, pooling of each row over the valid
/// columns, then a per-frame linear projection.
pub fn similarity_to_sequence_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    s: Var,
    mask: FrameMask<'_>,
) -> Result<Var> {
    let &[t, t2, h] = tape.shape(s) else {
        return Err(ModelError::Config(format!(
            "similarity map must be [T×T×H], got {:?}",
            tape.shape(s)
        )));
    };
    if t != t2 || h != cfg.heads {
        return Err(ModelError::Config(format!(
            "similarity map {:?} does not match {} heads",
            tape.shape(s),
            cfg.heads
        )));
    }
    let s = match mask.keep() {
        Some(m) => {
            let mut f = vec![0.0; t * t * h];
            for i in 0..t {
                for j in 0..t {
                    if m[i] && m[j] {
                        f[(i * t + j) * h..(i * t + j + 1) * h].fill(1.0);
                    }
                }
            }
            tape.mul_const(s, &Tensor::new(vec![t, t, h], f)?)?
        }
        None => s,
    };
    let c = tape.conv2d(s, p.var("dec.conv.w"), p.var("dec.conv.b"))?;
    let c = tape.relu(c);
    let unit = match cfg.row_pool {
        RowPool::Mean => 1.0 / mask.valid() as f64,
        RowPool::Sum => 1.0,
    };
    let weights: Vec<f64> = (0..t)
        .map(|j| if mask.is_kept(j) { unit } else { 0.0 })
        .collect();
    let pooled = tape.pool_axis1(c, &weights)?;
    Ok(tape.linear(pooled, p.var("dec.proj.w"), p.var("dec.proj.b"))?)
}

/// Post-norm transformer layers plus the density head. `z` is the
/// per-frame sequence and `pos` the positional rows added to it.
pub fn sequence_to_density_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    z: Var,
    pos: Var,
    mask: FrameMask<'_>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let t = tape.shape(z)[0];
    let mut x = tape.add(z, pos)?;
    for l in 0..cfg.decoder_layers {
        let w = |n: &str| p.var(&format!("dec.layer{l}.{n}"));
        let q = tape.linear(x, w("attn.wq"), w("attn.bq"))?;
        let k = tape.linear(x, w("attn.wk"), w("attn.bk"))?;
        let v = tape.linear(x, w("attn.wv"), w("attn.bv"))?;
        let maps = attention_maps(tape, q, k, cfg.decoder_heads, mask)?;
        let dh = cfg.d_model / cfg.decoder_heads;
        let mut ctx = Vec::with_capacity(maps.len());
        for (hi, a) in maps.into_iter().enumerate() {
            let vh = tape.slice_cols(v, hi * dh, dh)?;
            ctx.push(tape.matmul(a, vh)?);
        }
        let ctx = tape.concat_cols(&ctx)?;
        let a = tape.linear(ctx, w("attn.wo"), w("attn.bo"))?;
        let a = dropout(tape, a, cfg.dropout, rng.as_deref_mut())?;
        let r = tape.add(x, a)?;
        x = tape.layer_norm(r, w("ln1.g"), w("ln1.b"))?;

        let f = tape.linear(x, w("ffn.w1"), w("ffn.b1"))?;
        let f = tape.relu(f);
        let f = tape.linear(f, w("ffn.w2"), w("ffn.b2"))?;
        let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut())?;
        let r = tape.add(x, f)?;
        x = tape.layer_norm(r, w("ln2.g"), w("ln2.b"))?;
    }
    let y = tape.linear(x, p.var("dec.head.w"), p.var("dec.head.b"))?;
    let y = mask.rows(tape, y)?;
    Ok(tape.reshape(y, vec![t])?)
}

pub fn decode_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    s: Var,
    mask: FrameMask<'_>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let z = similarity_to_sequence_on(tape, p, cfg, s, mask)?;
    let t = tape.shape(z)[0];
    let pos = positions_on(tape, p, cfg, t)?;
    sequence_to_density_on(tape, p, cfg, z, pos, mask, rng)
}

/// Full pass on a tape. `rng` enables dropout (training only).
pub fn forward_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    features: Var,
    mask: Option<&[bool]>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardVars> {
    let t = tape.shape(features)[0];
    let mask = FrameMask::new(mask, t)?;
    let embeddings = encode_on(tape, p, cfg, features, mask)?;
    let similarity = similarity_on(tape, p, cfg, embeddings, mask)?;
    let density = decode_on(tape, p, cfg, similarity, mask, rng)?;
    Ok(ForwardVars {
        embeddings,
        similarity,
        density,
    })
}

fn check_features(features: &Tensor, cfg: &ModelConfig) -> Result<()> {
    if features.rank() != 2 || features.shape()[1] != cfg.d0 {
        return Err(ModelError::Config(format!(
            "features {:?} do not match d0 {}",
            features.shape(),
            cfg.d0
        )));
    }
    Ok(())
}

/// Per-frame embeddings `[T×d_model]`.
pub fn encode(features: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    check_features(features, cfg)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let mask = FrameMask::new(None, features.shape()[0])?;
    let e = encode_on(&mut tape, &p, cfg, x, mask)?;
    Ok(tape.take(e))
}

/// Temporal self-similarity matrix `[T×T×heads]` of embeddings `[T×d_model]`.
pub fn similarity_matrix(
    embeddings: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    mask: Option<&[bool]>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(embeddings.clone());
    let mask = FrameMask::new(mask, embeddings.shape()[0])?;
    let s = similarity_on(&mut tape, &p, cfg, x, mask)?;
    Ok(tape.take(s))
}

pub fn decode(
    similarity: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    mask: Option<&[bool]>,
) -> Result<DensityMap> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let s = tape.constant(similarity.clone());
    let mask = FrameMask::new(mask, similarity.shape()[0])?;
    let d = decode_on(&mut tape, &p, cfg, s, mask, None)?;
    Ok(DensityMap {
        values: tape.take(d).into_data(),
    })
}

/// Outputs of an inference pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub density: DensityMap,
    pub similarity: Tensor,
}

pub fn forward_full(
    features: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    mask: Option<&[bool]>,
) -> Result<Prediction> {
    check_features(features, cfg)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let out = forward_on(&mut tape, &p, cfg, x, mask, None)?;
    let similarity = tape.value(out.similarity).clone();
    let density = DensityMap {
        values: tape.take(out.density).into_data(),
    };
    Ok(Prediction {
        density,
        similarity,
    })
}

/// Predicted density map; padded frames are exactly zero.
pub fn forward(
    features: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    mask: Option<&[bool]>,
) -> Result<DensityMap> {
    Ok(forward_full(features, params, cfg, mask)?.density)
}
