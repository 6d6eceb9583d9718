use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Positional};
use crate::tensor::{Tape, Tensor, Var};

/// Every learnable tensor of the model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: IndexMap<String, Tensor>,
}

/// Initialisation rule for one tensor.
#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform(usize),
    Const(f64),
}

/// Expected name, shape and init of every tensor for `cfg`.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let dm = cfg.d_model;
    let k = cfg.kernel_kind.kernel_size();
    let mut out = vec![
        ("enc.in.w".into(), vec![1, cfg.d0, dm], Init::Uniform(cfg.d0)),
        ("enc.in.b".into(), vec![dm], Init::Uniform(cfg.d0)),
    ];
    for b in 0..cfg.num_blocks {
        out.push((format!("enc.block{b}.dil.w"), vec![k, dm, dm], Init::Uniform(k * dm)));
        out.push((format!("enc.block{b}.dil.b"), vec![dm], Init::Uniform(k * dm)));
        out.push((format!("enc.block{b}.pw.w"), vec![1, dm, dm], Init::Uniform(dm)));
        out.push((format!("enc.block{b}.pw.b"), vec![dm], Init::Uniform(dm)));
    }
    out.push(("tsm.wq".into(), vec![dm, dm], Init::Uniform(dm)));
    out.push(("tsm.wk".into(), vec![dm, dm], Init::Uniform(dm)));

    let (h, c) = (cfg.heads, cfg.conv2d_out_channels);
    out.push(("dec.conv.w".into(), vec![3, 3, h, c], Init::Uniform(9 * h)));
    out.push(("dec.conv.b".into(), vec![c], Init::Uniform(9 * h)));
    out.push(("dec.proj.w".into(), vec![c, dm], Init::Uniform(c)));
    out.push(("dec.proj.b".into(), vec![dm], Init::Uniform(c)));
    if cfg.positional == Positional::Learned {
        out.push(("dec.pos".into(), vec![cfg.max_len, dm], Init::Uniform(dm)));
    }
    for l in 0..cfg.decoder_layers {
        for m in ["q", "k", "v", "o"] {
            out.push((format!("dec.layer{l}.attn.w{m}"), vec![dm, dm], Init::Uniform(dm)));
            out.push((format!("dec.layer{l}.attn.b{m}"), vec![dm], Init::Uniform(dm)));
        }
        for n in ["ln1", "ln2"] {
            out.push((format!("dec.layer{l}.{n}.g"), vec![dm], Init::Const(1.0)));
            out.push((format!("dec.layer{l}.{n}.b"), vec![dm], Init::Const(0.0)));
        }
        let f = cfg.ffn_dim;
        out.push((format!("dec.layer{l}.ffn.w1"), vec![dm, f], Init::Uniform(dm)));
        out.push((format!("dec.layer{l}.ffn.b1"), vec![f], Init::Uniform(dm)));
        out.push((format!("dec.layer{l}.ffn.w2"), vec![f, dm], Init::Uniform(f)));
        out.push((format!("dec.layer{l}.ffn.b2"), vec![dm], Init::Uniform(f)));
    }
    out.push(("dec.head.w".into(), vec![dm, 1], Init::Uniform(dm)));
    out.push(("dec.head.b".into(), vec![1], Init::Uniform(dm)));
    out
}

/// Parameter group of a tensor name, e.g. `enc.block3.dil.w` → `enc.block.dil`.
pub fn param_group(name: &str) -> String {
    let mut parts: Vec<String> = name
        .split('.')
        .map(|p| p.trim_end_matches(|c: char| c.is_ascii_digit()).to_string())
        .collect();
    parts.pop();
    parts.join(".")
}

impl ModelParams {
    /// Fresh parameters with a fixed-seed uniform initialisation.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Uniform(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                    Init::Const(v) => vec![v; n],
                };
                (name, Tensor::new(shape, data).expect("layout shape"))
            })
            .collect();
        Ok(Self { tensors })
    }

    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self {
            tensors: layout(cfg)
                .into_iter()
                .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
                .collect(),
        })
    }

    pub fn from_tensors(
        cfg: &ModelConfig,
        tensors: IndexMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        let p = Self { tensors };
        p.check(cfg)?;
        Ok(p)
    }

    /// Checks names, shapes and finiteness against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        cfg.validate()?;
        let expected = layout(cfg);
        if expected.len() != self.tensors.len() {
            return Err(ModelError::Params(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| ModelError::Params(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Params(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Params(format!("{name} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Distinct parameter groups in layout order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in self.tensors.keys() {
            let g = param_group(n);
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Tape handles of a [`ModelParams`] set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_strip_indices() {
        assert_eq!(param_group("enc.block3.dil.w"), "enc.block.dil");
        assert_eq!(param_group("dec.layer0.attn.wq"), "dec.layer.attn");
        assert_eq!(param_group("tsm.wq"), "tsm");
        assert_eq!(param_group("dec.pos"), "dec");
    }

    #[test]
    fn init_is_seeded_and_checked() {
        let cfg = ModelConfig::desk();
        let a = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
        a.check(&cfg).unwrap();
        let other = ModelConfig {
            num_blocks: 2,
            ..cfg.clone()
        };
        assert!(a.check(&other).is_err());
        let bound = 1.0 / (cfg.d0 as f64).sqrt();
        assert!(a
            .get("enc.in.w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
        assert_eq!(a.get("dec.layer0.ln1.g").unwrap(), &Tensor::ones(&[cfg.d_model]));
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.get("enc.block0.dil.w").unwrap().shape(), &[3, 64, 64]);
        assert_eq!(p.get("dec.conv.w").unwrap().shape(), &[3, 3, 4, 32]);
        assert_eq!(p.get("dec.pos").unwrap().shape(), &[512, 64]);
        let v1 = ModelConfig {
            kernel_kind: super::super::KernelKind::Vanilla1,
            ..cfg
        };
        let p = ModelParams::init(&v1, 0).unwrap();
        assert_eq!(p.get("enc.block0.dil.w").unwrap().shape(), &[1, 64, 64]);
    }
}
