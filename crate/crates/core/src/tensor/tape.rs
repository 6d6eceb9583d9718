use super::kernels::{self, Conv1dDims, Conv2dDims};
use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AddBias(Var, Var),
    Relu(Var),
    Softmax(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    StackLast(Vec<Var>),
    PoolAxis1(Var, Vec<f64>),
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Inputs always precede the nodes
/// that consume them, so a reverse sweep is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node. Every `requires_grad` leaf has an entry, zero when
    /// the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Config {
            op,
            msg: format!("expected a 2-D tensor, got {:?}", t.shape()),
        }),
    }
}

fn odd_kernel(op: &'static str, k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(TensorError::Config {
            op,
            msg: format!("kernel size must be odd, got {k}"),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Consumes the tape and returns one node's value.
    pub fn take(mut self, v: Var) -> Tensor {
        self.nodes.swap_remove(v.0).value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor { shape, data },
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], c, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul_nt", self.value(a))?;
        let (n, k2) = dims2("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(dim_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let c = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], c, Op::MatMulNT(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).data().iter().map(|v| v * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Scale(a, s), &[a])
    }

    /// Elementwise product with a non-differentiable factor (masks, dropout).
    pub fn mul_const(&mut self, a: Var, factor: &Tensor) -> Result<Var> {
        if self.shape(a) != factor.shape() {
            return Err(dim_err("mul_const", self.shape(a), factor.shape()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(factor.data())
            .map(|(x, f)| x * f)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            data,
            Op::MulConst(a, factor.data().to_vec()),
            &[a],
        ))
    }

    /// Adds `b: [c]` to every row of `x: [..×c]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap();
        if self.shape(b) != [c] {
            return Err(dim_err("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(v, bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::AddBias(x, b), &[x, b]))
    }

    /// Affine map `x·w + b` over the leading dimension.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Relu(a), &[a])
    }

    /// Stabilised softmax over each row of a 2-D tensor. Columns where
    /// `keep_cols` is false receive exactly zero probability.
    pub fn softmax_rows(&mut self, x: Var, keep_cols: Option<&[bool]>) -> Result<Var> {
        let (r, c) = dims2("softmax_rows", self.value(x))?;
        if let Some(keep) = keep_cols {
            if keep.len() != c {
                return Err(dim_err("softmax_rows", self.shape(x), &[keep.len()]));
            }
            if !keep.iter().any(|&k| k) {
                return Err(TensorError::Config {
                    op: "softmax_rows",
                    msg: "every column is masked".into(),
                });
            }
        }
        let y = kernels::softmax_rows(self.value(x).data(), r, c, keep_cols);
        Ok(self.push(vec![r, c], y, Op::Softmax(x), &[x]))
    }

    /// Length-preserving 1-D cross-correlation.
    ///
    /// `x: [T×Cin]`, `w: [k×Cin×Cout]`, `b: [Cout]`. Output frame `t` reads
    /// input frames `t + (j - (k-1)/2)·dilation` for taps `j`, zero outside.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (t, cin) = dims2("conv1d", self.value(x))?;
        let &[k, wcin, cout] = self.shape(w) else {
            return Err(dim_err("conv1d", self.shape(x), self.shape(w)));
        };
        odd_kernel("conv1d", k)?;
        if dilation == 0 {
            return Err(TensorError::Config {
                op: "conv1d",
                msg: "dilation must be at least 1".into(),
            });
        }
        if wcin != cin {
            return Err(dim_err("conv1d", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [cout] {
            return Err(dim_err("conv1d", self.shape(w), self.shape(b)));
        }
        let dims = Conv1dDims {
            t,
            cin,
            cout,
            k,
            dilation,
        };
        let y = kernels::conv1d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        Ok(self.push(vec![t, cout], y, Op::Conv1d { x, w, b, dilation }, &[x, w, b]))
    }

    /// Same-size 2-D cross-correlation: `x: [H×W×Cin]`, `w: [k×k×Cin×Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let &[h, wd, cin] = self.shape(x) else {
            return Err(TensorError::Config {
                op: "conv2d",
                msg: format!("expected [H×W×C], got {:?}", self.shape(x)),
            });
        };
        let &[k, k2, wcin, cout] = self.shape(w) else {
            return Err(dim_err("conv2d", self.shape(x), self.shape(w)));
        };
        odd_kernel("conv2d", k)?;
        if k2 != k || wcin != cin {
            return Err(dim_err("conv2d", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [cout] {
            return Err(dim_err("conv2d", self.shape(w), self.shape(b)));
        }
        let dims = Conv2dDims {
            h,
            w: wd,
            cin,
            cout,
            k,
        };
        let y = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        Ok(self.push(vec![h, wd, cout], y, Op::Conv2d { x, w, b }, &[x, w, b]))
    }

    /// Normalises each row of `x: [r×d]` to zero mean and unit variance
    /// (epsilon 1e-5 under the root), then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, d) = dims2("layer_norm", self.value(x))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (y, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            r,
            d,
        );
        Ok(self.push(
            vec![r, d],
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_cols", self.value(x))?;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_cols", self.shape(x), &[start, len]));
        }
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(vec![r, len], data, Op::SliceCols(x, start), &[x]))
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_rows", self.value(x))?;
        if len == 0 || start + len > r {
            return Err(dim_err("slice_rows", self.shape(x), &[start, len]));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(vec![len, c], data, Op::SliceRows(x, start), &[x]))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Config {
            op: "concat_cols",
            msg: "nothing to concatenate".into(),
        })?;
        let (r, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2("concat_cols", self.value(p))?;
            if pr != r {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(vec![r, total], data, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks equally shaped tensors along a new trailing axis.
    pub fn stack_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Config {
            op: "stack_last",
            msg: "nothing to stack".into(),
        })?;
        let shape = self.shape(first).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(dim_err("stack_last", &shape, self.shape(p)));
            }
        }
        let n = self.value(first).len();
        let h = parts.len();
        let mut data = vec![0.0; n * h];
        for (hi, &p) in parts.iter().enumerate() {
            for (i, &v) in self.value(p).data().iter().enumerate() {
                data[i * h + hi] = v;
            }
        }
        let mut out_shape = shape;
        out_shape.push(h);
        Ok(self.push(out_shape, data, Op::StackLast(parts.to_vec()), parts))
    }

    /// `[a×b×c] -> [a×c]`, `y[i,:] = Σ_j weights[j]·x[i,j,:]`.
    pub fn pool_axis1(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let &[a, b, c] = self.shape(x) else {
            return Err(TensorError::Config {
                op: "pool_axis1",
                msg: format!("expected a 3-D tensor, got {:?}", self.shape(x)),
            });
        };
        if weights.len() != b {
            return Err(dim_err("pool_axis1", self.shape(x), &[weights.len()]));
        }
        let xd = self.value(x).data();
        let mut y = vec![0.0; a * c];
        for i in 0..a {
            let out = &mut y[i * c..(i + 1) * c];
            for (j, &wj) in weights.iter().enumerate() {
                if wj != 0.0 {
                    kernels::axpy(wj, &xd[(i * b + j) * c..(i * b + j + 1) * c], out);
                }
            }
        }
        Ok(self.push(vec![a, c], y, Op::PoolAxis1(x, weights.to_vec()), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(dim_err("reshape", self.shape(x), &shape));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push(shape, data, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a scalar `loss`. Each recorded op is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // Intermediate gradients are not reported.
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => kernels::axpy(1.0, &delta, existing),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k, n) = (shp(a)[0], shp(a)[1], shp(b)[1]);
                let (da, db) = kernels::matmul_back(val(a), val(b), g, m, k, n);
                acc(a, da);
                acc(b, db);
            }
            &Op::MatMulNT(a, b) => {
                let (m, k, n) = (shp(a)[0], shp(a)[1], shp(b)[0]);
                let (da, db) = kernels::matmul_nt_back(val(a), val(b), g, m, k, n);
                acc(a, da);
                acc(b, db);
            }
            &Op::Add(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(b, g.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            &Op::Scale(a, s) => acc(a, g.iter().map(|v| v * s).collect()),
            Op::MulConst(a, f) => acc(*a, g.iter().zip(f).map(|(g, f)| g * f).collect()),
            &Op::AddBias(x, b) => {
                let c = shp(b)[0];
                let mut db = vec![0.0; c];
                for row in g.chunks(c) {
                    kernels::axpy(1.0, row, &mut db);
                }
                acc(x, g.to_vec());
                acc(b, db);
            }
            &Op::Relu(a) => acc(
                a,
                g.iter()
                    .zip(val(a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            &Op::Softmax(x) => {
                let (r, c) = (shp(x)[0], shp(x)[1]);
                acc(x, kernels::softmax_rows_back(node.value.data(), g, r, c));
            }
            &Op::Conv1d { x, w, b, dilation } => {
                let dims = Conv1dDims {
                    t: shp(x)[0],
                    cin: shp(x)[1],
                    cout: shp(w)[2],
                    k: shp(w)[0],
                    dilation,
                };
                let (dx, dw, db) = kernels::conv1d_back(val(x), val(w), g, &dims);
                acc(x, dx);
                acc(w, dw);
                acc(b, db);
            }
            &Op::Conv2d { x, w, b } => {
                let dims = Conv2dDims {
                    h: shp(x)[0],
                    w: shp(x)[1],
                    cin: shp(x)[2],
                    cout: shp(w)[3],
                    k: shp(w)[0],
                };
                let (dx, dw, db) = kernels::conv2d_back(val(x), val(w), g, &dims);
                acc(x, dx);
                acc(w, dw);
                acc(b, db);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, d) = (shp(*x)[0], shp(*x)[1]);
                let (dx, dg, db) = kernels::layer_norm_back(xhat, inv_std, val(*gamma), g, r, d);
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            &Op::SliceCols(x, start) => {
                let (r, c) = (shp(x)[0], shp(x)[1]);
                let len = node.value.shape()[1];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(x, dx);
            }
            &Op::SliceRows(x, start) => {
                let c = shp(x)[1];
                let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                acc(x, dx);
            }
            Op::ConcatCols(parts) => {
                let r = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut col = 0;
                for &p in parts {
                    let w = shp(p)[1];
                    let mut dp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                    }
                    col += w;
                    acc(p, dp);
                }
            }
            Op::StackLast(parts) => {
                let h = parts.len();
                for (hi, &p) in parts.iter().enumerate() {
                    acc(p, g.iter().skip(hi).step_by(h).copied().collect());
                }
            }
            Op::PoolAxis1(x, weights) => {
                let (a, b, c) = (shp(*x)[0], shp(*x)[1], shp(*x)[2]);
                let mut dx = vec![0.0; a * b * c];
                for i in 0..a {
                    let gi = &g[i * c..(i + 1) * c];
                    for (j, &wj) in weights.iter().enumerate() {
                        if wj != 0.0 {
                            kernels::axpy(wj, gi, &mut dx[(i * b + j) * c..(i * b + j + 1) * c]);
                        }
                    }
                }
                acc(*x, dx);
            }
            &Op::Sum(x) => acc(x, vec![g[0]; self.nodes[x.0].value.len()]),
            &Op::Reshape(x) => acc(x, g.to_vec()),
        }
    }
}
