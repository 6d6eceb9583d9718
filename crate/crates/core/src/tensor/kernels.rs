// Raw slice kernels behind the tape ops. Shapes are validated by the caller.

pub(super) const LN_EPS: f64 = 1e-5;

/// `c[m×n] = a[m×k] · b[k×n]`
pub(super) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Gradients of `a·b` given `dc`: returns `(dc·bᵀ, aᵀ·dc)`.
pub(super) fn matmul_back(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = dot(dcrow, brow);
            let av = a[i * k + p];
            if av != 0.0 {
                for (dbv, g) in db[p * n..(p + 1) * n].iter_mut().zip(dcrow) {
                    *dbv += av * g;
                }
            }
        }
    }
    (da, db)
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub(super) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

pub(super) fn matmul_nt_back(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; n * k];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let g = dc[i * n + j];
            if g == 0.0 {
                continue;
            }
            let brow = &b[j * k..(j + 1) * k];
            axpy(g, brow, &mut da[i * k..(i + 1) * k]);
            axpy(g, arow, &mut db[j * k..(j + 1) * k]);
        }
    }
    (da, db)
}

#[inline]
pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(super) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Row `xrow[cin]` times `w[cin×cout]`, accumulated into `out[cout]`.
#[inline]
fn row_times(xrow: &[f64], w: &[f64], cout: usize, out: &mut [f64]) {
    for (ci, &xv) in xrow.iter().enumerate() {
        if xv != 0.0 {
            axpy(xv, &w[ci * cout..(ci + 1) * cout], out);
        }
    }
}

/// Offset of tap `j` for a centred kernel of odd size `k` and dilation `d`.
#[inline]
pub(super) fn tap_offset(j: usize, k: usize, d: usize) -> isize {
    (j as isize - ((k - 1) / 2) as isize) * d as isize
}

pub(super) struct Conv1dDims {
    pub t: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub dilation: usize,
}

/// Same-length cross-correlation with symmetric zero padding.
pub(super) fn conv1d(x: &[f64], w: &[f64], b: &[f64], dims: &Conv1dDims) -> Vec<f64> {
    let Conv1dDims {
        t,
        cin,
        cout,
        k,
        dilation,
    } = *dims;
    let mut y = Vec::with_capacity(t * cout);
    for _ in 0..t {
        y.extend_from_slice(b);
    }
    for j in 0..k {
        let off = tap_offset(j, k, dilation);
        let wj = &w[j * cin * cout..(j + 1) * cin * cout];
        for tt in 0..t {
            let src = tt as isize + off;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            row_times(
                &x[src * cin..(src + 1) * cin],
                wj,
                cout,
                &mut y[tt * cout..(tt + 1) * cout],
            );
        }
    }
    y
}

pub(super) fn conv1d_back(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dims: &Conv1dDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Conv1dDims {
        t,
        cin,
        cout,
        k,
        dilation,
    } = *dims;
    let mut dx = vec![0.0; t * cin];
    let mut dw = vec![0.0; k * cin * cout];
    let mut db = vec![0.0; cout];
    for row in dy.chunks(cout) {
        axpy(1.0, row, &mut db);
    }
    for j in 0..k {
        let off = tap_offset(j, k, dilation);
        let base = j * cin * cout;
        for tt in 0..t {
            let src = tt as isize + off;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            let g = &dy[tt * cout..(tt + 1) * cout];
            let xrow = &x[src * cin..(src + 1) * cin];
            for ci in 0..cin {
                let wrow = &w[base + ci * cout..base + (ci + 1) * cout];
                dx[src * cin + ci] += dot(g, wrow);
                let xv = xrow[ci];
                if xv != 0.0 {
                    axpy(xv, g, &mut dw[base + ci * cout..base + (ci + 1) * cout]);
                }
            }
        }
    }
    (dx, dw, db)
}

pub(super) struct Conv2dDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

/// Same-size 2-D cross-correlation, channels last.
pub(super) fn conv2d(x: &[f64], w: &[f64], b: &[f64], dims: &Conv2dDims) -> Vec<f64> {
    let Conv2dDims {
        h,
        w: wd,
        cin,
        cout,
        k,
    } = *dims;
    let mut y = Vec::with_capacity(h * wd * cout);
    for _ in 0..h * wd {
        y.extend_from_slice(b);
    }
    for a in 0..k {
        let oa = tap_offset(a, k, 1);
        for c in 0..k {
            let oc = tap_offset(c, k, 1);
            let wt = &w[(a * k + c) * cin * cout..(a * k + c + 1) * cin * cout];
            for i in 0..h {
                let si = i as isize + oa;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let si = si as usize;
                for j in 0..wd {
                    let sj = j as isize + oc;
                    if sj < 0 || sj >= wd as isize {
                        continue;
                    }
                    let src = (si * wd + sj as usize) * cin;
                    let dst = (i * wd + j) * cout;
                    row_times(&x[src..src + cin], wt, cout, &mut y[dst..dst + cout]);
                }
            }
        }
    }
    y
}

pub(super) fn conv2d_back(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dims: &Conv2dDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Conv2dDims {
        h,
        w: wd,
        cin,
        cout,
        k,
    } = *dims;
    let mut dx = vec![0.0; h * wd * cin];
    let mut dw = vec![0.0; k * k * cin * cout];
    let mut db = vec![0.0; cout];
    for row in dy.chunks(cout) {
        axpy(1.0, row, &mut db);
    }
    for a in 0..k {
        let oa = tap_offset(a, k, 1);
        for c in 0..k {
            let oc = tap_offset(c, k, 1);
            let base = (a * k + c) * cin * cout;
            for i in 0..h {
                let si = i as isize + oa;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let si = si as usize;
                for j in 0..wd {
                    let sj = j as isize + oc;
                    if sj < 0 || sj >= wd as isize {
                        continue;
                    }
                    let src = (si * wd + sj as usize) * cin;
                    let g = &dy[(i * wd + j) * cout..(i * wd + j + 1) * cout];
                    for ci in 0..cin {
                        let wrow = &w[base + ci * cout..base + (ci + 1) * cout];
                        dx[src + ci] += dot(g, wrow);
                        let xv = x[src + ci];
                        if xv != 0.0 {
                            axpy(xv, g, &mut dw[base + ci * cout..base + (ci + 1) * cout]);
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Row softmax; columns with `keep[j] == false` get exactly zero mass.
pub(super) fn softmax_rows(x: &[f64], r: usize, c: usize, keep: Option<&[bool]>) -> Vec<f64> {
    let mut y = vec![0.0; r * c];
    let kept = |j: usize| keep.is_none_or(|m| m[j]);
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let out = &mut y[i * c..(i + 1) * c];
        let max = (0..c)
            .filter(|&j| kept(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..c {
            if kept(j) {
                let e = (row[j] - max).exp();
                out[j] = e;
                total += e;
            }
        }
        for v in out.iter_mut() {
            *v /= total;
        }
    }
    y
}

pub(super) fn softmax_rows_back(y: &[f64], dy: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut dx = vec![0.0; r * c];
    for i in 0..r {
        let yr = &y[i * c..(i + 1) * c];
        let gr = &dy[i * c..(i + 1) * c];
        let s = dot(yr, gr);
        for j in 0..c {
            dx[i * c + j] = yr[j] * (gr[j] - s);
        }
    }
    dx
}

/// Per-row normalisation. Returns `(y, xhat, inv_std)`.
pub(super) fn layer_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    r: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; r * d];
    let mut xhat = vec![0.0; r * d];
    let mut inv_std = vec![0.0; r];
    for i in 0..r {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv_std)
}

pub(super) fn layer_norm_back(
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    dy: &[f64],
    r: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; r * d];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for i in 0..r {
        let hr = &xhat[i * d..(i + 1) * d];
        let gr = &dy[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += gr[j] * hr[j];
            db[j] += gr[j];
            dxhat[j] = gr[j] * gamma[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, hr) / d as f64;
        for j in 0..d {
            dx[i * d + j] = inv_std[i] * (dxhat[j] - m1 - hr[j] * m2);
        }
    }
    (dx, dg, db)
}
