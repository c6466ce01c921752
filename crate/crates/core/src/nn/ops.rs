//! Dense and bilinear layers with hand-written backward passes.
//!
//! Weight matrices are stored `[inputs × outputs]` row-major so that the
//! forward product `y = xW + b` walks contiguous rows.

use super::tensor::{Initializer, Parameter, Tensor};
use crate::error::{Error, Result};

/// `out[j] += Σ_i x[i] · w[i, j]`
#[inline]
pub(crate) fn matvec_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `out[i] += Σ_j w[i, j] · dy[j]`
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], dy: &[f64], out: &mut [f64]) {
    let cols = dy.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, dy);
    }
}

/// `dw[i, j] += x[i] · dy[j]`
#[inline]
pub(crate) fn outer_acc(x: &[f64], dy: &[f64], dw: &mut [f64]) {
    let cols = dy.len();
    debug_assert_eq!(dw.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(dw.chunks_exact_mut(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (d, g) in row.iter_mut().zip(dy) {
            *d += xi * g;
        }
    }
}

/// Rows handled together by the blocked kernels so each weight row is
/// reused from cache.
const BLOCK: usize = 8;

/// `outs[t][j] += Σ_i xs[t][i] · w[i, j]` for every row `t`; per element the
/// summation order matches [`matvec_acc`].
pub(crate) fn matmat_acc<X: AsRef<[f64]>>(xs: &[X], w: &[f64], outs: &mut [Vec<f64>]) {
    let Some(cols) = outs.first().map(Vec::len) else { return };
    for (xb, ob) in xs.chunks(BLOCK).zip(outs.chunks_mut(BLOCK)) {
        for (i, row) in w.chunks_exact(cols).enumerate() {
            for (x, o) in xb.iter().zip(ob.iter_mut()) {
                let xi = x.as_ref()[i];
                if xi == 0.0 {
                    continue;
                }
                for (oj, wij) in o.iter_mut().zip(row) {
                    *oj += xi * wij;
                }
            }
        }
    }
}

/// `outs[t][i] += Σ_j w[i, j] · dys[t][j]` for every row `t`.
pub(crate) fn matmat_t_acc<D: AsRef<[f64]>>(w: &[f64], dys: &[D], outs: &mut [Vec<f64>]) {
    let Some(cols) = dys.first().map(|d| d.as_ref().len()) else { return };
    let wt = transpose(w, w.len() / cols, cols);
    matmat_acc(dys, &wt, outs);
}

/// Row-major `[rows × cols]` to `[cols × rows]`.
pub(crate) fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for (i, row) in w.chunks_exact(cols).enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j * rows + i] = *v;
        }
    }
    out
}

/// `dw[i, j] += Σ_t xs[t][i] · dys[t][j]`, rows taken in order.
pub(crate) fn outer_many_acc<X: AsRef<[f64]>, D: AsRef<[f64]>>(xs: &[X], dys: &[D], dw: &mut [f64]) {
    let Some(cols) = dys.first().map(|d| d.as_ref().len()) else { return };
    for (xb, db) in xs.chunks(BLOCK).zip(dys.chunks(BLOCK)) {
        for (i, row) in dw.chunks_exact_mut(cols).enumerate() {
            for (x, dy) in xb.iter().zip(db) {
                let xi = x.as_ref()[i];
                if xi == 0.0 {
                    continue;
                }
                for (r, g) in row.iter_mut().zip(dy.as_ref()) {
                    *r += xi * g;
                }
            }
        }
    }
}

/// Four interleaved partial sums so the loop vectorizes; the summation
/// order is fixed, so results do not depend on the target's vector width.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn expect_len(op: &'static str, what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{what} of length {expected}"), found))
    }
}

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, "a matrix", format!("{s:?}"))),
    }
}

/// `y = xW + b`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, m) = expect_matrix("affine", w)?;
    expect_len("affine", "x", n, x.len())?;
    expect_len("affine", "b", m, b.len())?;
    let mut y = b.data().to_vec();
    matvec_acc(x.data(), w.data(), &mut y);
    Ok(Tensor::vector(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<AffineGrads> {
    let (n, m) = expect_matrix("affine_backward", w)?;
    expect_len("affine_backward", "x", n, x.len())?;
    expect_len("affine_backward", "dy", m, dy.len())?;
    let mut dx = vec![0.0; n];
    matvec_t_acc(w.data(), dy.data(), &mut dx);
    let mut dw = Tensor::zeros(&[n, m]);
    outer_acc(x.data(), dy.data(), dw.data_mut());
    Ok(AffineGrads {
        dx: Tensor::vector(dx),
        dw,
        db: dy.clone(),
    })
}

/// `dᵀ Θ q`.
pub fn bilinear(d: &Tensor, theta: &Tensor, q: &Tensor) -> Result<f64> {
    let (h, k) = expect_matrix("bilinear", theta)?;
    expect_len("bilinear", "d", h, d.len())?;
    expect_len("bilinear", "q", k, q.len())?;
    let mut tq = vec![0.0; h];
    matvec_t_acc(theta.data(), q.data(), &mut tq);
    Ok(dot(d.data(), &tq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrads {
    pub dd: Tensor,
    pub dtheta: Tensor,
    pub dq: Tensor,
}

pub fn bilinear_backward(d: &Tensor, theta: &Tensor, q: &Tensor, dout: f64) -> Result<BilinearGrads> {
    let (h, k) = expect_matrix("bilinear_backward", theta)?;
    expect_len("bilinear_backward", "d", h, d.len())?;
    expect_len("bilinear_backward", "q", k, q.len())?;
    let mut dd = vec![0.0; h];
    matvec_t_acc(theta.data(), q.data(), &mut dd);
    dd.iter_mut().for_each(|v| *v *= dout);
    let scaled: Vec<f64> = d.data().iter().map(|v| v * dout).collect();
    let mut dq = vec![0.0; k];
    matvec_acc(&scaled, theta.data(), &mut dq);
    let mut dtheta = Tensor::zeros(&[h, k]);
    outer_acc(&scaled, q.data(), dtheta.data_mut());
    Ok(BilinearGrads {
        dd: Tensor::vector(dd),
        dtheta,
        dq: Tensor::vector(dq),
    })
}

/// Affine layer owning its parameters; backward accumulates into them.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Affine {
    pub fn new(name: &str, inputs: usize, outputs: usize, init: &mut Initializer) -> Self {
        Affine {
            weight: init.uniform(format!("{name}.weight"), &[inputs, outputs]),
            bias: init.uniform(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        expect_len("affine", "x", self.inputs(), x.len())?;
        let mut y = self.bias.value.data().to_vec();
        matvec_acc(x, self.weight.value.data(), &mut y);
        Ok(y)
    }

    /// [`Affine::forward`] over many inputs.
    pub fn forward_many<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            expect_len("affine", "x", self.inputs(), x.as_ref().len())?;
        }
        let mut ys = vec![self.bias.value.data().to_vec(); xs.len()];
        matmat_acc(xs, self.weight.value.data(), &mut ys);
        Ok(ys)
    }

    /// [`Affine::backward`] over many inputs; returns every `dL/dx`.
    pub fn backward_many<X: AsRef<[f64]>, D: AsRef<[f64]>>(&mut self, xs: &[X], dys: &[D]) -> Result<Vec<Vec<f64>>> {
        if xs.len() != dys.len() {
            return Err(Error::shape("affine_backward", xs.len(), dys.len()));
        }
        for (x, dy) in xs.iter().zip(dys) {
            expect_len("affine_backward", "x", self.inputs(), x.as_ref().len())?;
            expect_len("affine_backward", "dy", self.outputs(), dy.as_ref().len())?;
        }
        outer_many_acc(xs, dys, self.weight.grad.data_mut());
        for dy in dys {
            add_assign(self.bias.grad.data_mut(), dy.as_ref());
        }
        let mut dxs = vec![vec![0.0; self.inputs()]; xs.len()];
        matmat_t_acc(self.weight.value.data(), dys, &mut dxs);
        Ok(dxs)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        expect_len("affine_backward", "x", self.inputs(), x.len())?;
        expect_len("affine_backward", "dy", self.outputs(), dy.len())?;
        outer_acc(x, dy, self.weight.grad.data_mut());
        add_assign(self.bias.grad.data_mut(), dy);
        let mut dx = vec![0.0; x.len()];
        matvec_t_acc(self.weight.value.data(), dy, &mut dx);
        Ok(dx)
    }
}
