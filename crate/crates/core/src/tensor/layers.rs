//! Forward and backward passes for the layers of a post-norm transformer encoder.
//!
//! Each `forward` returns the output together with a cache; the matching
//! `backward` consumes that cache, accumulates parameter gradients into
//! [`Param::grad`], and returns the gradient with respect to the input.

use super::{gemm, Matrix, RngState, Scalar};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// Affine map `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    /// Weights ~ N(0, std²), zero bias.
    pub fn new(input: usize, output: usize, std: f64, rng: &mut RngState) -> Self {
        Self {
            weight: Param::new(rng.normal_matrix(input, output, std)),
            bias: Param::new(Matrix::zeros(1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul(&self.weight.value)?;
        y.add_row_vector(self.bias.value.as_slice())?;
        Ok(y)
    }

    /// Accumulates weight and bias gradients; returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
        self.backward_params(x, dy)?;
        dy.matmul_t(&self.weight.value)
    }

    /// Like [`Linear::backward`] but skips the input gradient.
    pub fn backward_params(&mut self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<()> {
        gemm(&mut self.weight.grad, x, true, dy, false, T::one(), T::one())?;
        for (g, s) in self
            .bias
            .grad
            .as_mut_slice()
            .iter_mut()
            .zip(dy.column_sums())
        {
            *g = *g + s;
        }
        Ok(())
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

/// Row-wise normalization followed by `gamma ⊙ x̂ + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: (gamma.len(), beta.len()),
        });
    }
    let n = T::lit(d as f64);
    let eps = T::lit(eps);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let yr = y.row_mut(r);
        for c in 0..d {
            yr[c] = gamma[c] * xhat.get(r, c) + beta[c];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>, Vec<T>)> {
    let (rows, d) = cache.xhat.shape();
    if dy.shape() != (rows, d) || gamma.len() != d {
        return Err(Error::Dimension {
            op: "layer_norm_backward",
            lhs: cache.xhat.shape(),
            rhs: dy.shape(),
        });
    }
    let n = T::lit(d as f64);
    let mut dx = Matrix::zeros(rows, d);
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let g = dy.row(r);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for c in 0..d {
            dgamma[c] = dgamma[c] + g[c] * xh[c];
            dbeta[c] = dbeta[c] + g[c];
            dxhat[c] = g[c] * gamma[c];
            sum_dxhat = sum_dxhat + dxhat[c];
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[c] * xh[c];
        }
        let scale = cache.inv_std[r] / n;
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = scale * (n * dxhat[c] - sum_dxhat - xh[c] * sum_dxhat_xhat);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Layer norm with learnable affine parameters (`gamma` starts at 1, `beta` at 0).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Matrix::filled(1, dim, T::one())),
            beta: Param::new(Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LayerNormCache<T>)> {
        layer_norm(
            x,
            self.gamma.value.as_slice(),
            self.beta.value.as_slice(),
            LAYER_NORM_EPS,
        )
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
        let (dx, dg, db) = layer_norm_backward(cache, self.gamma.value.as_slice(), dy)?;
        accumulate(&mut self.gamma.grad, &dg);
        accumulate(&mut self.beta.grad, &db);
        Ok(dx)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
        }
    }
}

fn accumulate<T: Scalar>(dst: &mut Matrix<T>, src: &[T]) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// In-place numerically stable softmax over each row.
pub fn softmax_rows<T: Scalar>(m: &mut Matrix<T>) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

fn copy_cols<T: Scalar>(src: &Matrix<T>, start: usize, width: usize) -> Matrix<T> {
    Matrix::from_fn(src.rows(), width, |r, c| src.get(r, start + c))
}

fn write_cols<T: Scalar>(dst: &mut Matrix<T>, start: usize, block: &Matrix<T>) {
    for r in 0..block.rows() {
        dst.row_mut(r)[start..start + block.cols()].copy_from_slice(block.row(r));
    }
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    x: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    concat: Matrix<T>,
}

impl<T: Scalar> AttentionCache<T> {
    /// Attention weights of each head (`n × n`, rows sum to one).
    pub fn probs(&self) -> &[Matrix<T>] {
        &self.probs
    }
}

/// Multi-head scaled dot-product self-attention.
///
/// The per-head projections are stored fused: head `h` owns columns
/// `h·d_h .. (h+1)·d_h` of the query, key and value maps and the matching rows
/// of the output map.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention<T = f32> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(dim: usize, heads: usize, std: f64, rng: &mut RngState) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(Self {
            query: Linear::new(dim, dim, std, rng),
            key: Linear::new(dim, dim, std, rng),
            value: Linear::new(dim, dim, std, rng),
            output: Linear::new(dim, dim, std, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    fn head_dim(&self) -> Result<usize> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {} attention heads",
                self.heads
            )));
        }
        Ok(d / self.heads)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, AttentionCache<T>)> {
        let dh = self.head_dim()?;
        if x.cols() != self.dim() {
            return Err(Error::Dimension {
                op: "attention",
                lhs: x.shape(),
                rhs: (self.dim(), self.dim()),
            });
        }
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let n = x.rows();
        let mut concat = Matrix::zeros(n, self.dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = copy_cols(&q, h * dh, dh);
            let kh = copy_cols(&k, h * dh, dh);
            let vh = copy_cols(&v, h * dh, dh);
            let mut scores = Matrix::zeros(n, n);
            gemm(&mut scores, &qh, false, &kh, true, scale, T::zero())?;
            softmax_rows(&mut scores);
            let oh = scores.matmul(&vh)?;
            write_cols(&mut concat, h * dh, &oh);
            probs.push(scores);
        }
        let out = self.output.forward(&concat)?;
        Ok((
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
        let dh = self.head_dim()?;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let n = cache.x.rows();
        let dconcat = self.output.backward(&cache.concat, dout)?;
        let mut dq = Matrix::zeros(n, self.dim());
        let mut dk = Matrix::zeros(n, self.dim());
        let mut dv = Matrix::zeros(n, self.dim());
        for h in 0..self.heads {
            let a = &cache.probs[h];
            let qh = copy_cols(&cache.q, h * dh, dh);
            let kh = copy_cols(&cache.k, h * dh, dh);
            let vh = copy_cols(&cache.v, h * dh, dh);
            let doh = copy_cols(&dconcat, h * dh, dh);
            let da = doh.matmul_t(&vh)?;
            let dvh = a.t_matmul(&doh)?;
            // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
            let mut ds = Matrix::zeros(n, n);
            for r in 0..n {
                let ar = a.row(r);
                let dar = da.row(r);
                let dot: T = ar.iter().zip(dar).map(|(p, g)| *p * *g).sum();
                let out = ds.row_mut(r);
                for c in 0..n {
                    out[c] = ar[c] * (dar[c] - dot) * scale;
                }
            }
            let dqh = ds.matmul(&kh)?;
            let dkh = ds.t_matmul(&qh)?;
            write_cols(&mut dq, h * dh, &dqh);
            write_cols(&mut dk, h * dh, &dkh);
            write_cols(&mut dv, h * dh, &dvh);
        }
        let mut dx = self.query.backward(&cache.x, &dq)?;
        dx.add_assign(&self.key.backward(&cache.x, &dk)?)?;
        dx.add_assign(&self.value.backward(&cache.x, &dv)?)?;
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        [&self.query, &self.key, &self.value, &self.output]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::with_capacity(8);
        out.extend(self.query.params_mut());
        out.extend(self.key.params_mut());
        out.extend(self.value.params_mut());
        out.extend(self.output.params_mut());
        out
    }

    pub fn cast<U: Scalar>(&self) -> MultiHeadAttention<U> {
        MultiHeadAttention {
            query: self.query.cast(),
            key: self.key.cast(),
            value: self.value.cast(),
            output: self.output.cast(),
            heads: self.heads,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache<T> {
    x: Matrix<T>,
    hidden: Matrix<T>,
}

/// `relu(x·W₁ + b₁)·W₂ + b₂`, row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T = f32> {
    pub inner: Linear<T>,
    pub outer: Linear<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(dim: usize, hidden: usize, std: f64, rng: &mut RngState) -> Self {
        Self {
            inner: Linear::new(dim, hidden, std, rng),
            outer: Linear::new(hidden, dim, std, rng),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, FeedForwardCache<T>)> {
        if self.inner.output_dim() != self.outer.input_dim() {
            return Err(Error::Dimension {
                op: "feed_forward",
                lhs: self.inner.weight.value.shape(),
                rhs: self.outer.weight.value.shape(),
            });
        }
        let hidden = self.inner.forward(x)?.map(|v| v.max(T::zero()));
        let out = self.outer.forward(&hidden)?;
        Ok((
            out,
            FeedForwardCache {
                x: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
        let mut dhidden = self.outer.backward(&cache.hidden, dout)?;
        for (g, h) in dhidden
            .as_mut_slice()
            .iter_mut()
            .zip(cache.hidden.as_slice())
        {
            if *h <= T::zero() {
                *g = T::zero();
            }
        }
        self.inner.backward(&cache.x, &dhidden)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.inner
            .params()
            .into_iter()
            .chain(self.outer.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::with_capacity(4);
        out.extend(self.inner.params_mut());
        out.extend(self.outer.params_mut());
        out
    }

    pub fn cast<U: Scalar>(&self) -> FeedForward<U> {
        FeedForward {
            inner: self.inner.cast(),
            outer: self.outer.cast(),
        }
    }
}

/// Per-element multipliers from a dropout draw; `None` means identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(Option<Vec<T>>);

impl<T: Scalar> DropoutMask<T> {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    pub fn backward(&self, dy: &Matrix<T>) -> Matrix<T> {
        match &self.0 {
            None => dy.clone(),
            Some(mask) => {
                let mut out = dy.clone();
                for (g, m) in out.as_mut_slice().iter_mut().zip(mask) {
                    *g = *g * *m;
                }
                out
            }
        }
    }
}

/// Inverted dropout: zeroes each element with probability `p` and scales
/// survivors by `1/(1−p)` while training; identity otherwise.
pub fn dropout<T: Scalar>(
    x: &Matrix<T>,
    p: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Matrix<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.uniform() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut out = x.clone();
    for (v, m) in out.as_mut_slice().iter_mut().zip(&mask) {
        *v = *v * *m;
    }
    Ok((out, DropoutMask(Some(mask))))
}
