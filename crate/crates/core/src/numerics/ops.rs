//! Forward kernels and backward rules for every differentiable operation the
//! model graph uses.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::Rng;

use super::gemm::{matmul, matmul_into, MatRef};
use super::par;
use super::scalar::{lit, Float};
use super::tape::{CustomBackward, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Test fixture: flips the sign of the GELU backward rule so gradient checks
/// can demonstrate they catch a broken derivative.
#[doc(hidden)]
pub static GELU_BACKWARD_SIGN_FLIP: AtomicBool = AtomicBool::new(false);

type Buf<F> = Arc<Vec<F>>;

pub(crate) enum Op<F: Float> {
    Linear {
        x: Buf<F>,
        w: Buf<F>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    MatMul {
        a: Buf<F>,
        b: Buf<F>,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    DepthwiseConv {
        x: Buf<F>,
        k: Buf<F>,
        batch: usize,
        time: usize,
        ch: usize,
        ksize: usize,
    },
    Unfold {
        batch: usize,
        time: usize,
        ch: usize,
        ksize: usize,
    },
    LayerNorm {
        xhat: Vec<F>,
        rstd: Vec<F>,
        gamma: Buf<F>,
        ch: usize,
    },
    Gelu {
        x: Buf<F>,
    },
    Relu {
        x: Buf<F>,
    },
    Exp {
        y: Vec<F>,
    },
    LogSoftmax {
        y: Vec<F>,
        outer: usize,
        n: usize,
        inner: usize,
    },
    MulConst {
        mask: Buf<F>,
    },
    Add,
    Sub,
    Mul {
        a: Buf<F>,
        b: Buf<F>,
    },
    Scale {
        c: F,
    },
    Sum {
        n: usize,
    },
    Gather {
        idx: Vec<Option<usize>>,
        rows_in: usize,
        ch: usize,
    },
    Concat {
        sizes: Vec<usize>,
    },
    Custom(Box<dyn CustomBackward<F>>),
}

fn phi<F: Float>(x: F) -> F {
    // standard normal density
    (-(x * x) * lit(0.5)).exp() * lit(1.0 / (2.0 * std::f64::consts::PI).sqrt())
}

fn big_phi<F: Float>(x: F) -> F {
    lit::<F>(0.5) * (F::one() + (x * lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

impl<F: Float> Op<F> {
    pub(crate) fn backward(&self, g: &[F], needs: &[bool]) -> Vec<Option<Vec<F>>> {
        match self {
            Op::Linear { x, w, rows, inp, out } => {
                let (rows, inp, out) = (*rows, *inp, *out);
                let gy = MatRef::row_major(g, rows, out);
                let dx = needs[0].then(|| matmul(gy, MatRef::row_major(w, inp, out).t()));
                let dw = needs[1].then(|| matmul(MatRef::row_major(x, rows, inp).t(), gy));
                let mut res = vec![dx, dw];
                if needs.len() > 2 {
                    res.push(needs[2].then(|| column_sums(g, out)));
                }
                res
            }
            Op::MatMul { a, b, m, k, n, trans_b } => {
                let (m, k, n) = (*m, *k, *n);
                let gy = MatRef::row_major(g, m, n);
                let bv = if *trans_b {
                    MatRef::row_major(b, n, k).t()
                } else {
                    MatRef::row_major(b, k, n)
                };
                let da = needs[0].then(|| matmul(gy, bv.t()));
                let db = needs[1].then(|| {
                    let at = MatRef::row_major(a, m, k).t();
                    if *trans_b {
                        // d(B^T) = A^T G, so dB = G^T A
                        matmul(gy.t(), MatRef::row_major(a, m, k))
                    } else {
                        matmul(at, gy)
                    }
                });
                vec![da, db]
            }
            Op::DepthwiseConv {
                x,
                k,
                batch,
                time,
                ch,
                ksize,
            } => dwconv_backward(g, x, k, *batch, *time, *ch, *ksize, needs),
            Op::Unfold { batch, time, ch, ksize } => vec![Some(fold(g, *batch, *time, *ch, *ksize))],
            Op::LayerNorm { xhat, rstd, gamma, ch } => layer_norm_backward(g, xhat, rstd, gamma, *ch, needs),
            Op::Gelu { x } => {
                let flip = GELU_BACKWARD_SIGN_FLIP.load(Ordering::Relaxed);
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| {
                        let d = big_phi(x) + x * phi(x);
                        if flip {
                            -g * d
                        } else {
                            g * d
                        }
                    })
                    .collect();
                vec![Some(d)]
            }
            Op::Relu { x } => vec![Some(
                x.iter()
                    .zip(g)
                    .map(|(&x, &g)| if x > F::zero() { g } else { F::zero() })
                    .collect(),
            )],
            Op::Exp { y } => vec![Some(y.iter().zip(g).map(|(&y, &g)| y * g).collect())],
            Op::LogSoftmax { y, outer, n, inner } => {
                let (outer, n, inner) = (*outer, *n, *inner);
                let mut dx = vec![F::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let s: F = (0..n).map(|j| g[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = g[at(j)] - y[at(j)].exp() * s;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::MulConst { mask } => vec![Some(g.iter().zip(mask.iter()).map(|(&g, &m)| g * m).collect())],
            Op::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
            Op::Sub => vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|&v| -v).collect()),
            ],
            Op::Mul { a, b } => vec![
                needs[0].then(|| g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect()),
            ],
            Op::Scale { c } => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::Sum { n } => vec![Some(vec![g[0]; *n])],
            Op::Gather { idx, rows_in, ch } => {
                let ch = *ch;
                let mut dx = vec![F::zero(); rows_in * ch];
                for (r, src) in idx.iter().enumerate() {
                    if let Some(s) = src {
                        let gr = &g[r * ch..(r + 1) * ch];
                        dx[s * ch..(s + 1) * ch]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(d, &v)| *d = *d + v);
                    }
                }
                vec![Some(dx)]
            }
            Op::Concat { sizes } => {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(&n, &need)| {
                        let part = need.then(|| g[start..start + n].to_vec());
                        start += n;
                        part
                    })
                    .collect()
            }
            Op::Custom(rule) => rule.backward(g, needs),
        }
    }
}

fn column_sums<F: Float>(g: &[F], cols: usize) -> Vec<F> {
    let mut s = vec![F::zero(); cols];
    for row in g.chunks(cols) {
        s.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
    }
    s
}

/// Views `[B, T, C]` or `[T, C]` as `(B, T, C)`.
fn btc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::invalid(
            op,
            format!("expected [T, C] or [B, T, C], got {shape:?}"),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
fn dwconv_backward<F: Float>(
    g: &[F],
    x: &[F],
    k: &[F],
    batch: usize,
    time: usize,
    ch: usize,
    ksize: usize,
    needs: &[bool],
) -> Vec<Option<Vec<F>>> {
    let pad = ksize / 2;
    let kt = transpose(k, ch, ksize);
    let dx = needs[0].then(|| {
        let mut dx = vec![F::zero(); g.len()];
        let rows_per = par::rows_per_task(batch * time, ksize * ch, 1 << 15);
        par::for_each_chunk_mut(&mut dx, rows_per * ch, |ci, block| {
            let r0 = ci * rows_per;
            for (ri, out) in block.chunks_mut(ch).enumerate() {
                let r = r0 + ri;
                let (b, s) = (r / time, r % time);
                for j in 0..ksize {
                    // output t reads input s when t + j - pad == s
                    let t = s as isize - j as isize + pad as isize;
                    if t < 0 || t >= time as isize {
                        continue;
                    }
                    let gr = &g[(b * time + t as usize) * ch..][..ch];
                    let kr = &kt[j * ch..(j + 1) * ch];
                    for c in 0..ch {
                        out[c] = out[c] + kr[c] * gr[c];
                    }
                }
            }
        });
        dx
    });
    let dk = needs[1].then(|| {
        let per_tap: Vec<Vec<F>> = par::map_range(ksize, |j| {
            let mut acc = vec![F::zero(); ch];
            for b in 0..batch {
                for t in 0..time {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s >= time as isize {
                        continue;
                    }
                    let gr = &g[(b * time + t) * ch..][..ch];
                    let xr = &x[(b * time + s as usize) * ch..][..ch];
                    for c in 0..ch {
                        acc[c] = acc[c] + gr[c] * xr[c];
                    }
                }
            }
            acc
        });
        let flat: Vec<F> = per_tap.into_iter().flatten().collect();
        transpose(&flat, ksize, ch)
    });
    let mut res = vec![dx, dk];
    if needs.len() > 2 {
        res.push(needs[2].then(|| column_sums(g, ch)));
    }
    res
}

fn transpose<F: Float>(m: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut t = vec![F::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

fn fold<F: Float>(g: &[F], batch: usize, time: usize, ch: usize, ksize: usize) -> Vec<F> {
    let pad = ksize / 2;
    let width = ksize * ch;
    let mut dx = vec![F::zero(); batch * time * ch];
    for b in 0..batch {
        for t in 0..time {
            let gr = &g[(b * time + t) * width..][..width];
            for j in 0..ksize {
                let s = t as isize + j as isize - pad as isize;
                if s < 0 || s >= time as isize {
                    continue;
                }
                let dst = &mut dx[(b * time + s as usize) * ch..][..ch];
                dst.iter_mut()
                    .zip(&gr[j * ch..(j + 1) * ch])
                    .for_each(|(d, &v)| *d = *d + v);
            }
        }
    }
    dx
}

fn layer_norm_backward<F: Float>(
    g: &[F],
    xhat: &[F],
    rstd: &[F],
    gamma: &[F],
    ch: usize,
    needs: &[bool],
) -> Vec<Option<Vec<F>>> {
    let inv_c = F::one() / F::from_usize(ch).unwrap();
    let dx = needs[0].then(|| {
        let mut dx = vec![F::zero(); g.len()];
        let rows_per = par::rows_per_task(g.len() / ch, ch * 6, 1 << 15);
        par::for_each_chunk_mut(&mut dx, rows_per * ch, |ci, block| {
            let r0 = ci * rows_per;
            for (ri, out) in block.chunks_mut(ch).enumerate() {
                let r = r0 + ri;
                let gr = &g[r * ch..][..ch];
                let xr = &xhat[r * ch..][..ch];
                let mut mean_d = F::zero();
                let mut mean_dx = F::zero();
                for c in 0..ch {
                    let d = gr[c] * gamma[c];
                    mean_d = mean_d + d;
                    mean_dx = mean_dx + d * xr[c];
                }
                mean_d = mean_d * inv_c;
                mean_dx = mean_dx * inv_c;
                for c in 0..ch {
                    out[c] = rstd[r] * (gr[c] * gamma[c] - mean_d - xr[c] * mean_dx);
                }
            }
        });
        dx
    });
    let dgamma = needs[1].then(|| {
        let mut s = vec![F::zero(); ch];
        for (gr, xr) in g.chunks(ch).zip(xhat.chunks(ch)) {
            for c in 0..ch {
                s[c] = s[c] + gr[c] * xr[c];
            }
        }
        s
    });
    let dbeta = needs[2].then(|| column_sums(g, ch));
    vec![dx, dgamma, dbeta]
}

fn elementwise_pair<F: Float>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<F: Float> Tape<F> {
    /// `y = x W + b` over the trailing axis of `x`.
    pub fn linear(&self, x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        if w.rank() != 2 || x.rank() == 0 || x.last_dim() != w.dim(0) {
            return Err(Error::shape("linear", x.shape(), w.shape()));
        }
        let (inp, out) = (w.dim(0), w.dim(1));
        if let Some(b) = b {
            if b.shape() != [out] {
                return Err(Error::shape("linear", w.shape(), b.shape()));
            }
        }
        let rows = x.numel() / inp;
        let mut y = Vec::with_capacity(rows * out);
        match b {
            Some(b) => {
                for _ in 0..rows {
                    y.extend_from_slice(b.data());
                }
            }
            None => y.resize(rows * out, F::zero()),
        }
        matmul_into(
            MatRef::row_major(x.data(), rows, inp),
            MatRef::row_major(w.data(), inp, out),
            &mut y,
            true,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "linear",
            || Op::Linear {
                x: Arc::clone(x.data_arc()),
                w: Arc::clone(w.data_arc()),
                rows,
                inp,
                out,
            },
            &inputs,
            shape,
            y,
        )
    }

    /// 2-D product `a b` (or `a b^T` with `trans_b`).
    pub fn matmul(&self, a: &Tensor<F>, b: &Tensor<F>, trans_b: bool) -> Result<Tensor<F>> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k) = (a.dim(0), a.dim(1));
        let (kb, n) = if trans_b {
            (b.dim(1), b.dim(0))
        } else {
            (b.dim(0), b.dim(1))
        };
        if k != kb {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let bv = if trans_b {
            MatRef::row_major(b.data(), n, k).t()
        } else {
            MatRef::row_major(b.data(), k, n)
        };
        let y = matmul(MatRef::row_major(a.data(), m, k), bv);
        self.push(
            "matmul",
            || Op::MatMul {
                a: Arc::clone(a.data_arc()),
                b: Arc::clone(b.data_arc()),
                m,
                k,
                n,
                trans_b,
            },
            &[a, b],
            vec![m, n],
            y,
        )
    }

    /// Per-channel convolution along time with zero "same" padding.
    /// `x: [B, T, C]` or `[T, C]`, `kernels: [C, K]` with odd `K`, `bias: [C]`.
    pub fn depthwise_conv1d(&self, x: &Tensor<F>, kernels: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let (batch, time, ch) = btc("depthwise_conv1d", x.shape())?;
        if kernels.rank() != 2 || kernels.dim(0) != ch {
            return Err(Error::shape("depthwise_conv1d", x.shape(), kernels.shape()));
        }
        if bias.shape() != [ch] {
            return Err(Error::shape("depthwise_conv1d", kernels.shape(), bias.shape()));
        }
        let ksize = kernels.dim(1);
        if ksize % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise_conv1d kernel size must be odd, got {ksize}"
            )));
        }
        let pad = ksize / 2;
        let kt = transpose(kernels.data(), ch, ksize);
        let xd = x.data();
        let bd = bias.data();
        let mut y = vec![F::zero(); x.numel()];
        let rows_per = par::rows_per_task(batch * time, ksize * ch, 1 << 15);
        par::for_each_chunk_mut(&mut y, rows_per * ch, |ci, block| {
            let r0 = ci * rows_per;
            for (ri, out) in block.chunks_mut(ch).enumerate() {
                let r = r0 + ri;
                let (b, t) = (r / time, r % time);
                out.copy_from_slice(bd);
                for j in 0..ksize {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s >= time as isize {
                        continue;
                    }
                    let xr = &xd[(b * time + s as usize) * ch..][..ch];
                    let kr = &kt[j * ch..(j + 1) * ch];
                    for c in 0..ch {
                        out[c] = out[c] + kr[c] * xr[c];
                    }
                }
            }
        });
        self.push(
            "depthwise_conv1d",
            || Op::DepthwiseConv {
                x: Arc::clone(x.data_arc()),
                k: Arc::clone(kernels.data_arc()),
                batch,
                time,
                ch,
                ksize,
            },
            &[x, kernels, bias],
            x.shape().to_vec(),
            y,
        )
    }

    /// Sliding windows of `ksize` frames (zero padded), concatenated along
    /// channels: `[B, T, C] -> [B, T, K*C]`.
    pub fn unfold_time(&self, x: &Tensor<F>, ksize: usize) -> Result<Tensor<F>> {
        let (batch, time, ch) = btc("unfold_time", x.shape())?;
        if ksize % 2 == 0 {
            return Err(Error::Config(format!("conv kernel size must be odd, got {ksize}")));
        }
        let pad = ksize / 2;
        let width = ksize * ch;
        let xd = x.data();
        let mut y = vec![F::zero(); batch * time * width];
        for b in 0..batch {
            for t in 0..time {
                let dst = &mut y[(b * time + t) * width..][..width];
                for j in 0..ksize {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s >= time as isize {
                        continue;
                    }
                    dst[j * ch..(j + 1) * ch].copy_from_slice(&xd[(b * time + s as usize) * ch..][..ch]);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        self.push("unfold_time", || Op::Unfold { batch, time, ch, ksize }, &[x], shape, y)
    }

    /// Dense 1-D convolution with "same" zero padding.
    /// `x: [B, T, Cin]` or `[T, Cin]`, `w: [K, Cin, Cout]`, `bias: [Cout]`.
    pub fn conv1d(&self, x: &Tensor<F>, w: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        btc("conv1d", x.shape())?;
        if w.rank() != 3 || w.dim(1) != x.last_dim() {
            return Err(Error::shape("conv1d", x.shape(), w.shape()));
        }
        let (ksize, cin, cout) = (w.dim(0), w.dim(1), w.dim(2));
        let w2 = w.reshape(&[ksize * cin, cout])?;
        if ksize == 1 {
            return self.linear(x, &w2, bias);
        }
        let cols = self.unfold_time(x, ksize)?;
        self.linear(&cols, &w2, bias)
    }

    pub fn layer_norm(&self, x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let ch = x.last_dim();
        if gamma.shape() != [ch] || beta.shape() != [ch] {
            return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        let rows = x.numel() / ch;
        let inv_c = F::one() / F::from_usize(ch).unwrap();
        let eps = lit::<F>(eps);
        let mut xhat = vec![F::zero(); x.numel()];
        let mut rstd = vec![F::zero(); rows];
        for ((xr, hr), rs) in x.data().chunks(ch).zip(xhat.chunks_mut(ch)).zip(rstd.iter_mut()) {
            let mean = xr.iter().copied().sum::<F>() * inv_c;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
            *rs = F::one() / (var + eps).sqrt();
            for (h, &v) in hr.iter_mut().zip(xr) {
                *h = (v - mean) * *rs;
            }
        }
        let (g, b) = (gamma.data(), beta.data());
        let y: Vec<F> = xhat
            .chunks(ch)
            .flat_map(|hr| hr.iter().enumerate().map(|(c, &h)| h * g[c] + b[c]))
            .collect();
        let shape = x.shape().to_vec();
        self.push(
            "layer_norm",
            || Op::LayerNorm {
                xhat,
                rstd,
                gamma: Arc::clone(gamma.data_arc()),
                ch,
            },
            &[x, gamma, beta],
            shape,
            y,
        )
    }

    /// `x * Phi(x)` with the exact Gaussian CDF.
    pub fn gelu(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.data().iter().map(|&v| v * big_phi(v)).collect();
        self.push(
            "gelu",
            || Op::Gelu {
                x: Arc::clone(x.data_arc()),
            },
            &[x],
            x.shape().to_vec(),
            y,
        )
    }

    pub fn relu(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.data().iter().map(|&v| v.max(F::zero())).collect();
        self.push(
            "relu",
            || Op::Relu {
                x: Arc::clone(x.data_arc()),
            },
            &[x],
            x.shape().to_vec(),
            y,
        )
    }

    pub fn exp(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y: Vec<F> = x.data().iter().map(|&v| v.exp()).collect();
        let saved = y.clone();
        self.push("exp", || Op::Exp { y: saved }, &[x], x.shape().to_vec(), y)
    }

    /// Max-shifted log-softmax along `axis`.
    pub fn log_softmax(&self, x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
        if axis >= x.rank() {
            return Err(Error::invalid(
                "log_softmax",
                format!("axis {axis} out of range for shape {:?}", x.shape()),
            ));
        }
        let dims = x.shape();
        let outer: usize = dims[..axis].iter().product();
        let n = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let xd = x.data();
        let mut y = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let m = (0..n).map(|j| xd[at(j)]).fold(F::neg_infinity(), F::max);
                let lse = m + (0..n).map(|j| (xd[at(j)] - m).exp()).sum::<F>().ln();
                for j in 0..n {
                    y[at(j)] = xd[at(j)] - lse;
                }
            }
        }
        let saved = y.clone();
        self.push(
            "log_softmax",
            || Op::LogSoftmax {
                y: saved,
                outer,
                n,
                inner,
            },
            &[x],
            dims.to_vec(),
            y,
        )
    }

    /// Multiplies by a constant (non-differentiable) tensor of equal size.
    pub fn mul_const(&self, x: &Tensor<F>, mask: Arc<Vec<F>>) -> Result<Tensor<F>> {
        if mask.len() != x.numel() {
            return Err(Error::shape("mul_const", x.shape(), &[mask.len()]));
        }
        let y = x.data().iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
        self.push("mul_const", || Op::MulConst { mask }, &[x], x.shape().to_vec(), y)
    }

    /// Inverted dropout. In eval mode (`rng == None`) or with `p == 0` this is
    /// the identity and nothing is recorded.
    pub fn dropout<R: Rng + ?Sized>(&self, x: &Tensor<F>, p: f64, rng: Option<&mut R>) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p must be in [0, 1), got {p}")));
        }
        let Some(rng) = rng else {
            return Ok(x.clone());
        };
        if p == 0.0 {
            return Ok(x.clone());
        }
        let keep = lit::<F>(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        self.mul_const(x, Arc::new(mask))
    }

    /// Zeroes positions `t >= lengths[b]` of a `[B, T, ...]` tensor.
    pub fn apply_sequence_mask(&self, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        if x.rank() < 2 || x.dim(0) != lengths.len() {
            return Err(Error::shape("apply_sequence_mask", x.shape(), &[lengths.len()]));
        }
        let time = x.dim(1);
        if let Some(&bad) = lengths.iter().find(|&&l| l > time) {
            return Err(Error::invalid(
                "apply_sequence_mask",
                format!("length {bad} exceeds time dimension {time}"),
            ));
        }
        if lengths.iter().all(|&l| l == time) {
            return Ok(x.clone());
        }
        let inner = x.numel() / (lengths.len() * time);
        let mut mask = vec![F::zero(); x.numel()];
        for (b, &len) in lengths.iter().enumerate() {
            mask[b * time * inner..(b * time + len) * inner]
                .iter_mut()
                .for_each(|m| *m = F::one());
        }
        self.mul_const(x, Arc::new(mask))
    }

    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        elementwise_pair("add", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        self.push("add", || Op::Add, &[a, b], a.shape().to_vec(), y)
    }

    pub fn sub(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        elementwise_pair("sub", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        self.push("sub", || Op::Sub, &[a, b], a.shape().to_vec(), y)
    }

    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        elementwise_pair("mul", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        self.push(
            "mul",
            || Op::Mul {
                a: Arc::clone(a.data_arc()),
                b: Arc::clone(b.data_arc()),
            },
            &[a, b],
            a.shape().to_vec(),
            y,
        )
    }

    pub fn scale(&self, x: &Tensor<F>, c: F) -> Result<Tensor<F>> {
        let y = x.data().iter().map(|&v| v * c).collect();
        self.push("scale", || Op::Scale { c }, &[x], x.shape().to_vec(), y)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let s = x.data().iter().copied().sum::<F>();
        let n = x.numel();
        self.push("sum", || Op::Sum { n }, &[x], Vec::new(), vec![s])
    }

    /// Builds `[idx.len(), C]` from rows of `x` viewed as `[R, C]`; `None`
    /// entries produce zero rows.
    pub fn gather_rows(&self, x: &Tensor<F>, idx: &[Option<usize>]) -> Result<Tensor<F>> {
        let ch = x.last_dim();
        let rows_in = x.numel() / ch;
        if idx.is_empty() {
            return Err(Error::invalid("gather_rows", "empty index list"));
        }
        if let Some(bad) = idx.iter().flatten().find(|&&r| r >= rows_in) {
            return Err(Error::invalid(
                "gather_rows",
                format!("row {bad} out of range for {rows_in} rows"),
            ));
        }
        let xd = x.data();
        let mut y = Vec::with_capacity(idx.len() * ch);
        for src in idx {
            match src {
                Some(r) => y.extend_from_slice(&xd[r * ch..(r + 1) * ch]),
                None => y.extend(std::iter::repeat_n(F::zero(), ch)),
            }
        }
        let idx = idx.to_vec();
        self.push(
            "gather_rows",
            move || Op::Gather { idx, rows_in, ch },
            &[x],
            vec![y.len() / ch, ch],
            y,
        )
    }

    /// Stacks tensors along the leading axis; trailing dims must agree.
    pub fn concat(&self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no tensors to concatenate"))?;
        if first.rank() == 0 {
            return Err(Error::shape("concat", first.shape(), &[]));
        }
        let tail = &first.shape()[1..];
        if let Some(bad) = parts.iter().find(|p| p.rank() == 0 || &p.shape()[1..] != tail) {
            return Err(Error::shape("concat", first.shape(), bad.shape()));
        }
        let mut shape = first.shape().to_vec();
        shape[0] = parts.iter().map(|p| p.dim(0)).sum();
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let mut y = Vec::with_capacity(sizes.iter().sum());
        for p in parts {
            y.extend_from_slice(p.data());
        }
        self.push("concat", || Op::Concat { sizes }, parts, shape, y)
    }

    /// Mean of `(pred - target)^2` over entries where `weights` is nonzero,
    /// divided by `denom` (so callers control the reduction count).
    pub fn masked_sq_error(
        &self,
        pred: &Tensor<F>,
        target: &Tensor<F>,
        weights: Arc<Vec<F>>,
        denom: f64,
    ) -> Result<Tensor<F>> {
        if !(denom > 0.0) {
            return Err(Error::invalid("masked_sq_error", "denominator must be positive"));
        }
        let diff = self.sub(pred, &target.detach())?;
        let diff = self.mul_const(&diff, weights)?;
        let sq = self.mul(&diff, &diff)?;
        let s = self.sum(&sq)?;
        self.scale(&s, lit(1.0 / denom))
    }
}
