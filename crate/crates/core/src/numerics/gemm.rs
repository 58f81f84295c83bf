//! Strided matrix products on top of `matrixmultiply`, split across row
//! blocks of the output.

use super::par;
use super::scalar::Float;

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> MatRef<'a, F> {
    pub fn row_major(data: &'a [F], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

const MIN_TASK_FLOPS: usize = 1 << 18;

/// `out (m x n, row-major) (+)= a * b`.
pub(crate) fn matmul_into<F: Float>(a: MatRef<'_, F>, b: MatRef<'_, F>, out: &mut [F], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions");
    assert_eq!(out.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let beta = if accumulate { F::one() } else { F::zero() };
    let rows_per = par::rows_per_task(m, k * n, MIN_TASK_FLOPS);
    // Each task owns a disjoint block of output rows; the product for a row
    // does not depend on how rows are grouped.
    let a_addr = a.data.as_ptr() as usize;
    let b_addr = b.data.as_ptr() as usize;
    par::for_each_chunk_mut(out, rows_per * n, |chunk_idx, block| {
        let r0 = chunk_idx * rows_per;
        let rows = block.len() / n;
        unsafe {
            let a_ptr = (a_addr as *const F).add(r0 * a.rs);
            F::gemm(
                rows,
                k,
                n,
                F::one(),
                a_ptr,
                a.rs as isize,
                a.cs as isize,
                b_addr as *const F,
                b.rs as isize,
                b.cs as isize,
                beta,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

pub(crate) fn matmul<F: Float>(a: MatRef<'_, F>, b: MatRef<'_, F>) -> Vec<F> {
    let mut out = vec![F::zero(); a.rows * b.cols];
    matmul_into(a, b, &mut out, false);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_including_transposed_views() {
        let (m, k, n) = (37, 11, 5);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 % 11) as f64) * 0.5).collect();
        let want = naive(&a, &b, m, k, n);
        let got = matmul(MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n));
        assert_eq!(got, want);

        // (b^T)^T through a transposed view
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let got_t = matmul(MatRef::row_major(&a, m, k), MatRef::row_major(&bt, n, k).t());
        assert_eq!(got_t, want);
    }
}
