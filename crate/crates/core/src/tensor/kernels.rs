//! Slice-level numeric kernels shared by the eager and taped paths.

use crate::error::{invalid, Result};

/// `out[m x n] = a[m x k] * b[k x n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, (k, 1), b, (n, 1), &mut out, 1.0);
    out
}

/// `out[m x n] = a[m x k] * b[n x k]^T`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, (k, 1), b, (1, k), &mut out, 1.0);
    out
}

/// `out[k x n] += a[m x k]^T * b[m x n]`.
pub(crate) fn matmul_at_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    gemm(k, m, n, a, (1, k), b, (n, 1), out, 1.0);
}

/// `c = a * b + beta * c` for row-major `c` and arbitrary `(row, col)`
/// strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1, "gemm: a too short");
    assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1, "gemm: b too short");
    assert!(c.len() >= m * n, "gemm: c too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax over the last axis of a `rows x cols` buffer.
pub(crate) fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

/// Numerically stable softmax of a single logit vector.
///
/// ```
/// let p = seqcomm::tensor::softmax(&[2f64.ln(), 0.0]).unwrap();
/// assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
/// ```
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(invalid("softmax logits must be finite"));
    }
    Ok(softmax_rows(logits, logits.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[1.0, 1.0, 1.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.5]).unwrap();
        let b = softmax(&[100.3, 98.8, 102.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![-1.0, 7.5, -1.0, 18.0]);
        // b^T is 2x3
        let bt = [1.0, -1.0, 0.0, 0.5, 2.0, 1.0];
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), vec![-1.0, 7.5, -1.0, 18.0]);
        let mut out = vec![0.0; 9];
        matmul_at_acc(&mut out, &a, &a, 2, 3, 3);
        assert_eq!(out[0], 1.0 + 16.0);
    }
}
