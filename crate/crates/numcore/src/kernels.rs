//! Dense kernels shared by the tape operations.
//!
//! Every reduction runs in a fixed order so results are bit-reproducible.

/// Dot product with four interleaved accumulators, combined as `(a0 + a1) + (a2 + a3)`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c = a · b` for row/column strides as in `matrixmultiply::dgemm`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    assert!(a.len() >= m * k && b.len() >= k * n, "gemm operands too short");
    // SAFETY: the strides describe row-major or transposed views that stay
    // inside `a` (m·k values), `b` (k·n values) and `out` (m·n values).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    gemm(m, k, n, a, k as isize, 1, b, n as isize, 1)
}

/// `a (m×n) · bᵀ` where `b` is `k×n`; result is `m×k`.
pub fn matmul_bt(a: &[f64], m: usize, n: usize, b: &[f64], k: usize) -> Vec<f64> {
    gemm(m, n, k, a, n as isize, 1, b, 1, n as isize)
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`; result is `k×n`.
pub fn matmul_at(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    gemm(k, m, n, a, 1, k as isize, b, n as isize, 1)
}
