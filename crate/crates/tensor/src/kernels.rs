//! Plain loop matrix kernels. All of them accumulate into `out`.
//!
//! Summation order is fixed (ascending inner index), so a product that only
//! differs by interleaved zero terms yields bit-identical results.

use crate::scalar::Scalar;

/// Rows and columns of one register block.
const MR: usize = 4;
const NR: usize = 8;

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    let full_rows = m - m % MR;
    let full_cols = n - n % NR;
    for i in (0..full_rows).step_by(MR) {
        for j in (0..full_cols).step_by(NR) {
            block(i, j, k, n, a, b, out);
        }
        rows_kernel(i..i + MR, full_cols..n, k, n, a, b, out);
    }
    rows_kernel(full_rows..m, 0..n, k, n, a, b, out);
}

/// One `MR x NR` block of the output held in registers across the `k` loop.
#[inline(always)]
fn block<T: Scalar>(i: usize, j: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    let mut acc = [[T::zero(); NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&out[(i + r) * n + j..][..NR]);
    }
    for p in 0..k {
        let bv: &[T] = &b[p * n + j..][..NR];
        for (r, row) in acc.iter_mut().enumerate() {
            let av = a[(i + r) * k + p];
            for (o, &bv) in row.iter_mut().zip(bv) {
                *o += av * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        out[(i + r) * n + j..][..NR].copy_from_slice(row);
    }
}

fn rows_kernel<T: Scalar>(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    if cols.is_empty() {
        return;
    }
    for i in rows {
        let out_row = &mut out[i * n + cols.start..i * n + cols.end];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[p * n + cols.start..p * n + cols.end];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
///
/// `b` is transposed into scratch first so the inner loop runs over
/// contiguous memory; each entry still sums in ascending `k`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_nn(m, k, n, a, &transpose(n, k, b), out);
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_nn(m, k, n, &transpose(k, m, a), b, out);
}

fn transpose<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
