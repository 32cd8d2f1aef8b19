//! Slice-level matrix products. Loop orders are fixed, so results are
//! bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// out (m×n) += a (m×k) · b (k×n)
///
/// Blocks of `MR × NR` outputs are accumulated in registers over the whole
/// inner dimension and then added to `out`.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let (mb, nb) = (m - m % MR, n - n % NR);
    for i in (0..mb).step_by(MR) {
        for j in (0..nb).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for p in 0..k {
                let brow: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().expect("NR wide");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for c in 0..NR {
                        row[c] = row[c] + av * brow[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let o = &mut out[(i + r) * n + j..(i + r) * n + j + NR];
                for c in 0..NR {
                    o[c] = o[c] + row[c];
                }
            }
        }
    }
    // ragged edges: right columns of the blocked rows, then the last rows
    if nb < n {
        matmul_edge(a, b, out, 0..mb, nb, k, n);
    }
    if mb < m {
        matmul_edge(a, b, out, mb..m, 0, k, n);
    }
}

fn matmul_edge<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    rows: core::ops::Range<usize>,
    col0: usize,
    k: usize,
    n: usize,
) {
    for i in rows {
        let orow = &mut out[i * n + col0..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n + col0..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transposed<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Dot product with eight fixed partial sums, so the reduction order is the
/// same on every run and the loop vectorizes.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// out (m×n) += a (m×k) · bᵀ where b is (n×k)
pub fn matmul_nt_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    matmul_into(a, &transposed(b, n, k), out, m, k, n);
}

/// out (m×n) += aᵀ · b where a is (k×m) and b is (k×n)
pub fn matmul_tn_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    matmul_into(&transposed(a, k, m), b, out, m, k, n);
}
