//! Dense matrix kernels backing the convolution and fully-connected layers.
//!
//! Two variants cover every product the engine needs once operands are
//! transposed up front where that is cheaper:
//! - `matmul_nn_acc`: C += A·B, blocked over the shared dimension so the B
//!   panel stays cache resident; rows of A are processed in pairs.
//! - `matmul_nt_acc`: C += A·Bᵀ, blocked over columns of C.
//!
//! Accumulation order is fixed, so results are bit-reproducible run to run.

use alloc::vec::Vec;

use crate::tensor::Element;

/// Shared-dimension block: keeps a `KC x n` panel of B hot in cache.
const KC: usize = 256;
/// Column block for the A·Bᵀ kernel.
const JB: usize = 64;

/// C[m,n] += A[m,k] · B[k,n]
pub(crate) fn matmul_nn_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let mut p0 = 0;
    while p0 < k {
        let pend = (p0 + KC).min(k);
        let mut i = 0;
        // Row pairs share each streamed B row.
        while i + 2 <= m {
            let (head, tail) = c[i * n..].split_at_mut(n);
            let row0 = head;
            let row1 = &mut tail[..n];
            let a0 = &a[i * k..(i + 1) * k];
            let a1 = &a[(i + 1) * k..(i + 2) * k];
            for p in p0..pend {
                let b_row = &b[p * n..p * n + n];
                let x0 = a0[p];
                let x1 = a1[p];
                for ((c0, c1), &bv) in row0.iter_mut().zip(row1.iter_mut()).zip(b_row) {
                    *c0 = *c0 + x0 * bv;
                    *c1 = *c1 + x1 * bv;
                }
            }
            i += 2;
        }
        if i < m {
            let row = &mut c[i * n..i * n + n];
            let a_row = &a[i * k..(i + 1) * k];
            for p in p0..pend {
                let b_row = &b[p * n..p * n + n];
                let x = a_row[p];
                for (cv, &bv) in row.iter_mut().zip(b_row) {
                    *cv = *cv + x * bv;
                }
            }
        }
        p0 = pend;
    }
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ
pub(crate) fn matmul_nt_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let mut j0 = 0;
    while j0 < n {
        let jend = (j0 + JB).min(n);
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let c_row = &mut c[i * n + j0..i * n + jend];
            for (jj, cv) in c_row.iter_mut().enumerate() {
                let b_row = &b[(j0 + jj) * k..(j0 + jj + 1) * k];
                *cv = *cv + dot(a_row, b_row);
            }
        }
        j0 = jend;
    }
}

/// Eight parallel accumulators so the reduction vectorizes; the lane fold
/// order is fixed, keeping results deterministic.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut s = T::zero();
    for lane in acc {
        s = s + lane;
    }
    for (&x, &y) in rem_a.iter().zip(rem_b) {
        s = s + x * y;
    }
    s
}

/// Row-major transpose of an `rows x cols` buffer.
pub(crate) fn transpose<T: Element>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = alloc::vec![T::zero(); src.len()];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (cix, &v) in row.iter().enumerate() {
            out[cix * rows + r] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn rand_buf(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn nn_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, k, n) in &[(1, 1, 1), (3, 7, 5), (4, 300, 36), (5, 513, 2), (2, 8, 64)] {
            let a = rand_buf(&mut rng, m * k);
            let b = rand_buf(&mut rng, k * n);
            let mut c = vec![0.0; m * n];
            matmul_nn_acc(&a, &b, &mut c, m, k, n);
            let want = naive_nn(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn nt_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(m, k, n) in &[(1, 1, 1), (3, 9, 5), (6, 36, 130), (2, 17, 70)] {
            let a = rand_buf(&mut rng, m * k);
            let bt = rand_buf(&mut rng, n * k);
            // B with B[p][j] = bt[j*k+p]
            let mut b = vec![0.0; k * n];
            for j in 0..n {
                for p in 0..k {
                    b[p * n + j] = bt[j * k + p];
                }
            }
            let mut c = vec![0.0; m * n];
            matmul_nt_acc(&a, &bt, &mut c, m, k, n);
            let want = naive_nn(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = transpose(&src, 3, 4);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 4.0);
        let back = transpose(&t, 4, 3);
        assert_eq!(back, src);
    }

    #[test]
    fn accumulates_into_existing() {
        let a = [1.0f64, 2.0];
        let b = [3.0f64, 4.0];
        let mut c = [10.0f64];
        matmul_nn_acc(&a, &b, &mut c, 1, 2, 1);
        assert_eq!(c[0], 10.0 + 11.0);
    }
}
