//! Numeric inner loops shared by the forward and backward passes.
//!
//! Every kernel has a `_seq` variant and a dispatching variant that uses
//! rayon when the `parallel` feature is enabled and the work is large
//! enough to pay for the fork. Parallelism is always over independent
//! output rows; each output element is reduced sequentially in a fixed
//! index order, so the parallel and sequential variants produce
//! bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum multiply-add count before a compute-bound kernel forks.
/// Below this the fork overhead exceeds the work (measured on few-core
/// machines; batch-level parallelism carries the small sizes instead).
pub const PAR_WORK_THRESHOLD: usize = 1 << 19;

/// Fork threshold for bandwidth-bound kernels (one write per element,
/// no reduction): these only pay off for very large outputs.
pub const PAR_BANDWIDTH_THRESHOLD: usize = 1 << 22;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// a: [m,k] row-major, b: [k,n] row-major -> [m,n].
pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        matmul_row(a, b, k, n, i, &mut out[i * n..(i + 1) * n]);
    }
    out
}

#[inline]
fn matmul_row(a: &[f64], b: &[f64], k: usize, n: usize, i: usize, out_row: &mut [f64]) {
    for j in 0..n {
        let mut acc = 0.0;
        for l in 0..k {
            acc += a[i * k + l] * b[l * n + j];
        }
        out_row[j] = acc;
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_WORK_THRESHOLD && m > 1 {
        let mut out = vec![0.0; m * n];
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_row(a, b, k, n, i, row));
        return out;
    }
    matmul_seq(a, b, m, k, n)
}

/// a: [m,k], b: [n,k] -> a @ b^T, [m,n].
pub fn matmul_nt_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
        }
    }
    out
}

pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_WORK_THRESHOLD && m > 1 {
        let mut out = vec![0.0; m * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for j in 0..n {
                row[j] = dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
            }
        });
        return out;
    }
    matmul_nt_seq(a, b, m, k, n)
}

/// a: [m,k], b: [m,n] -> a^T @ b, [k,n]. Inner reduction runs over rows of
/// `a`/`b` in index order for both variants.
pub fn matmul_tn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..k {
        matmul_tn_row(a, b, m, k, n, i, &mut out[i * n..(i + 1) * n]);
    }
    out
}

#[inline]
fn matmul_tn_row(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, i: usize, row: &mut [f64]) {
    for j in 0..n {
        let mut acc = 0.0;
        for l in 0..m {
            acc += a[l * k + i] * b[l * n + j];
        }
        row[j] = acc;
    }
}

pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_WORK_THRESHOLD && k > 1 {
        let mut out = vec![0.0; k * n];
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_tn_row(a, b, m, k, n, i, row));
        return out;
    }
    matmul_tn_seq(a, b, m, k, n)
}

/// a: [m,n], x: [n] -> [m].
pub fn matvec_seq(a: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..m).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
}

pub fn matvec(a: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_WORK_THRESHOLD && m > 1 {
        return (0..m)
            .into_par_iter()
            .map(|i| dot(&a[i * n..(i + 1) * n], x))
            .collect();
    }
    matvec_seq(a, x, m, n)
}

/// a: [m,n], y: [m] -> a^T y, [n].
pub fn matvec_t_seq(a: &[f64], y: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..m {
                acc += a[i * n + j] * y[i];
            }
            acc
        })
        .collect()
}

pub fn matvec_t(a: &[f64], y: &[f64], m: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_WORK_THRESHOLD && n > 1 {
        return (0..n)
            .into_par_iter()
            .map(|j| {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += a[i * n + j] * y[i];
                }
                acc
            })
            .collect();
    }
    matvec_t_seq(a, y, m, n)
}

/// y: [m], x: [n] -> outer product, [m,n].
pub fn outer(y: &[f64], x: &[f64]) -> Vec<f64> {
    let (m, n) = (y.len(), x.len());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = y[i] * x[j];
        }
    }
    out
}

/// x: [n] -> d[i][j] = x[i] - x[j], [n,n].
pub fn outer_diff_seq(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = x[i] - x[j];
        }
    }
    out
}

pub fn outer_diff(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    #[cfg(feature = "parallel")]
    if n * n >= PAR_BANDWIDTH_THRESHOLD && n > 1 {
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for j in 0..n {
                row[j] = x[i] - x[j];
            }
        });
        return out;
    }
    outer_diff_seq(x)
}

/// Row sums of a [m,n] matrix -> [m].
pub fn row_sums(g: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g[i * n + j];
            }
            acc
        })
        .collect()
}

/// Column sums of a [m,n] matrix -> [n].
pub fn col_sums(g: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            out[j] += g[i * n + j];
        }
    }
    out
}
