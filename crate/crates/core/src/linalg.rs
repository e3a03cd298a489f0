//! Scalar abstraction and the dense kernels the model is built from.
//!
//! Everything is row-major. Matrix products go through `matrixmultiply`;
//! the rest are plain loops.

use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of a model. Training and checkpoints use `f32`;
/// `f64` exists so gradients can be checked against finite differences.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a·b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing views of the
    /// stated shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[inline]
fn beta<S: Scalar>(accumulate: bool) -> S {
    if accumulate {
        S::one()
    } else {
        S::zero()
    }
}

/// `c[m,n] (+)= a[m,k] · b[k,n]`
pub fn matmul<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[m,n] (+)= a[m,k] · b[n,k]ᵀ`
pub fn matmul_bt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[m,n] (+)= a[k,m]ᵀ · b[k,n]`
pub fn matmul_at<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let sum = xs.iter().fold(S::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// In-place log-softmax over each row of length `cols`.
pub fn log_softmax_rows<S: Scalar>(data: &mut [S], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let lse = log_sum_exp(row);
        for x in row.iter_mut() {
            *x = *x - lse;
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn strided_products_match_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        let mut c_bt = vec![0.0; m * n];
        matmul_bt(&a, &transpose(&b, k, n), &mut c_bt, m, k, n, false);
        let mut c_at = vec![1.0; m * n];
        matmul_at(&transpose(&a, m, k), &b, &mut c_at, m, k, n, true);
        for i in 0..m * n {
            assert!((c[i] - want[i]).abs() < 1e-12);
            assert!((c_bt[i] - want[i]).abs() < 1e-12);
            assert!((c_at[i] - want[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut x = vec![1000.0f32, 0.0, -3.0, 2.0, 2.0, 2.0];
        log_softmax_rows(&mut x, 3);
        for row in x.chunks(3) {
            assert!(log_sum_exp(row).abs() < 1e-6);
        }
    }
}
