use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const DTYPE: &'static str;

    /// Raw GEMM: `C <- alpha A B + beta C` with arbitrary element strides.
    ///
    /// # Safety
    /// Every element addressed through the strides must be in bounds.
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

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` view with contiguous rows of length `ld`.
    pub fn rows(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        MatRef { data, rows, cols, rs: ld, cs: 1 }
    }

    /// The transpose of a row-major `cols x rows` block with leading dimension `ld`.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        MatRef { data, rows, cols, rs: 1, cs: ld }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `C <- alpha A B + beta C`, `C` row-major with leading dimension `ldc`.
pub(crate) fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T], ldc: usize) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "inner dimensions differ");
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * ldc + n <= c.len(), "output view out of bounds");
    if k > 0 {
        assert!(a.max_index() < a.data.len() && b.max_index() < b.data.len(), "input view out of bounds");
    }
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        )
    }
}

/// Dense `(batch, channels, height, width)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Concatenates along channels, sample by sample.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial shapes");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..a.n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Tensor::from_vec(a.n, a.c + b.c, a.h, a.w, data)
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `c_first` channels, then the rest.
    pub fn split_channels(&self, c_first: usize) -> (Tensor<T>, Tensor<T>) {
        let p = self.plane();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..self.n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..c_first * p]);
            b.extend_from_slice(&s[c_first * p..]);
        }
        (
            Tensor::from_vec(self.n, c_first, self.h, self.w, a),
            Tensor::from_vec(self.n, self.c - c_first, self.h, self.w, b),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| f64::from(v) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(1.0, MatRef::rows(&a, 2, 3, 3), MatRef::rows(&b, 3, 4, 4), 0.0, &mut c, 4);
        for i in 0..2 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], naive);
            }
        }
        // a read as 2x3 then transposed, b read as 4x3 then transposed
        let mut d = vec![0.0; 12];
        gemm(1.0, MatRef::transposed(&a, 3, 2, 3), MatRef::transposed(&b, 2, 4, 3), 0.0, &mut d, 4);
        for i in 0..3 {
            for j in 0..4 {
                let naive: f64 = (0..2).map(|p| a[p * 3 + i] * b[j * 3 + p]).sum();
                assert_eq!(d[i * 4 + j], naive);
            }
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec(2, 1, 2, 2, (0..8).map(f64::from).collect());
        let b = Tensor::from_vec(2, 2, 2, 2, (100..116).map(f64::from).collect());
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape(), [2, 3, 2, 2]);
        assert_eq!(c.at(1, 0, 0, 0), 4.0);
        assert_eq!(c.at(1, 1, 0, 0), 108.0);
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
