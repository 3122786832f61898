//! Dense NHWC activation tensors and a GEMM wrapper.

/// Batch of activations in NHWC layout. Feature vectors and logits use
/// `h = w = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    /// `n x d` matrix.
    pub fn matrix(n: usize, d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * d, "matrix data length");
        Self {
            n,
            h: 1,
            w: 1,
            c: d,
            data,
        }
    }

    pub fn from_data(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "tensor data length");
        Self { n, h, w, c, data }
    }

    /// Elements per sample.
    #[inline]
    pub fn row_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.row_len();
        &self.data[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.row_len();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.n, self.h, self.w, self.c) == (other.n, other.h, other.w, other.c)
    }

    /// Rows `[start, end)` as a new tensor.
    pub fn rows(&self, start: usize, end: usize) -> Tensor {
        let d = self.row_len();
        Tensor {
            n: end - start,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data[start * d..end * d].to_vec(),
        }
    }

    /// Stack tensors of equal per-sample shape along the batch axis.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let first = parts.first().expect("concat of nothing");
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!((p.h, p.w, p.c), (first.h, first.w, first.c), "concat shape");
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Tensor {
            n,
            h: first.h,
            w: first.w,
            c: first.c,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = op(a) * op(b) + beta * c` on row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. `ta`/`tb` say the stored buffer holds the
/// transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the checked buffers.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
