//! Thin wrapper over `matrixmultiply` for row/column-strided GEMM on `Real`.

use crate::tensor::Real;

/// Strides of a matrix operand, in elements: `(row_stride, col_stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout(pub isize, pub isize);

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout(cols as isize, 1)
    }

    /// Transposed view of a row-major `rows × cols` buffer.
    pub fn transposed(cols_of_stored: usize) -> Self {
        Layout(1, cols_of_stored as isize)
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta · c`, `c` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    la: Layout,
    b: &[Real],
    lb: Layout,
    c: &mut [Real],
    beta: Real,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    debug_assert!(k == 0 || max_index(m, k, la) < a.len());
    debug_assert!(k == 0 || max_index(k, n, lb) < b.len());
    // SAFETY: extents were checked against the slice lengths above (debug) and every
    // caller derives strides from the same dimensions it allocated with.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), la.0, la.1, b.as_ptr(), lb.0, lb.1, beta, c.as_mut_ptr(),
            n as isize, 1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), la.0, la.1, b.as_ptr(), lb.0, lb.1, beta, c.as_mut_ptr(),
            n as isize, 1,
        );
    }
}

fn max_index(rows: usize, cols: usize, l: Layout) -> usize {
    (rows - 1) * l.0 as usize + (cols - 1) * l.1 as usize
}
