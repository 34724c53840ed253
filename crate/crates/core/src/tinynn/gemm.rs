//! Safe wrapper over `matrixmultiply::sgemm`.

/// Strided row-major view description: element `(i, j)` lives at
/// `i * row_stride + j * col_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    pub const fn row_major(cols: usize) -> Self {
        Layout {
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub const fn transposed(cols: usize) -> Self {
        Layout {
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
    lc: Layout,
) {
    assert!(la.extent(m, k) <= a.len(), "gemm: lhs out of bounds");
    assert!(lb.extent(k, n) <= b.len(), "gemm: rhs out of bounds");
    assert!(lc.extent(m, n) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every addressed element inside the
    // slices, and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let a: [f32; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b: [f32; 6] = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0]; // 3x2
        let mut c = [1.0f32; 4];
        gemm(
            2,
            3,
            2,
            &a,
            Layout::row_major(3),
            &b,
            Layout::row_major(2),
            0.0,
            &mut c,
            Layout::row_major(2),
        );
        assert_eq!(c, [2.0, 6.0, 6.5, 12.0]);
        // a^T (3x2) times a (2x3) read through transposed layouts
        let mut g = [0.0f32; 9];
        gemm(
            3,
            2,
            3,
            &a,
            Layout::transposed(3),
            &a,
            Layout::row_major(3),
            0.0,
            &mut g,
            Layout::row_major(3),
        );
        assert_eq!(g, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
