//! Strided matrix views over flat buffers and a bounds-checked GEMM.

use super::Scalar;

/// A matrix laid out inside a flat slice: element `(r, c)` lives at
/// `off + r * rs + c * cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major matrix.
    pub fn rm(off: usize, rows: usize, cols: usize) -> Self {
        View {
            off,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Row-major rows of `cols` entries spaced `rs` apart.
    pub fn strided(off: usize, rows: usize, cols: usize, rs: usize) -> Self {
        View {
            off,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            off: self.off,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.off
        } else {
            self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a * b + beta * c`. With `beta == 0` the previous content of
/// `c` is ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(alpha: T, a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T], cv: View) {
    assert_eq!(av.cols, bv.rows, "inner dimensions differ");
    assert_eq!(cv.rows, av.rows, "output rows differ");
    assert_eq!(cv.cols, bv.cols, "output cols differ");
    assert!(av.end() <= a.len() && bv.end() <= b.len() && cv.end() <= c.len(), "view out of bounds");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for r in 0..cv.rows {
            for k in 0..cv.cols {
                let i = cv.off + r * cv.rs + k * cv.cs;
                c[i] = if beta == T::zero() { T::zero() } else { c[i] * beta };
            }
        }
        return;
    }
    // SAFETY: every view was checked to lie inside its slice, and `c` is a
    // unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
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

    #[test]
    fn matches_naive_product_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm(1.0, &a, View::rm(0, m, k), &b, View::rm(0, k, n), 0.0, &mut c, View::rm(0, m, n));
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        // c^T = b^T a^T
        let mut ct = vec![0.0; n * m];
        gemm(1.0, &b, View::rm(0, k, n).t(), &a, View::rm(0, m, k).t(), 0.0, &mut ct, View::rm(0, n, m));
        for i in 0..m {
            for j in 0..n {
                assert!((ct[j * m + i] - want[i * n + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn rejects_out_of_bounds_views() {
        let a = vec![0.0f32; 4];
        let mut c = vec![0.0f32; 4];
        gemm(1.0, &a, View::rm(1, 2, 2), &a, View::rm(0, 2, 2), 0.0, &mut c, View::rm(0, 2, 2));
    }
}
