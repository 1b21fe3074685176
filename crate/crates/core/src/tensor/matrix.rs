use std::fmt;

use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    lhs: (i, row.len()),
                    rhs: (0, cols),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero; a zero-column matrix has no data to iterate anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(&mut out, self, false, other, false, T::one(), T::zero())?;
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(&mut out, self, true, other, false, T::one(), T::zero())?;
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(&mut out, self, false, other, true, T::one(), T::zero())?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_vector(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                op: "add_row_vector",
                lhs: self.shape(),
                rhs: (1, v.len()),
            });
        }
        let cols = self.cols;
        for row in self.data.chunks_exact_mut(cols.max(1)) {
            for (a, b) in row.iter_mut().zip(v) {
                *a = *a + *b;
            }
        }
        Ok(())
    }

    /// Sum over rows, giving one value per column.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o = *o + *v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max))
    }

    /// Copies `len` rows starting at `start`; rows past the end are zero.
    pub fn rows_padded(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(len, self.cols);
        let avail = self.rows.saturating_sub(start).min(len);
        if avail > 0 {
            let src = &self.data[start * self.cols..(start + avail) * self.cols];
            out.data[..avail * self.cols].copy_from_slice(src);
        }
        out
    }

    /// Stacks matrices vertically. All parts must share `cols`.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::Dimension {
                    op: "vstack",
                    lhs: (rows, cols),
                    rhs: m.shape(),
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Splits rows into consecutive blocks of the given heights.
    pub fn split_rows(&self, heights: &[usize]) -> Result<Vec<Self>> {
        let total: usize = heights.iter().sum();
        if total != self.rows {
            return Err(Error::Dimension {
                op: "split_rows",
                lhs: self.shape(),
                rhs: (total, self.cols),
            });
        }
        let mut out = Vec::with_capacity(heights.len());
        let mut start = 0;
        for &h in heights {
            out.push(Self {
                rows: h,
                cols: self.cols,
                data: self.data[start * self.cols..(start + h) * self.cols].to_vec(),
            });
            start += h;
        }
        Ok(out)
    }

    fn check_same(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }
}

/// General product `c = alpha · op(a) · op(b) + beta · c`, where `op` optionally transposes.
pub fn gemm<T: Scalar>(
    c: &mut Matrix<T>,
    a: &Matrix<T>,
    trans_a: bool,
    b: &Matrix<T>,
    trans_b: bool,
    alpha: T,
    beta: T,
) -> Result<()> {
    let (m, k) = if trans_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if trans_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if k != kb {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: (m, k),
            rhs: (kb, n),
        });
    }
    if c.shape() != (m, n) {
        return Err(Error::Dimension {
            op: "matmul output",
            lhs: c.shape(),
            rhs: (m, n),
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.scale(beta);
        return Ok(());
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: shapes were checked above and every pointer addresses a live,
    // correctly sized buffer; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let mut rng = RngState::new(3);
        let x: Matrix<f32> = rng.normal_matrix(3, 5, 1.0);
        let y = Matrix::identity(3).matmul(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_product() {
        let a = Matrix::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::<f32>::zeros(2, 1);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::zeros(2, 1));
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut rng = RngState::new(11);
        let a: Matrix<f32> = rng.normal_matrix(5, 7, 1.0);
        let b: Matrix<f32> = rng.normal_matrix(7, 3, 1.0);
        let fast = a.matmul(&b).unwrap();
        let slow = naive(&a.cast(), &b.cast());
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((*x as f64 - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let mut rng = RngState::new(5);
        let a: Matrix<f64> = rng.normal_matrix(4, 6, 1.0);
        let b: Matrix<f64> = rng.normal_matrix(4, 3, 1.0);
        let c: Matrix<f64> = rng.normal_matrix(5, 6, 1.0);
        let tn = a.t_matmul(&b).unwrap();
        assert!(tn.max_abs_diff(&naive(&a.transpose(), &b)).unwrap() < 1e-12);
        let nt = a.matmul_t(&c).unwrap();
        assert!(nt.max_abs_diff(&naive(&a, &c.transpose())).unwrap() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn padded_rows_zero_fill_past_end() {
        let m = Matrix::<f32>::from_fn(4, 2, |r, c| (r * 2 + c) as f32 + 1.0);
        let p = m.rows_padded(3, 3);
        assert_eq!(p.row(0), &[7.0, 8.0]);
        assert_eq!(p.row(1), &[0.0, 0.0]);
        assert_eq!(p.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn vstack_then_split_is_identity() {
        let a = Matrix::<f32>::filled(2, 3, 1.0);
        let b = Matrix::<f32>::filled(1, 3, 2.0);
        let s = Matrix::vstack(&[&a, &b]).unwrap();
        let parts = s.split_rows(&[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
