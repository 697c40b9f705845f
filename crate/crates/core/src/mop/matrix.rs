use serde::{Deserialize, Serialize};

use super::MopError;

/// Dense row-major matrix of `f64`. Rows are tokens, columns are features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix2D {
    type Error = MopError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        Matrix2D::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix2D> for RawMatrix {
    fn from(m: Matrix2D) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MopError> {
        if data.len() != rows * cols {
            return Err(MopError::ShapeMismatch {
                what: "matrix data length".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MopError::NonFinite("matrix data".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MopError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(MopError::ShapeMismatch {
                    what: "row length".into(),
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[&Matrix2D]) -> Result<Self, MopError> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(MopError::ShapeMismatch {
                    what: "vstack columns".into(),
                    expected: cols,
                    found: m.cols,
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix2D) -> Result<Self, MopError> {
        if self.cols != other.rows {
            return Err(MopError::ShapeMismatch {
                what: "matmul inner dimension".into(),
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            vec_mat_acc(self.row(r), other, dst);
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `dst += x · w` for a row vector `x`.
pub(crate) fn vec_mat_acc(x: &[f64], w: &Matrix2D, dst: &mut [f64]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(dst.len(), w.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (d, &wij) in dst.iter_mut().zip(w.row(i)) {
            *d += xi * wij;
        }
    }
}

/// `x · w + b` for a row vector `x`.
pub(crate) fn affine(x: &[f64], w: &Matrix2D, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    vec_mat_acc(x, w, &mut out);
    out
}

/// `dst += w · g` (multiplication by the transpose of the forward weight).
pub(crate) fn mat_vec_t_acc(w: &Matrix2D, g: &[f64], dst: &mut [f64]) {
    debug_assert_eq!(g.len(), w.cols);
    for (i, d) in dst.iter_mut().enumerate() {
        *d += w.row(i).iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `w += x^T · g`.
pub(crate) fn outer_acc(w: &mut Matrix2D, x: &[f64], g: &[f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (d, &gj) in w.row_mut(i).iter_mut().zip(g) {
            *d += xi * gj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(matches!(
            Matrix2D::new(2, 2, vec![0.0; 3]),
            Err(MopError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Matrix2D::new(1, 1, vec![f64::NAN]),
            Err(MopError::NonFinite(_))
        ));
    }

    #[test]
    fn matmul_small() {
        let a = Matrix2D::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix2D::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 1.0, 4.0, 3.0]);
        assert!(a.matmul(&Matrix2D::zeros(3, 1)).is_err());
    }

    #[test]
    fn serde_validates_shape() {
        let bad = r#"{"rows":2,"cols":2,"data":[1.0]}"#;
        assert!(serde_json::from_str::<Matrix2D>(bad).is_err());
        let good = Matrix2D::from_fn(2, 3, |r, c| (r * 3 + c) as f64 * 0.1);
        let s = serde_json::to_string(&good).unwrap();
        assert_eq!(serde_json::from_str::<Matrix2D>(&s).unwrap(), good);
    }
}
