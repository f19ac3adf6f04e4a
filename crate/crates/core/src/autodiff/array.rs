//! Dense row-major 2-D arrays of f64.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major matrix. Scalars are 1x1, row vectors 1xD, columns Nx1.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "array data length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
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

    /// The single entry of a 1x1 array.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::InvalidInput(format!(
                "expected a scalar array, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rows of `self` at `indices`, in order (duplicates allowed).
    pub fn select_rows(&self, indices: &[u32]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            let i = i as usize;
            if i >= self.rows {
                return Err(Error::InvalidInput(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Array) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// C = A · B. Rows of the output are computed independently (and in parallel),
/// each with a fixed serial accumulation order, so results are bit-identical
/// to a serial run.
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Array::zeros(n, m);
    out.data
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a.data[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = &b.data[kk * m..(kk + 1) * m];
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
        });
    Ok(out)
}

/// C = A · Bᵀ with A: n x k, B: m x k.
pub fn matmul_nt(a: &Array, b: &Array) -> Result<Array> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = Array::zeros(n, m);
    out.data
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (x, y) in a_row.iter().zip(b_row) {
                    acc += x * y;
                }
                *o = acc;
            }
        });
    Ok(out)
}

/// C = Aᵀ · B with A: k x n, B: k x m.
pub fn matmul_tn(a: &Array, b: &Array) -> Result<Array> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = Array::zeros(n, m);
    // Serial over k keeps a fixed accumulation order per output entry.
    for kk in 0..k {
        let a_row = &a.data[kk * n..(kk + 1) * n];
        let b_row = &b.data[kk * m..(kk + 1) * m];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Array::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Array::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Array::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.5 - 1.0);
        let b = Array::from_fn(5, 3, |r, c| (r as f64 - c as f64) * 0.25);
        let nt = matmul_nt(&a, &b).unwrap();
        // Reference: build Bᵀ explicitly.
        let bt = Array::from_fn(3, 5, |r, c| b.get(c, r));
        let direct = matmul(&a, &bt).unwrap();
        for (x, y) in nt.as_slice().iter().zip(direct.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }

        let tn = matmul_tn(&a, &a).unwrap();
        let at = Array::from_fn(3, 4, |r, c| a.get(c, r));
        let direct2 = matmul(&at, &a).unwrap();
        for (x, y) in tn.as_slice().iter().zip(direct2.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let a = Array::zeros(2, 3);
        let b = Array::zeros(2, 2);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 2)"), "{msg}");
    }
}
