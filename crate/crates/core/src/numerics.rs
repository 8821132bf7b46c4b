//! Dense row-major linear algebra and the two transfer functions used by the
//! Elman network. Network sizes are tiny (tens of nodes), so everything is a
//! plain `Vec<f64>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: 1,
                got: 0,
            });
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self · v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "mat_vec",
                expected: self.cols,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        self.mat_vec_acc(v, &mut out);
        Ok(out)
    }

    /// `out += self · v`, dimensions already checked by the caller.
    #[inline]
    pub(crate) fn mat_vec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · v`, dimensions already checked by the caller.
    #[inline]
    pub(crate) fn tr_mat_vec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
    }

    /// `self[i][j] += scale · left[i] · right[j]`.
    pub fn outer_update(&mut self, scale: f64, left: &[f64], right: &[f64]) -> Result<()> {
        if left.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "outer_update (rows)",
                expected: self.rows,
                got: left.len(),
            });
        }
        if right.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "outer_update (cols)",
                expected: self.cols,
                got: right.len(),
            });
        }
        self.outer_update_unchecked(scale, left, right);
        Ok(())
    }

    #[inline]
    pub(crate) fn outer_update_unchecked(&mut self, scale: f64, left: &[f64], right: &[f64]) {
        for (&l, row) in left.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            let s = scale * l;
            if s == 0.0 {
                continue;
            }
            for (w, r) in row.iter_mut().zip(right) {
                *w += s * r;
            }
        }
    }
}

/// Tangent sigmoid, applied elementwise.
pub fn tanh_sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// Derivative of the tangent sigmoid, evaluated from its output `a = tanh(x)`.
pub fn tanh_sigmoid_deriv(activation: &[f64]) -> Vec<f64> {
    activation.iter().map(|a| 1.0 - a * a).collect()
}

pub fn linear_transfer(v: &[f64]) -> Vec<f64> {
    v.to_vec()
}

pub fn linear_deriv(v: &[f64]) -> Vec<f64> {
    vec![1.0; v.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mat_vec_identity_and_zero() {
        let id = Matrix::identity(3);
        assert_eq!(id.mat_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let z = Matrix::zeros(2, 3);
        assert_eq!(z.mat_vec(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mat_vec_small() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mat_vec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn mat_vec_rejects_bad_length() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            m.mat_vec(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_sigmoid(&[0.0]), vec![0.0]);
        assert_eq!(tanh_sigmoid_deriv(&[0.0]), vec![1.0]);
        assert!((tanh_sigmoid(&[20.0])[0] - 1.0).abs() < 1e-9);
        // Taylor series of tanh via (e^{2x}-1)/(e^{2x}+1) with e^{2} summed
        // term by term.
        let mut e2 = 0.0;
        let mut term = 1.0;
        for k in 0..40 {
            e2 += term;
            term *= 2.0 / (k as f64 + 1.0);
        }
        let oracle = (e2 - 1.0) / (e2 + 1.0);
        assert!((tanh_sigmoid(&[1.0])[0] - oracle).abs() < 1e-15);
        assert!((oracle - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn linear_values() {
        assert_eq!(linear_transfer(&[3.5, -2.0]), vec![3.5, -2.0]);
        assert_eq!(linear_deriv(&[9.0, -1.0, 0.0, 2.0]), vec![1.0; 4]);
        assert_eq!(linear_transfer(&tanh_sigmoid(&[0.0])), vec![0.0]);
    }

    #[test]
    fn outer_update_cases() {
        let mut m = Matrix::from_vec(1, 2, vec![1.5, -2.0]).unwrap();
        let before = m.clone();
        m.outer_update(0.0, &[3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(m, before);

        let mut z = Matrix::zeros(1, 1);
        z.outer_update(2.0, &[3.0], &[4.0]).unwrap();
        assert_eq!(z.get(0, 0), 24.0);

        assert!(z.outer_update(1.0, &[1.0, 2.0], &[1.0]).is_err());
        assert!(z.outer_update(1.0, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn outer_update_matches_loop() {
        let base: Vec<f64> = (0..6).map(|k| (k as f64 * 0.37).sin()).collect();
        let left = [0.3, -1.2, 2.5];
        let right = [-0.7, 0.11];
        let scale = 0.173;
        let mut m = Matrix::from_vec(3, 2, base.clone()).unwrap();
        m.outer_update(scale, &left, &right).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expected = base[i * 2 + j] + scale * left[i] * right[j];
                assert!((m.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn mat_vec_is_linear(
            m in arb_vec(12), u in arb_vec(4), v in arb_vec(4),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let m = Matrix::from_vec(3, 4, m).unwrap();
            let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.mat_vec(&comb).unwrap();
            let mu = m.mat_vec(&u).unwrap();
            let mv = m.mat_vec(&v).unwrap();
            for i in 0..3 {
                let rhs = a * mu[i] + b * mv[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn tanh_bounds(x in -50.0f64..50.0) {
            let a = tanh_sigmoid(&[x])[0];
            let d = tanh_sigmoid_deriv(&[a])[0];
            if x.abs() < 18.0 {
                prop_assert!(a > -1.0 && a < 1.0);
                prop_assert!(d > 0.0);
            }
            prop_assert!(d <= 1.0);
        }

        #[test]
        fn outer_update_reverts(
            m in arb_vec(6), l in arb_vec(2), r in arb_vec(3), s in -2.0f64..2.0,
        ) {
            let orig = Matrix::from_vec(2, 3, m).unwrap();
            let mut w = orig.clone();
            w.outer_update(s, &l, &r).unwrap();
            w.outer_update(-s, &l, &r).unwrap();
            for (a, b) in w.as_slice().iter().zip(orig.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
