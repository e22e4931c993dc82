use crate::error::{Error, Result};

use super::Tensor;

/// Square tridiagonal matrix stored by bands.
///
/// `lower[i]` is entry `(i + 1, i)`, `diag[i]` is `(i, i)` and `upper[i]` is
/// `(i, i + 1)`. Products with dense `N×C` matrices cost `O(N·C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(Error::Domain("tridiagonal matrix needs n >= 1".into()));
        }
        if lower.len() != n - 1 || upper.len() != n - 1 {
            return Err(Error::dim(
                "Tridiagonal::new",
                &[lower.len(), n, upper.len()],
                &[n - 1, n, n - 1],
            ));
        }
        if !lower.iter().chain(&diag).chain(&upper).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tridiagonal band".into()));
        }
        Ok(Tridiagonal { lower, diag, upper })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.upper[i]
        } else if i == j + 1 {
            self.lower[j]
        } else {
            0.0
        }
    }

    pub fn transpose(&self) -> Tridiagonal {
        Tridiagonal {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    /// Dense `N×N` form. Only meant for small `N` (tests, inspection).
    pub fn to_dense(&self) -> Tensor {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = self.diag[i];
            if i + 1 < n {
                out[i * n + i + 1] = self.upper[i];
                out[(i + 1) * n + i] = self.lower[i];
            }
        }
        Tensor::from_parts(vec![n, n], out)
    }

    /// `self · x` for `x` of shape `N×C`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c) = x.as_matrix("tridiagonal apply")?;
        if n != self.n() {
            return Err(Error::dim("tridiagonal apply", &[self.n(), self.n()], x.shape()));
        }
        let mut out = vec![0.0; n * c];
        self.apply_into(x.data(), &mut out, c);
        Ok(Tensor::from_parts(vec![n, c], out))
    }

    /// `out += self · x`, both `N×C` row-major.
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64], c: usize) {
        let n = self.n();
        for i in 0..n {
            let row = &mut out[i * c..(i + 1) * c];
            let d = self.diag[i];
            for (o, &v) in row.iter_mut().zip(&x[i * c..(i + 1) * c]) {
                *o += d * v;
            }
            if i + 1 < n {
                let u = self.upper[i];
                if u != 0.0 {
                    for (o, &v) in row.iter_mut().zip(&x[(i + 1) * c..(i + 2) * c]) {
                        *o += u * v;
                    }
                }
            }
            if i > 0 {
                let l = self.lower[i - 1];
                if l != 0.0 {
                    for (o, &v) in row.iter_mut().zip(&x[(i - 1) * c..i * c]) {
                        *o += l * v;
                    }
                }
            }
        }
    }

    /// `out += selfᵀ · x`.
    pub(crate) fn apply_transpose_into(&self, x: &[f64], out: &mut [f64], c: usize) {
        let n = self.n();
        for i in 0..n {
            let row = &mut out[i * c..(i + 1) * c];
            let d = self.diag[i];
            for (o, &v) in row.iter_mut().zip(&x[i * c..(i + 1) * c]) {
                *o += d * v;
            }
            // (Aᵀ)[i][i+1] = A[i+1][i] = lower[i]
            if i + 1 < n {
                let l = self.lower[i];
                if l != 0.0 {
                    for (o, &v) in row.iter_mut().zip(&x[(i + 1) * c..(i + 2) * c]) {
                        *o += l * v;
                    }
                }
            }
            if i > 0 {
                let u = self.upper[i - 1];
                if u != 0.0 {
                    for (o, &v) in row.iter_mut().zip(&x[(i - 1) * c..i * c]) {
                        *o += u * v;
                    }
                }
            }
        }
    }
}
