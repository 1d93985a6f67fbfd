//! Small dense symmetric matrices for d = 2 or 3 velocity dimensions.

use serde::{Deserialize, Serialize};

/// Symmetric matrix stored as its packed upper triangle, row-major:
/// `(0,0), (0,1), ..., (0,d-1), (1,1), ..., (d-1,d-1)`.
///
/// Symmetry holds by construction since only one copy of each off-diagonal
/// entry exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

/// Number of packed upper-triangle entries for dimension `d`.
pub const fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

#[inline]
fn packed_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * d - i + 1) / 2 + (j - i)
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from packed upper-triangle values. Returns `None` when the
    /// length does not match any dimension.
    pub fn from_packed(dim: usize, upper: Vec<f64>) -> Option<Self> {
        (upper.len() == packed_len(dim)).then_some(Self { dim, upper })
    }

    /// Builds from a full row-major `d x d` matrix, symmetrizing as
    /// `(A + A^T) / 2`.
    pub fn from_full_symmetrized(dim: usize, full: &[f64]) -> Self {
        assert_eq!(full.len(), dim * dim);
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = if i == j {
                    full[i * dim + i]
                } else {
                    0.5 * (full[i * dim + j] + full[j * dim + i])
                };
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn packed(&self) -> &[f64] {
        &self.upper
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.upper[k] = v;
    }

    pub fn to_full(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    /// `self + lambda * I`.
    pub fn add_diagonal(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            let v = m.get(i, i) + lambda;
            m.set(i, i, v);
        }
        m
    }

    /// `D A D` with `D = diag(scale)`.
    pub fn scaled(&self, scale: &[f64]) -> Self {
        assert_eq!(scale.len(), self.dim);
        let mut m = self.clone();
        for i in 0..self.dim {
            for j in i..self.dim {
                m.set(i, j, self.get(i, j) * scale[i] * scale[j]);
            }
        }
        m
    }

    /// Lower Cholesky factor, or `None` when the matrix is not (numerically)
    /// positive definite: every pivot must exceed [`PIVOT_TOLERANCE`] times
    /// `d` times the largest diagonal entry, so singular matrices whose
    /// rounding leaves a tiny positive pivot are rejected too.
    pub fn cholesky(&self) -> Option<Cholesky> {
        let d = self.dim;
        let max_diag = (0..d).map(|j| self.get(j, j)).fold(0.0f64, f64::max);
        let floor = PIVOT_TOLERANCE * d as f64 * max_diag;
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if !(diag > floor) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
        }
        Some(Cholesky { dim: d, lower: l })
    }
}

/// Relative pivot floor of [`SymMatrix::cholesky`], a small multiple of
/// machine epsilon.
pub const PIVOT_TOLERANCE: f64 = 64.0 * f64::EPSILON;

/// Lower-triangular factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L[i][j]` for `j <= i`.
    #[inline]
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `ln det A = 2 sum ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.lower(i, i).ln()).sum::<f64>()
    }

    /// `(x)^T A^{-1} (x)` by forward substitution on `L z = x`.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut z = [0.0f64; 8];
        debug_assert!(d <= z.len());
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * z[k];
            }
            let zi = s / self.lower[i * d + i];
            z[i] = zi;
            acc += zi * zi;
        }
        acc
    }

    /// `L z`, used to colour standard normal draws.
    pub fn mul_lower(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = (0..=i).map(|k| self.lower[i * d + k] * z[k]).sum();
        }
    }
}
