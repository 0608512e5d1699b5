//! Communication topology and its doubly stochastic mixing matrix.
//!
//! The built-in topology is a ring in which every PE averages itself with its
//! two neighbors using weight `1/3` each. Any symmetric doubly stochastic
//! matrix with `rho < 1` can be loaded through [`MixingMatrix::from_dense`].

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Tolerance used when validating row/column sums and symmetry.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixingError {
    #[error("ring topology undefined for n = {0} (need n >= 3)")]
    RingTooSmall(usize),
    #[error("matrix has {got} entries, expected {n}x{n} = {}", n * n)]
    Shape { n: usize, got: usize },
    #[error("matrix must have at least one PE")]
    Empty,
    #[error("weight [{i}][{j}] = {value} outside [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("matrix not symmetric at [{i}][{j}]")]
    NotSymmetric { i: usize, j: usize },
    #[error("row {0} does not sum to 1")]
    RowSum(usize),
    #[error("column {0} does not sum to 1")]
    ColumnSum(usize),
    #[error("spectral quantity rho = {0} is not < 1 (graph disconnected or periodic)")]
    NoSpectralGap(f64),
    #[error("PE index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Symmetric doubly stochastic averaging weights over `n` PEs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    /// Row-major `n x n`.
    weights: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
    rho: f64,
}

impl MixingMatrix {
    /// Ring with self weight and per-neighbor weight `1/(2+1)`.
    pub fn ring(n: usize) -> Result<Self, MixingError> {
        if n < 3 {
            return Err(MixingError::RingTooSmall(n));
        }
        let w = 1.0 / 3.0;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = w;
            weights[i * n + (i + 1) % n] = w;
            weights[i * n + (i + n - 1) % n] = w;
        }
        Self::from_dense(n, weights)
    }

    /// Validate and wrap a user-supplied row-major matrix.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self, MixingError> {
        if n == 0 {
            return Err(MixingError::Empty);
        }
        if weights.len() != n * n {
            return Err(MixingError::Shape {
                n,
                got: weights.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let value = weights[i * n + j];
                if !(0.0..=1.0).contains(&value) {
                    return Err(MixingError::OutOfRange { i, j, value });
                }
                if (value - weights[j * n + i]).abs() > STOCHASTIC_TOL {
                    return Err(MixingError::NotSymmetric { i, j });
                }
            }
        }
        for i in 0..n {
            let row: f64 = (0..n).map(|j| weights[i * n + j]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MixingError::RowSum(i));
            }
            let col: f64 = (0..n).map(|j| weights[j * n + i]).sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MixingError::ColumnSum(i));
            }
        }

        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && weights[i * n + j] > 0.0)
                    .collect()
            })
            .collect();

        let eigenvalues = symmetric_eigenvalues(n, &weights);
        let rho = rho_from_eigenvalues(&eigenvalues);
        if rho >= 1.0 - STOCHASTIC_TOL {
            return Err(MixingError::NoSpectralGap(rho));
        }

        Ok(Self {
            n,
            weights,
            neighbors,
            eigenvalues,
            rho,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// Row-major weights, as stored in the run config's `custom_matrix`.
    pub fn as_row_major(&self) -> &[f64] {
        &self.weights
    }

    /// PEs `j != i` with nonzero weight, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Eigenvalues sorted descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `max(|lambda_2|, |lambda_n|)`.
    pub fn spectral_gap(&self) -> f64 {
        self.rho
    }

    /// `W v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector length must equal n");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `|| 1/n - W^k e_i ||^2`.
    pub fn mix_power_deviation(&self, k: usize, i: usize) -> Result<f64, MixingError> {
        if i >= self.n {
            return Err(MixingError::IndexOutOfRange {
                index: i,
                n: self.n,
            });
        }
        let mut col = vec![0.0; self.n];
        col[i] = 1.0;
        for _ in 0..k {
            col = self.apply(&col);
        }
        let uniform = 1.0 / self.n as f64;
        Ok(col.iter().map(|c| (uniform - c).powi(2)).sum())
    }
}

/// Free-function form of [`MixingMatrix::spectral_gap`].
pub fn spectral_gap(w: &MixingMatrix) -> f64 {
    w.spectral_gap()
}

pub fn build_ring_mixing(n: usize) -> Result<MixingMatrix, MixingError> {
    MixingMatrix::ring(n)
}

fn symmetric_eigenvalues(n: usize, weights: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, weights);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn rho_from_eigenvalues(ev: &[f64]) -> f64 {
    if ev.len() < 2 {
        return 0.0;
    }
    ev[1].abs().max(ev[ev.len() - 1].abs())
}
