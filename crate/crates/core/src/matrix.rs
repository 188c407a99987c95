//! Row-stochastic matrices and the dense arithmetic the rest of the crate needs.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::agents::MAX_AGENTS;
use crate::error::{Error, Result};

/// Row-sum tolerance applied when a matrix is constructed from user data.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A validated `n x n` row-stochastic matrix, stored row-major.
#[derive(Clone, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

/// Validate `rows` as a stochastic matrix: square, finite, nonnegative, and
/// every row summing to 1 within `tol`.
pub fn validate_stochastic(rows: &[Vec<f64>], tol: f64) -> Result<StochasticMatrix> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    if n > MAX_AGENTS {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("at most {MAX_AGENTS} agents are supported, got {n}"),
        });
    }
    let mut data = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare {
                row: i,
                len: row.len(),
                expected: n,
            });
        }
        data.extend_from_slice(row);
    }
    StochasticMatrix::from_flat(n, data, tol)
}

impl StochasticMatrix {
    /// Build from row-major data, checking entries and row sums against `tol`.
    pub fn from_flat(n: usize, data: Vec<f64>, tol: f64) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                found: data.len(),
            });
        }
        for i in 0..n {
            let row = &data[i * n..(i + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let deviation = row.iter().sum::<f64>() - 1.0;
            if deviation.abs() > tol {
                return Err(Error::RowSum {
                    row: i,
                    deviation,
                    tol,
                });
            }
        }
        Ok(StochasticMatrix { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        StochasticMatrix { n, data }
    }

    /// Permutation matrix whose `i`-th row is `e_{tau[i]}`.
    pub fn permutation(tau: &[usize]) -> Self {
        let n = tau.len();
        let mut data = vec![0.0; n * n];
        for (i, &t) in tau.iter().enumerate() {
            data[i * n + t] = 1.0;
        }
        StochasticMatrix { n, data }
    }

    /// Constant matrix with every entry `1/n`.
    pub fn uniform(n: usize) -> Self {
        StochasticMatrix {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Matrix product `self * rhs`, re-validated with `tol` on the row sums.
    pub fn mul(&self, rhs: &StochasticMatrix, tol: f64) -> Result<StochasticMatrix> {
        if self.n != rhs.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: rhs.n,
            });
        }
        StochasticMatrix::from_flat(self.n, self.mul_raw(rhs), tol)
    }

    pub(crate) fn mul_raw(&self, rhs: &StochasticMatrix) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let r = &rhs.data[k * n..(k + 1) * n];
                let o = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o.iter_mut().zip(r) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(self
            .data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Row vector times matrix, `y^t = p^t A`.
    pub fn left_apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: p.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += pi * a;
            }
        }
        Ok(out)
    }

    /// `P A` where `P` has rows `e_{tau[i]}`: row `i` of the result is row `tau[i]` of `A`.
    pub fn permute_rows(&self, tau: &[usize]) -> StochasticMatrix {
        let n = self.n;
        let mut data = Vec::with_capacity(n * n);
        for &t in tau {
            data.extend_from_slice(self.row(t));
        }
        StochasticMatrix { n, data }
    }

    /// `A P^t` where `P` has rows `e_{tau[j]}`: column `j` of the result is column `tau[j]` of `A`.
    pub fn permute_columns(&self, tau: &[usize]) -> StochasticMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for (j, &t) in tau.iter().enumerate() {
                data[i * n + j] = self.get(i, t);
            }
        }
        StochasticMatrix { n, data }
    }

    /// Relabel agents: the result `B` has `B[s(i)][s(j)] = A[i][j]`.
    pub fn relabel(&self, sigma: &[usize]) -> StochasticMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[sigma[i] * n + sigma[j]] = self.get(i, j);
            }
        }
        StochasticMatrix { n, data }
    }

    /// Sum of `A_ij` over `i` in `rows`, `j` in `cols`.
    pub fn block_sum(&self, rows: crate::AgentSet, cols: crate::AgentSet) -> f64 {
        rows.iter()
            .map(|i| cols.iter().map(|j| self.get(i, j)).sum::<f64>())
            .sum()
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &StochasticMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for StochasticMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.n)).finish()
    }
}

impl Serialize for StochasticMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.data.chunks(self.n))
    }
}
