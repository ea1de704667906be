//! Dense solves against the resolvent `I - gamma * P_pi`.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{CatError, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

pub(crate) struct ResolventSolver {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
}

impl ResolventSolver {
    /// Factorises `I - gamma * P_pi`.
    pub(crate) fn new(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Self> {
        Self::build(mdp, policy, false)
    }

    /// Factorises `I - gamma * P_pi^T`, the system behind the occupancy flow.
    pub(crate) fn transposed(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Self> {
        Self::build(mdp, policy, true)
    }

    fn build(mdp: &TabularMdp, policy: &TabularPolicy, transpose: bool) -> Result<Self> {
        let n = mdp.n_states();
        let p = mdp.state_transition(policy);
        let gamma = mdp.discount();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let pij = if transpose {
                p[j * n + i]
            } else {
                p[i * n + j]
            };
            let id = if i == j { 1.0 } else { 0.0 };
            id - gamma * pij
        });
        Ok(Self { lu: m.lu(), n })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        let x = self
            .lu
            .solve(&b)
            .ok_or_else(|| CatError::NumericalFailure("singular resolvent system".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CatError::NumericalFailure(
                "non-finite solution of resolvent system".into(),
            ));
        }
        Ok(x.iter().copied().collect())
    }

    /// Solves for several right-hand sides at once; `rhs` is row-major
    /// `n x cols`, and so is the result.
    pub(crate) fn solve_many(&self, rhs: &[f64], cols: usize) -> Result<Vec<f64>> {
        let b = DMatrix::from_row_slice(self.n, cols, rhs);
        let x = self
            .lu
            .solve(&b)
            .ok_or_else(|| CatError::NumericalFailure("singular resolvent system".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CatError::NumericalFailure(
                "non-finite solution of resolvent system".into(),
            ));
        }
        let mut out = vec![0.0; self.n * cols];
        for i in 0..self.n {
            for j in 0..cols {
                out[i * cols + j] = x[(i, j)];
            }
        }
        Ok(out)
    }
}
