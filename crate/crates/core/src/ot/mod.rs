//! Discrete optimal transport: exact (transportation simplex), entropic
//! (log-domain Sinkhorn) and the stochastic entropic semi-dual.
//!
//! All solvers work on a cost matrix `C` between two weighted finite supports.
//! The entropic problems regularize with `ε · KL(γ ‖ a ⊗ b)`, so the product
//! coupling has zero penalty and the semi-dual optimum coincides with the
//! primal entropic cost without an additive constant.

mod exact;
mod semidual;
mod sinkhorn;

pub use exact::{exact_ot, exact_ot_matrix};
pub use semidual::{
    entropic_c_transform, induced_plan, semidual_estimate, semidual_objective,
    semidual_estimate_matrix, semidual_objective_grad, transport_estimate, Potential, PotentialSpec,
    SemiDualAscent, SemiDualConfig, SemiDualResult,
    SEMIDUAL_OFFSET,
};
pub use sinkhorn::{sinkhorn, sinkhorn_matrix, SinkhornConfig, SinkhornSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance on `Σ w = 1` for measure weights.
pub const WEIGHT_TOL: f64 = 1e-9;

/// Tolerance on plan marginals and on source/target mass agreement.
pub const MARGINAL_TOL: f64 = 1e-7;

/// A finitely supported probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Domain("measure needs at least one support point".into()));
        }
        if support.len() != weights.len() {
            return Err(Error::Dimension { expected: support.len(), got: weights.len() });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Domain(format!("invalid weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { support, weights })
    }

    /// Empirical measure with weight `1/N` on each point.
    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::Domain("measure needs at least one support point".into()));
        }
        Ok(Self { support, weights: vec![1.0 / n as f64; n] })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Merges bitwise-identical support points, summing their weights.
    /// The first occurrence keeps its position.
    pub fn deduplicated(&self) -> Self {
        let mut index: std::collections::HashMap<Vec<u64>, usize> = Default::default();
        let mut support = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, &w) in self.support.iter().zip(&self.weights) {
            let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
            match index.get(&key) {
                Some(&k) => weights[k] += w,
                None => {
                    index.insert(key, support.len());
                    support.push(p.clone());
                    weights.push(w);
                }
            }
        }
        Self { support, weights }
    }
}

/// Cost matrix `C_ij = cost(a_i, b_j)`.
pub fn cost_matrix<F>(a: &DiscreteMeasure, b: &DiscreteMeasure, cost: F) -> Matrix
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    Matrix::from_fn(a.len(), b.len(), |i, j| cost(&a.support[i], &b.support[j]))
}

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub matrix: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl TransportPlan {
    pub(crate) fn from_matrix(matrix: Matrix) -> Self {
        let row_marginal = matrix.row_sums();
        let col_marginal = matrix.col_sums();
        Self { matrix, row_marginal, col_marginal }
    }

    /// Largest absolute deviation of the plan's marginals from `a` and `b`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.row_marginal.iter().zip(a).map(|(x, y)| (x - y).abs());
        let c = self.col_marginal.iter().zip(b).map(|(x, y)| (x - y).abs());
        r.chain(c).fold(0.0, f64::max)
    }

    /// Checks non-negativity and both marginals within `tol`.
    pub fn is_feasible(&self, a: &[f64], b: &[f64], tol: f64) -> bool {
        self.matrix.as_slice().iter().all(|&x| x >= 0.0) && self.marginal_error(a, b) <= tol
    }

    /// `Σ_ij γ_ij C_ij`.
    pub fn cost(&self, cost: &Matrix) -> f64 {
        self.matrix.dot(cost)
    }
}

pub(crate) fn validate_weights(w: &[f64], what: &str) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Domain(format!("{what} weights are empty")));
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::Domain(format!("{what} weight {x} is invalid")));
    }
    Ok(w.iter().sum())
}

pub(crate) fn validate_costs(cost: &Matrix, n: usize, m: usize) -> Result<()> {
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::Dimension { expected: n * m, got: cost.rows() * cost.cols() });
    }
    if let Some(c) = cost.as_slice().iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("cost entry {c} is not finite")));
    }
    Ok(())
}

/// Numerically stable `log Σ exp(x_i)`.
pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}
