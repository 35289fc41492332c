use serde::{Deserialize, Serialize};

use super::{logsumexp, validate_costs, validate_weights, DiscreteMeasure, TransportPlan, MARGINAL_TOL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub marginal_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, max_iters: 10_000, marginal_tol: 1e-9 }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::Domain("marginal_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Output of [`sinkhorn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSolution {
    /// `<γ, C> + ε · KL(γ ‖ a ⊗ b)`.
    pub entropic_cost: f64,
    /// `<γ, C>`.
    pub transport_cost: f64,
    pub plan: TransportPlan,
    /// Dual potentials: `γ_ij = a_i b_j exp((f_i + g_j − C_ij) / ε)`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

pub fn sinkhorn<F>(a: &DiscreteMeasure, b: &DiscreteMeasure, cost: F, cfg: &SinkhornConfig) -> Result<SinkhornSolution>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let c = super::cost_matrix(a, b, cost);
    sinkhorn_matrix(a.weights(), b.weights(), &c, cfg)
}

/// Log-domain Sinkhorn on an explicit cost matrix.
///
/// Alternates exact soft-min updates of `g` then `f`; stops once the column
/// marginal (the one not enforced by the last update) is within tolerance.
/// On non-convergence returns [`Error::Unconverged`] carrying the last iterate.
pub fn sinkhorn_matrix(a: &[f64], b: &[f64], cost: &Matrix, cfg: &SinkhornConfig) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let (n, m) = (a.len(), b.len());
    let sa = validate_weights(a, "source")?;
    let sb = validate_weights(b, "target")?;
    if (sa - sb).abs() > MARGINAL_TOL {
        return Err(Error::MassMismatch { source_mass: sa, target_mass: sb });
    }
    validate_costs(cost, n, m)?;
    let eps = cfg.epsilon;
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| log_a[i] + (f[i] - cost.get(i, j)) / eps));
            g[j] = -eps * lse;
        }
        for i in 0..n {
            let row = cost.row(i);
            let lse = logsumexp((0..m).map(|j| log_b[j] + (g[j] - row[j]) / eps));
            f[i] = -eps * lse;
        }
        // After the f-update rows are exact; measure the column violation.
        err = 0.0;
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| log_a[i] + (f[i] - cost.get(i, j)) / eps));
            let col = b[j] * (lse + g[j] / eps).exp();
            err = f64::max(err, (col - b[j]).abs());
        }
        if !err.is_finite() {
            return Err(Error::NumericalFailure { step: iterations, what: "sinkhorn potentials diverged".into() });
        }
        if err < cfg.marginal_tol {
            break;
        }
    }

    let plan = Matrix::from_fn(n, m, |i, j| {
        if a[i] == 0.0 || b[j] == 0.0 {
            0.0
        } else {
            (log_a[i] + log_b[j] + (f[i] + g[j] - cost.get(i, j)) / eps).exp()
        }
    });
    let transport_cost = plan.dot(cost);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = plan.get(i, j);
            if p > 0.0 {
                kl += p * (f[i] + g[j] - cost.get(i, j)) / eps;
            }
        }
    }
    let plan = TransportPlan::from_matrix(plan);
    let marginal_error = plan.marginal_error(a, b);
    let converged = err < cfg.marginal_tol;
    let sol = SinkhornSolution {
        entropic_cost: transport_cost + eps * kl,
        transport_cost,
        plan,
        f,
        g,
        iterations,
        marginal_error,
        converged,
    };
    if !converged {
        return Err(Error::Unconverged { iterations, marginal_error, best: Box::new(sol) });
    }
    Ok(sol)
}
