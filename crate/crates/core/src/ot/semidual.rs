use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logsumexp, validate_costs, validate_weights, DiscreteMeasure, TransportPlan, MARGINAL_TOL};
use crate::error::{ensure_same_dim, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Adam, DenseNet};

/// Additive constant between the converged semi-dual objective and the primal
/// entropic cost. With the `KL(γ ‖ a ⊗ b)` regularizer the two coincide.
pub const SEMIDUAL_OFFSET: f64 = 0.0;

/// How the potential on the source support is parameterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// One free value per source point.
    Table,
    /// Dense network on the source points; `hidden: []` is a single linear unit.
    Net { hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiDualConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    pub ascent_steps: usize,
    pub potential: PotentialSpec,
    pub seed: u64,
}

impl Default for SemiDualConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, learning_rate: 0.01, ascent_steps: 5000, potential: PotentialSpec::Table, seed: 0 }
    }
}

impl SemiDualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning_rate must be positive".into()));
        }
        if self.ascent_steps == 0 {
            return Err(Error::Domain("ascent_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trained potential.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Table(Vec<f64>),
    Net(DenseNet),
}

impl Potential {
    pub fn from_spec(spec: &PotentialSpec, n_source: usize, input_dim: usize, seed: u64) -> Self {
        match spec {
            PotentialSpec::Table => Potential::Table(vec![0.0; n_source]),
            PotentialSpec::Net { hidden } => {
                let mut sizes = vec![input_dim];
                sizes.extend_from_slice(hidden);
                sizes.push(1);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Potential::Net(DenseNet::new(&sizes, Activation::Relu, Activation::Linear, &mut rng))
            }
        }
    }

    /// Potential values on `support`.
    pub fn values(&self, support: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Potential::Table(v) => {
                ensure_same_dim(v.len(), support.len())?;
                Ok(v.clone())
            }
            Potential::Net(net) => support.iter().map(|x| Ok(net.predict(x)?[0])).collect(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Potential::Table(v) => v.clone(),
            Potential::Net(net) => net.params(),
        }
    }
}

/// `−ε · log Σ_i w_i exp((φ_i − d_i) / ε)`, evaluated in log-domain.
pub fn entropic_c_transform(phi: &[f64], cost_row: &[f64], epsilon: f64, weights: &[f64]) -> f64 {
    debug_assert_eq!(phi.len(), cost_row.len());
    debug_assert_eq!(phi.len(), weights.len());
    let terms = phi
        .iter()
        .zip(cost_row)
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((&p, &d), &w)| w.ln() + (p - d) / epsilon);
    -epsilon * logsumexp(terms)
}

/// `Σ_i a_i φ_i + Σ_j b_j φ^c(t_j)` for cost `C` (rows: source, columns: target).
pub fn semidual_objective(phi: &[f64], cost: &Matrix, a: &[f64], b: &[f64], epsilon: f64) -> f64 {
    let mut value: f64 = a.iter().zip(phi).map(|(w, p)| w * p).sum();
    let mut col = vec![0.0; phi.len()];
    for (j, &bj) in b.iter().enumerate() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = cost.get(i, j);
        }
        value += bj * entropic_c_transform(phi, &col, epsilon, a);
    }
    value
}

/// Objective together with its gradient in `φ` and in the cost matrix.
///
/// With `π_ij = a_i exp((φ_i − C_ij)/ε) / Σ_k a_k exp((φ_k − C_kj)/ε)`:
/// `∂/∂φ_i = a_i − Σ_j b_j π_ij` and `∂/∂C_ij = b_j π_ij`.
pub fn semidual_objective_grad(
    phi: &[f64],
    cost: &Matrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
) -> (f64, Vec<f64>, Matrix) {
    let (n, m) = (a.len(), b.len());
    let pi = column_softmax(phi, cost, a, epsilon);
    let mut value: f64 = a.iter().zip(phi).map(|(w, p)| w * p).sum();
    for (j, &bj) in b.iter().enumerate() {
        value += bj * pi.1[j];
    }
    let mut grad_phi = a.to_vec();
    let mut grad_cost = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let g = b[j] * pi.0.get(i, j);
            grad_phi[i] -= g;
            grad_cost.set(i, j, g);
        }
    }
    (value, grad_phi, grad_cost)
}

/// Column-wise soft assignment `π` and the c-transform value per column.
fn column_softmax(phi: &[f64], cost: &Matrix, a: &[f64], epsilon: f64) -> (Matrix, Vec<f64>) {
    let (n, m) = (a.len(), cost.cols());
    let mut pi = Matrix::zeros(n, m);
    let mut psi = vec![0.0; m];
    let mut logits = vec![f64::NEG_INFINITY; n];
    for j in 0..m {
        for i in 0..n {
            logits[i] = if a[i] > 0.0 { a[i].ln() + (phi[i] - cost.get(i, j)) / epsilon } else { f64::NEG_INFINITY };
        }
        let lse = logsumexp(logits.iter().copied());
        psi[j] = -epsilon * lse;
        for i in 0..n {
            pi.set(i, j, (logits[i] - lse).exp());
        }
    }
    (pi, psi)
}

/// The coupling induced by `φ`: `γ_ij = b_j π_ij`. Its column marginal is
/// exactly `b`; its row marginal equals `a` only at the optimum.
pub fn induced_plan(phi: &[f64], cost: &Matrix, a: &[f64], b: &[f64], epsilon: f64) -> TransportPlan {
    let (mut pi, _) = column_softmax(phi, cost, a, epsilon);
    for i in 0..pi.rows() {
        for (p, bj) in pi.row_mut(i).iter_mut().zip(b) {
            *p *= bj;
        }
    }
    TransportPlan::from_matrix(pi)
}

/// Semi-dual objective minus the entropic penalty of the induced plan,
/// `obj(φ) − ε · KL(γ_φ ‖ a ⊗ b)`; at the optimum this is `<γ*, C>`.
pub fn transport_estimate(phi: &[f64], cost: &Matrix, a: &[f64], b: &[f64], epsilon: f64) -> f64 {
    let obj = semidual_objective(phi, cost, a, b, epsilon);
    let plan = induced_plan(phi, cost, a, b, epsilon);
    let mut kl = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            let g = plan.matrix.get(i, j);
            if g > 0.0 {
                kl += g * (g / (a[i] * b[j])).ln();
            }
        }
    }
    obj - epsilon * kl
}

/// Output of [`semidual_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDualResult {
    /// Objective at the final potential.
    pub estimate: f64,
    /// [`transport_estimate`] at the final potential.
    pub transport_estimate: f64,
    pub potential: Potential,
    /// Objective at the potential before each ascent step.
    pub trace: Vec<f64>,
}

/// Adam ascent on the semi-dual objective; the potential persists across calls.
#[derive(Debug, Clone)]
pub struct SemiDualAscent {
    potential: Potential,
    adam: Adam,
    steps_taken: usize,
}

impl SemiDualAscent {
    pub fn new(spec: &PotentialSpec, n_source: usize, input_dim: usize, learning_rate: f64, seed: u64) -> Self {
        let potential = Potential::from_spec(spec, n_source, input_dim, seed);
        let adam = Adam::new(&potential.params(), learning_rate);
        Self { potential, adam, steps_taken: 0 }
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn into_potential(self) -> Potential {
        self.potential
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// One ascent step; returns the objective before the update.
    pub fn step(&mut self, support: &[Vec<f64>], a: &[f64], cost: &Matrix, b: &[f64], epsilon: f64) -> Result<f64> {
        self.steps_taken += 1;
        let step = self.steps_taken;
        let phi = self.potential.values(support)?;
        let (value, grad_phi, _) = semidual_objective_grad(&phi, cost, a, b, epsilon);
        if !value.is_finite() || grad_phi.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure { step, what: format!("semi-dual objective is {value}") });
        }
        match &mut self.potential {
            Potential::Table(v) => self.adam.ascend(v, &grad_phi)?,
            Potential::Net(net) => {
                let mut grads = vec![0.0; net.n_params()];
                for (x, &g) in support.iter().zip(&grad_phi) {
                    let (_, cache) = net.forward(x)?;
                    net.backward_accumulate(&[g], &cache, &mut grads)?;
                }
                let mut params = net.params();
                self.adam.ascend(&mut params, &grads)?;
                net.set_params(&params)?;
            }
        }
        Ok(value)
    }
}

/// Maximizes the entropic semi-dual between two discrete measures.
pub fn semidual_estimate<F>(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: F,
    cfg: &SemiDualConfig,
) -> Result<SemiDualResult>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let c = super::cost_matrix(source, target, cost);
    semidual_estimate_matrix(source.support(), source.weights(), &c, target.weights(), cfg)
}

/// [`semidual_estimate`] on an explicit cost matrix; `support` feeds a network potential.
pub fn semidual_estimate_matrix(
    support: &[Vec<f64>],
    a: &[f64],
    cost: &Matrix,
    b: &[f64],
    cfg: &SemiDualConfig,
) -> Result<SemiDualResult> {
    cfg.validate()?;
    let sa = validate_weights(a, "source")?;
    let sb = validate_weights(b, "target")?;
    if (sa - sb).abs() > MARGINAL_TOL {
        return Err(Error::MassMismatch { source_mass: sa, target_mass: sb });
    }
    validate_costs(cost, a.len(), b.len())?;
    ensure_same_dim(a.len(), support.len())?;
    let input_dim = support.first().map_or(0, Vec::len);
    let mut ascent = SemiDualAscent::new(&cfg.potential, a.len(), input_dim, cfg.learning_rate, cfg.seed);
    let mut trace = Vec::with_capacity(cfg.ascent_steps);
    for _ in 0..cfg.ascent_steps {
        trace.push(ascent.step(support, a, cost, b, cfg.epsilon)?);
    }
    let phi = ascent.potential().values(support)?;
    let estimate = semidual_objective(&phi, cost, a, b, cfg.epsilon);
    if !estimate.is_finite() {
        return Err(Error::NumericalFailure { step: cfg.ascent_steps, what: "final objective not finite".into() });
    }
    let transport_estimate = transport_estimate(&phi, cost, a, b, cfg.epsilon);
    Ok(SemiDualResult { estimate, transport_estimate, potential: ascent.into_potential(), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{sinkhorn_matrix, SinkhornConfig};

    #[test]
    fn c_transform_examples() {
        assert_eq!(entropic_c_transform(&[0.0, 0.0], &[0.0, 0.0], 0.1, &[0.5, 0.5]), 0.0);
        let v = entropic_c_transform(&[0.0, 1.0], &[0.5, 0.5], 0.1, &[0.5, 0.5]);
        let direct = -0.1 * (0.5 * (-5.0f64).exp() + 0.5 * 5.0f64.exp()).ln();
        assert!((v - direct).abs() < 1e-12);
        assert!((v - (-0.43069)).abs() < 1e-5);
        let shifted = entropic_c_transform(&[3.0, 4.0], &[0.5, 0.5], 0.1, &[0.5, 0.5]);
        assert!((shifted - (v - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn c_transform_survives_large_ratios() {
        let v = entropic_c_transform(&[1000.0, -1000.0], &[0.0, 0.0], 0.1, &[0.5, 0.5]);
        assert!(v.is_finite());
        assert!((v - (-1000.0 - 0.1 * 0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn objective_is_shift_invariant() {
        let c = Matrix::from_vec(2, 3, vec![0.1, 0.7, 1.3, 0.4, 0.0, 2.0]);
        let (a, b) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let phi = [0.25, -0.4];
        let v0 = semidual_objective(&phi, &c, &a, &b, 0.1);
        let v1 = semidual_objective(&[10.25, 9.6], &c, &a, &b, 0.1);
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = Matrix::from_vec(2, 3, vec![0.1, 0.7, 1.3, 0.4, 0.0, 2.0]);
        let (a, b) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let phi = [0.25, -0.4];
        let (_, g, gc) = semidual_objective_grad(&phi, &c, &a, &b, 0.3);
        let h = 1e-6;
        for i in 0..2 {
            let mut p = phi;
            p[i] += h;
            let up = semidual_objective(&p, &c, &a, &b, 0.3);
            p[i] -= 2.0 * h;
            let dn = semidual_objective(&p, &c, &a, &b, 0.3);
            assert!((g[i] - (up - dn) / (2.0 * h)).abs() < 1e-7);
        }
        let mut cc = c.clone();
        cc.add_at(1, 2, h);
        let up = semidual_objective(&phi, &cc, &a, &b, 0.3);
        cc.add_at(1, 2, -2.0 * h);
        let dn = semidual_objective(&phi, &cc, &a, &b, 0.3);
        assert!((gc.get(1, 2) - (up - dn) / (2.0 * h)).abs() < 1e-7);
    }

    #[test]
    fn converges_to_sinkhorn_on_canonical_instance() {
        let c = Matrix::from_vec(2, 2, vec![0.0, 2.0, 2.0, 0.0]);
        let (a, b) = (vec![0.5, 0.5], vec![0.8, 0.2]);
        let sk = sinkhorn_matrix(&a, &b, &c, &SinkhornConfig::with_epsilon(0.1)).unwrap();
        let support = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let res = semidual_estimate_matrix(&support, &a, &c, &b, &SemiDualConfig::default()).unwrap();
        assert!((res.estimate + SEMIDUAL_OFFSET - sk.entropic_cost).abs() < 1e-2);
        assert!((res.transport_estimate - sk.transport_cost).abs() < 1e-2);
        for v in &res.trace {
            assert!(*v <= sk.entropic_cost + SEMIDUAL_OFFSET + 1e-6);
        }
    }

    #[test]
    fn single_point_estimate_is_zero() {
        for init in [0.0, 3.0, -7.5] {
            let phi = [init];
            let v = semidual_objective(&phi, &Matrix::zeros(1, 1), &[1.0], &[1.0], 0.1);
            assert!(v.abs() < 1e-12);
        }
        let res = semidual_estimate_matrix(&[vec![1.0]], &[1.0], &Matrix::zeros(1, 1), &[1.0], &SemiDualConfig {
            ascent_steps: 10,
            ..Default::default()
        })
        .unwrap();
        assert!(res.estimate.abs() < 1e-12);
    }

    #[test]
    fn net_potential_runs() {
        let c = Matrix::from_vec(2, 2, vec![0.0, 2.0, 2.0, 0.0]);
        let support = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cfg = SemiDualConfig {
            potential: PotentialSpec::Net { hidden: vec![] },
            learning_rate: 0.01,
            ascent_steps: 3000,
            ..Default::default()
        };
        let res = semidual_estimate_matrix(&support, &[0.5, 0.5], &c, &[0.8, 0.2], &cfg).unwrap();
        let sk = sinkhorn_matrix(&[0.5, 0.5], &[0.8, 0.2], &c, &SinkhornConfig::with_epsilon(0.1)).unwrap();
        assert!((res.estimate - sk.entropic_cost).abs() < 1e-2);
    }
}
