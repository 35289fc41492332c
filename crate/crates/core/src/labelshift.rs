//! Label shift as transport between pushforward measures on the label
//! simplex, and the lower/upper bounds that bracket it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, Error, Result};
use crate::matrix::Matrix;
use crate::mixture::MixtureDomain;
use crate::ot::{
    exact_ot_matrix, transport_estimate, DiscreteMeasure, PotentialSpec, SemiDualAscent,
};
use crate::simplex::{ground_cost, lp_pow, normalize_to_simplex, GroundMetric, ProbVector};

/// Labeling-function values `f(x_1), …, f(x_N)` for samples of one domain,
/// read as the uniform empirical measure of `f#P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardSample {
    f_values: Vec<ProbVector>,
}

impl PushforwardSample {
    pub fn new(f_values: Vec<ProbVector>) -> Result<Self> {
        let first = f_values.first().ok_or_else(|| Error::Domain("pushforward sample is empty".into()))?;
        let m = first.dim();
        for f in &f_values {
            ensure_same_dim(m, f.dim())?;
        }
        Ok(Self { f_values })
    }

    /// One-hot encodings of global labels.
    pub fn one_hot(labels: &[usize], global_classes: usize) -> Result<Self> {
        if let Some(&y) = labels.iter().find(|&&y| y >= global_classes) {
            return Err(Error::Domain(format!("label {y} outside {global_classes} classes")));
        }
        Self::new(labels.iter().map(|&y| ProbVector::one_hot(global_classes, y)).collect())
    }

    /// Bayes posteriors of `domain` at `points`.
    pub fn from_domain(domain: &MixtureDomain, points: &[Vec<f64>]) -> Result<Self> {
        Self::new(points.iter().map(|x| domain.bayes_posterior(x)).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.f_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_values.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.f_values[0].dim()
    }

    pub fn f_values(&self) -> &[ProbVector] {
        &self.f_values
    }

    /// Uniform empirical measure over the values.
    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::uniform(self.f_values.iter().map(|f| f.as_slice().to_vec()).collect())
            .expect("non-empty by construction")
    }

    /// Mean of the values, the plug-in estimate of the class marginal
    /// `p(y) = E f(x)_y`.
    pub fn mean(&self) -> ProbVector {
        let mut acc = vec![0.0; self.classes()];
        for f in &self.f_values {
            for (a, v) in acc.iter_mut().zip(f.as_slice()) {
                *a += v;
            }
        }
        let n = self.f_values.len() as f64;
        normalize_to_simplex(&acc.into_iter().map(|a| a / n).collect::<Vec<_>>()).expect("mean of simplex points")
    }
}

fn check_simplex_metric(metric: &GroundMetric) -> Result<()> {
    metric.validate()?;
    match metric {
        GroundMetric::LpPow { .. } | GroundMetric::Kl => Ok(()),
        other => Err(Error::Domain(format!("{other:?} is not a label-simplex metric"))),
    }
}

/// Exact transport cost between two weighted supports under `metric`, after
/// merging repeated support points.
fn exact_between(a: &DiscreteMeasure, b: &DiscreteMeasure, metric: &GroundMetric) -> Result<f64> {
    let (a, b) = (a.deduplicated(), b.deduplicated());
    let mut cost = Matrix::zeros(a.len(), b.len());
    for (i, x) in a.support().iter().enumerate() {
        for (j, y) in b.support().iter().enumerate() {
            cost.set(i, j, ground_cost(metric, x, y)?);
        }
    }
    Ok(exact_ot_matrix(a.weights(), b.weights(), &cost)?.0)
}

/// `W_{d_Y}(f^S#P^S, f^T#P^T)` between the empirical pushforwards.
pub fn ls_exact(source: &PushforwardSample, target: &PushforwardSample, metric: &GroundMetric) -> Result<f64> {
    check_simplex_metric(metric)?;
    ensure_same_dim(source.classes(), target.classes())?;
    exact_between(&source.measure(), &target.measure(), metric)
}

/// Settings for [`ls_entropic_stream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub epsilon: f64,
    pub potential: PotentialSpec,
    pub steps_per_batch: usize,
    pub learning_rate: f64,
    pub metric: GroundMetric,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            potential: PotentialSpec::Net { hidden: vec![] },
            steps_per_batch: 200,
            learning_rate: 0.01,
            metric: GroundMetric::LpPow { p: 1.0 },
            seed: 0,
        }
    }
}

/// Estimate recorded after one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamPoint {
    pub batch: usize,
    /// Semi-dual objective on this batch after its ascent steps.
    pub objective: f64,
    /// Objective minus the entropic penalty of the induced plan.
    pub transport_estimate: f64,
    /// Mean of `transport_estimate` over the most recent half of the batches.
    pub running_estimate: f64,
}

/// Streams batch pairs through semi-dual ascent. A network potential is
/// carried across batches; a table potential restarts on every batch since
/// its entries are tied to the batch's points.
pub fn ls_entropic_stream<I, J>(batch_source: I, batch_target: J, cfg: &StreamConfig) -> Result<Vec<StreamPoint>>
where
    I: IntoIterator<Item = PushforwardSample>,
    J: IntoIterator<Item = PushforwardSample>,
{
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Domain("learning_rate must be positive".into()));
    }
    check_simplex_metric(&cfg.metric)?;
    let mut ascent: Option<SemiDualAscent> = None;
    let mut out: Vec<StreamPoint> = Vec::new();
    for (batch, (src, tgt)) in batch_source.into_iter().zip(batch_target).enumerate() {
        ensure_same_dim(src.classes(), tgt.classes())?;
        let (sm, tm) = (src.measure(), tgt.measure());
        let mut cost = Matrix::zeros(sm.len(), tm.len());
        for (i, x) in sm.support().iter().enumerate() {
            for (j, y) in tm.support().iter().enumerate() {
                cost.set(i, j, ground_cost(&cfg.metric, x, y)?);
            }
        }
        let restart = matches!(cfg.potential, PotentialSpec::Table) || ascent.is_none();
        if restart {
            ascent = Some(SemiDualAscent::new(&cfg.potential, sm.len(), src.classes(), cfg.learning_rate, cfg.seed));
        }
        let state = ascent.as_mut().expect("initialized above");
        for _ in 0..cfg.steps_per_batch {
            state.step(sm.support(), sm.weights(), &cost, tm.weights(), cfg.epsilon).map_err(|e| match e {
                Error::NumericalFailure { what, .. } => Error::NumericalFailure { step: batch, what },
                other => other,
            })?;
        }
        let phi = state.potential().values(sm.support())?;
        let objective = crate::ot::semidual_objective(&phi, &cost, sm.weights(), tm.weights(), cfg.epsilon);
        let estimate = transport_estimate(&phi, &cost, sm.weights(), tm.weights(), cfg.epsilon);
        if !objective.is_finite() || !estimate.is_finite() {
            return Err(Error::NumericalFailure { step: batch, what: "stream estimate is not finite".into() });
        }
        let start = batch.div_ceil(2);
        let tail: Vec<f64> = out[start.min(out.len())..].iter().map(|p| p.transport_estimate).chain([estimate]).collect();
        let running_estimate = tail.iter().sum::<f64>() / tail.len() as f64;
        out.push(StreamPoint { batch, objective, transport_estimate: estimate, running_estimate });
    }
    Ok(out)
}

/// `Σ_y |pS(y) − pT(y)|^p`.
pub fn marginal_lower_bound(ps: &ProbVector, pt: &ProbVector, p: f64) -> Result<f64> {
    ensure_same_dim(ps.dim(), pt.dim())?;
    check_order(p)?;
    Ok(lp_pow(ps.as_slice(), pt.as_slice(), p))
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("order p must be ≥ 1, got {p}")));
    }
    Ok(())
}

/// Transport between the simplex vertices weighted by `pS` and `pT`, with
/// cost `‖e_y − e_y'‖_p^p`.
pub fn vertex_label_shift(ps: &ProbVector, pt: &ProbVector, p: f64) -> Result<f64> {
    ensure_same_dim(ps.dim(), pt.dim())?;
    check_order(p)?;
    let m = ps.dim();
    let cost = Matrix::from_fn(m, m, |i, j| {
        lp_pow(ProbVector::one_hot(m, i).as_slice(), ProbVector::one_hot(m, j).as_slice(), p)
    });
    Ok(exact_ot_matrix(ps.as_slice(), pt.as_slice(), &cost)?.0)
}

/// Lower bound for label shift when label sets differ.
///
/// Common labels are taken in ascending order; `Q_S`, `Q_T` are the
/// pushforwards restricted to all but the last common coordinate, compared
/// with `‖·‖_p^p`. The private-label terms add the mean of `Σ f(x)_y^p` over
/// labels only one side has. Closed sets reduce to the transport term.
pub fn setting_lower_bound(
    source: &PushforwardSample,
    target: &PushforwardSample,
    source_labels: &[usize],
    target_labels: &[usize],
    p: f64,
) -> Result<f64> {
    check_order(p)?;
    ensure_same_dim(source.classes(), target.classes())?;
    let m = source.classes();
    if let Some(&y) = source_labels.iter().chain(target_labels).find(|&&y| y >= m) {
        return Err(Error::Domain(format!("label {y} outside {m} classes")));
    }
    let mut common: Vec<usize> = source_labels.iter().copied().filter(|y| target_labels.contains(y)).collect();
    common.sort_unstable();
    common.dedup();
    if common.is_empty() {
        return Err(Error::Domain("source and target share no labels".into()));
    }
    let coords = &common[..common.len() - 1];
    let restrict = |s: &PushforwardSample| -> DiscreteMeasure {
        DiscreteMeasure::uniform(s.f_values().iter().map(|f| coords.iter().map(|&c| f.as_slice()[c]).collect()).collect())
            .expect("non-empty by construction")
    };
    let transport = if coords.is_empty() {
        0.0
    } else {
        exact_between(&restrict(source), &restrict(target), &GroundMetric::LpPow { p })?
    };
    let private_mass = |s: &PushforwardSample, own: &[usize], other: &[usize]| -> f64 {
        let private: Vec<usize> = own.iter().copied().filter(|y| !other.contains(y)).collect();
        if private.is_empty() {
            return 0.0;
        }
        s.f_values().iter().map(|f| private.iter().map(|&y| f.as_slice()[y].powf(p)).sum::<f64>()).sum::<f64>()
            / s.len() as f64
    };
    Ok(transport
        + private_mass(source, source_labels, target_labels)
        + private_mass(target, target_labels, source_labels))
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { value: 0.0, std_error: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { value: mean, std_error: (var / n).sqrt() }
    }
}

/// Upper bound for domains whose class conditionals coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnticausalBound {
    /// `M^p ‖pS − pT‖₁ + min(E_S, E_T)`.
    pub value: f64,
    pub std_error: f64,
    pub marginal_term: f64,
    /// `E_{P^S} ‖f^S − f^T‖_p^p`.
    pub source_expectation: McEstimate,
    /// `E_{P^T} ‖f^S − f^T‖_p^p`.
    pub target_expectation: McEstimate,
}

/// Default Monte-Carlo sample count per domain.
pub const DEFAULT_N_MC: usize = 20_000;

/// Requires every label in both domains to use the very same component
/// object on both sides; otherwise returns [`Error::Precondition`].
pub fn anticausal_upper_bound(
    source: &MixtureDomain,
    target: &MixtureDomain,
    n_mc: usize,
    p: f64,
    seed: u64,
) -> Result<AnticausalBound> {
    check_order(p)?;
    if source.global_classes() != target.global_classes() {
        return Err(Error::Dimension { expected: source.global_classes(), got: target.global_classes() });
    }
    for &y in source.label_set() {
        if let Some(tc) = target.component_for(y) {
            if !Arc::ptr_eq(source.component_for(y).expect("own label"), tc) {
                return Err(Error::Precondition(format!(
                    "class {y} does not share its conditional between domains"
                )));
            }
        }
    }
    if n_mc == 0 {
        return Err(Error::Domain("n_mc must be positive".into()));
    }
    let m = source.global_classes() as f64;
    let marginal_term =
        m.powf(p) * lp_pow(source.global_marginal().as_slice(), target.global_marginal().as_slice(), 1.0);
    let gap = |dom: &MixtureDomain, s: u64| -> Result<McEstimate> {
        let (points, _) = dom.sample_labeled(n_mc, s);
        let vals = points
            .iter()
            .map(|x| Ok(lp_pow(source.bayes_posterior(x)?.as_slice(), target.bayes_posterior(x)?.as_slice(), p)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(McEstimate::from_samples(&vals))
    };
    let source_expectation = gap(source, seed)?;
    let target_expectation = gap(target, seed.wrapping_add(1))?;
    let best = if source_expectation.value <= target_expectation.value { source_expectation } else { target_expectation };
    Ok(AnticausalBound {
        value: marginal_term + best.value,
        std_error: best.std_error,
        marginal_term,
        source_expectation,
        target_expectation,
    })
}

/// All label-shift quantities for one pair of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub ls_exact: f64,
    pub marginal_lb: f64,
    pub vertex_ls: f64,
    pub setting_lb: Option<f64>,
    pub anticausal_ub: Option<f64>,
    pub p_order: f64,
}

impl BoundsReport {
    pub fn check(&self) -> Result<()> {
        if self.marginal_lb > self.ls_exact + 1e-7 {
            return Err(Error::NumericalFailure { step: 0, what: "marginal bound exceeds label shift".into() });
        }
        if let Some(lb) = self.setting_lb {
            if lb > self.ls_exact + 1e-7 {
                return Err(Error::NumericalFailure { step: 0, what: "setting bound exceeds label shift".into() });
            }
        }
        Ok(())
    }
}

/// Label frequencies of `labels` on the global simplex.
pub fn empirical_marginal(labels: &[usize], global_classes: usize) -> Result<ProbVector> {
    if labels.is_empty() {
        return Err(Error::Domain("no labels".into()));
    }
    let mut counts = vec![0.0; global_classes];
    for &y in labels {
        if y >= global_classes {
            return Err(Error::Domain(format!("label {y} outside {global_classes} classes")));
        }
        counts[y] += 1.0;
    }
    ProbVector::new(counts.into_iter().map(|c| c / labels.len() as f64).collect())
}
