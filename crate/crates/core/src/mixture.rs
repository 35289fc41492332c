//! Synthetic Gaussian-mixture domains with controllable label sets, class
//! marginals and class separation, plus exact Bayes posteriors.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, Error, Result};
use crate::ot::logsumexp;
use crate::simplex::{normalize_to_simplex, ProbVector};

const SYMMETRY_TOL: f64 = 1e-12;
const POWER_ITER_TOL: f64 = 1e-10;
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// A multivariate normal with a precomputed Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
    op_norm: f64,
}

impl GaussianComponent {
    /// `covariance` is row-major `d × d`.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Domain("component needs at least one dimension".into()));
        }
        ensure_same_dim(d * d, covariance.len())?;
        let cov = DMatrix::from_row_slice(d, d, &covariance);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let op_norm = largest_eigenvalue(&cov);
        Ok(Self { mean, covariance: cov, chol, log_det, op_norm })
    }

    /// `N(mean, σ² I)`.
    pub fn isotropic(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = sigma * sigma;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Largest eigenvalue of the covariance.
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff = DVector::from_iterator(d, x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let z = self.chol.solve_lower_triangular(&diff).expect("cholesky factor is invertible");
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &self.chol * z;
        x.iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix.
fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut v = DVector::from_fn(d, |i, _| 1.0 + i as f64 / d as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_ITER_TOL * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// One domain: a Gaussian component and a prior weight per label.
#[derive(Debug, Clone)]
pub struct MixtureDomain {
    components: Vec<Arc<GaussianComponent>>,
    class_marginal: ProbVector,
    label_set: Vec<usize>,
    global_classes: usize,
}

impl MixtureDomain {
    /// `label_set` holds global class ids (distinct, `< global_classes`),
    /// aligned with `components` and the entries of `class_marginal`.
    pub fn new(
        components: Vec<Arc<GaussianComponent>>,
        class_marginal: ProbVector,
        label_set: Vec<usize>,
        global_classes: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("domain needs at least one class".into()));
        }
        ensure_same_dim(components.len(), class_marginal.dim())?;
        ensure_same_dim(components.len(), label_set.len())?;
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::Domain("components have different dimensions".into()));
        }
        let mut seen = vec![false; global_classes];
        for &y in &label_set {
            if y >= global_classes || seen[y] {
                return Err(Error::Domain(format!("label {y} is duplicated or outside the global label set")));
            }
            seen[y] = true;
        }
        Ok(Self { components, class_marginal, label_set, global_classes })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn label_set(&self) -> &[usize] {
        &self.label_set
    }

    pub fn global_classes(&self) -> usize {
        self.global_classes
    }

    pub fn class_marginal(&self) -> &ProbVector {
        &self.class_marginal
    }

    /// Class marginal on the global simplex, zero outside the label set.
    pub fn global_marginal(&self) -> ProbVector {
        self.class_marginal
            .extend_to(&self.label_set, self.global_classes)
            .expect("label set validated on construction")
    }

    pub fn components(&self) -> &[Arc<GaussianComponent>] {
        &self.components
    }

    /// Component for a global label, if the label belongs to this domain.
    pub fn component_for(&self, label: usize) -> Option<&Arc<GaussianComponent>> {
        self.label_set.iter().position(|&y| y == label).map(|k| &self.components[k])
    }

    /// Ancestral sampling; labels are global ids. Deterministic in `seed`.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = self.class_marginal.as_slice();
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut k = 0;
            let mut acc = probs[0];
            while u >= acc && k + 1 < probs.len() {
                k += 1;
                acc += probs[k];
            }
            // Skip zero-mass classes that the cumulative walk could land on
            // only through rounding at the tail.
            while probs[k] == 0.0 && k > 0 {
                k -= 1;
            }
            points.push(self.components[k].sample(&mut rng));
            labels.push(self.label_set[k]);
        }
        (points, labels)
    }

    /// `p(y | x)` on the global simplex, computed in log-domain.
    pub fn bayes_posterior(&self, x: &[f64]) -> Result<ProbVector> {
        ensure_same_dim(self.dim(), x.len())?;
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(self.class_marginal.as_slice())
            .map(|(c, &w)| if w > 0.0 { w.ln() + c.log_density(x) } else { f64::NEG_INFINITY })
            .collect();
        let lse = logsumexp(logs.iter().copied());
        let mut out = vec![0.0; self.global_classes];
        for (&y, &l) in self.label_set.iter().zip(&logs) {
            out[y] = (l - lse).exp();
        }
        ProbVector::new(out)
    }
}

/// Label-set relation between source and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaSetting {
    /// Same label set.
    Closed,
    /// Target labels are a strict subset of source labels.
    Partial,
    /// Source labels are a strict subset of target labels.
    Open,
    /// Neither label set contains the other.
    Universal,
}

impl DaSetting {
    pub const ALL: [DaSetting; 4] = [DaSetting::Closed, DaSetting::Partial, DaSetting::Open, DaSetting::Universal];

    pub fn name(self) -> &'static str {
        match self {
            DaSetting::Closed => "closed",
            DaSetting::Partial => "partial",
            DaSetting::Open => "open",
            DaSetting::Universal => "universal",
        }
    }

    /// Default `(source, target)` label sets over `m` global classes.
    ///
    /// Partial keeps the first `⌈2m/3⌉` classes in the target (9 → 6), open
    /// mirrors it, and universal gives each side `max(1, 3m/10)` private
    /// classes at the end (10 → shared 0..4, source 4..7, target 7..10).
    pub fn default_label_sets(self, m: usize) -> (Vec<usize>, Vec<usize>) {
        let all: Vec<usize> = (0..m).collect();
        let keep = (2 * m).div_ceil(3).clamp(1, m.saturating_sub(1).max(1));
        match self {
            DaSetting::Closed => (all.clone(), all),
            DaSetting::Partial => (all.clone(), (0..keep).collect()),
            DaSetting::Open => ((0..keep).collect(), all),
            DaSetting::Universal => {
                let private = (3 * m / 10).max(1);
                let shared = m.saturating_sub(2 * private);
                let src = (0..shared + private).collect();
                let tgt = (0..shared).chain(shared + private..m).collect();
                (src, tgt)
            }
        }
    }

    /// Whether two label sets stand in this relation.
    pub fn holds(self, source: &[usize], target: &[usize]) -> bool {
        let s_in_t = source.iter().all(|y| target.contains(y));
        let t_in_s = target.iter().all(|y| source.contains(y));
        match self {
            DaSetting::Closed => s_in_t && t_in_s,
            DaSetting::Partial => t_in_s && !s_in_t,
            DaSetting::Open => s_in_t && !t_in_s,
            DaSetting::Universal => !s_in_t && !t_in_s,
        }
    }
}

fn default_sigma() -> f64 {
    1.0
}

/// Recipe for a source/target pair of mixture domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaPairSpec {
    pub setting: DaSetting,
    pub global_classes: usize,
    pub dims: usize,
    pub separation: f64,
    /// Non-negative weights over the source label set, renormalized; uniform when absent.
    #[serde(default)]
    pub source_marginal: Option<Vec<f64>>,
    #[serde(default)]
    pub target_marginal: Option<Vec<f64>>,
    /// Explicit label sets; setting defaults when absent.
    #[serde(default)]
    pub source_labels: Option<Vec<usize>>,
    #[serde(default)]
    pub target_labels: Option<Vec<usize>>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Share class-conditional components between the domains.
    #[serde(default)]
    pub anticausal: bool,
    /// Translation applied to every target mean.
    #[serde(default)]
    pub target_shift: Option<Vec<f64>>,
    /// Rotation (radians) of target means in the first two coordinates, about the origin.
    #[serde(default)]
    pub target_rotation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DaPairSpec {
    pub fn new(setting: DaSetting, global_classes: usize, dims: usize, separation: f64) -> Self {
        Self {
            setting,
            global_classes,
            dims,
            separation,
            source_marginal: None,
            target_marginal: None,
            source_labels: None,
            target_labels: None,
            sigma: 1.0,
            anticausal: false,
            target_shift: None,
            target_rotation: 0.0,
            seed: 0,
        }
    }

    pub fn label_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let (ds, dt) = self.setting.default_label_sets(self.global_classes);
        (self.source_labels.clone().unwrap_or(ds), self.target_labels.clone().unwrap_or(dt))
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_classes == 0 || self.dims == 0 {
            return Err(Error::Config("global_classes and dims must be positive".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be positive, got {}", self.separation)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        let (ys, yt) = self.label_sets();
        if ys.is_empty() || yt.is_empty() {
            return Err(Error::Config("label sets must be non-empty".into()));
        }
        if !self.setting.holds(&ys, &yt) {
            return Err(Error::Config(format!(
                "label sets {ys:?} / {yt:?} do not form a {} setting",
                self.setting.name()
            )));
        }
        for (w, labels, side) in [(&self.source_marginal, &ys, "source"), (&self.target_marginal, &yt, "target")] {
            if let Some(w) = w {
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config(format!("{side} marginal must be non-negative with positive mass")));
                }
                if w.len() != labels.len() {
                    return Err(Error::Config(format!(
                        "{side} marginal has {} entries for {} labels",
                        w.len(),
                        labels.len()
                    )));
                }
            }
        }
        if let Some(shift) = &self.target_shift {
            if shift.len() != self.dims {
                return Err(Error::Config("target_shift must have `dims` entries".into()));
            }
        }
        if self.target_rotation != 0.0 && self.dims < 2 {
            return Err(Error::Config("target_rotation needs at least two dims".into()));
        }
        let moves = self.target_rotation != 0.0 || self.target_shift.as_ref().is_some_and(|s| s.iter().any(|v| *v != 0.0));
        if self.anticausal && moves {
            return Err(Error::Config("anticausal pairs cannot move target means".into()));
        }
        Ok(())
    }
}

/// Builds the source and target domains. All classes share one mean layout;
/// the target layout is then shifted/rotated when requested.
pub fn make_da_pair(spec: &DaPairSpec) -> Result<(MixtureDomain, MixtureDomain)> {
    spec.validate()?;
    let (ys, yt) = spec.label_sets();
    let m = spec.global_classes;
    let gap = spec.separation * spec.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut means = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let candidate = place_means(m, spec.dims, gap, &mut rng);
        if min_pairwise(&candidate) >= gap * (1.0 - 1e-9) {
            means = Some(candidate);
            break;
        }
    }
    let means = means.ok_or(Error::PlacementFailure { attempts: MAX_PLACEMENT_ATTEMPTS })?;

    let source_components: Vec<Arc<GaussianComponent>> = means
        .iter()
        .map(|mu| GaussianComponent::isotropic(mu.clone(), spec.sigma).map(Arc::new))
        .collect::<Result<_>>()?;
    let target_means: Vec<Vec<f64>> = means.iter().map(|mu| move_mean(mu, spec)).collect();
    let target_components: Vec<Arc<GaussianComponent>> = if spec.anticausal {
        source_components.clone()
    } else {
        target_means
            .iter()
            .map(|mu| GaussianComponent::isotropic(mu.clone(), spec.sigma).map(Arc::new))
            .collect::<Result<_>>()?
    };

    let marginal = |w: &Option<Vec<f64>>, n: usize| -> Result<ProbVector> {
        match w {
            Some(w) => normalize_to_simplex(w),
            None => Ok(ProbVector::uniform(n)),
        }
    };
    let source = MixtureDomain::new(
        ys.iter().map(|&y| source_components[y].clone()).collect(),
        marginal(&spec.source_marginal, ys.len())?,
        ys.clone(),
        m,
    )?;
    let target = MixtureDomain::new(
        yt.iter().map(|&y| target_components[y].clone()).collect(),
        marginal(&spec.target_marginal, yt.len())?,
        yt.clone(),
        m,
    )?;
    for dom in [&source, &target] {
        check_separation(dom, spec.separation)?;
    }
    Ok((source, target))
}

fn move_mean(mu: &[f64], spec: &DaPairSpec) -> Vec<f64> {
    let mut out = mu.to_vec();
    if spec.target_rotation != 0.0 {
        let (s, c) = spec.target_rotation.sin_cos();
        let (x, y) = (out[0], out[1]);
        out[0] = c * x - s * y;
        out[1] = s * x + c * y;
    }
    if let Some(shift) = &spec.target_shift {
        for (o, s) in out.iter_mut().zip(shift) {
            *o += s;
        }
    }
    out
}

/// Regular simplex with edge `gap` when `d ≥ m − 1`, otherwise uniform
/// draws in a cube wide enough that rejection succeeds quickly.
fn place_means<R: Rng + ?Sized>(m: usize, d: usize, gap: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if m == 1 {
        return vec![vec![0.0; d]];
    }
    if d + 1 >= m {
        return regular_simplex(m, d, gap);
    }
    let half = gap * m as f64;
    (0..m).map(|_| (0..d).map(|_| rng.random_range(-half..half)).collect()).collect()
}

/// `m` points in `R^d` (`d ≥ m − 1`) with all pairwise distances equal to `edge`,
/// centred at the origin.
fn regular_simplex(m: usize, d: usize, edge: f64) -> Vec<Vec<f64>> {
    // Centred standard basis vectors of R^m have pairwise distance sqrt(2) and
    // span an (m − 1)-dimensional subspace; express them in an orthonormal
    // basis of that subspace.
    let centred: Vec<DVector<f64>> = (0..m)
        .map(|k| DVector::from_fn(m, |i, _| if i == k { 1.0 } else { 0.0 } - 1.0 / m as f64))
        .collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in &centred {
        let mut w = v.clone();
        for b in &basis {
            w -= b * b.dot(&w);
        }
        let n = w.norm();
        if n > 1e-10 {
            basis.push(w / n);
        }
        if basis.len() + 1 == m {
            break;
        }
    }
    let scale = edge / std::f64::consts::SQRT_2;
    centred
        .iter()
        .map(|v| {
            let mut p = vec![0.0; d];
            for (k, b) in basis.iter().enumerate() {
                p[k] = scale * b.dot(v);
            }
            p
        })
        .collect()
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}

/// Verifies `‖μ_y − μ_y'‖ ≥ D · max(‖Σ_y‖^{1/2}, ‖Σ_y'‖^{1/2})` for all pairs.
pub fn check_separation(domain: &MixtureDomain, separation: f64) -> Result<()> {
    let comps = domain.components();
    for i in 0..comps.len() {
        for j in i + 1..comps.len() {
            let dist = comps[i].mean().iter().zip(comps[j].mean()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let need = separation * comps[i].op_norm().sqrt().max(comps[j].op_norm().sqrt());
            // Relative slack for the floating-point construction of exact placements.
            if dist < need * (1.0 - 1e-9) {
                return Err(Error::PlacementFailure { attempts: MAX_PLACEMENT_ATTEMPTS });
            }
        }
    }
    Ok(())
}

/// Labeled feature vectors read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Vec<usize> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Empirical class frequencies aligned with [`label_set`](Self::label_set).
    pub fn class_frequencies(&self) -> Vec<f64> {
        let set = self.label_set();
        let mut counts = vec![0usize; set.len()];
        for y in &self.labels {
            counts[set.binary_search(y).expect("label comes from the set")] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.labels.len() as f64).collect()
    }
}

/// Reads a CSV with header `label,f0,f1,...`.
pub fn load_feature_csv(path: &Path) -> Result<LabeledFeatures> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::Config("feature CSV header must be `label,f0,f1,...`".into()));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{k}") {
            return Err(Error::Config(format!("feature column {} is named `{h}`, expected `f{k}`", k + 1)));
        }
    }
    let dim = headers.len() - 1;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("row {}: label `{}` is not a class id", row + 1, &rec[0])))?;
        let mut p = Vec::with_capacity(dim);
        for v in rec.iter().skip(1) {
            let x: f64 =
                v.trim().parse().map_err(|_| Error::Config(format!("row {}: `{v}` is not a number", row + 1)))?;
            if !x.is_finite() {
                return Err(Error::Config(format!("row {}: non-finite feature", row + 1)));
            }
            p.push(x);
        }
        points.push(p);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(Error::Config("feature CSV has no rows".into()));
    }
    Ok(LabeledFeatures { points, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_1d(sep: f64, w: [f64; 2]) -> MixtureDomain {
        let c0 = Arc::new(GaussianComponent::isotropic(vec![-sep / 2.0], 1.0).unwrap());
        let c1 = Arc::new(GaussianComponent::isotropic(vec![sep / 2.0], 1.0).unwrap());
        MixtureDomain::new(vec![c0, c1], normalize_to_simplex(&w).unwrap(), vec![0, 1], 2).unwrap()
    }

    #[test]
    fn rejects_bad_covariance() {
        assert!(GaussianComponent::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(GaussianComponent::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn op_norm_and_density() {
        let c = GaussianComponent::new(vec![0.0, 0.0], vec![3.0, 1.0, 1.0, 3.0]).unwrap();
        assert!((c.op_norm() - 4.0).abs() < 1e-9);
        let iso = GaussianComponent::isotropic(vec![1.0], 2.0).unwrap();
        let direct = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - 0.5 * (0.5f64 / 2.0).powi(2);
        assert!((iso.log_density(&[1.5]) - direct).abs() < 1e-12);
    }

    #[test]
    fn symmetric_posterior() {
        let dom = two_class_1d(2.0, [0.5, 0.5]);
        let p = dom.bayes_posterior(&[0.0]).unwrap();
        assert!((p.as_slice()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separated_posterior_is_sharp() {
        let dom = two_class_1d(20.0, [0.5, 0.5]);
        let p = dom.bayes_posterior(&[-10.0]).unwrap();
        assert!(p.as_slice()[0] >= 1.0 - 1e-20);
        // log-odds are exactly −20·x for unit variance means ±10.
        assert!(p.as_slice()[1] > 0.0 && (p.as_slice()[1].ln() - (-200.0)).abs() < 1e-9);
    }

    #[test]
    fn empty_and_deterministic_sampling() {
        let dom = two_class_1d(4.0, [0.8, 0.2]);
        let (x, y) = dom.sample_labeled(0, 1);
        assert!(x.is_empty() && y.is_empty());
        assert_eq!(dom.sample_labeled(50, 7), dom.sample_labeled(50, 7));
        assert_ne!(dom.sample_labeled(50, 7).0, dom.sample_labeled(50, 8).0);
    }

    #[test]
    fn sampling_frequencies() {
        let dom = two_class_1d(4.0, [0.8, 0.2]);
        let (_, y) = dom.sample_labeled(10_000, 11);
        let freq = y.iter().filter(|&&l| l == 0).count() as f64 / 10_000.0;
        assert!((freq - 0.8).abs() <= 3.0 * (0.8f64 * 0.2 / 10_000.0).sqrt());
    }

    #[test]
    fn closed_pair_is_separated() {
        let spec = DaPairSpec::new(DaSetting::Closed, 3, 2, 10.0);
        let (s, t) = make_da_pair(&spec).unwrap();
        assert_eq!(s.label_set(), t.label_set());
        let m = s.components();
        for i in 0..3 {
            for j in i + 1..3 {
                let d: f64 = m[i].mean().iter().zip(m[j].mean()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d - 10.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_label_sets_per_setting() {
        let (s, t) = DaSetting::Partial.default_label_sets(9);
        assert_eq!(s, (0..9).collect::<Vec<_>>());
        assert_eq!(t, (0..6).collect::<Vec<_>>());
        let (s, t) = DaSetting::Universal.default_label_sets(10);
        assert_eq!(s, vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(t, vec![0, 1, 2, 3, 7, 8, 9]);
        for setting in DaSetting::ALL {
            for m in 2..12 {
                let (s, t) = setting.default_label_sets(m);
                if setting == DaSetting::Universal && m < 3 {
                    continue;
                }
                assert!(setting.holds(&s, &t), "{setting:?} m={m}");
            }
        }
    }

    #[test]
    fn random_placement_in_low_dims() {
        let mut spec = DaPairSpec::new(DaSetting::Universal, 10, 2, 5.0);
        spec.seed = 4;
        let (s, t) = make_da_pair(&spec).unwrap();
        assert_eq!(s.label_set(), &[0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(t.label_set(), &[0, 1, 2, 3, 7, 8, 9]);
    }

    #[test]
    fn anticausal_shares_components() {
        let mut spec = DaPairSpec::new(DaSetting::Closed, 2, 2, 10.0);
        spec.anticausal = true;
        let (s, t) = make_da_pair(&spec).unwrap();
        for y in 0..2 {
            assert!(Arc::ptr_eq(s.component_for(y).unwrap(), t.component_for(y).unwrap()));
        }
        spec.anticausal = false;
        let (s, t) = make_da_pair(&spec).unwrap();
        assert!(!Arc::ptr_eq(s.component_for(0).unwrap(), t.component_for(0).unwrap()));
    }

    #[test]
    fn posterior_ignores_marginal_scale() {
        let a = two_class_1d(3.0, [0.3, 0.7]);
        let b = two_class_1d(3.0, [0.3 * 8.0, 0.7 * 8.0]);
        let c = two_class_1d(3.0, [0.3 * 3.7, 0.7 * 3.7]);
        for x in [-2.0, -0.1, 0.0, 0.4, 5.0] {
            assert_eq!(a.bayes_posterior(&[x]).unwrap(), b.bayes_posterior(&[x]).unwrap());
            let (pa, pc) = (a.bayes_posterior(&[x]).unwrap(), c.bayes_posterior(&[x]).unwrap());
            for (u, v) in pa.as_slice().iter().zip(pc.as_slice()) {
                assert!((u - v).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let mut spec = DaPairSpec::new(DaSetting::Partial, 3, 2, 5.0);
        spec.target_labels = Some(vec![0, 1, 2]);
        assert!(matches!(make_da_pair(&spec), Err(Error::Config(_))));
        let mut spec = DaPairSpec::new(DaSetting::Closed, 3, 2, 5.0);
        spec.source_marginal = Some(vec![0.5, 0.5]);
        assert!(make_da_pair(&spec).is_err());
    }

    #[test]
    fn unplaceable_means_fail() {
        // Forty means drawn uniformly on a segment of length 400 essentially
        // never keep every gap at 5 or more.
        let spec = DaPairSpec::new(DaSetting::Closed, 40, 1, 5.0);
        assert!(matches!(make_da_pair(&spec), Err(Error::PlacementFailure { attempts: 100 })));
    }

    #[test]
    fn feature_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "label,f0,f1\n0,1.5,2\n2,-1,0.25\n0,0,0\n").unwrap();
        let f = load_feature_csv(&path).unwrap();
        assert_eq!(f.labels, vec![0, 2, 0]);
        assert_eq!(f.points[1], vec![-1.0, 0.25]);
        assert_eq!(f.label_set(), vec![0, 2]);
        std::fs::write(&path, "y,f0\n0,1\n").unwrap();
        assert!(load_feature_csv(&path).is_err());
        std::fs::write(&path, "label,f0\n0,abc\n").unwrap();
        assert!(load_feature_csv(&path).is_err());
    }
}
