//! Points on the label simplex and the ground metrics used on labels and latents.
//!
//! Label-side costs (`d_Y`) are either `‖a − b‖_p^p` or a clamped KL divergence.
//! Latent-side costs (`d_X`) use cosine distance. The two are combined as
//! `weight · d_X + d_Y`, where the weight is either a constant `λ` or a
//! per-pair similarity weight.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, Error, Result};

/// Tolerance on `Σ p_i = 1` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Lower clamp applied to both KL arguments before renormalizing.
pub const KL_CLAMP: f64 = 1e-8;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `probs` and renormalizes away floating-point drift.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DegenerateVector("empty probability vector"));
        }
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Domain(format!("invalid probability entry {p}")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    /// The vertex `e_k` of the `m`-simplex.
    pub fn one_hot(m: usize, k: usize) -> Self {
        assert!(k < m, "class index {k} out of range for {m} classes");
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Self(v)
    }

    /// Uniform distribution over `m` entries.
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0);
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Places the entries of `self` (indexed by `label_ids`) into a vector
    /// over `global_classes` labels, filling missing labels with exact zeros.
    pub fn extend_to(&self, label_ids: &[usize], global_classes: usize) -> Result<Self> {
        ensure_same_dim(self.dim(), label_ids.len())?;
        let mut out = vec![0.0; global_classes];
        for (&id, &p) in label_ids.iter().zip(&self.0) {
            if id >= global_classes {
                return Err(Error::Domain(format!(
                    "label id {id} outside global label set of size {global_classes}"
                )));
            }
            out[id] = p;
        }
        Ok(Self(out))
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Clamps negatives to zero and rescales onto the simplex.
pub fn normalize_to_simplex(v: &[f64]) -> Result<ProbVector> {
    if v.is_empty() {
        return Err(Error::DegenerateVector("empty vector"));
    }
    let clamped: Vec<f64> = v
        .iter()
        .map(|&x| if x.is_nan() { 0.0 } else { x.max(0.0) })
        .collect();
    let sum: f64 = clamped.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::DegenerateVector("no positive mass after clamping"));
    }
    Ok(ProbVector(clamped.into_iter().map(|x| x / sum).collect()))
}

/// Which per-pair cost to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundMetric {
    /// `Σ |a_i − b_i|^p`, `p ≥ 1`.
    LpPow { p: f64 },
    /// `KL(a ‖ b)` after clamping both arguments to `[1e-8, 1]`.
    Kl,
    /// `1 − cos(a, b)`, in `[0, 2]`.
    Cosine,
    /// `λ · d_X + d_Y`; evaluate with [`combined_cost`].
    Combined { lambda: f64 },
    /// `w(x^S, x^T) · d_X + d_Y`; evaluate with [`combined_cost`].
    SimilarityWeighted,
}

impl GroundMetric {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GroundMetric::LpPow { p } if !(p >= 1.0 && p.is_finite()) => {
                Err(Error::Domain(format!("lp_pow needs p >= 1, got {p}")))
            }
            GroundMetric::Combined { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::Domain(format!("combined needs lambda >= 0, got {lambda}")))
            }
            _ => Ok(()),
        }
    }
}

/// Per-pair cost between two points under one of the base metrics.
///
/// `Kl` is asymmetric: pass the prediction under test first and the
/// reference second.
pub fn ground_cost(metric: &GroundMetric, a: &[f64], b: &[f64]) -> Result<f64> {
    metric.validate()?;
    ensure_same_dim(a.len(), b.len())?;
    match *metric {
        GroundMetric::LpPow { p } => Ok(lp_pow(a, b, p)),
        GroundMetric::Kl => Ok(kl_clamped(a, b)),
        GroundMetric::Cosine => cosine_distance(a, b),
        GroundMetric::Combined { .. } | GroundMetric::SimilarityWeighted => Err(Error::Domain(
            "combined metrics need both a latent and a label cost; use combined_cost".into(),
        )),
    }
}

/// `Σ |a_i − b_i|^p`.
pub fn lp_pow(a: &[f64], b: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    } else if p == 2.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum()
    }
}

fn clamp_renorm(v: &[f64]) -> (Vec<f64>, f64) {
    let c: Vec<f64> = v.iter().map(|&x| x.clamp(KL_CLAMP, 1.0)).collect();
    let s: f64 = c.iter().sum();
    (c.into_iter().map(|x| x / s).collect(), s)
}

/// Clamped KL divergence `KL(a ‖ b)`.
pub fn kl_clamped(a: &[f64], b: &[f64]) -> f64 {
    let (a, _) = clamp_renorm(a);
    let (b, _) = clamp_renorm(b);
    let v: f64 = a.iter().zip(&b).map(|(x, y)| x * (x.ln() - y.ln())).sum();
    v.max(0.0)
}

/// Clamped KL together with its gradients with respect to the raw arguments.
///
/// Entries clamped away (outside `[1e-8, 1]`) receive zero gradient.
pub fn kl_clamped_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (ah, sa) = clamp_renorm(a);
    let (bh, sb) = clamp_renorm(b);
    let value: f64 = ah.iter().zip(&bh).map(|(x, y)| x * (x.ln() - y.ln())).sum();

    let ga: Vec<f64> = ah.iter().zip(&bh).map(|(x, y)| x.ln() - y.ln() + 1.0).collect();
    let gb: Vec<f64> = ah.iter().zip(&bh).map(|(x, y)| -x / y).collect();
    let da = renorm_backward(a, &ah, &ga, sa);
    let db = renorm_backward(b, &bh, &gb, sb);
    (value, da, db)
}

fn renorm_backward(raw: &[f64], normed: &[f64], g: &[f64], sum: f64) -> Vec<f64> {
    let dot: f64 = normed.iter().zip(g).map(|(n, g)| n * g).sum();
    raw.iter()
        .zip(g)
        .map(|(&r, &gl)| {
            if (KL_CLAMP..=1.0).contains(&r) {
                (gl - dot) / sum
            } else {
                0.0
            }
        })
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; errors on a zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_dim(a.len(), b.len())?;
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("zero vector under cosine"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − cos(a, b)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Cosine distance with gradients, with norms floored at `floor` so that a
/// dead (all-zero) latent yields distance 1 and zero gradient instead of an error.
pub fn cosine_distance_grad(a: &[f64], b: &[f64], floor: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm2(a).max(floor), norm2(b).max(floor));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sim = dot / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| -(y / (na * nb) - sim * x / (na * na)))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| -(x / (na * nb) - sim * y / (nb * nb)))
        .collect();
    (1.0 - sim, da, db)
}

/// `weight · d_X + d_Y`. With a constant weight this is `d`; with a per-pair
/// similarity weight it is the similarity-aware `d̄`.
pub fn combined_cost(weight: f64, dx_value: f64, dy_value: f64) -> Result<f64> {
    for (name, v) in [("weight", weight), ("d_X", dx_value), ("d_Y", dy_value)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    Ok(weight * dx_value + dy_value)
}
