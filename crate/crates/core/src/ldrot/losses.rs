use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{DenseNet, ForwardCache};
use crate::ot::semidual_objective_grad;
use crate::simplex::{cosine_distance_grad, cosine_similarity, kl_clamped, kl_clamped_grad, lp_pow};

/// Norm floor for cosine distances on latents, so a dead ReLU latent gives
/// distance 1 instead of an error during training.
pub const LATENT_NORM_FLOOR: f64 = 1e-12;

/// Probability floor inside entropy terms.
const PROB_FLOOR: f64 = 1e-300;

/// Feature extractor plus source and target heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub g: DenseNet,
    pub head_s: DenseNet,
    pub head_t: DenseNet,
}

/// Gradients for [`Nets`], one flat buffer per network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub g: Vec<f64>,
    pub head_s: Vec<f64>,
    pub head_t: Vec<f64>,
}

impl NetGrads {
    pub fn zeros(nets: &Nets) -> Self {
        Self {
            g: vec![0.0; nets.g.n_params()],
            head_s: vec![0.0; nets.head_s.n_params()],
            head_t: vec![0.0; nets.head_t.n_params()],
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &NetGrads, scale: f64) {
        for (a, b) in [(&mut self.g, &other.g), (&mut self.head_s, &other.head_s), (&mut self.head_t, &other.head_t)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

impl Nets {
    /// Flat concatenation `g, head_s, head_t`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.g.params();
        p.extend(self.head_s.params());
        p.extend(self.head_t.params());
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let (ng, ns) = (self.g.n_params(), self.head_s.n_params());
        crate::error::ensure_same_dim(ng + ns + self.head_t.n_params(), flat.len())?;
        self.g.set_params(&flat[..ng])?;
        self.head_s.set_params(&flat[ng..ng + ns])?;
        self.head_t.set_params(&flat[ng + ns..])
    }

    pub fn flatten(grads: &NetGrads) -> Vec<f64> {
        let mut v = grads.g.clone();
        v.extend_from_slice(&grads.head_s);
        v.extend_from_slice(&grads.head_t);
        v
    }
}

/// Per-pair multipliers on the latent distance.
#[derive(Debug, Clone, PartialEq)]
pub enum PairWeights {
    /// The same `λ` for every pair.
    Constant(f64),
    /// `(source batch) × (target batch)` similarity weights.
    Matrix(SimilarityWeights),
}

impl PairWeights {
    fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            PairWeights::Constant(l) => *l,
            PairWeights::Matrix(w) => w.matrix.get(i, j),
        }
    }
}

/// `w_ij = exp((s_ij − μ_j) / τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub matrix: Matrix,
}

/// Linear-interpolation percentile (`q ∈ [0, 1]`) of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Similarity weights between a class-balanced source batch and a target batch.
///
/// `s_ij` is the cosine similarity of the representations; for each target
/// column `j`, `μ_j` is the `(M−1)/M` percentile of the column sorted ascending.
pub fn similarity_weights(
    src_features: &[Vec<f64>],
    src_labels: &[usize],
    tgt_features: &[Vec<f64>],
    tau: f64,
    classes: usize,
) -> Result<SimilarityWeights> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if src_features.is_empty() || tgt_features.is_empty() {
        return Err(Error::Domain("similarity weights need non-empty batches".into()));
    }
    crate::error::ensure_same_dim(src_features.len(), src_labels.len())?;
    check_balanced(src_labels, classes)?;
    let sims = Matrix::from_fn(src_features.len(), tgt_features.len(), |_, _| 0.0);
    let mut sims = sims;
    for (i, a) in src_features.iter().enumerate() {
        for (j, b) in tgt_features.iter().enumerate() {
            sims.set(i, j, cosine_similarity(a, b)?);
        }
    }
    Ok(weights_from_similarities(&sims, tau, classes))
}

/// Weights from a precomputed similarity matrix (rows: source, columns: target).
pub fn weights_from_similarities(sims: &Matrix, tau: f64, classes: usize) -> SimilarityWeights {
    let q = (classes.saturating_sub(1)) as f64 / classes as f64;
    let mut matrix = Matrix::zeros(sims.rows(), sims.cols());
    let mut col = vec![0.0; sims.rows()];
    for j in 0..sims.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = sims.get(i, j);
        }
        col.sort_by(f64::total_cmp);
        let mu = percentile_sorted(&col, q);
        for i in 0..sims.rows() {
            matrix.set(i, j, ((sims.get(i, j) - mu) / tau).exp());
        }
    }
    SimilarityWeights { matrix }
}

fn check_balanced(labels: &[usize], classes: usize) -> Result<()> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::Precondition(format!("label {y} outside {classes} classes")));
        }
        counts[y] += 1;
    }
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Precondition(format!("source batch is not class-balanced: {counts:?}")));
    }
    Ok(())
}

/// Forward passes of `g` and one head over a batch.
struct Pass {
    latent: Vec<Vec<f64>>,
    g_cache: Vec<ForwardCache>,
    probs: Vec<Vec<f64>>,
    head_cache: Vec<ForwardCache>,
}

fn run(g: &DenseNet, head: &DenseNet, xs: &[Vec<f64>]) -> Result<Pass> {
    let mut pass = Pass {
        latent: Vec::with_capacity(xs.len()),
        g_cache: Vec::with_capacity(xs.len()),
        probs: Vec::with_capacity(xs.len()),
        head_cache: Vec::with_capacity(xs.len()),
    };
    for x in xs {
        let (z, gc) = g.forward(x)?;
        let (p, hc) = head.forward(&z)?;
        pass.latent.push(z);
        pass.g_cache.push(gc);
        pass.probs.push(p);
        pass.head_cache.push(hc);
    }
    Ok(pass)
}

/// Semi-dual cost matrix between two batches and the data needed to differentiate it.
pub struct ShiftingCost {
    pub cost: Matrix,
    pub src_latent: Vec<Vec<f64>>,
    pub tgt_latent: Vec<Vec<f64>>,
}

/// `d̄_ij = w_ij · cosine(g(x_i^S), g(x_j^T)) + KL(h^S(x_i^S) ‖ h^T(x_j^T))`.
pub fn shifting_cost(nets: &Nets, src: &[Vec<f64>], tgt: &[Vec<f64>], weights: &PairWeights) -> Result<ShiftingCost> {
    let s = run(&nets.g, &nets.head_s, src)?;
    let t = run(&nets.g, &nets.head_t, tgt)?;
    let cost = Matrix::from_fn(src.len(), tgt.len(), |i, j| {
        let dx = cosine_distance_grad(&s.latent[i], &t.latent[j], LATENT_NORM_FLOOR).0;
        weights.get(i, j) * dx + kl_clamped(&s.probs[i], &t.probs[j])
    });
    Ok(ShiftingCost { cost, src_latent: s.latent, tgt_latent: t.latent })
}

/// Value and gradients of the shifting loss.
#[derive(Debug, Clone)]
pub struct ShiftingLoss {
    /// Semi-dual objective with uniform batch weights.
    pub value: f64,
    pub grads: NetGrads,
    /// Gradient of the value with respect to `φ`'s parameters.
    pub phi_grads: Vec<f64>,
}

/// Semi-dual objective of the similarity-aware cost between the batches, with
/// `φ` evaluated on source latents, differentiated through `φ`'s input, the
/// latent distance, and both heads.
pub fn shifting_loss(
    nets: &Nets,
    phi: &DenseNet,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    weights: &PairWeights,
    epsilon: f64,
) -> Result<ShiftingLoss> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Domain("shifting loss needs non-empty batches".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    let (n, m) = (src.len(), tgt.len());
    let s = run(&nets.g, &nets.head_s, src)?;
    let t = run(&nets.g, &nets.head_t, tgt)?;

    let mut cost = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let dx = cosine_distance_grad(&s.latent[i], &t.latent[j], LATENT_NORM_FLOOR).0;
            cost.set(i, j, weights.get(i, j) * dx + kl_clamped(&s.probs[i], &t.probs[j]));
        }
    }
    let mut phi_vals = Vec::with_capacity(n);
    let mut phi_caches = Vec::with_capacity(n);
    for z in &s.latent {
        let (v, c) = phi.forward(z)?;
        phi_vals.push(v[0]);
        phi_caches.push(c);
    }
    let a = vec![1.0 / n as f64; n];
    let b = vec![1.0 / m as f64; m];
    let (value, g_phi, g_cost) = semidual_objective_grad(&phi_vals, &cost, &a, &b, epsilon);
    if !value.is_finite() {
        return Err(Error::NumericalFailure { step: 0, what: format!("shifting loss is {value}") });
    }

    let mut grads = NetGrads::zeros(nets);
    let mut phi_grads = vec![0.0; phi.n_params()];
    let mut d_src_latent = vec![vec![0.0; nets.g.output_dim()]; n];
    let mut d_tgt_latent = vec![vec![0.0; nets.g.output_dim()]; m];
    let mut d_src_prob = vec![vec![0.0; nets.head_s.output_dim()]; n];
    let mut d_tgt_prob = vec![vec![0.0; nets.head_t.output_dim()]; m];

    for i in 0..n {
        let gz = phi.backward_accumulate(&[g_phi[i]], &phi_caches[i], &mut phi_grads)?;
        add(&mut d_src_latent[i], &gz, 1.0);
        for j in 0..m {
            let gc = g_cost.get(i, j);
            if gc == 0.0 {
                continue;
            }
            let w = weights.get(i, j);
            if w != 0.0 {
                let (_, da, db) = cosine_distance_grad(&s.latent[i], &t.latent[j], LATENT_NORM_FLOOR);
                add(&mut d_src_latent[i], &da, gc * w);
                add(&mut d_tgt_latent[j], &db, gc * w);
            }
            let (_, dp, dq) = kl_clamped_grad(&s.probs[i], &t.probs[j]);
            add(&mut d_src_prob[i], &dp, gc);
            add(&mut d_tgt_prob[j], &dq, gc);
        }
    }
    for i in 0..n {
        let gz = nets.head_s.backward_accumulate(&d_src_prob[i], &s.head_cache[i], &mut grads.head_s)?;
        add(&mut d_src_latent[i], &gz, 1.0);
        nets.g.backward_accumulate(&d_src_latent[i], &s.g_cache[i], &mut grads.g)?;
    }
    for j in 0..m {
        let gz = nets.head_t.backward_accumulate(&d_tgt_prob[j], &t.head_cache[j], &mut grads.head_t)?;
        add(&mut d_tgt_latent[j], &gz, 1.0);
        nets.g.backward_accumulate(&d_tgt_latent[j], &t.g_cache[j], &mut grads.g)?;
    }
    Ok(ShiftingLoss { value, grads, phi_grads })
}

fn add(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Value and gradients of a loss that touches only `g` and one head.
#[derive(Debug, Clone)]
pub struct ClusteringLoss {
    pub value: f64,
    pub entropy: f64,
    pub vat: f64,
    pub grads: NetGrads,
}

/// Target-prediction entropy plus virtual adversarial smoothness.
///
/// The adversarial direction comes from one power iteration started at a
/// random unit vector scaled to `1e-6 · θ`; the clean prediction is held
/// fixed. The VAT mean weights source and target batches equally.
pub fn clustering_loss<R: Rng + ?Sized>(
    nets: &Nets,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    theta: f64,
    rng: &mut R,
) -> Result<ClusteringLoss> {
    if !(theta >= 0.0) {
        return Err(Error::Domain(format!("theta must be non-negative, got {theta}")));
    }
    let mut grads = NetGrads::zeros(nets);
    let (g, head) = (&nets.g, &nets.head_t);

    let mut ent = 0.0;
    if !tgt.is_empty() {
        let scale = 1.0 / tgt.len() as f64;
        for x in tgt {
            let (z, gc) = g.forward(x)?;
            let (p, hc) = head.forward(&z)?;
            ent += scale * entropy(&p);
            let dp: Vec<f64> = p.iter().map(|&q| -scale * (q.max(PROB_FLOOR).ln() + 1.0)).collect();
            let gz = head.backward_accumulate(&dp, &hc, &mut grads.head_t)?;
            g.backward_accumulate(&gz, &gc, &mut grads.g)?;
        }
    }

    let mut vat = 0.0;
    if theta > 0.0 {
        for (batch, share) in [(src, 0.5), (tgt, 0.5)] {
            if batch.is_empty() {
                continue;
            }
            let share = if src.is_empty() || tgt.is_empty() { 1.0 } else { share };
            let scale = share / batch.len() as f64;
            for x in batch {
                let clean = head.predict(&g.predict(x)?)?;
                let r = adversarial_direction(g, head, x, &clean, theta, rng)?;
                let xr: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
                let (z, gc) = g.forward(&xr)?;
                let (q, hc) = head.forward(&z)?;
                vat += scale * kl_plain(&clean, &q);
                let dq: Vec<f64> = clean.iter().zip(&q).map(|(&p, &q)| -scale * p / q.max(PROB_FLOOR)).collect();
                let gz = head.backward_accumulate(&dq, &hc, &mut grads.head_t)?;
                g.backward_accumulate(&gz, &gc, &mut grads.g)?;
            }
        }
    }
    let value = ent + vat;
    if !value.is_finite() {
        return Err(Error::NumericalFailure { step: 0, what: format!("clustering loss is {value}") });
    }
    Ok(ClusteringLoss { value, entropy: ent, vat, grads })
}

/// `KL(p ‖ q)` without clamping, skipping zero entries of `p`.
fn kl_plain(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Perturbation of length `θ` along the power-iteration estimate of the
/// direction that most increases `KL(clean ‖ h(g(x + r)))`.
pub fn adversarial_direction<R: Rng + ?Sized>(
    g: &DenseNet,
    head: &DenseNet,
    x: &[f64],
    clean: &[f64],
    theta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = x.len();
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    normalize(&mut dir);
    let xi = 1e-6 * theta;
    let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + xi * b).collect();
    let (z, gc) = g.forward(&xp)?;
    let (q, hc) = head.forward(&z)?;
    let dq: Vec<f64> = clean.iter().zip(&q).map(|(&p, &q)| -p / q.max(PROB_FLOOR)).collect();
    let (_, gz) = head.backward(&dq, &hc)?;
    let (_, mut gx) = g.backward(&gz, &gc)?;
    if !normalize(&mut gx) {
        gx = dir;
    }
    Ok(gx.into_iter().map(|v| theta * v).collect())
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Mean clamped `KL(one-hot(y) ‖ h^S(g(x)))` over a labeled batch, i.e. cross-entropy
/// up to the clamp, with gradients for `g` and `head_s`.
pub fn source_loss(nets: &Nets, xs: &[Vec<f64>], ys: &[usize]) -> Result<(f64, NetGrads)> {
    crate::error::ensure_same_dim(xs.len(), ys.len())?;
    let mut grads = NetGrads::zeros(nets);
    let mut value = 0.0;
    let scale = 1.0 / xs.len().max(1) as f64;
    let m = nets.head_s.output_dim();
    for (x, &y) in xs.iter().zip(ys) {
        let (z, gc) = nets.g.forward(x)?;
        let (p, hc) = nets.head_s.forward(&z)?;
        let target = one_hot(m, y)?;
        let (v, _, dp) = kl_clamped_grad(&target, &p);
        value += scale * v;
        let dp: Vec<f64> = dp.iter().map(|d| scale * d).collect();
        let gz = nets.head_s.backward_accumulate(&dp, &hc, &mut grads.head_s)?;
        nets.g.backward_accumulate(&gz, &gc, &mut grads.g)?;
    }
    Ok((value, grads))
}

fn one_hot(m: usize, y: usize) -> Result<Vec<f64>> {
    if y >= m {
        return Err(Error::Domain(format!("label {y} outside {m} classes")));
    }
    let mut v = vec![0.0; m];
    v[y] = 1.0;
    Ok(v)
}

/// Semi-dual objective of the L1 latent distance, used by the invariance
/// demonstration; returns `(value, grads for g, grads for φ)`.
pub fn latent_l1_shift(
    g: &DenseNet,
    phi: &DenseNet,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    epsilon: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (n, m) = (src.len(), tgt.len());
    let mut zs = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for x in src {
        let (z, c) = g.forward(x)?;
        zs.push(z);
        cs.push(c);
    }
    let mut zt = Vec::with_capacity(m);
    let mut ct = Vec::with_capacity(m);
    for x in tgt {
        let (z, c) = g.forward(x)?;
        zt.push(z);
        ct.push(c);
    }
    let cost = Matrix::from_fn(n, m, |i, j| lp_pow(&zs[i], &zt[j], 1.0));
    let mut phi_vals = Vec::with_capacity(n);
    let mut phi_caches = Vec::with_capacity(n);
    for z in &zs {
        let (v, c) = phi.forward(z)?;
        phi_vals.push(v[0]);
        phi_caches.push(c);
    }
    let a = vec![1.0 / n as f64; n];
    let b = vec![1.0 / m as f64; m];
    let (value, g_phi, g_cost) = semidual_objective_grad(&phi_vals, &cost, &a, &b, epsilon);
    if !value.is_finite() {
        return Err(Error::NumericalFailure { step: 0, what: format!("latent shift is {value}") });
    }
    let mut g_grads = vec![0.0; g.n_params()];
    let mut phi_grads = vec![0.0; phi.n_params()];
    let dim = g.output_dim();
    let mut dzs = vec![vec![0.0; dim]; n];
    let mut dzt = vec![vec![0.0; dim]; m];
    for i in 0..n {
        let gz = phi.backward_accumulate(&[g_phi[i]], &phi_caches[i], &mut phi_grads)?;
        add(&mut dzs[i], &gz, 1.0);
        for j in 0..m {
            let gc = g_cost.get(i, j);
            for k in 0..dim {
                let s = (zs[i][k] - zt[j][k]).signum() * if zs[i][k] == zt[j][k] { 0.0 } else { 1.0 };
                dzs[i][k] += gc * s;
                dzt[j][k] -= gc * s;
            }
        }
    }
    for i in 0..n {
        g.backward_accumulate(&dzs[i], &cs[i], &mut g_grads)?;
    }
    for j in 0..m {
        g.backward_accumulate(&dzt[j], &ct[j], &mut g_grads)?;
    }
    Ok((value, g_grads, phi_grads))
}
