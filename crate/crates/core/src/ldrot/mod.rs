//! Domain adaptation trainer: supervised source loss, a similarity-weighted
//! entropic shifting loss between latent/label pairs, and a clustering loss
//! on target predictions. Also hosts the latent-invariance demonstration.

mod losses;

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    adversarial_direction, clustering_loss, entropy, latent_l1_shift, percentile_sorted, shifting_cost, shifting_loss,
    similarity_weights, source_loss, weights_from_similarities, ClusteringLoss, NetGrads, Nets, PairWeights,
    ShiftingCost, ShiftingLoss, SimilarityWeights, LATENT_NORM_FLOOR,
};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixture::LabeledFeatures;
use crate::nn::{Activation, Adam, DenseNet};
use crate::ot::{exact_ot_matrix, Potential, PotentialSpec, SemiDualAscent};
use crate::simplex::{argmax, cosine_distance_grad, lp_pow};

/// Weight on the latent alignment term in [`invariance_demo`].
pub const INVARIANCE_WEIGHT: f64 = 0.1;

/// How the latent distance is weighted inside the shifting cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaMode {
    Constant { lambda: f64 },
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdrotConfig {
    /// Shifting loss weight.
    pub alpha: f64,
    /// Clustering loss weight.
    pub beta: f64,
    pub epsilon: f64,
    /// Similarity weight temperature.
    pub tau: f64,
    /// VAT radius; `None` uses half the median pairwise distance of a target batch.
    pub theta: Option<f64>,
    pub lambda_mode: LambdaMode,
    /// Potential ascent steps per classifier step.
    pub k_phi: usize,
    pub classes: usize,
    /// Source batch holds this many examples of each source class.
    pub per_class_batch: usize,
    pub target_batch: usize,
    pub lr_classifier: f64,
    pub lr_phi: f64,
    pub total_steps: usize,
    /// Source-only steps before adaptation; the warmed-up `g` is frozen as the
    /// similarity feature extractor and both heads start from the source head.
    pub warmup_steps: usize,
    /// Widths of `g`'s layers after the input.
    pub hidden: Vec<usize>,
    /// Points per side in the fixed subsets used for `ws_latent`.
    pub eval_size: usize,
    pub seed: u64,
}

impl Default for LdrotConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            epsilon: 0.1,
            tau: 0.5,
            theta: None,
            lambda_mode: LambdaMode::Similarity,
            k_phi: 5,
            classes: 2,
            per_class_batch: 16,
            target_batch: 32,
            lr_classifier: 0.001,
            lr_phi: 0.001,
            total_steps: 2000,
            warmup_steps: 500,
            hidden: vec![32, 16],
            eval_size: 64,
            seed: 0,
        }
    }
}

impl LdrotConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("alpha and beta must be finite and non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t.is_finite()) {
                return bad("theta must be positive");
            }
        }
        if let LambdaMode::Constant { lambda } = self.lambda_mode {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return bad("lambda must be finite and non-negative");
            }
        }
        if self.k_phi == 0 {
            return bad("k_phi must be at least 1");
        }
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.per_class_batch == 0 || self.target_batch == 0 || self.eval_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.lr_classifier > 0.0) || !(self.lr_phi > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }
}

/// One classifier step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss_s: f64,
    pub loss_shift: f64,
    pub loss_clus: f64,
    pub src_acc: f64,
    pub tgt_acc: f64,
    /// Exact L1 Wasserstein distance between fixed source and target latent subsets.
    pub ws_latent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, pick: impl Fn(&TrainRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    /// Writes `step,loss_s,loss_shift,loss_clus,src_acc,tgt_acc,ws_latent`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["step", "loss_s", "loss_shift", "loss_clus", "src_acc", "tgt_acc", "ws_latent"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean of the first and last quarter of a series.
pub fn quartile_means(values: &[f64]) -> (f64, f64) {
    let q = (values.len() / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&values[..q]), mean(&values[values.len() - q..]))
}

/// Trained networks and the record of how they got there.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: Nets,
    /// Running average of all classifier iterates.
    pub averaged: Nets,
    pub phi: DenseNet,
    pub history: TrainHistory,
}

/// Fraction of samples whose `argmax h(g(x))` equals the label; ties go to the lowest class.
pub fn evaluate_accuracy(g: &DenseNet, head: &DenseNet, samples: &LabeledFeatures) -> Result<f64> {
    if samples.points.is_empty() {
        return Err(Error::Precondition("accuracy needs at least one sample".into()));
    }
    crate::error::ensure_same_dim(samples.points.len(), samples.labels.len())?;
    let mut hits = 0usize;
    for (x, &y) in samples.points.iter().zip(&samples.labels) {
        if argmax(&head.predict(&g.predict(x)?)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.points.len() as f64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn head_net(latent: usize, classes: usize, rng: &mut ChaCha8Rng) -> DenseNet {
    DenseNet::new(&[latent, classes], Activation::Linear, Activation::Softmax, rng)
}

fn feature_net(input: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> DenseNet {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    DenseNet::new(&sizes, Activation::Relu, Activation::Relu, rng)
}

/// Draws class-balanced source batches and uniform target batches.
struct Sampler {
    per_class: Vec<Vec<usize>>,
    target_len: usize,
}

impl Sampler {
    fn new(source: &LabeledFeatures, target_len: usize, classes: usize) -> Result<Self> {
        let mut per_class = vec![Vec::new(); classes];
        for (i, &y) in source.labels.iter().enumerate() {
            per_class
                .get_mut(y)
                .ok_or_else(|| Error::Precondition(format!("source label {y} outside {classes} classes")))?
                .push(i);
        }
        per_class.retain(|c| !c.is_empty());
        Ok(Self { per_class, target_len })
    }

    fn source<R: Rng>(&self, per_class: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(per_class * self.per_class.len());
        for pool in &self.per_class {
            out.extend(pick(pool.len(), per_class, rng).into_iter().map(|k| pool[k]));
        }
        out
    }

    fn target<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        pick(self.target_len, n, rng)
    }
}

/// `n` indices below `len`, without replacement when possible.
fn pick<R: Rng>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    if n <= len {
        sample_indices(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

fn gather(points: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| points[i].clone()).collect()
}

fn check_data(cfg: &LdrotConfig, source: &LabeledFeatures, target: &LabeledFeatures) -> Result<()> {
    if source.points.is_empty() || target.points.is_empty() {
        return Err(Error::Precondition("source and target must be non-empty".into()));
    }
    crate::error::ensure_same_dim(source.points.len(), source.labels.len())?;
    crate::error::ensure_same_dim(target.points.len(), target.labels.len())?;
    let d = source.dim();
    if source.points.iter().chain(&target.points).any(|p| p.len() != d) {
        return Err(Error::Precondition("all points must share one dimension".into()));
    }
    if let Some(&y) = source.labels.iter().chain(&target.labels).find(|&&y| y >= cfg.classes) {
        return Err(Error::Precondition(format!("label {y} outside {} classes", cfg.classes)));
    }
    Ok(())
}

/// Half the median pairwise Euclidean distance within a batch.
pub fn median_radius(batch: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            d.push(lp_pow(&batch[i], &batch[j], 2.0).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    0.5 * percentile_sorted(&d, 0.5)
}

/// Source-only training of `g` and the source head.
fn warmup(cfg: &LdrotConfig, mut nets: Nets, source: &LabeledFeatures, sampler: &Sampler) -> Result<Nets> {
    let mut rng = stream(cfg.seed, 1);
    let mut params = nets.params();
    let mut adam = Adam::new(&params, cfg.lr_classifier);
    for step in 1..=cfg.warmup_steps {
        let idx = sampler.source(cfg.per_class_batch, &mut rng);
        let ys: Vec<usize> = idx.iter().map(|&i| source.labels[i]).collect();
        let (value, grads) = source_loss(&nets, &gather(&source.points, &idx), &ys)?;
        if !value.is_finite() {
            return Err(Error::NumericalFailure { step, what: "feature warmup diverged".into() });
        }
        adam.step(&mut params, &Nets::flatten(&grads))?;
        nets.set_params(&params)?;
    }
    Ok(nets)
}

/// Similarity weights from pretrained latents; a zero latent has similarity 0 to everything.
fn batch_weights(
    features: &DenseNet,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    tau: f64,
    classes: usize,
) -> Result<SimilarityWeights> {
    let zs = src.iter().map(|x| features.predict(x)).collect::<Result<Vec<_>>>()?;
    let zt = tgt.iter().map(|x| features.predict(x)).collect::<Result<Vec<_>>>()?;
    let sims = Matrix::from_fn(zs.len(), zt.len(), |i, j| 1.0 - cosine_distance_grad(&zs[i], &zt[j], LATENT_NORM_FLOOR).0);
    Ok(weights_from_similarities(&sims, tau, classes))
}

/// Fixed evaluation subsets and the latent distance between them.
struct LatentProbe {
    src: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
}

impl LatentProbe {
    fn new(cfg: &LdrotConfig, source: &LabeledFeatures, target: &LabeledFeatures) -> Self {
        let mut rng = stream(cfg.seed, 2);
        let si = pick(source.points.len(), cfg.eval_size.min(source.points.len()), &mut rng);
        let ti = pick(target.points.len(), cfg.eval_size.min(target.points.len()), &mut rng);
        Self { src: gather(&source.points, &si), tgt: gather(&target.points, &ti) }
    }

    fn distance(&self, g: &DenseNet) -> Result<f64> {
        let zs = self.src.iter().map(|x| g.predict(x)).collect::<Result<Vec<_>>>()?;
        let zt = self.tgt.iter().map(|x| g.predict(x)).collect::<Result<Vec<_>>>()?;
        let cost = Matrix::from_fn(zs.len(), zt.len(), |i, j| lp_pow(&zs[i], &zt[j], 1.0));
        let a = vec![1.0 / zs.len() as f64; zs.len()];
        let b = vec![1.0 / zt.len() as f64; zt.len()];
        Ok(exact_ot_matrix(&a, &b, &cost)?.0)
    }
}

fn abort(step: usize, what: String, history: &TrainHistory) -> Error {
    Error::TrainingAborted { step, what, partial: Box::new(history.clone()) }
}

fn phi_net(ascent: &SemiDualAscent) -> &DenseNet {
    match ascent.potential() {
        Potential::Net(net) => net,
        Potential::Table(_) => unreachable!("trainers build network potentials"),
    }
}

/// Trains `g`, the source head and the target head.
///
/// After `warmup_steps` of source-only training, each step runs `k_phi` ascent updates of the potential on the current
/// shifting cost, then one Adam step on `L^S + α·L^shift + β·L^clus`. Target
/// labels are used only for the `tgt_acc` column. Target accuracy is measured
/// through the target head, except when `α = β = 0`: the target head then gets
/// no training signal and the source head is used, giving the source-only baseline.
pub fn ldrot_train(cfg: &LdrotConfig, source: &LabeledFeatures, target: &LabeledFeatures) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(cfg, source, target)?;
    let mut init_rng = stream(cfg.seed, 0);
    let g = feature_net(source.dim(), &cfg.hidden, &mut init_rng);
    let head_s = head_net(cfg.latent_dim(), cfg.classes, &mut init_rng);
    let sampler = Sampler::new(source, target.points.len(), cfg.classes)?;
    let mut nets = warmup(cfg, Nets { g, head_s: head_s.clone(), head_t: head_s }, source, &sampler)?;
    nets.head_t = nets.head_s.clone();
    let features = match cfg.lambda_mode {
        LambdaMode::Similarity => Some(nets.g.clone()),
        LambdaMode::Constant { .. } => None,
    };
    let probe = LatentProbe::new(cfg, source, target);
    let mut rng = stream(cfg.seed, 3);
    let theta = match cfg.theta {
        Some(t) => t,
        None => median_radius(&gather(&target.points, &sampler.target(cfg.target_batch, &mut rng))),
    };
    let phi_spec = PotentialSpec::Net { hidden: vec![] };
    let mut ascent = SemiDualAscent::new(&phi_spec, 0, cfg.latent_dim(), cfg.lr_phi, cfg.seed);
    let mut params = nets.params();
    let mut adam = Adam::new(&params, cfg.lr_classifier);
    let target_via_source = cfg.alpha == 0.0 && cfg.beta == 0.0;
    let mut history = TrainHistory::default();

    for step in 1..=cfg.total_steps {
        let si = sampler.source(cfg.per_class_batch, &mut rng);
        let ti = sampler.target(cfg.target_batch, &mut rng);
        let (xs, xt) = (gather(&source.points, &si), gather(&target.points, &ti));
        let ys: Vec<usize> = si.iter().map(|&i| source.labels[i]).collect();
        let weights = match (&features, cfg.lambda_mode) {
            (Some(f), _) => PairWeights::Matrix(batch_weights(f, &xs, &xt, cfg.tau, cfg.classes)?),
            (None, LambdaMode::Constant { lambda }) => PairWeights::Constant(lambda),
            (None, LambdaMode::Similarity) => unreachable!("features exist in similarity mode"),
        };

        let sc = shifting_cost(&nets, &xs, &xt, &weights).map_err(|e| abort(step, e.to_string(), &history))?;
        let (a, b) = (vec![1.0 / xs.len() as f64; xs.len()], vec![1.0 / xt.len() as f64; xt.len()]);
        for _ in 0..cfg.k_phi {
            ascent
                .step(&sc.src_latent, &a, &sc.cost, &b, cfg.epsilon)
                .map_err(|e| abort(step, e.to_string(), &history))?;
        }

        let stepped = (|| -> Result<(f64, f64, f64)> {
            let (loss_s, mut grads) = source_loss(&nets, &xs, &ys)?;
            let shift = shifting_loss(&nets, phi_net(&ascent), &xs, &xt, &weights, cfg.epsilon)?;
            let clus = clustering_loss(&nets, &xs, &xt, theta, &mut rng)?;
            grads.add_scaled(&shift.grads, cfg.alpha);
            grads.add_scaled(&clus.grads, cfg.beta);
            let flat = Nets::flatten(&grads);
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalFailure { step, what: "non-finite classifier gradient".into() });
            }
            adam.step(&mut params, &flat)?;
            nets.set_params(&params)?;
            Ok((loss_s, shift.value, clus.value))
        })();
        let (loss_s, loss_shift, loss_clus) = stepped.map_err(|e| abort(step, e.to_string(), &history))?;

        let tgt_head = if target_via_source { &nets.head_s } else { &nets.head_t };
        let record = (|| -> Result<TrainRecord> {
            Ok(TrainRecord {
                step,
                loss_s,
                loss_shift,
                loss_clus,
                src_acc: evaluate_accuracy(&nets.g, &nets.head_s, source)?,
                tgt_acc: evaluate_accuracy(&nets.g, tgt_head, target)?,
                ws_latent: probe.distance(&nets.g)?,
            })
        })()
        .map_err(|e| abort(step, e.to_string(), &history))?;
        if ![record.loss_s, record.loss_shift, record.loss_clus, record.ws_latent].iter().all(|v| v.is_finite()) {
            return Err(abort(step, "non-finite loss".into(), &history));
        }
        history.records.push(record);
    }

    let mut averaged = nets.clone();
    averaged.set_params(adam.shadow())?;
    Ok(TrainOutcome { nets, averaged, phi: phi_net(&ascent).clone(), history })
}

/// Source cross-entropy plus [`INVARIANCE_WEIGHT`] times the entropic L1
/// Wasserstein distance between source and target latents.
///
/// Uses `g` with the source head only; `loss_shift` records the latent
/// alignment objective and `loss_clus` is zero.
pub fn invariance_demo(cfg: &LdrotConfig, source: &LabeledFeatures, target: &LabeledFeatures) -> Result<TrainHistory> {
    cfg.validate()?;
    check_data(cfg, source, target)?;
    let mut init_rng = stream(cfg.seed, 0);
    let g = feature_net(source.dim(), &cfg.hidden, &mut init_rng);
    let head = head_net(cfg.latent_dim(), cfg.classes, &mut init_rng);
    let mut nets = Nets { g, head_s: head.clone(), head_t: head };
    let sampler = Sampler::new(source, target.points.len(), cfg.classes)?;
    let probe = LatentProbe::new(cfg, source, target);
    let mut rng = stream(cfg.seed, 3);
    let phi_spec = PotentialSpec::Net { hidden: vec![] };
    let mut ascent = SemiDualAscent::new(&phi_spec, 0, cfg.latent_dim(), cfg.lr_phi, cfg.seed);
    let mut params = nets.params();
    let mut adam = Adam::new(&params, cfg.lr_classifier);
    let mut history = TrainHistory::default();

    for step in 1..=cfg.total_steps {
        let si = sampler.source(cfg.per_class_batch, &mut rng);
        let ti = sampler.target(cfg.target_batch, &mut rng);
        let (xs, xt) = (gather(&source.points, &si), gather(&target.points, &ti));
        let ys: Vec<usize> = si.iter().map(|&i| source.labels[i]).collect();

        let stepped = (|| -> Result<(f64, f64)> {
            let zs = xs.iter().map(|x| nets.g.predict(x)).collect::<Result<Vec<_>>>()?;
            let zt = xt.iter().map(|x| nets.g.predict(x)).collect::<Result<Vec<_>>>()?;
            let cost = Matrix::from_fn(zs.len(), zt.len(), |i, j| lp_pow(&zs[i], &zt[j], 1.0));
            let (a, b) = (vec![1.0 / zs.len() as f64; zs.len()], vec![1.0 / zt.len() as f64; zt.len()]);
            for _ in 0..cfg.k_phi {
                ascent.step(&zs, &a, &cost, &b, cfg.epsilon)?;
            }
            let (loss_s, mut grads) = source_loss(&nets, &xs, &ys)?;
            let (shift, g_shift, _) = latent_l1_shift(&nets.g, phi_net(&ascent), &xs, &xt, cfg.epsilon)?;
            for (acc, v) in grads.g.iter_mut().zip(&g_shift) {
                *acc += INVARIANCE_WEIGHT * v;
            }
            let flat = Nets::flatten(&grads);
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalFailure { step, what: "non-finite classifier gradient".into() });
            }
            adam.step(&mut params, &flat)?;
            nets.set_params(&params)?;
            Ok((loss_s, shift))
        })();
        let (loss_s, loss_shift) = stepped.map_err(|e| abort(step, e.to_string(), &history))?;
        let record = (|| -> Result<TrainRecord> {
            Ok(TrainRecord {
                step,
                loss_s,
                loss_shift,
                loss_clus: 0.0,
                src_acc: evaluate_accuracy(&nets.g, &nets.head_s, source)?,
                tgt_acc: evaluate_accuracy(&nets.g, &nets.head_s, target)?,
                ws_latent: probe.distance(&nets.g)?,
            })
        })()
        .map_err(|e| abort(step, e.to_string(), &history))?;
        if !record.ws_latent.is_finite() || !record.loss_s.is_finite() {
            return Err(abort(step, "non-finite loss".into(), &history));
        }
        history.records.push(record);
    }
    Ok(history)
}
