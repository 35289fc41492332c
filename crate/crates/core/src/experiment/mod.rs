//! JSON-configured experiments that write CSV (and optionally SVG) artifacts.

pub mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelshift::{
    anticausal_upper_bound, ls_entropic_stream, ls_exact, marginal_lower_bound,
    setting_lower_bound, vertex_label_shift, BoundsReport, PushforwardSample, StreamConfig,
};
use crate::ldrot::{invariance_demo, ldrot_train, LdrotConfig, TrainHistory};
use crate::mixture::{load_feature_csv, make_da_pair, DaPairSpec, DaSetting, LabeledFeatures, MixtureDomain};
use crate::ot::PotentialSpec;
use crate::simplex::GroundMetric;
use svg::{Panel, Series};

/// Environment variable that replaces the configured seeds.
pub const SEED_ENV: &str = "OTSHIFT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Labelshift,
    Invariance,
    Ldrot,
    BoundsSweep,
}

/// Streaming estimator settings for the `labelshift` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    /// Points per side in each batch.
    pub batch_size: usize,
    pub batches: usize,
    pub steps_per_batch: usize,
    pub learning_rate: f64,
    /// Order of the `‖·‖_p^p` label metric.
    pub p: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, batch_size: 250, batches: 100, steps_per_batch: 20, learning_rate: 0.01, p: 1.0 }
    }
}

/// Grid for the `bounds-sweep` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub separations: Vec<f64>,
    /// Seeds per cell, counted up from the pair seed.
    pub seeds: u64,
    /// Monte-Carlo samples per domain for the anticausal bound.
    pub n_mc: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { separations: vec![5.0, 10.0, 20.0, 40.0], seeds: 10, n_mc: 2000 }
    }
}

fn default_samples() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub da_pair: DaPairSpec,
    /// Samples drawn from each domain.
    #[serde(default = "default_samples")]
    pub samples_per_domain: usize,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub trainer: LdrotConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Settings run by `labelshift`; defaults to the pair's own setting.
    #[serde(default)]
    pub settings: Option<Vec<DaSetting>>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replaces the pair and trainer seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.da_pair.seed = seed;
        self.trainer.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        self.da_pair.validate()?;
        if self.samples_per_domain == 0 {
            return bad("samples_per_domain must be positive".into());
        }
        match self.experiment {
            ExperimentKind::Labelshift => {
                let e = &self.estimator;
                if !(e.epsilon > 0.0) || !(e.learning_rate > 0.0) || e.batch_size == 0 || e.batches == 0 {
                    return bad("estimator needs positive epsilon, learning_rate, batch_size and batches".into());
                }
                if e.batch_size > self.samples_per_domain {
                    return bad("estimator.batch_size exceeds samples_per_domain".into());
                }
                check_order(e.p)?;
                if matches!(&self.settings, Some(s) if s.is_empty()) {
                    return bad("settings must not be empty".into());
                }
            }
            ExperimentKind::BoundsSweep => {
                check_order(self.estimator.p)?;
                let s = &self.sweep;
                if s.separations.is_empty() || s.separations.iter().any(|d| !(*d > 0.0)) {
                    return bad("sweep.separations must be non-empty and positive".into());
                }
                if s.seeds == 0 || s.n_mc == 0 {
                    return bad("sweep.seeds and sweep.n_mc must be positive".into());
                }
            }
            ExperimentKind::Invariance | ExperimentKind::Ldrot => {
                self.trainer.validate()?;
                if self.trainer.classes != self.da_pair.global_classes {
                    return bad(format!(
                        "trainer.classes ({}) must equal da_pair.global_classes ({})",
                        self.trainer.classes, self.da_pair.global_classes
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("estimator.p must be ≥ 1, got {p}")));
    }
    Ok(())
}

/// Reads [`SEED_ENV`]; unset or empty means no override.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numerical failures (artifacts written so far are kept), 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::NumericalFailure { .. } | Error::TrainingAborted { .. } | Error::Unconverged { .. } => 3,
        _ => 1,
    }
}

/// Paths written by [`run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

/// Runs the configured experiment, writing into `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut artifacts = Artifacts::default();
    match cfg.experiment {
        ExperimentKind::Labelshift => run_labelshift(cfg, &mut artifacts)?,
        ExperimentKind::BoundsSweep => run_bounds_sweep(cfg, &mut artifacts)?,
        ExperimentKind::Invariance | ExperimentKind::Ldrot => run_training(cfg, &mut artifacts)?,
    }
    Ok(artifacts)
}

/// The configured pair, switched to `setting`. Label-set overrides and
/// marginals that do not fit the new label sets fall back to defaults.
pub fn pair_for_setting(base: &DaPairSpec, setting: DaSetting) -> DaPairSpec {
    let mut spec = base.clone();
    if setting != base.setting {
        spec.setting = setting;
        spec.source_labels = None;
        spec.target_labels = None;
    }
    let (ys, yt) = spec.label_sets();
    if spec.source_marginal.as_ref().is_some_and(|m| m.len() != ys.len()) {
        spec.source_marginal = None;
    }
    if spec.target_marginal.as_ref().is_some_and(|m| m.len() != yt.len()) {
        spec.target_marginal = None;
    }
    spec
}

/// Seeds used to sample the source and target domains of a pair.
pub fn sample_seeds(pair_seed: u64) -> (u64, u64) {
    (pair_seed.wrapping_mul(2).wrapping_add(1), pair_seed.wrapping_mul(2).wrapping_add(2))
}

/// Labeled samples from both domains of a pair.
pub fn sample_pair(source: &MixtureDomain, target: &MixtureDomain, n: usize, pair_seed: u64) -> (LabeledFeatures, LabeledFeatures) {
    let (ss, ts) = sample_seeds(pair_seed);
    let (xs, ys) = source.sample_labeled(n, ss);
    let (xt, yt) = target.sample_labeled(n, ts);
    (LabeledFeatures { points: xs, labels: ys }, LabeledFeatures { points: xt, labels: yt })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_svg(path: &Path, title: &str, x_label: &str, panels: &[Panel], artifacts: &mut Artifacts) -> Result<()> {
    fs::write(path, svg::render(title, x_label, panels))?;
    artifacts.files.push(path.to_path_buf());
    Ok(())
}

#[derive(Debug, Serialize)]
struct LabelshiftRow<'a> {
    batch: usize,
    dual_estimate: f64,
    exact_lp: f64,
    setting: &'a str,
}

fn run_labelshift(cfg: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<()> {
    let est = &cfg.estimator;
    let settings = cfg.settings.clone().unwrap_or_else(|| vec![cfg.da_pair.setting]);
    let path = cfg.output_dir.join("labelshift.csv");
    let mut w = csv_writer(&path)?;
    artifacts.files.push(path);
    let metric = GroundMetric::LpPow { p: est.p };
    let mut panels = Vec::new();
    for setting in settings {
        let spec = pair_for_setting(&cfg.da_pair, setting);
        let (source, target) = make_da_pair(&spec)?;
        let (s, t) = sample_pair(&source, &target, cfg.samples_per_domain, spec.seed);
        let ps = PushforwardSample::from_domain(&source, &s.points)?;
        let pt = PushforwardSample::from_domain(&target, &t.points)?;
        let exact = ls_exact(&ps, &pt, &metric)?;

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(7);
        let mut draw = |all: &PushforwardSample| -> Result<PushforwardSample> {
            let idx = sample_indices(&mut rng, all.len(), est.batch_size);
            PushforwardSample::new(idx.iter().map(|i| all.f_values()[i].clone()).collect())
        };
        let mut src_batches = Vec::with_capacity(est.batches);
        let mut tgt_batches = Vec::with_capacity(est.batches);
        for _ in 0..est.batches {
            src_batches.push(draw(&ps)?);
            tgt_batches.push(draw(&pt)?);
        }
        let stream_cfg = StreamConfig {
            epsilon: est.epsilon,
            potential: PotentialSpec::Net { hidden: vec![] },
            steps_per_batch: est.steps_per_batch,
            learning_rate: est.learning_rate,
            metric,
            seed: spec.seed,
        };
        let points = ls_entropic_stream(src_batches, tgt_batches, &stream_cfg)?;
        for p in &points {
            w.serialize(LabelshiftRow { batch: p.batch, dual_estimate: p.running_estimate, exact_lp: exact, setting: setting.name() })?;
        }
        w.flush()?;
        let x: Vec<f64> = points.iter().map(|p| p.batch as f64).collect();
        panels.push(Panel {
            title: setting.name().to_string(),
            series: vec![
                Series { name: "dual estimate".into(), x: x.clone(), y: points.iter().map(|p| p.running_estimate).collect() },
                Series { name: "exact LP".into(), x, y: vec![exact; points.len()] },
            ],
        });
    }
    w.flush()?;
    if cfg.emit_svg {
        write_svg(&cfg.output_dir.join("labelshift.svg"), "Label shift: streaming estimate vs LP", "batch", &panels, artifacts)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    separation: f64,
    setting: &'static str,
    seed: u64,
    ls_exact: f64,
    marginal_lb: f64,
    vertex_ls: f64,
    setting_lb: Option<f64>,
    anticausal_ub: Option<f64>,
    p_order: f64,
}

/// Bound quantities for one sampled pair; marginal terms use the pushforward means.
pub fn bounds_report(spec: &DaPairSpec, samples: usize, p: f64, n_mc: usize) -> Result<BoundsReport> {
    let (source, target) = make_da_pair(spec)?;
    let (s, t) = sample_pair(&source, &target, samples, spec.seed);
    let ps = PushforwardSample::from_domain(&source, &s.points)?;
    let pt = PushforwardSample::from_domain(&target, &t.points)?;
    let ls = ls_exact(&ps, &pt, &GroundMetric::LpPow { p })?;
    let (ms, mt) = (ps.mean(), pt.mean());
    let (ys, yt) = spec.label_sets();
    let anticausal_ub = if spec.anticausal {
        Some(anticausal_upper_bound(&source, &target, n_mc, p, spec.seed)?.value)
    } else {
        None
    };
    Ok(BoundsReport {
        ls_exact: ls,
        marginal_lb: marginal_lower_bound(&ms, &mt, p)?,
        vertex_ls: vertex_label_shift(&ms, &mt, p)?,
        setting_lb: Some(setting_lower_bound(&ps, &pt, &ys, &yt, p)?),
        anticausal_ub,
        p_order: p,
    })
}

fn run_bounds_sweep(cfg: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<()> {
    let path = cfg.output_dir.join("bounds_sweep.csv");
    let mut w = csv_writer(&path)?;
    artifacts.files.push(path);
    let mut panels: Vec<Panel> = DaSetting::ALL
        .iter()
        .map(|s| Panel { title: s.name().to_string(), series: vec![Series { name: "mean ls_exact".into(), x: vec![], y: vec![] }] })
        .collect();
    for &d in &cfg.sweep.separations {
        for (k, &setting) in DaSetting::ALL.iter().enumerate() {
            let mut total = 0.0;
            for offset in 0..cfg.sweep.seeds {
                let mut spec = pair_for_setting(&cfg.da_pair, setting);
                spec.separation = d;
                spec.seed = cfg.da_pair.seed.wrapping_add(offset);
                let report = bounds_report(&spec, cfg.samples_per_domain, cfg.estimator.p, cfg.sweep.n_mc)?;
                w.serialize(SweepRow {
                    separation: d,
                    setting: setting.name(),
                    seed: spec.seed,
                    ls_exact: report.ls_exact,
                    marginal_lb: report.marginal_lb,
                    vertex_ls: report.vertex_ls,
                    setting_lb: report.setting_lb,
                    anticausal_ub: report.anticausal_ub,
                    p_order: report.p_order,
                })?;
                w.flush()?;
                report.check()?;
                total += report.ls_exact;
            }
            let series = &mut panels[k].series[0];
            series.x.push(d);
            series.y.push(total / cfg.sweep.seeds as f64);
        }
    }
    if cfg.emit_svg {
        write_svg(&cfg.output_dir.join("bounds_sweep.svg"), "Label shift vs separation", "separation D", &panels, artifacts)?;
    }
    Ok(())
}

fn history_panels(h: &TrainHistory) -> Vec<Panel> {
    let x = h.column(|r| r.step as f64);
    let one = |name: &str, y: Vec<f64>| Series { name: name.into(), x: x.clone(), y };
    vec![
        Panel {
            title: "losses".into(),
            series: vec![
                one("loss_s", h.column(|r| r.loss_s)),
                one("loss_shift", h.column(|r| r.loss_shift)),
                one("loss_clus", h.column(|r| r.loss_clus)),
            ],
        },
        Panel {
            title: "accuracy".into(),
            series: vec![one("src_acc", h.column(|r| r.src_acc)), one("tgt_acc", h.column(|r| r.tgt_acc))],
        },
        Panel { title: "latent data shift".into(), series: vec![one("ws_latent", h.column(|r| r.ws_latent))] },
    ]
}

fn write_history(cfg: &ExperimentConfig, h: &TrainHistory, artifacts: &mut Artifacts) -> Result<()> {
    let path = cfg.output_dir.join("history.csv");
    h.write_csv(BufWriter::new(File::create(&path)?))?;
    artifacts.files.push(path);
    if cfg.emit_svg {
        let title = match cfg.experiment {
            ExperimentKind::Invariance => "Invariant representation training",
            _ => "Adaptation training",
        };
        write_svg(&cfg.output_dir.join("history.svg"), title, "step", &history_panels(h), artifacts)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NetCheckpoints {
    g: crate::nn::Checkpoint,
    head_s: crate::nn::Checkpoint,
    head_t: crate::nn::Checkpoint,
}

fn run_training(cfg: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<()> {
    let (source, target) = make_da_pair(&cfg.da_pair)?;
    let (s, t) = sample_pair(&source, &target, cfg.samples_per_domain, cfg.da_pair.seed);
    let result = match cfg.experiment {
        ExperimentKind::Invariance => invariance_demo(&cfg.trainer, &s, &t).map(|h| (h, None)),
        _ => ldrot_train(&cfg.trainer, &s, &t).map(|o| (o.history, Some(o.nets))),
    };
    match result {
        Ok((history, nets)) => {
            write_history(cfg, &history, artifacts)?;
            if let Some(n) = nets {
                let path = cfg.output_dir.join("checkpoint.json");
                let ck = NetCheckpoints { g: n.g.to_checkpoint(), head_s: n.head_s.to_checkpoint(), head_t: n.head_t.to_checkpoint() };
                let mut f = BufWriter::new(File::create(&path)?);
                serde_json::to_writer_pretty(&mut f, &ck)?;
                f.flush()?;
                artifacts.files.push(path);
            }
            Ok(())
        }
        Err(Error::TrainingAborted { step, what, partial }) => {
            write_history(cfg, &partial, artifacts)?;
            Err(Error::TrainingAborted { step, what, partial })
        }
        Err(e) => Err(e),
    }
}

/// Summary of an ingested feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub samples: usize,
    pub dims: usize,
    pub labels: Vec<usize>,
    pub class_frequencies: Vec<f64>,
}

/// Validates a `label,f0,...` CSV and writes `summary.json` plus a
/// canonical `features.csv` copy into `out_dir`.
pub fn ingest(features: &Path, out_dir: &Path) -> Result<IngestSummary> {
    let data = load_feature_csv(features)?;
    fs::create_dir_all(out_dir)?;
    let summary = IngestSummary {
        samples: data.points.len(),
        dims: data.dim(),
        labels: data.label_set(),
        class_frequencies: data.class_frequencies(),
    };
    let mut w = csv_writer(&out_dir.join("features.csv"))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..summary.dims).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (x, y) in data.points.iter().zip(&data.labels) {
        let mut row = vec![y.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut f = BufWriter::new(File::create(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.flush()?;
    Ok(summary)
}
