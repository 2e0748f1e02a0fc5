//! Evaluation protocol: dataset loading and generation, distortion sweeps
//! with clean-image normalization, adversarial failure counting, the
//! high-dimensional Gaussian shell demonstration, and the feature-scaling
//! pathology table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversarial::{deepfool, fgsm, DEEPFOOL_MAX_ITER, DEEPFOOL_OVERSHOOT};
use crate::confidence::{softmax_confidence, DensityModel};
use crate::distortions::{DistortionKind, DistortionSpec, ImageGrid};
use crate::error::{Error, Result};
use crate::net::{FeatureVector, ModelParams, Sample};
use crate::plot::line_plot_svg;

/// One aggregated row of a distortion sweep. The `norm_*` columns are the
/// mean confidences divided by the clean-level mean, so the clean row is
/// exactly 1.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kind: DistortionKind,
    pub level: f64,
    pub n: usize,
    pub accuracy: f64,
    pub mean_softmax: f64,
    pub mean_density: f64,
    pub norm_softmax: f64,
    pub norm_density: f64,
}

/// Adversarial confidence failures per measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCount {
    pub n_images: usize,
    pub softmax_fails: usize,
    pub density_fails: usize,
}

/// Monte Carlo summary of where standard Gaussian mass sits in dimension `d`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnnulusStats {
    pub d: usize,
    pub beta: f64,
    pub n_samples: usize,
    pub fraction_inside: f64,
    pub mean_norm: f64,
}

/// One row of the feature-scaling table: confidence of the predicted class
/// at input `k * x`. `strict_increase` records whether the softmax column
/// strictly exceeded the previous row (false marks a float-saturated row).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathologyRow {
    pub k: f64,
    pub softmax_conf: f64,
    pub density_conf: f64,
    pub strict_increase: bool,
}

/// Gaussian blobs with class means on a shifted, scaled simplex: class `i`
/// has value 0.7 at coordinate `i % dim` and 0.3 elsewhere, plus isotropic
/// noise of standard deviation `spread`, clamped to `[0, 1]`. The signal
/// amplitude is deliberately moderate so that noise at the top of the
/// sweep range genuinely destroys it even after clamping.
pub fn make_synthetic(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::Input(
            "n_classes, n_per_class and dim must be positive".into(),
        ));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::Input(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_classes * n_per_class);
    for class in 0..n_classes {
        let hot = class % dim;
        for _ in 0..n_per_class {
            let pixels = (0..dim)
                .map(|j| {
                    let mean = if j == hot { 0.7 } else { 0.3 };
                    let n: f64 = StandardNormal.sample(&mut rng);
                    (mean + spread * n).clamp(0.0, 1.0)
                })
                .collect();
            out.push(Sample {
                pixels,
                label: Some(class),
            });
        }
    }
    Ok(out)
}

/// Image dimensions used when reshaping flat samples for 2-D distortions.
fn grid_dims(dim: usize, kind: DistortionKind) -> Result<(usize, usize)> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        return Ok((side, side));
    }
    if kind == DistortionKind::Noise {
        // Noise is per-pixel; shape is irrelevant.
        return Ok((dim, 1));
    }
    Err(Error::Input(format!(
        "{kind} needs square images, but sample length {dim} is not a perfect square"
    )))
}

/// Runs one distortion sweep. `levels[0]` must be the clean anchor (0 for
/// noise and blur); JPEG levels are reordered by decreasing quality and
/// must include quality 100 as the anchor. Per-sample noise is seeded as
/// `seed + sample_index`, identical across levels.
pub fn sweep(
    params: &ModelParams,
    density: &DensityModel,
    data: &[Sample],
    kind: DistortionKind,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if data.is_empty() {
        return Err(Error::Input("sweep needs at least one sample".into()));
    }
    if levels.is_empty() {
        return Err(Error::Input("sweep needs at least one level".into()));
    }
    let levels: Vec<f64> = match kind {
        DistortionKind::Jpeg => {
            let mut sorted = levels.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted[0] != 100.0 {
                return Err(Error::Input(
                    "jpeg sweep must include quality 100 as the clean anchor".into(),
                ));
            }
            sorted
        }
        _ => {
            if levels[0] != 0.0 {
                return Err(Error::Input(format!(
                    "{kind} sweep must start at level 0 (the clean anchor), got {}",
                    levels[0]
                )));
            }
            levels.to_vec()
        }
    };
    let dim = data[0].pixels.len();
    let (w, h) = grid_dims(dim, kind)?;
    for (i, s) in data.iter().enumerate() {
        if s.pixels.len() != dim {
            return Err(Error::Input(format!("sample {i} has inconsistent length")));
        }
        if s.label.is_none() {
            return Err(Error::Input(format!("sample {i} has no label")));
        }
    }

    let mut rows = Vec::with_capacity(levels.len());
    let mut clean_softmax = 0.0;
    let mut clean_density = 0.0;
    for (li, &level) in levels.iter().enumerate() {
        let mut hits = 0usize;
        let mut sum_softmax = 0.0;
        let mut sum_density = 0.0;
        for (si, sample) in data.iter().enumerate() {
            let spec = DistortionSpec::new(kind, level, seed.wrapping_add(si as u64))?;
            let grid = ImageGrid::new(w, h, sample.pixels.clone())?;
            let distorted = spec.apply(&grid)?;
            let z = FeatureVector(params.forward_raw(&distorted.into_pixels()));
            let report = density.score(&z)?;
            if report.label == sample.label.unwrap() {
                hits += 1;
            }
            sum_softmax += report.softmax_conf;
            sum_density += report.posterior[report.label];
        }
        let n = data.len();
        let mean_softmax = sum_softmax / n as f64;
        let mean_density = sum_density / n as f64;
        if li == 0 {
            clean_softmax = mean_softmax;
            clean_density = mean_density;
        }
        rows.push(SweepRow {
            kind,
            level,
            n,
            accuracy: hits as f64 / n as f64,
            mean_softmax,
            mean_density,
            norm_softmax: mean_softmax / clean_softmax,
            norm_density: mean_density / clean_density,
        });
    }
    Ok(rows)
}

/// Attack selection for the failure-count protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    Fgsm { eps: f64 },
    Deepfool { overshoot: f64, max_iter: usize },
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// Accepts "fgsm:EPS", "deepfool", "deepfool:OVERSHOOT" and
    /// "deepfool:OVERSHOOT:MAX_ITER".
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        match parts.next() {
            Some("fgsm") => {
                let eps: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Input("fgsm spec needs an eps, e.g. fgsm:0.1".into()))?
                    .parse()
                    .map_err(|_| Error::Input(format!("bad fgsm eps in '{s}'")))?;
                Ok(AttackSpec::Fgsm { eps })
            }
            Some("deepfool") => {
                let overshoot = match parts.next() {
                    Some(v) => v
                        .parse()
                        .map_err(|_| Error::Input(format!("bad overshoot in '{s}'")))?,
                    None => DEEPFOOL_OVERSHOOT,
                };
                let max_iter = match parts.next() {
                    Some(v) => v
                        .parse()
                        .map_err(|_| Error::Input(format!("bad max_iter in '{s}'")))?,
                    None => DEEPFOOL_MAX_ITER,
                };
                Ok(AttackSpec::Deepfool {
                    overshoot,
                    max_iter,
                })
            }
            _ => Err(Error::Input(format!("unknown attack spec '{s}'"))),
        }
    }
}

impl std::fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackSpec::Fgsm { eps } => write!(f, "fgsm:{eps}"),
            AttackSpec::Deepfool {
                overshoot,
                max_iter,
            } => write!(f, "deepfool:{overshoot}:{max_iter}"),
        }
    }
}

impl AttackSpec {
    pub fn run(&self, params: &ModelParams, x: &Sample) -> Result<crate::adversarial::AttackResult> {
        match *self {
            AttackSpec::Fgsm { eps } => fgsm(params, x, eps),
            AttackSpec::Deepfool {
                overshoot,
                max_iter,
            } => deepfool(params, x, overshoot, max_iter),
        }
    }
}

/// Attacks every correctly classified sample and counts, per confidence
/// measure, how often the attacked image scores *higher* than its clean
/// original (each such rise is one failure). Only label-flipping attacks
/// are counted unless `include_unflipped` is set.
pub fn adversarial_failures(
    params: &ModelParams,
    density: &DensityModel,
    data: &[Sample],
    attack: &AttackSpec,
    include_unflipped: bool,
) -> Result<FailureCount> {
    let mut eligible = Vec::new();
    for s in data {
        if let Some(label) = s.label {
            if params.predict(s)? == label {
                eligible.push(s);
            }
        }
    }
    if eligible.is_empty() {
        return Err(Error::Input(
            "no correctly classified labelled samples to attack".into(),
        ));
    }
    let mut n_images = 0usize;
    let mut softmax_fails = 0usize;
    let mut density_fails = 0usize;
    for s in eligible {
        let result = attack.run(params, s)?;
        if !result.flipped && !include_unflipped {
            continue;
        }
        let clean = density.score(&params.forward(&result.original)?)?;
        let adv = density.score(&params.forward(&result.perturbed)?)?;
        n_images += 1;
        if adv.softmax_conf > clean.softmax_conf {
            softmax_fails += 1;
        }
        if adv.posterior[adv.label] > clean.posterior[clean.label] {
            density_fails += 1;
        }
    }
    if n_images == 0 {
        return Err(Error::Input(
            "attack flipped no samples; nothing to count".into(),
        ));
    }
    Ok(FailureCount {
        n_images,
        softmax_fails,
        density_fails,
    })
}

/// Samples the d-dimensional standard Gaussian and reports how much mass
/// falls in the shell `sqrt(d) - beta <= |x| <= sqrt(d) + beta`.
pub fn annulus_demo(d: usize, beta: f64, n_samples: usize, seed: u64) -> Result<AnnulusStats> {
    if d < 1 || n_samples < 1 {
        return Err(Error::Input("d and n_samples must be >= 1".into()));
    }
    let sqrt_d = (d as f64).sqrt();
    if !(0.0..=sqrt_d).contains(&beta) {
        return Err(Error::Input(format!(
            "beta must be in [0, sqrt(d)] = [0, {sqrt_d}], got {beta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0usize;
    let mut norm_sum = 0.0;
    for _ in 0..n_samples {
        let sq: f64 = (0..d)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * v
            })
            .sum();
        let norm = sq.sqrt();
        norm_sum += norm;
        if (sqrt_d - beta..=sqrt_d + beta).contains(&norm) {
            inside += 1;
        }
    }
    Ok(AnnulusStats {
        d,
        beta,
        n_samples,
        fraction_inside: inside as f64 / n_samples as f64,
        mean_norm: norm_sum / n_samples as f64,
    })
}

/// Evaluates both confidence measures at inputs `k * x` for each `k` in
/// `ks` (sorted ascending). Requires a bias-free model so feature vectors
/// scale with the input; under that condition the softmax column must rise
/// strictly with `k` while the density posterior is free to fall.
pub fn scaling_pathology_demo(
    params: &ModelParams,
    density: &DensityModel,
    x: &Sample,
    ks: &[f64],
) -> Result<Vec<PathologyRow>> {
    if ks.is_empty() {
        return Err(Error::Input("need at least one scale factor".into()));
    }
    for &k in ks {
        if !(k > 1.0) || !k.is_finite() {
            return Err(Error::Input(format!("scale factors must be > 1, got {k}")));
        }
    }
    if !params.is_bias_free() {
        return Err(Error::Input(
            "scaling demo requires a bias-free model (biases break input-scale propagation)"
                .into(),
        ));
    }
    let mut ks = ks.to_vec();
    ks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let z1 = params.forward(x)?;
    let (_, mut prev) = softmax_confidence(&z1)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let scaled: Vec<f64> = x.pixels.iter().map(|p| p * k).collect();
        let z = FeatureVector(params.forward_raw(&scaled));
        let report = density.score(&z)?;
        rows.push(PathologyRow {
            k,
            softmax_conf: report.softmax_conf,
            density_conf: report.posterior[report.label],
            strict_increase: report.softmax_conf > prev,
        });
        prev = report.softmax_conf;
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Experiment configuration and file outputs
// ---------------------------------------------------------------------------

/// Where the evaluation data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Synthetic {
        n_classes: usize,
        n_per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DatasetSpec {
    /// Loads or generates the samples. Synthetic specs without their own
    /// seed fall back to `default_seed`.
    pub fn load(&self, default_seed: u64) -> Result<Vec<Sample>> {
        match self {
            DatasetSpec::Idx { images, labels } => crate::idx::load_idx(images, labels),
            DatasetSpec::Synthetic {
                n_classes,
                n_per_class,
                dim,
                spread,
                seed,
            } => make_synthetic(
                *n_classes,
                *n_per_class,
                *dim,
                *spread,
                seed.unwrap_or(default_seed),
            ),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    /// Accepts "idx:IMAGES:LABELS" and
    /// "synthetic:N_CLASSES:N_PER_CLASS:DIM:SPREAD".
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["idx", images, labels] => Ok(DatasetSpec::Idx {
                images: PathBuf::from(images),
                labels: PathBuf::from(labels),
            }),
            ["synthetic", a, b, c, d] => {
                let parse_usize = |v: &str, name: &str| -> Result<usize> {
                    v.parse()
                        .map_err(|_| Error::Input(format!("bad {name} '{v}' in dataset spec")))
                };
                Ok(DatasetSpec::Synthetic {
                    n_classes: parse_usize(a, "n_classes")?,
                    n_per_class: parse_usize(b, "n_per_class")?,
                    dim: parse_usize(c, "dim")?,
                    spread: d
                        .parse()
                        .map_err(|_| Error::Input(format!("bad spread '{d}' in dataset spec")))?,
                    seed: None,
                })
            }
            _ => Err(Error::Input(format!(
                "dataset spec '{s}' must be idx:IMAGES:LABELS or synthetic:CLASSES:PER_CLASS:DIM:SPREAD"
            ))),
        }
    }
}

/// Distortion kinds and levels to sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionPlan {
    pub kind: DistortionKind,
    pub levels: Vec<f64>,
}

/// Full experiment description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model_path: PathBuf,
    pub density_path: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub distortions: Vec<DistortionPlan>,
    #[serde(default)]
    pub attack: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes sweep rows as CSV with the fixed column order.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("kind,level,n,accuracy,mean_softmax,mean_density,norm_softmax,norm_density\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.kind,
            fmt_f64(r.level),
            r.n,
            fmt_f64(r.accuracy),
            fmt_f64(r.mean_softmax),
            fmt_f64(r.mean_density),
            fmt_f64(r.norm_softmax),
            fmt_f64(r.norm_density)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_failures_csv(path: &Path, counts: &FailureCount) -> Result<()> {
    let out = format!(
        "n_images,softmax_fails,density_fails\n{},{},{}\n",
        counts.n_images, counts.softmax_fails, counts.density_fails
    );
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_annulus_csv(path: &Path, stats: &AnnulusStats) -> Result<()> {
    let out = format!(
        "d,beta,n_samples,fraction_inside,mean_norm\n{},{},{},{},{}\n",
        stats.d,
        fmt_f64(stats.beta),
        stats.n_samples,
        fmt_f64(stats.fraction_inside),
        fmt_f64(stats.mean_norm)
    );
    std::fs::write(path, out)?;
    Ok(())
}

fn sweep_svg(rows: &[SweepRow]) -> String {
    let softmax: Vec<(f64, f64)> = rows.iter().map(|r| (r.level, r.norm_softmax)).collect();
    let density: Vec<(f64, f64)> = rows.iter().map(|r| (r.level, r.norm_density)).collect();
    let kind = rows[0].kind;
    let x_label = match kind {
        DistortionKind::Noise => "noise sigma",
        DistortionKind::Blur => "blur sigma",
        DistortionKind::Jpeg => "jpeg quality",
    };
    line_plot_svg(
        &format!("normalized confidence vs {kind}"),
        x_label,
        &[
            ("softmax".to_string(), softmax),
            ("density".to_string(), density),
        ],
    )
}

/// Runs every configured distortion sweep, writing `<kind>.csv` and
/// `<kind>.svg` into `out_dir`. Returns the paths written.
pub fn run_sweeps(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let params = ModelParams::load(&cfg.model_path)?;
    let density = DensityModel::load(&cfg.density_path)?;
    let data = cfg.dataset.load(cfg.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut written = Vec::new();
    for plan in &cfg.distortions {
        let rows = sweep(&params, &density, &data, plan.kind, &plan.levels, cfg.seed)?;
        let csv = cfg.out_dir.join(format!("{}.csv", plan.kind));
        write_sweep_csv(&csv, &rows)?;
        let svg = cfg.out_dir.join(format!("{}.svg", plan.kind));
        std::fs::write(&svg, sweep_svg(&rows))?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}

/// Runs the configured attack over the dataset and writes `failures.csv`.
pub fn run_failures(cfg: &ExperimentConfig, include_unflipped: bool) -> Result<(FailureCount, PathBuf)> {
    let attack_str = cfg
        .attack
        .as_deref()
        .ok_or_else(|| Error::Input("config has no attack field".into()))?;
    let attack: AttackSpec = attack_str.parse()?;
    let params = ModelParams::load(&cfg.model_path)?;
    let density = DensityModel::load(&cfg.density_path)?;
    let data = cfg.dataset.load(cfg.seed)?;
    let counts = adversarial_failures(&params, &density, &data, &attack, include_unflipped)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("failures.csv");
    write_failures_csv(&path, &counts)?;
    Ok((counts, path))
}
