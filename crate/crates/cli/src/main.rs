//! One binary for the whole pipeline: train a classifier, fit per-class
//! feature densities, score inputs with both confidence measures, distort
//! and attack images, and run the sweep/failure/shell/pathology
//! experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use densconf::distortions::DistortionSpec;
use densconf::experiments::{
    annulus_demo, run_failures, run_sweeps, scaling_pathology_demo, write_annulus_csv, AttackSpec,
    DatasetSpec, ExperimentConfig,
};
use densconf::{
    fit_densities, init_params, Activation, DensityModel, LayerSpec, ModelParams, Sample,
    TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "densconf",
    version,
    about = "Density-model confidence estimation for small neural classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a dense ReLU classifier with mini-batch SGD.
    Train {
        /// Dataset: idx:IMAGES:LABELS or synthetic:CLASSES:PER_CLASS:DIM:SPREAD
        #[arg(long)]
        data: String,
        /// Output path for the model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated hidden layer sizes.
        #[arg(long, default_value = "128,64")]
        hidden: String,
        /// Number of classes (default: highest label in the data + 1).
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit per-class diagonal Gaussians on the model's feature vectors.
    FitDensity {
        #[arg(long)]
        model: PathBuf,
        /// Dataset the densities are fitted on (normally the training set).
        #[arg(long)]
        data: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the covariance widening factor (default: feature dimension).
        #[arg(long)]
        variance_scale: Option<f64>,
        /// Zero the model biases before computing features.
        #[arg(long)]
        strip_biases: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score one image: prints a confidence report as JSON.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        density: PathBuf,
        /// IDX image file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Apply a distortion to an IDX image file.
    Distort {
        #[arg(long)]
        input: PathBuf,
        /// Output file: .idx for all images, .pgm for one (needs --index).
        #[arg(long)]
        out: PathBuf,
        /// Distortion spec: noise:SIGMA, blur:SIGMA or jpeg:QUALITY.
        #[arg(long)]
        spec: String,
        /// Image index when writing a single PGM.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attack one image and write/print the result as JSON.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// IDX label file (required for fgsm).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Attack spec: fgsm:EPS or deepfool[:OVERSHOOT[:MAX_ITER]].
        #[arg(long)]
        spec: String,
        /// Output JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the distortion sweeps described by a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the adversarial failure-count protocol from a config file.
    Failures {
        #[arg(long)]
        config: PathBuf,
        /// Also count attacks that did not flip the label.
        #[arg(long)]
        include_unflipped: bool,
    },
    /// Monte Carlo mass of the standard Gaussian shell in dimension d.
    Annulus {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence table under input scaling k*x (requires a bias-free model).
    Pathology {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Comma-separated scale factors, all > 1.
        #[arg(long, default_value = "1.3,2,5")]
        ks: String,
        /// Zero the model biases before the demo.
        #[arg(long)]
        strip_biases: bool,
    },
}

enum CliError {
    Usage(String),
    Data(densconf::Error),
}

impl From<densconf::Error> for CliError {
    fn from(e: densconf::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(CliError::Data(densconf::Error::Input(format!(
            "input file not found: {}",
            path.display()
        ))));
    }
    Ok(())
}

fn parse_dataset(spec: &str) -> Result<DatasetSpec> {
    DatasetSpec::from_str(spec).map_err(|e| usage(e.to_string()))
}

fn validate_dataset_paths(spec: &DatasetSpec) -> Result<()> {
    if let DatasetSpec::Idx { images, labels } = spec {
        require_file(images)?;
        require_file(labels)?;
    }
    Ok(())
}

fn load_labelled(spec: &str, seed: u64) -> Result<Vec<Sample>> {
    let dataset = parse_dataset(spec)?;
    validate_dataset_paths(&dataset)?;
    Ok(dataset.load(seed)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not usage errors.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            data,
            out,
            hidden,
            classes,
            learning_rate,
            epochs,
            batch_size,
            seed,
        } => {
            let samples = load_labelled(&data, seed)?;
            if samples.is_empty() {
                return Err(CliError::Data(densconf::Error::Input(
                    "dataset is empty".into(),
                )));
            }
            let input_dim = samples[0].pixels.len();
            let n_classes = match classes {
                Some(n) => n,
                None => {
                    samples
                        .iter()
                        .filter_map(|s| s.label)
                        .max()
                        .ok_or_else(|| usage("dataset has no labels"))?
                        + 1
                }
            };
            let mut dims = vec![input_dim];
            if !hidden.trim().is_empty() {
                for part in hidden.split(',') {
                    dims.push(
                        part.trim()
                            .parse()
                            .map_err(|_| usage(format!("bad hidden size '{part}'")))?,
                    );
                }
            }
            dims.push(n_classes);
            let specs: Vec<LayerSpec> = (0..dims.len() - 1)
                .map(|i| {
                    let act = if i == dims.len() - 2 {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    };
                    LayerSpec::new(dims[i], dims[i + 1], act)
                })
                .collect();
            let cfg = TrainConfig {
                learning_rate,
                epochs,
                batch_size,
                seed,
            };
            let model = init_params(&specs, seed)?.train(&samples, &cfg)?;
            model.save(&out)?;
            let acc = model.accuracy(&samples)?;
            println!(
                "trained {} -> {} (training accuracy {acc:.4})",
                dims.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("-"),
                out.display()
            );
            Ok(())
        }
        Command::FitDensity {
            model,
            data,
            out,
            variance_scale,
            strip_biases,
            seed,
        } => {
            require_file(&model)?;
            let mut params = ModelParams::load(&model)?;
            if strip_biases {
                params = params.zeroed_biases();
            }
            let samples = load_labelled(&data, seed)?;
            let mut feats = Vec::with_capacity(samples.len());
            for s in &samples {
                let label = s.label.ok_or_else(|| {
                    CliError::Data(densconf::Error::Input("unlabelled sample in fit data".into()))
                })?;
                feats.push((params.forward(s)?, label));
            }
            let mut density = fit_densities(&feats)?;
            if let Some(scale) = variance_scale {
                density = density.with_variance_scale(scale)?;
            }
            density.save(&out)?;
            println!(
                "fitted {} classes on {} samples -> {}",
                density.n_classes(),
                feats.len(),
                out.display()
            );
            Ok(())
        }
        Command::Score {
            model,
            density,
            input,
            index,
        } => {
            require_file(&model)?;
            require_file(&density)?;
            require_file(&input)?;
            let params = ModelParams::load(&model)?;
            let density = DensityModel::load(&density)?;
            let images = densconf::idx::load_idx_images(&input)?;
            let pixels = images
                .images
                .get(index)
                .ok_or_else(|| {
                    CliError::Data(densconf::Error::Input(format!(
                        "index {index} out of range ({} images)",
                        images.images.len()
                    )))
                })?
                .clone();
            let z = params.forward(&Sample::new(pixels, None)?)?;
            let report = density.score(&z)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(densconf::Error::from)?);
            Ok(())
        }
        Command::Distort {
            input,
            out,
            spec,
            index,
            seed,
        } => {
            require_file(&input)?;
            let mut dspec: DistortionSpec = spec.parse().map_err(|e: densconf::Error| usage(e.to_string()))?;
            dspec.seed = seed;
            let images = densconf::idx::load_idx_images(&input)?;
            let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
            match ext {
                "pgm" => {
                    let i = index.ok_or_else(|| usage("--index is required for PGM output"))?;
                    let pixels = images.images.get(i).ok_or_else(|| {
                        CliError::Data(densconf::Error::Input(format!(
                            "index {i} out of range ({} images)",
                            images.images.len()
                        )))
                    })?;
                    let grid = densconf::distortions::ImageGrid::new(
                        images.cols,
                        images.rows,
                        pixels.clone(),
                    )?;
                    let distorted = dspec.apply(&grid)?;
                    densconf::idx::write_pgm(&out, images.cols, images.rows, distorted.pixels())?;
                }
                _ => {
                    let mut distorted = Vec::with_capacity(images.images.len());
                    for (i, pixels) in images.images.iter().enumerate() {
                        let grid = densconf::distortions::ImageGrid::new(
                            images.cols,
                            images.rows,
                            pixels.clone(),
                        )?;
                        // Per-image noise stream, reproducible and order-free.
                        let mut per_image = dspec;
                        per_image.seed = seed.wrapping_add(i as u64);
                        distorted.push(per_image.apply(&grid)?.into_pixels());
                    }
                    densconf::idx::write_idx_images(&out, images.rows, images.cols, &distorted)?;
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Attack {
            model,
            images,
            labels,
            index,
            spec,
            out,
        } => {
            require_file(&model)?;
            require_file(&images)?;
            let attack: AttackSpec = spec.parse().map_err(|e: densconf::Error| usage(e.to_string()))?;
            let params = ModelParams::load(&model)?;
            let imgs = densconf::idx::load_idx_images(&images)?;
            let pixels = imgs
                .images
                .get(index)
                .ok_or_else(|| {
                    CliError::Data(densconf::Error::Input(format!(
                        "index {index} out of range ({} images)",
                        imgs.images.len()
                    )))
                })?
                .clone();
            let label = match labels {
                Some(path) => {
                    require_file(&path)?;
                    let all = densconf::idx::load_idx_labels(&path)?;
                    Some(*all.get(index).ok_or_else(|| {
                        CliError::Data(densconf::Error::Input(format!(
                            "index {index} out of range ({} labels)",
                            all.len()
                        )))
                    })?)
                }
                None => None,
            };
            let sample = Sample::new(pixels, label)?;
            let result = attack.run(&params, &sample)?;
            let text = serde_json::to_string_pretty(&result).map_err(densconf::Error::from)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(densconf::Error::from)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Sweep { config } => {
            require_file(&config)?;
            let cfg = ExperimentConfig::load(&config)?;
            require_file(&cfg.model_path)?;
            require_file(&cfg.density_path)?;
            validate_dataset_paths(&cfg.dataset)?;
            let written = run_sweeps(&cfg)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Failures {
            config,
            include_unflipped,
        } => {
            require_file(&config)?;
            let cfg = ExperimentConfig::load(&config)?;
            require_file(&cfg.model_path)?;
            require_file(&cfg.density_path)?;
            validate_dataset_paths(&cfg.dataset)?;
            let (counts, path) = run_failures(&cfg, include_unflipped)?;
            println!(
                "attacked-and-counted {}: softmax fails {}, density fails {} -> {}",
                counts.n_images,
                counts.softmax_fails,
                counts.density_fails,
                path.display()
            );
            Ok(())
        }
        Command::Annulus {
            d,
            beta,
            samples,
            seed,
            out,
        } => {
            let stats = annulus_demo(d, beta, samples, seed)?;
            match out {
                Some(path) => {
                    write_annulus_csv(&path, &stats)?;
                    println!("wrote {}", path.display());
                }
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&stats).map_err(densconf::Error::from)?
                ),
            }
            Ok(())
        }
        Command::Pathology {
            model,
            density,
            input,
            index,
            ks,
            strip_biases,
        } => {
            require_file(&model)?;
            require_file(&density)?;
            require_file(&input)?;
            let mut params = ModelParams::load(&model)?;
            if strip_biases {
                params = params.zeroed_biases();
            }
            let density = DensityModel::load(&density)?;
            let images = densconf::idx::load_idx_images(&input)?;
            let pixels = images
                .images
                .get(index)
                .ok_or_else(|| {
                    CliError::Data(densconf::Error::Input(format!(
                        "index {index} out of range ({} images)",
                        images.images.len()
                    )))
                })?
                .clone();
            let factors: Vec<f64> = ks
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<f64>()
                        .map_err(|_| usage(format!("bad scale factor '{part}'")))
                })
                .collect::<Result<_>>()?;
            let x = Sample::new(pixels, None)?;
            let rows = scaling_pathology_demo(&params, &density, &x, &factors)?;
            println!("k,softmax_conf,density_conf,strict_increase");
            for row in rows {
                println!(
                    "{},{},{},{}",
                    row.k, row.softmax_conf, row.density_conf, row.strict_increase
                );
            }
            Ok(())
        }
    }
}
