//! Python bindings: a `Model` class for the classifier, a `DensityModel`
//! class for the fitted per-class Gaussians, and free functions for the
//! distortions, attacks and demos. Reports and attack results cross the
//! boundary as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

use densconf::experiments::scaling_pathology_demo;
use densconf::{Activation, FeatureVector, LayerSpec, Sample, TrainConfig};

fn to_py(e: densconf::Error) -> PyErr {
    match e {
        densconf::Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sample(pixels: Vec<f64>, label: Option<usize>) -> PyResult<Sample> {
    Sample::new(pixels, label).map_err(to_py)
}

fn labelled_set(pixels: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<Sample>> {
    if pixels.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} pixel vectors but {} labels",
            pixels.len(),
            labels.len()
        )));
    }
    pixels
        .into_iter()
        .zip(labels)
        .map(|(p, l)| sample(p, Some(l)))
        .collect()
}

/// Dense ReLU classifier mapping flat images to pre-softmax features.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: densconf::ModelParams,
}

#[pymethods]
impl Model {
    /// Build freshly initialized parameters. `layer_dims` is the full
    /// chain, e.g. [64, 128, 64, 10]; hidden layers use ReLU, the head is
    /// linear.
    #[new]
    #[pyo3(signature = (layer_dims, seed = 0))]
    fn new(layer_dims: Vec<usize>, seed: u64) -> PyResult<Self> {
        if layer_dims.len() < 2 {
            return Err(PyValueError::new_err("need at least input and output dims"));
        }
        let specs: Vec<LayerSpec> = (0..layer_dims.len() - 1)
            .map(|i| {
                let act = if i == layer_dims.len() - 2 {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerSpec::new(layer_dims[i], layer_dims[i + 1], act)
            })
            .collect();
        Ok(Self {
            inner: densconf::init_params(&specs, seed).map_err(to_py)?,
        })
    }

    /// Mini-batch SGD on cross-entropy; returns the trained model.
    #[pyo3(signature = (pixels, labels, learning_rate = 0.1, epochs = 10, batch_size = 32, seed = 0))]
    fn train(
        &self,
        pixels: Vec<Vec<f64>>,
        labels: Vec<usize>,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Model> {
        let data = labelled_set(pixels, labels)?;
        let cfg = TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            seed,
        };
        Ok(Model {
            inner: self.inner.train(&data, &cfg).map_err(to_py)?,
        })
    }

    /// Pre-softmax feature vector z for one image.
    fn forward(&self, pixels: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .forward(&sample(pixels, None)?)
            .map_err(to_py)?
            .0)
    }

    fn predict(&self, pixels: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&sample(pixels, None)?).map_err(to_py)
    }

    /// Gradient of the cross-entropy loss with respect to the pixels.
    fn loss_grad_input(&self, pixels: Vec<f64>, label: usize) -> PyResult<Vec<f64>> {
        self.inner
            .loss_grad_input(&sample(pixels, None)?, label)
            .map_err(to_py)
    }

    /// Gradient of the class score z_i with respect to the pixels.
    fn class_score_grad(&self, pixels: Vec<f64>, class: usize) -> PyResult<Vec<f64>> {
        self.inner
            .class_score_grad(&sample(pixels, None)?, class)
            .map_err(to_py)
    }

    fn accuracy(&self, pixels: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let data = labelled_set(pixels, labels)?;
        self.inner.accuracy(&data).map_err(to_py)
    }

    /// Copy with all biases set to zero (for the scaling demo).
    fn zeroed_biases(&self) -> Model {
        Model {
            inner: self.inner.zeroed_biases(),
        }
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(Path::new(path)).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model {
            inner: densconf::ModelParams::load(Path::new(path)).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        let dims: Vec<String> = std::iter::once(self.inner.input_dim())
            .chain(self.inner.layers().iter().map(|l| l.spec.out_dim))
            .map(|d| d.to_string())
            .collect();
        format!("Model({})", dims.join("-"))
    }
}

fn report_dict(py: Python<'_>, report: densconf::ConfidenceReport) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("label", report.label)?;
    dict.set_item("softmax_conf", report.softmax_conf)?;
    dict.set_item("posterior", report.posterior)?;
    dict.set_item("log_densities", report.log_densities)?;
    Ok(dict.into())
}

/// Per-class diagonal Gaussians over feature space plus class priors.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct DensityModel {
    inner: densconf::DensityModel,
}

#[pymethods]
impl DensityModel {
    /// Fit on the model's feature vectors of a labelled set. The
    /// covariance widening factor defaults to the feature dimension.
    #[staticmethod]
    fn fit(model: &Model, pixels: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<DensityModel> {
        let data = labelled_set(pixels, labels)?;
        let feats: Vec<(FeatureVector, usize)> = data
            .iter()
            .map(|s| Ok((model.inner.forward(s).map_err(to_py)?, s.label.unwrap())))
            .collect::<PyResult<_>>()?;
        Ok(DensityModel {
            inner: densconf::fit_densities(&feats).map_err(to_py)?,
        })
    }

    /// Score a feature vector: dict with label, softmax_conf, posterior
    /// and per-class log densities.
    fn score(&self, py: Python<'_>, z: Vec<f64>) -> PyResult<Py<PyDict>> {
        report_dict(py, self.inner.score(&FeatureVector(z)).map_err(to_py)?)
    }

    /// Forward an image through `model` and score the features.
    fn score_pixels(&self, py: Python<'_>, model: &Model, pixels: Vec<f64>) -> PyResult<Py<PyDict>> {
        let z = model.inner.forward(&sample(pixels, None)?).map_err(to_py)?;
        report_dict(py, self.inner.score(&z).map_err(to_py)?)
    }

    fn log_density(&self, z: Vec<f64>, class: usize) -> PyResult<f64> {
        if class >= self.inner.n_classes() {
            return Err(PyValueError::new_err(format!(
                "class {class} out of range ({})",
                self.inner.n_classes()
            )));
        }
        Ok(self.inner.log_density(&FeatureVector(z), class))
    }

    #[getter]
    fn variance_scale(&self) -> f64 {
        self.inner.variance_scale
    }

    fn with_variance_scale(&self, scale: f64) -> PyResult<DensityModel> {
        Ok(DensityModel {
            inner: self.inner.clone().with_variance_scale(scale).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(Path::new(path)).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<DensityModel> {
        Ok(DensityModel {
            inner: densconf::DensityModel::load(Path::new(path)).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "DensityModel(classes={}, d={}, variance_scale={})",
            self.inner.n_classes(),
            self.inner.d,
            self.inner.variance_scale
        )
    }
}

#[pyfunction]
fn softmax(z: Vec<f64>) -> PyResult<Vec<f64>> {
    densconf::softmax(&FeatureVector(z)).map_err(to_py)
}

#[pyfunction]
fn softmax_confidence(z: Vec<f64>) -> PyResult<(usize, f64)> {
    densconf::softmax_confidence(&FeatureVector(z)).map_err(to_py)
}

/// True iff scaling z by k > 1 strictly increases the argmax softmax score.
#[pyfunction]
fn verify_softmax_scaling(z: Vec<f64>, k: f64) -> PyResult<bool> {
    densconf::verify_softmax_scaling(&FeatureVector(z), k).map_err(to_py)
}

#[pyfunction]
fn logsumexp(values: Vec<f64>) -> f64 {
    densconf::logsumexp(&values)
}

fn grid(pixels: Vec<f64>, width: usize, height: usize) -> PyResult<densconf::distortions::ImageGrid> {
    densconf::distortions::ImageGrid::new(width, height, pixels).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pixels, width, height, sigma, seed = 0))]
fn gaussian_noise(
    pixels: Vec<f64>,
    width: usize,
    height: usize,
    sigma: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    Ok(densconf::distortions::gaussian_noise(&grid(pixels, width, height)?, sigma, seed)
        .map_err(to_py)?
        .into_pixels())
}

#[pyfunction]
fn gaussian_blur(pixels: Vec<f64>, width: usize, height: usize, sigma: f64) -> PyResult<Vec<f64>> {
    Ok(densconf::distortions::gaussian_blur(&grid(pixels, width, height)?, sigma)
        .map_err(to_py)?
        .into_pixels())
}

#[pyfunction]
fn jpeg_compress(pixels: Vec<f64>, width: usize, height: usize, quality: u32) -> PyResult<Vec<f64>> {
    Ok(densconf::distortions::jpeg_compress(&grid(pixels, width, height)?, quality)
        .map_err(to_py)?
        .into_pixels())
}

fn attack_dict(py: Python<'_>, result: densconf::adversarial::AttackResult) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("original", result.original.pixels)?;
    dict.set_item("perturbed", result.perturbed.pixels)?;
    dict.set_item("original_label", result.original_label)?;
    dict.set_item("perturbed_label", result.perturbed_label)?;
    dict.set_item("iterations", result.iterations)?;
    dict.set_item("perturbation_norm", result.perturbation_norm)?;
    dict.set_item("flipped", result.flipped)?;
    Ok(dict.into())
}

/// One fast-gradient-sign step of size eps at the true label.
#[pyfunction]
fn fgsm(
    py: Python<'_>,
    model: &Model,
    pixels: Vec<f64>,
    label: usize,
    eps: f64,
) -> PyResult<Py<PyDict>> {
    let x = sample(pixels, Some(label))?;
    attack_dict(py, densconf::adversarial::fgsm(&model.inner, &x, eps).map_err(to_py)?)
}

/// Iterative minimal-perturbation attack on the predicted label.
#[pyfunction]
#[pyo3(signature = (model, pixels, overshoot = 0.02, max_iter = 50))]
fn deepfool(
    py: Python<'_>,
    model: &Model,
    pixels: Vec<f64>,
    overshoot: f64,
    max_iter: usize,
) -> PyResult<Py<PyDict>> {
    let x = sample(pixels, None)?;
    attack_dict(
        py,
        densconf::adversarial::deepfool(&model.inner, &x, overshoot, max_iter).map_err(to_py)?,
    )
}

/// Gaussian blob dataset; returns (pixels, labels).
#[pyfunction]
fn make_synthetic(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let data = densconf::experiments::make_synthetic(n_classes, n_per_class, dim, spread, seed)
        .map_err(to_py)?;
    Ok(data
        .into_iter()
        .map(|s| (s.pixels, s.label.unwrap()))
        .unzip())
}

/// Monte Carlo mass of the standard Gaussian shell in dimension d.
#[pyfunction]
#[pyo3(signature = (d, beta, n_samples, seed = 0))]
fn annulus_demo(
    py: Python<'_>,
    d: usize,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let stats = densconf::experiments::annulus_demo(d, beta, n_samples, seed).map_err(to_py)?;
    let dict = PyDict::new(py);
    dict.set_item("d", stats.d)?;
    dict.set_item("beta", stats.beta)?;
    dict.set_item("n_samples", stats.n_samples)?;
    dict.set_item("fraction_inside", stats.fraction_inside)?;
    dict.set_item("mean_norm", stats.mean_norm)?;
    Ok(dict.into())
}

/// Confidence table at inputs k*x for a bias-free model; rows are dicts
/// with k, softmax_conf, density_conf and strict_increase.
#[pyfunction]
fn scaling_pathology(
    py: Python<'_>,
    model: &Model,
    density: &DensityModel,
    pixels: Vec<f64>,
    ks: Vec<f64>,
) -> PyResult<Vec<Py<PyDict>>> {
    let x = sample(pixels, None)?;
    let rows = scaling_pathology_demo(&model.inner, &density.inner, &x, &ks).map_err(to_py)?;
    rows.into_iter()
        .map(|row| {
            let dict = PyDict::new(py);
            dict.set_item("k", row.k)?;
            dict.set_item("softmax_conf", row.softmax_conf)?;
            dict.set_item("density_conf", row.density_conf)?;
            dict.set_item("strict_increase", row.strict_increase)?;
            Ok(dict.into())
        })
        .collect()
}

/// Load a labelled IDX image/label pair; returns (pixels, labels).
#[pyfunction]
fn load_idx(images_path: &str, labels_path: &str) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let samples = densconf::idx::load_idx(Path::new(images_path), Path::new(labels_path))
        .map_err(to_py)?;
    Ok(samples
        .into_iter()
        .map(|s| (s.pixels, s.label.unwrap()))
        .unzip())
}

#[pymodule]
fn densconf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_class::<DensityModel>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(verify_softmax_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(logsumexp, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(jpeg_compress, m)?)?;
    m.add_function(wrap_pyfunction!(fgsm, m)?)?;
    m.add_function(wrap_pyfunction!(deepfool, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(annulus_demo, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_pathology, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    Ok(())
}
