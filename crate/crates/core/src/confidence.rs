//! Confidence estimators over pre-softmax features.
//!
//! Two measures are implemented side by side:
//!
//! - the softmax score, which is scale-sensitive: multiplying `z` by any
//!   `k > 1` strictly increases the score of the argmax class
//!   ([`verify_softmax_scaling`] is an executable witness of that), and
//! - a generative posterior: one diagonal Gaussian per class fitted on the
//!   feature vectors of the training data, combined through Bayes' rule.
//!
//! Because high-dimensional Gaussian mass concentrates in a thin shell of
//! radius about `sqrt(d)`, raw densities at realistic points are vanishingly
//! small and nearly equal; the fitted covariance is therefore widened by a
//! `variance_scale` factor defaulting to the feature dimension `d`. All
//! density math runs in the log domain and posteriors are normalized with
//! log-sum-exp, so extreme feature values cannot underflow.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{argmax, stable_softmax};
use crate::net::FeatureVector;

/// Smallest admissible per-dimension variance; keeps constant feature
/// dimensions from producing infinite densities.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837877066409345483560659472811235279722;

/// `ln(sum exp(v_i))` computed with max-subtraction.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_finite(z: &FeatureVector) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Input("empty feature vector".into()));
    }
    if z.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite feature value".into()));
    }
    Ok(())
}

/// Softmax of `z`, stable for arbitrarily large entries.
pub fn softmax(z: &FeatureVector) -> Result<Vec<f64>> {
    check_finite(z)?;
    Ok(stable_softmax(z.values()))
}

/// Predicted class and its softmax score; ties go to the lowest index.
pub fn softmax_confidence(z: &FeatureVector) -> Result<(usize, f64)> {
    let p = softmax(z)?;
    let i = argmax(z.values());
    Ok((i, p[i]))
}

/// Checks that scaling `z` by `k > 1` strictly increases the softmax score
/// of the argmax class. For any `z` with a unique maximum this must return
/// `true`; the function exists as an executable witness of the pathology.
pub fn verify_softmax_scaling(z: &FeatureVector, k: f64) -> Result<bool> {
    check_finite(z)?;
    if !(k > 1.0) || !k.is_finite() {
        return Err(Error::Input(format!("scale factor must be > 1, got {k}")));
    }
    let i = argmax(z.values());
    let max = z.values()[i];
    if z.values().iter().enumerate().any(|(j, &v)| j != i && v == max) {
        return Err(Error::Input("feature vector has a tied maximum".into()));
    }
    let before = stable_softmax(z.values())[i];
    let scaled: Vec<f64> = z.values().iter().map(|&v| v * k).collect();
    let after = stable_softmax(&scaled)[i];
    Ok(after > before)
}

/// Diagonal Gaussian fitted to one class's feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDensity {
    /// Per-dimension mean of `z`.
    pub mu: Vec<f64>,
    /// Per-dimension variance before the `variance_scale` widening.
    pub sigma2: Vec<f64>,
    /// Class prior from the fitting data.
    pub prior: f64,
    /// Number of samples the class was fitted on.
    pub count: usize,
}

/// Per-class diagonal Gaussians plus priors over the feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub classes: Vec<ClassDensity>,
    /// Feature dimension.
    pub d: usize,
    /// Multiplier applied to every fitted variance when evaluating
    /// densities; defaults to `d`. Set to 1 to disable the widening.
    pub variance_scale: f64,
}

/// Everything the scorer knows about one input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceReport {
    /// Argmax of `z` (the classifier's prediction, not the posterior's).
    pub label: usize,
    /// Softmax score of the predicted class.
    pub softmax_conf: f64,
    /// Bayes posterior over classes; sums to 1.
    pub posterior: Vec<f64>,
    /// Unnormalized per-class log densities `ln P(z | class)`.
    pub log_densities: Vec<f64>,
}

/// Fits one diagonal Gaussian per class: sample mean, population variance
/// (floored at [`VARIANCE_FLOOR`]) and empirical prior. Every class up to
/// the largest label seen needs at least two samples.
pub fn fit_densities(features: &[(FeatureVector, usize)]) -> Result<DensityModel> {
    if features.is_empty() {
        return Err(Error::Fit("no feature vectors to fit".into()));
    }
    let d = features[0].0.len();
    if d == 0 {
        return Err(Error::Fit("zero-dimensional feature vectors".into()));
    }
    for (z, _) in features {
        if z.len() != d {
            return Err(Error::Fit(format!(
                "inconsistent feature dimensions: {} vs {d}",
                z.len()
            )));
        }
        check_finite(z).map_err(|e| Error::Fit(e.to_string()))?;
    }
    let n_classes = features.iter().map(|&(_, c)| c).max().unwrap() + 1;
    let total = features.len();

    let mut counts = vec![0usize; n_classes];
    let mut sums = vec![vec![0.0; d]; n_classes];
    for (z, c) in features {
        counts[*c] += 1;
        for (s, v) in sums[*c].iter_mut().zip(z.values()) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(Error::Fit(format!(
                "class {c} has {count} sample(s); at least 2 are required"
            )));
        }
    }
    let mus: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect();

    let mut sq = vec![vec![0.0; d]; n_classes];
    for (z, c) in features {
        for ((q, v), m) in sq[*c].iter_mut().zip(z.values()).zip(&mus[*c]) {
            *q += (v - m) * (v - m);
        }
    }
    let classes = (0..n_classes)
        .map(|c| ClassDensity {
            mu: mus[c].clone(),
            sigma2: sq[c]
                .iter()
                .map(|q| (q / counts[c] as f64).max(VARIANCE_FLOOR))
                .collect(),
            prior: counts[c] as f64 / total as f64,
            count: counts[c],
        })
        .collect();

    Ok(DensityModel {
        classes,
        d,
        variance_scale: d as f64,
    })
}

impl DensityModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Overrides the covariance widening factor.
    pub fn with_variance_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Input(format!(
                "variance_scale must be positive, got {scale}"
            )));
        }
        self.variance_scale = scale;
        Ok(self)
    }

    /// Log density of `z` under class `i`'s Gaussian with the widened
    /// covariance `variance_scale * sigma2`.
    pub fn log_density(&self, z: &FeatureVector, i: usize) -> f64 {
        let class = &self.classes[i];
        let mut total = 0.0;
        for ((&v, &m), &s2) in z.values().iter().zip(&class.mu).zip(&class.sigma2) {
            let var = self.variance_scale * s2;
            total += -0.5 * (LN_2PI + var.ln()) - (v - m) * (v - m) / (2.0 * var);
        }
        total
    }

    /// Scores one feature vector: Bayes posterior over classes (computed
    /// with log-sum-exp), softmax score and the argmax-of-`z` label.
    pub fn score(&self, z: &FeatureVector) -> Result<ConfidenceReport> {
        if self.classes.is_empty() {
            return Err(Error::State("density model has no fitted classes".into()));
        }
        check_finite(z)?;
        if z.len() != self.d {
            return Err(Error::Input(format!(
                "feature length {} != fitted dimension {}",
                z.len(),
                self.d
            )));
        }
        let log_densities: Vec<f64> = (0..self.classes.len())
            .map(|i| self.log_density(z, i))
            .collect();
        let joint: Vec<f64> = log_densities
            .iter()
            .zip(&self.classes)
            .map(|(ld, c)| ld + c.prior.ln())
            .collect();
        let norm = logsumexp(&joint);
        let posterior: Vec<f64> = joint.iter().map(|j| (j - norm).exp()).collect();
        let (label, softmax_conf) = softmax_confidence(z)?;
        Ok(ConfidenceReport {
            label,
            softmax_conf,
            posterior,
            log_densities,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::State("density model has no classes".into()));
        }
        let mut prior_sum = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            if c.mu.len() != self.d || c.sigma2.len() != self.d {
                return Err(Error::Config(format!(
                    "class {i}: parameter length does not match dimension {}",
                    self.d
                )));
            }
            if c.sigma2.iter().any(|&s| s < VARIANCE_FLOOR || !s.is_finite()) {
                return Err(Error::Config(format!(
                    "class {i}: variance below floor {VARIANCE_FLOOR}"
                )));
            }
            if !(c.prior > 0.0) || c.prior > 1.0 {
                return Err(Error::Config(format!("class {i}: prior {} invalid", c.prior)));
            }
            if c.mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("class {i}: non-finite mean")));
            }
            prior_sum += c.prior;
        }
        if (prior_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "priors sum to {prior_sum}, expected 1"
            )));
        }
        if !(self.variance_scale > 0.0) {
            return Err(Error::Config("variance_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: DensityModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
