//! Minimal dense feedforward classifier.
//!
//! The network maps a flattened image `x` to its pre-softmax feature vector
//! `z`; the predicted label is the argmax of `z`. Everything here is pure
//! and deterministic: initialization, training and gradients are exact
//! functions of their arguments and the supplied seeds, so repeated runs
//! are byte-identical.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{argmax, stable_softmax};

/// Element-wise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative with respect to the pre-activation value.
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// One dense layer: weights are row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// A flattened input image with an optional ground-truth label.
///
/// Pixels must lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: Option<usize>,
}

impl Sample {
    /// Builds a sample, rejecting pixels outside `[0, 1]`.
    pub fn new(pixels: Vec<f64>, label: Option<usize>) -> Result<Self> {
        for (i, &p) in pixels.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Input(format!(
                    "pixel {i} = {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self { pixels, label })
    }

    pub fn labelled(pixels: Vec<f64>, label: usize) -> Result<Self> {
        Self::new(pixels, Some(label))
    }
}

/// Pre-softmax activation vector `z` of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(z: Vec<f64>) -> Self {
        FeatureVector(z)
    }
}

/// Hyper-parameters for mini-batch SGD training.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Input(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Input("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Input("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full parameter set of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    seed: u64,
}

/// JSON wire form: layer shapes plus row-major weight and bias arrays.
#[derive(Serialize, Deserialize)]
struct ModelJson {
    layers: Vec<LayerSpecJson>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LayerSpecJson {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("model needs at least one layer".into()));
    }
    for spec in specs {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
    }
    for (k, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Config(format!(
                "layer {} out_dim {} does not chain into layer {} in_dim {}",
                k,
                pair[0].out_dim,
                k + 1,
                pair[1].in_dim
            )));
        }
    }
    let last = specs.last().unwrap();
    if last.activation != Activation::Identity {
        return Err(Error::Config(
            "final layer activation must be identity (its output is z)".into(),
        ));
    }
    Ok(())
}

/// Initializes parameters: weights from a zero-mean normal with per-layer
/// scale `1/sqrt(in_dim)`, biases zero. Identical seeds produce identical
/// parameters.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<ModelParams> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|&spec| {
            let scale = 1.0 / (spec.in_dim as f64).sqrt();
            let weights = (0..spec.in_dim * spec.out_dim)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    n * scale
                })
                .collect();
            Layer {
                spec,
                weights,
                biases: vec![0.0; spec.out_dim],
            }
        })
        .collect();
    Ok(ModelParams { layers, seed })
}

/// Input gradient plus per-layer `(d_weights, d_biases)` pairs.
type BackwardResult = (Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>);

/// Intermediate state of one forward pass, kept for backpropagation.
struct Trace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Builds a model from explicit layers (used for hand-constructed
    /// models and by the JSON loader).
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.spec.in_dim * layer.spec.out_dim {
                return Err(Error::Config(format!(
                    "layer {k}: weight count {} != in_dim*out_dim {}",
                    layer.weights.len(),
                    layer.spec.in_dim * layer.spec.out_dim
                )));
            }
            if layer.biases.len() != layer.spec.out_dim {
                return Err(Error::Config(format!(
                    "layer {k}: bias count {} != out_dim {}",
                    layer.biases.len(),
                    layer.spec.out_dim
                )));
            }
            if layer
                .weights
                .iter()
                .chain(layer.biases.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Config(format!("layer {k}: non-finite parameter")));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    /// Output dimension of the final layer (number of classes).
    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().spec.out_dim
    }

    pub fn is_bias_free(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.biases.iter().all(|&b| b == 0.0))
    }

    /// Copy of the model with every bias forced to zero, for the scaling
    /// demonstrations that require positive homogeneity.
    pub fn zeroed_biases(&self) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                spec: l.spec,
                weights: l.weights.clone(),
                biases: vec![0.0; l.spec.out_dim],
            })
            .collect();
        ModelParams {
            layers,
            seed: self.seed,
        }
    }

    fn check_input(&self, pixels: &[f64]) -> Result<()> {
        if pixels.len() != self.input_dim() {
            return Err(Error::Input(format!(
                "input length {} != model input dimension {}",
                pixels.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let input = activations.last().unwrap();
            let mut p = layer.biases.clone();
            for (o, acc) in p.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.spec.in_dim..(o + 1) * layer.spec.in_dim];
                *acc += row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
            }
            let out = p.iter().map(|&v| layer.spec.activation.apply(v)).collect();
            pre.push(p);
            activations.push(out);
        }
        Trace { activations, pre }
    }

    pub(crate) fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).activations.pop().unwrap()
    }

    /// Maps an input to its pre-softmax feature vector `z`.
    pub fn forward(&self, x: &Sample) -> Result<FeatureVector> {
        self.check_input(&x.pixels)?;
        Ok(FeatureVector(self.forward_raw(&x.pixels)))
    }

    pub(crate) fn predict_raw(&self, x: &[f64]) -> usize {
        argmax(&self.forward_raw(x))
    }

    /// Predicted class: argmax of `z`, ties broken by the lowest index.
    pub fn predict(&self, x: &Sample) -> Result<usize> {
        self.check_input(&x.pixels)?;
        Ok(self.predict_raw(&x.pixels))
    }

    /// Propagates an output-side delta (`dL/dz`) back through all layers.
    /// Returns `dL/d(input)` and, when `want_params` is set, per-layer
    /// weight and bias gradients.
    fn backward(&self, tr: &Trace, out_delta: Vec<f64>, want_params: bool) -> BackwardResult {
        let mut param_grads = Vec::new();
        if want_params {
            param_grads.resize(self.layers.len(), (Vec::new(), Vec::new()));
        }
        let mut delta = out_delta;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let d_pre: Vec<f64> = delta
                .iter()
                .zip(&tr.pre[l])
                .map(|(&d, &p)| d * layer.spec.activation.grad(p))
                .collect();
            if want_params {
                let input = &tr.activations[l];
                let mut dw = vec![0.0; layer.weights.len()];
                for o in 0..layer.spec.out_dim {
                    for (i, a) in input.iter().enumerate() {
                        dw[o * layer.spec.in_dim + i] = d_pre[o] * a;
                    }
                }
                param_grads[l] = (dw, d_pre.clone());
            }
            let mut d_in = vec![0.0; layer.spec.in_dim];
            for (o, dp) in d_pre.iter().enumerate() {
                let row = &layer.weights[o * layer.spec.in_dim..(o + 1) * layer.spec.in_dim];
                for (i, w) in row.iter().enumerate() {
                    d_in[i] += w * dp;
                }
            }
            delta = d_in;
        }
        (delta, param_grads)
    }

    pub(crate) fn loss_grad_input_raw(&self, x: &[f64], label: usize) -> Vec<f64> {
        let tr = self.trace(x);
        let mut delta = stable_softmax(tr.activations.last().unwrap());
        delta[label] -= 1.0;
        self.backward(&tr, delta, false).0
    }

    /// Exact gradient of `cross_entropy(softmax(z), label)` with respect to
    /// the input pixels.
    pub fn loss_grad_input(&self, x: &Sample, label: usize) -> Result<Vec<f64>> {
        self.check_input(&x.pixels)?;
        if label >= self.n_classes() {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(self.loss_grad_input_raw(&x.pixels, label))
    }

    pub(crate) fn class_score_grad_raw(&self, x: &[f64], class: usize) -> Vec<f64> {
        let tr = self.trace(x);
        let mut delta = vec![0.0; self.n_classes()];
        delta[class] = 1.0;
        self.backward(&tr, delta, false).0
    }

    /// Exact gradient of the class score `z_i` with respect to the input.
    pub fn class_score_grad(&self, x: &Sample, class: usize) -> Result<Vec<f64>> {
        self.check_input(&x.pixels)?;
        if class >= self.n_classes() {
            return Err(Error::Input(format!(
                "class {class} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(self.class_score_grad_raw(&x.pixels, class))
    }

    /// Cross-entropy of `softmax(z)` against `label` for one input.
    pub fn cross_entropy(&self, x: &Sample, label: usize) -> Result<f64> {
        self.check_input(&x.pixels)?;
        let z = self.forward_raw(&x.pixels);
        let p = stable_softmax(&z);
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    /// Mini-batch SGD on the cross-entropy loss. Shuffling is driven by
    /// `cfg.seed`; the result is deterministic given the same parameters,
    /// data order and config.
    pub fn train(&self, data: &[Sample], cfg: &TrainConfig) -> Result<ModelParams> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Input("training data is empty".into()));
        }
        let n_classes = self.n_classes();
        for (i, s) in data.iter().enumerate() {
            self.check_input(&s.pixels)?;
            match s.label {
                None => return Err(Error::Input(format!("sample {i} has no label"))),
                Some(l) if l >= n_classes => {
                    return Err(Error::Input(format!(
                        "sample {i} label {l} out of range for {n_classes} classes"
                    )))
                }
                _ => {}
            }
        }

        let mut params = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();

        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: Vec<(Vec<f64>, Vec<f64>)> = params
                    .layers
                    .iter()
                    .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                    .collect();
                for &idx in batch {
                    let sample = &data[idx];
                    let tr = params.trace(&sample.pixels);
                    let mut delta = stable_softmax(tr.activations.last().unwrap());
                    delta[sample.label.unwrap()] -= 1.0;
                    let (_, grads) = params.backward(&tr, delta, true);
                    for (a, g) in acc.iter_mut().zip(grads) {
                        for (aw, gw) in a.0.iter_mut().zip(&g.0) {
                            *aw += gw;
                        }
                        for (ab, gb) in a.1.iter_mut().zip(&g.1) {
                            *ab += gb;
                        }
                    }
                }
                let step = cfg.learning_rate / batch.len() as f64;
                for (layer, (dw, db)) in params.layers.iter_mut().zip(&acc) {
                    for (w, g) in layer.weights.iter_mut().zip(dw) {
                        *w -= step * g;
                    }
                    for (b, g) in layer.biases.iter_mut().zip(db) {
                        *b -= step * g;
                    }
                }
            }
        }
        Ok(params)
    }

    /// Fraction of labelled samples the model classifies correctly.
    pub fn accuracy(&self, data: &[Sample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("empty evaluation set".into()));
        }
        let mut hits = 0usize;
        for s in data {
            let label = s
                .label
                .ok_or_else(|| Error::Input("unlabelled sample in accuracy set".into()))?;
            if self.predict(s)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelJson {
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpecJson {
                    in_dim: l.spec.in_dim,
                    out_dim: l.spec.out_dim,
                    activation: l.spec.activation,
                })
                .collect(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(text)?;
        if doc.weights.len() != doc.layers.len() || doc.biases.len() != doc.layers.len() {
            return Err(Error::Config(
                "weights/biases arrays do not match layer count".into(),
            ));
        }
        let layers = doc
            .layers
            .iter()
            .zip(doc.weights)
            .zip(doc.biases)
            .map(|((spec, weights), biases)| Layer {
                spec: LayerSpec::new(spec.in_dim, spec.out_dim, spec.activation),
                weights,
                biases,
            })
            .collect();
        Self::from_layers(layers, doc.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_spec(i: usize, o: usize) -> LayerSpec {
        LayerSpec::new(i, o, Activation::Relu)
    }

    fn ident_spec(i: usize, o: usize) -> LayerSpec {
        LayerSpec::new(i, o, Activation::Identity)
    }

    /// Single identity layer with explicit weights.
    fn linear_model(weights: Vec<f64>, in_dim: usize, out_dim: usize) -> ModelParams {
        ModelParams::from_layers(
            vec![Layer {
                spec: ident_spec(in_dim, out_dim),
                weights,
                biases: vec![0.0; out_dim],
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [relu_spec(4, 3), ident_spec(3, 2)];
        let a = init_params(&specs, 7).unwrap();
        let b = init_params(&specs, 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn init_rejects_broken_chain() {
        let specs = [relu_spec(4, 3), ident_spec(5, 2)];
        assert!(matches!(init_params(&specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_rejects_relu_head() {
        let specs = [relu_spec(4, 2)];
        assert!(matches!(init_params(&specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_biases_are_zero() {
        let m = init_params(&[ident_spec(2, 2)], 0).unwrap();
        assert_eq!(m.layers()[0].biases, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_map() {
        let m = linear_model(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Sample::new(vec![0.3, 0.7], None).unwrap();
        assert_eq!(m.forward(&x).unwrap().0, vec![0.3, 0.7]);
    }

    #[test]
    fn forward_hand_matrix() {
        // W = [[1,1],[-1,-1]], x = [0.5,0.5] -> z = [1,-1]
        let m = linear_model(vec![1.0, 1.0, -1.0, -1.0], 2, 2);
        let x = Sample::new(vec![0.5, 0.5], None).unwrap();
        assert_eq!(m.forward(&x).unwrap().0, vec![1.0, -1.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let m = linear_model(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Sample::new(vec![0.1], None).unwrap();
        assert!(matches!(m.forward(&x), Err(Error::Input(_))));
    }

    #[test]
    fn predict_argmax_and_ties() {
        let m = linear_model(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Sample::new(vec![0.5, 0.5], None).unwrap();
        // Tied z = [0.5, 0.5] -> class 0.
        assert_eq!(m.predict(&x).unwrap(), 0);
    }

    #[test]
    fn predict_scaling_invariance_for_linear_model() {
        let m = linear_model(vec![0.9, -0.2, 0.1, 0.4, -0.5, 0.3], 3, 2);
        let x = Sample::new(vec![0.2, 0.1, 0.3], None).unwrap();
        let scaled = Sample::new(x.pixels.iter().map(|p| p * 3.0).collect(), None).unwrap();
        assert_eq!(m.predict(&x).unwrap(), m.predict(&scaled).unwrap());
    }

    #[test]
    fn loss_grad_closed_form_identity_model() {
        // Linear-softmax with W = I: grad = softmax(x) - onehot(label).
        let m = linear_model(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Sample::new(vec![0.0, 0.0], None).unwrap();
        let g = m.loss_grad_input(&x, 0).unwrap();
        assert!((g[0] - (-0.5)).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // First layer forces negative pre-activations for positive input.
        let m = ModelParams::from_layers(
            vec![
                Layer {
                    spec: relu_spec(2, 2),
                    weights: vec![-1.0, -1.0, -2.0, -1.0],
                    biases: vec![0.0, 0.0],
                },
                Layer {
                    spec: ident_spec(2, 2),
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    biases: vec![0.0, 0.0],
                },
            ],
            0,
        )
        .unwrap();
        let x = Sample::new(vec![0.5, 0.5], None).unwrap();
        let g = m.loss_grad_input(&x, 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn class_score_grad_is_weight_row_for_linear_model() {
        let m = linear_model(vec![0.9, -0.2, 0.1, 0.4, -0.5, 0.3], 3, 2);
        let x = Sample::new(vec![0.2, 0.1, 0.3], None).unwrap();
        let g = m.class_score_grad(&x, 1).unwrap();
        assert_eq!(g, vec![0.4, -0.5, 0.3]);
    }

    #[test]
    fn class_score_grad_matches_finite_differences() {
        let m = init_params(&[relu_spec(5, 7), ident_spec(7, 3)], 17).unwrap();
        let pixels = [0.3, 0.8, 0.1, 0.6, 0.45];
        let h = 1e-4;
        for class in 0..3 {
            let analytic = m.class_score_grad_raw(&pixels, class);
            for i in 0..pixels.len() {
                let mut plus = pixels;
                plus[i] += h;
                let mut minus = pixels;
                minus[i] -= h;
                let numeric =
                    (m.forward_raw(&plus)[class] - m.forward_raw(&minus)[class]) / (2.0 * h);
                let rel = (analytic[i] - numeric).abs()
                    / analytic[i].abs().max(numeric.abs()).max(1.0);
                assert!(rel < 1e-4, "class {class} pixel {i}: {} vs {numeric}", analytic[i]);
            }
        }
    }

    #[test]
    fn class_grads_combine_into_loss_grad() {
        // sum_i (softmax_i - onehot_i) * grad z_i == loss gradient
        let m = init_params(&[relu_spec(4, 5), ident_spec(5, 3)], 11).unwrap();
        let x = Sample::new(vec![0.2, 0.8, 0.5, 0.1], None).unwrap();
        let z = m.forward(&x).unwrap();
        let p = stable_softmax(z.values());
        let label = 2;
        let mut combined = [0.0; 4];
        for (i, &pi) in p.iter().enumerate() {
            let gi = m.class_score_grad(&x, i).unwrap();
            let w = pi - if i == label { 1.0 } else { 0.0 };
            for (c, g) in combined.iter_mut().zip(gi) {
                *c += w * g;
            }
        }
        let direct = m.loss_grad_input(&x, label).unwrap();
        for (c, d) in combined.iter().zip(direct) {
            assert!((c - d).abs() < 1e-12, "combined {c} vs direct {d}");
        }
    }

    /// Central finite differences of the cross-entropy loss.
    fn numeric_loss_grad(m: &ModelParams, pixels: &[f64], label: usize, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; pixels.len()];
        let mut work = pixels.to_vec();
        for i in 0..pixels.len() {
            let orig = work[i];
            work[i] = orig + h;
            let z_plus = m.forward_raw(&work);
            let lp = -stable_softmax(&z_plus)[label].ln();
            work[i] = orig - h;
            let z_minus = m.forward_raw(&work);
            let lm = -stable_softmax(&z_minus)[label].ln();
            work[i] = orig;
            g[i] = (lp - lm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let d = rng.random_range(2..6);
            let hidden = rng.random_range(2..8);
            let n = rng.random_range(2..5);
            let m = init_params(
                &[relu_spec(d, hidden), ident_spec(hidden, n)],
                rng.random::<u64>(),
            )
            .unwrap();
            let pixels: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = rng.random_range(0..n);
            let analytic = m.loss_grad_input_raw(&pixels, label);
            let numeric = numeric_loss_grad(&m, &pixels, label, 1e-4);
            for (a, b) in analytic.iter().zip(&numeric) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                assert!(rel < 1e-4, "trial {trial}: analytic {a} numeric {b}");
            }
        }
    }

    #[test]
    fn positive_homogeneity_of_bias_free_relu_stack() {
        let m = init_params(&[relu_spec(4, 6), relu_spec(6, 5), ident_spec(5, 3)], 3).unwrap();
        assert!(m.is_bias_free());
        let x = Sample::new(vec![0.1, 0.2, 0.05, 0.15], None).unwrap();
        let k = 4.0;
        let scaled = Sample::new(x.pixels.iter().map(|p| p * k).collect(), None).unwrap();
        let z = m.forward(&x).unwrap();
        let zk = m.forward(&scaled).unwrap();
        for (a, b) in z.values().iter().zip(zk.values()) {
            let rel = (k * a - b).abs() / (k * a).abs().max(b.abs()).max(1e-12);
            assert!(rel < 1e-9, "k*z = {} vs z(kx) = {}", k * a, b);
        }
    }

    #[test]
    fn shift_of_last_bias_preserves_argmax() {
        let mut m = init_params(&[relu_spec(3, 4), ident_spec(4, 3)], 9).unwrap();
        let x = Sample::new(vec![0.3, 0.6, 0.9], None).unwrap();
        let before = m.predict(&x).unwrap();
        let softmax_before = stable_softmax(m.forward(&x).unwrap().values());
        for b in &mut m.layers[1].biases {
            *b += 2.5;
        }
        let after = m.predict(&x).unwrap();
        let softmax_after = stable_softmax(m.forward(&x).unwrap().values());
        assert_eq!(before, after);
        for (p, q) in softmax_before.iter().zip(&softmax_after) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn train_fits_separable_blobs() {
        let data = crate::experiments::make_synthetic(2, 100, 2, 0.08, 42).unwrap();
        let m = init_params(&[relu_spec(2, 8), ident_spec(8, 2)], 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 16,
            seed: 2,
        };
        let trained = m.train(&data, &cfg).unwrap();
        assert!(trained.accuracy(&data).unwrap() >= 0.99);
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let m = init_params(&[ident_spec(2, 2)], 0).unwrap();
        let data = vec![Sample::labelled(vec![0.1, 0.2], 0).unwrap()];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 0,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(m.train(&data, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn train_rejects_unlabelled_sample() {
        let m = init_params(&[ident_spec(2, 2)], 0).unwrap();
        let data = vec![Sample::new(vec![0.1, 0.2], None).unwrap()];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(m.train(&data, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn train_is_deterministic() {
        let data = crate::experiments::make_synthetic(2, 40, 3, 0.1, 7).unwrap();
        let m = init_params(&[relu_spec(3, 5), ident_spec(5, 2)], 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.2,
            epochs: 5,
            batch_size: 8,
            seed: 3,
        };
        let a = m.train(&data, &cfg).unwrap();
        let b = m.train(&data, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let m = init_params(&[relu_spec(3, 4), ident_spec(4, 2)], 123).unwrap();
        let text = m.to_json().unwrap();
        let back = ModelParams::from_json(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn sample_rejects_out_of_range_pixels() {
        assert!(Sample::new(vec![0.5, 1.5], None).is_err());
        assert!(Sample::new(vec![-0.1], None).is_err());
        assert!(Sample::new(vec![0.0, 1.0], None).is_ok());
    }
}
