//! Gradient-based adversarial example generation: the one-step
//! fast-gradient-sign attack and an iterative minimal-perturbation attack
//! that linearizes the classifier at each step and moves toward the
//! nearest decision boundary. Both attacks are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::l2_distance;
use crate::net::{ModelParams, Sample};

pub const DEEPFOOL_OVERSHOOT: f64 = 0.02;
pub const DEEPFOOL_MAX_ITER: usize = 50;

/// Outcome of one attack on one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub original: Sample,
    pub perturbed: Sample,
    pub original_label: usize,
    pub perturbed_label: usize,
    pub iterations: usize,
    /// L2 norm of the pixel delta after clamping.
    pub perturbation_norm: f64,
    /// True when the predicted label changed.
    pub flipped: bool,
}

fn finish(
    params: &ModelParams,
    original: &Sample,
    perturbed_pixels: Vec<f64>,
    original_label: usize,
    iterations: usize,
) -> Result<AttackResult> {
    let clamped: Vec<f64> = perturbed_pixels.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let perturbed_label = params.predict_raw(&clamped);
    let perturbation_norm = l2_distance(&clamped, &original.pixels);
    let perturbed = Sample::new(clamped, original.label)?;
    Ok(AttackResult {
        original: original.clone(),
        perturbed,
        original_label,
        perturbed_label,
        iterations,
        perturbation_norm,
        flipped: perturbed_label != original_label,
    })
}

/// Fast gradient sign: one step of size `eps` along the sign of the
/// cross-entropy gradient at the true label, clamped to `[0, 1]`.
pub fn fgsm(params: &ModelParams, x: &Sample, eps: f64) -> Result<AttackResult> {
    let label = x
        .label
        .ok_or_else(|| Error::Input("fgsm needs a labelled sample".into()))?;
    if !(eps >= 0.0) {
        return Err(Error::Input(format!("eps must be >= 0, got {eps}")));
    }
    let grad = params.loss_grad_input(x, label)?;
    let original_label = params.predict_raw(&x.pixels);
    let perturbed: Vec<f64> = x
        .pixels
        .iter()
        .zip(&grad)
        .map(|(&p, &g)| p + eps * sign(g))
        .collect();
    finish(params, x, perturbed, original_label, 1)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Iterative minimal-perturbation attack. Each step linearizes the class
/// scores at the current point, picks the class whose boundary is nearest
/// in that linearization,
///
///   l = argmin_{j != i} |z_j - z_i| / ||grad z_j - grad z_i||
///
/// steps onto that boundary with
///
///   r = |z_l - z_i| (grad z_l - grad z_i) / ||grad z_l - grad z_i||^2,
///
/// accumulates the steps scaled by `1 + overshoot`, and stops as soon as
/// the predicted label flips (or after `max_iter` iterations). Pixels are
/// clamped to `[0, 1]` once, on output.
pub fn deepfool(
    params: &ModelParams,
    x: &Sample,
    overshoot: f64,
    max_iter: usize,
) -> Result<AttackResult> {
    if !(overshoot >= 0.0) {
        return Err(Error::Input(format!("overshoot must be >= 0, got {overshoot}")));
    }
    if max_iter < 1 {
        return Err(Error::Input("max_iter must be >= 1".into()));
    }
    let original_label = params.predict(x)?;
    let n_classes = params.n_classes();
    if n_classes < 2 {
        return Err(Error::Degenerate("need at least two classes to attack".into()));
    }

    let dim = x.pixels.len();
    let mut accumulated = vec![0.0; dim];
    let mut current = x.pixels.clone();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let z = params.forward_raw(&current);
        let grad_i = params.class_score_grad_raw(&current, original_label);

        let mut best_dist = f64::INFINITY;
        let mut best: Option<(Vec<f64>, f64)> = None; // (w, f) of the nearest boundary
        for j in 0..n_classes {
            if j == original_label {
                continue;
            }
            let grad_j = params.class_score_grad_raw(&current, j);
            let w: Vec<f64> = grad_j.iter().zip(&grad_i).map(|(a, b)| a - b).collect();
            let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if w_norm < 1e-12 {
                continue;
            }
            let f = z[j] - z[original_label];
            let dist = f.abs() / w_norm;
            if dist < best_dist {
                best_dist = dist;
                best = Some((w, f));
            }
        }
        let (w, f) = best.ok_or_else(|| {
            Error::Degenerate("all class gradients are identical; no boundary direction".into())
        })?;
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        for (acc, wi) in accumulated.iter_mut().zip(&w) {
            *acc += f.abs() * wi / w_sq;
        }
        current = x
            .pixels
            .iter()
            .zip(&accumulated)
            .map(|(&p, &r)| p + (1.0 + overshoot) * r)
            .collect();
        // Stop on the point as it will be emitted, i.e. after clamping;
        // unclamped iterates near the box edge can flip and snap back.
        let clamped: Vec<f64> = current.iter().map(|p| p.clamp(0.0, 1.0)).collect();
        if params.predict_raw(&clamped) != original_label {
            break;
        }
    }
    finish(params, x, current, original_label, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, Layer, LayerSpec, TrainConfig};

    fn affine_binary(w: Vec<f64>, b: f64) -> ModelParams {
        // z = [w.x + b, 0]
        let dim = w.len();
        let mut weights = w;
        weights.extend(std::iter::repeat_n(0.0, dim));
        ModelParams::from_layers(
            vec![Layer {
                spec: LayerSpec::new(dim, 2, Activation::Identity),
                weights,
                biases: vec![b, 0.0],
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn fgsm_zero_eps_is_identity() {
        let m = affine_binary(vec![1.0, -1.0], 0.1);
        let x = Sample::labelled(vec![0.8, 0.2], 0).unwrap();
        let r = fgsm(&m, &x, 0.0).unwrap();
        assert_eq!(r.original.pixels, r.perturbed.pixels);
        assert_eq!(r.original_label, r.perturbed_label);
        assert!(!r.flipped);
        assert_eq!(r.perturbation_norm, 0.0);
    }

    #[test]
    fn fgsm_increases_loss() {
        let m = affine_binary(vec![1.0, -1.0], 0.0);
        let x = Sample::labelled(vec![0.6, 0.4], 0).unwrap();
        let before = m.cross_entropy(&x, 0).unwrap();
        let r = fgsm(&m, &x, 0.05).unwrap();
        let after = m.cross_entropy(&r.perturbed, 0).unwrap();
        assert!(after >= before, "loss fell from {before} to {after}");
    }

    #[test]
    fn fgsm_linf_bound_is_exact() {
        let m = affine_binary(vec![0.7, -0.3, 0.2], 0.0);
        let x = Sample::labelled(vec![0.5, 0.5, 0.5], 0).unwrap();
        let eps = 0.07;
        let r = fgsm(&m, &x, eps).unwrap();
        for (a, b) in r.perturbed.pixels.iter().zip(&r.original.pixels) {
            assert!((a - b).abs() <= eps + 1e-15);
        }
    }

    #[test]
    fn fgsm_requires_label() {
        let m = affine_binary(vec![1.0, -1.0], 0.0);
        let x = Sample::new(vec![0.5, 0.5], None).unwrap();
        assert!(matches!(fgsm(&m, &x, 0.1), Err(Error::Input(_))));
    }

    #[test]
    fn deepfool_affine_case_is_closed_form() {
        // For z = [w.x + b, 0] the first step is r = -(w.x + b)/||w||^2 w,
        // and the iterate is x + (1 + overshoot) r.
        let w = vec![0.8, -0.5, 0.3];
        let b = -0.2;
        let m = affine_binary(w.clone(), b);
        let x = Sample::labelled(vec![0.7, 0.3, 0.6], 0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), 0);
        let overshoot = 0.02;
        let r = deepfool(&m, &x, overshoot, 10).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.flipped);

        let score: f64 = w.iter().zip(&x.pixels).map(|(a, b)| a * b).sum::<f64>() + b;
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        for (i, (p, orig)) in r.perturbed.pixels.iter().zip(&x.pixels).enumerate() {
            let expected = orig + (1.0 + overshoot) * (-score / w_sq) * w[i];
            assert!(
                (p - expected).abs() < 1e-8,
                "pixel {i}: {p} vs expected {expected}"
            );
        }
    }

    #[test]
    fn deepfool_always_runs_at_least_one_iteration() {
        let m = affine_binary(vec![1.0, 1.0], 5.0); // far from boundary
        let x = Sample::labelled(vec![0.5, 0.5], 0).unwrap();
        let r = deepfool(&m, &x, 0.02, 3).unwrap();
        assert!(r.iterations >= 1);
    }

    #[test]
    fn deepfool_degenerate_model_errors() {
        // Both classes share the same weight row: gradients are identical.
        let m = ModelParams::from_layers(
            vec![Layer {
                spec: LayerSpec::new(2, 2, Activation::Identity),
                weights: vec![0.4, 0.6, 0.4, 0.6],
                biases: vec![0.5, 0.0],
            }],
            0,
        )
        .unwrap();
        let x = Sample::labelled(vec![0.5, 0.5], 0).unwrap();
        assert!(matches!(
            deepfool(&m, &x, 0.02, 5),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn deepfool_flips_and_beats_fgsm_on_toy_model() {
        let train = crate::experiments::make_synthetic(2, 120, 2, 0.12, 31).unwrap();
        let model = init_params(
            &[
                LayerSpec::new(2, 8, Activation::Relu),
                LayerSpec::new(8, 2, Activation::Identity),
            ],
            5,
        )
        .unwrap();
        let model = model
            .train(
                &train,
                &TrainConfig {
                    learning_rate: 0.5,
                    epochs: 25,
                    batch_size: 16,
                    seed: 9,
                },
            )
            .unwrap();

        let eval = crate::experiments::make_synthetic(2, 60, 2, 0.12, 77).unwrap();
        let correct: Vec<&Sample> = eval
            .iter()
            .filter(|s| model.predict(s).unwrap() == s.label.unwrap())
            .take(100)
            .collect();
        assert!(correct.len() >= 50, "toy model too weak: {}", correct.len());

        let df: Vec<AttackResult> = correct
            .iter()
            .map(|s| deepfool(&model, s, DEEPFOOL_OVERSHOOT, DEEPFOOL_MAX_ITER).unwrap())
            .collect();
        let flipped = df.iter().filter(|r| r.flipped).count();
        assert!(
            flipped as f64 >= 0.9 * correct.len() as f64,
            "only {flipped}/{} flipped",
            correct.len()
        );
        let df_mean = df
            .iter()
            .filter(|r| r.flipped)
            .map(|r| r.perturbation_norm)
            .sum::<f64>()
            / flipped as f64;

        // Doubling search for the smallest fgsm eps that flips >= as many.
        let mut eps = 1e-3;
        let fgsm_mean = loop {
            let results: Vec<AttackResult> = correct
                .iter()
                .map(|s| fgsm(&model, s, eps).unwrap())
                .collect();
            let fgsm_flipped: Vec<&AttackResult> =
                results.iter().filter(|r| r.flipped).collect();
            if fgsm_flipped.len() >= flipped {
                break fgsm_flipped
                    .iter()
                    .map(|r| r.perturbation_norm)
                    .sum::<f64>()
                    / fgsm_flipped.len() as f64;
            }
            eps *= 2.0;
            assert!(eps < 4.0, "fgsm never reached the deepfool flip rate");
        };
        assert!(
            df_mean < fgsm_mean,
            "deepfool mean {df_mean} not below fgsm mean {fgsm_mean}"
        );
    }

    #[test]
    fn attacks_are_deterministic() {
        let m = affine_binary(vec![0.8, -0.5], 0.1);
        let x = Sample::labelled(vec![0.7, 0.3], 0).unwrap();
        let a = deepfool(&m, &x, 0.02, 10).unwrap();
        let b = deepfool(&m, &x, 0.02, 10).unwrap();
        assert_eq!(a.perturbed.pixels, b.perturbed.pixels);
        let a = fgsm(&m, &x, 0.1).unwrap();
        let b = fgsm(&m, &x, 0.1).unwrap();
        assert_eq!(a.perturbed.pixels, b.perturbed.pixels);
    }

    #[test]
    fn flip_contract_and_clamp_safety() {
        let m = affine_binary(vec![2.0, -1.5], -0.3);
        for (px, py) in [(0.9, 0.1), (0.2, 0.8), (0.55, 0.5)] {
            let x = Sample::labelled(vec![px, py], 0).unwrap();
            let r = deepfool(&m, &x, 0.02, 20).unwrap();
            assert!(r.perturbed.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            if r.flipped {
                assert_ne!(
                    m.predict(&r.perturbed).unwrap(),
                    m.predict(&r.original).unwrap()
                );
            }
            let norm = l2_distance(&r.perturbed.pixels, &r.original.pixels);
            assert!((norm - r.perturbation_norm).abs() < 1e-9);
        }
    }
}
