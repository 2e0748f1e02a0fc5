//! Small numeric helpers shared across modules.

/// Index of the largest entry, ties broken by the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction so large inputs cannot overflow.
pub(crate) fn stable_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Euclidean norm of the difference of two equal-length slices.
pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
    }

    #[test]
    fn softmax_handles_huge_inputs() {
        let p = stable_softmax(&[1000.0, 0.0]);
        assert!(p[0] > 0.999_999);
        assert!(p.iter().all(|v| v.is_finite()));
    }
}
