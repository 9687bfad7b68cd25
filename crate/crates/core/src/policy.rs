//! Small numerical helpers shared by environments, agents and the oracle.

use rand::Rng;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a probability vector by inverse CDF using one uniform.
///
/// Entries that round the cumulative sum short of 1 fall through to the last
/// index with positive mass.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// ε-greedy distribution over a row of action values: `ε/|A|` on every action
/// plus `1 − ε` on the greedy one. `epsilon` is clipped to `[0, 1]`.
pub fn epsilon_greedy(q_row: &[f64], epsilon: f64) -> Vec<f64> {
    let eps = epsilon.clamp(0.0, 1.0);
    let n = q_row.len() as f64;
    let mut probs = vec![eps / n; q_row.len()];
    probs[argmax(q_row)] += 1.0 - eps;
    probs
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic sigmoid.
pub fn sigmoid_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Gradient of the softmax score `∇_θ log π(k)` for a tabular logit row.
pub fn softmax_score(probs: &[f64], k: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == k { 1.0 - p } else { -p })
        .collect()
}

/// Gradient of the softmax policy entropy with respect to its logits:
/// `∂H/∂θ_j = −π_j (log π_j + H)`.
pub fn softmax_entropy_grad(probs: &[f64]) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}

/// Expected value of `values` under `probs`.
pub fn expectation(probs: &[f64], values: &[f64]) -> f64 {
    probs.iter().zip(values).map(|(p, v)| p * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn epsilon_greedy_cases() {
        assert_eq!(epsilon_greedy(&[3.0, 1.0], 1.0), vec![0.5, 0.5]);
        assert_eq!(epsilon_greedy(&[0.0, 5.0], 0.0), vec![0.0, 1.0]);
        let p = epsilon_greedy(&[0.0, 1.0, 2.0, -1.0], 0.4);
        for (got, want) in p.iter().zip([0.1, 0.1, 0.7, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
        // clipped
        assert_eq!(epsilon_greedy(&[0.0, 1.0], 3.0), vec![0.5, 0.5]);
    }

    #[test]
    fn categorical_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }

    #[test]
    fn entropy_grad_matches_finite_differences() {
        let logits = [0.3, -1.2, 0.7];
        let grad = softmax_entropy_grad(&softmax(&logits));
        let h = 1e-6;
        for j in 0..3 {
            let mut up = logits;
            up[j] += h;
            let mut down = logits;
            down[j] -= h;
            let fd = (entropy(&softmax(&up)) - entropy(&softmax(&down))) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-8, "{j}: {fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let logits = [0.5, 0.1, -0.4];
        for k in 0..3 {
            let score = softmax_score(&softmax(&logits), k);
            for j in 0..3 {
                let h = 1e-6;
                let mut up = logits;
                up[j] += h;
                let mut down = logits;
                down[j] -= h;
                let fd = (softmax(&up)[k].ln() - softmax(&down)[k].ln()) / (2.0 * h);
                assert!((fd - score[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid_prime(0.0) - 0.25).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
