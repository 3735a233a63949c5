//! Categorical and Bernoulli heads: numerically stable probabilities,
//! log-probabilities and sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Stable softmax via max subtraction. Output sums to 1 within 1e-9.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= z;
    }
    out
}

/// Stable log softmax via max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + z.ln();
    logits.iter().map(|l| l - log_z).collect()
}

/// log softmax(logits)[index].
pub fn categorical_log_prob(logits: &[f64], index: usize) -> Result<f64> {
    if index >= logits.len() {
        return Err(Error::usage(format!(
            "categorical index {index} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(log_softmax(logits)[index])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log P(bit) for a Bernoulli with P(true) = sigmoid(logit). Always finite.
pub fn bernoulli_log_prob(logit: f64, bit: bool) -> f64 {
    let l = if bit { logit } else { -logit };
    // log sigmoid(l) = -softplus(-l)
    if l > 0.0 {
        -(-l).exp().ln_1p()
    } else {
        l - l.exp().ln_1p()
    }
}

/// Logit whose sigmoid equals `p`; `p` clamped away from {0, 1}.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Samples an index from the categorical distribution given by `logits`.
pub fn sample_categorical(logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn sample_bernoulli(p_true: f64, rng: &mut ChaCha8Rng) -> bool {
    rng.gen::<f64>() < p_true
}

/// Index of the largest logit (first one on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_logits_give_uniform_log_probs() {
        let logits = vec![3.7; 4];
        for i in 0..4 {
            let lp = categorical_log_prob(&logits, i).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let logits = vec![1000.0, 0.0];
        let lp = categorical_log_prob(&logits, 0).unwrap();
        assert!(lp <= 0.0 && lp >= -1e-6, "lp = {lp}");
        assert!(categorical_log_prob(&logits, 1).unwrap().is_finite());
    }

    #[test]
    fn matches_naive_oracle_on_random_logits() {
        // Naive log(exp(x_i)/sum exp(x_j)) is exact for moderate logits.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..8);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (i, l) in logits.iter().enumerate() {
                let naive = (l.exp() / z).ln();
                let stable = categorical_log_prob(&logits, i).unwrap();
                assert!((naive - stable).abs() < 1e-10, "naive={naive} stable={stable}");
            }
        }
    }

    #[test]
    fn index_out_of_range_is_usage_error() {
        assert!(categorical_log_prob(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn softmax_normalizes_and_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..10);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bernoulli_log_probs_sum_to_one() {
        for &l in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let p1 = bernoulli_log_prob(l, true).exp();
            let p0 = bernoulli_log_prob(l, false).exp();
            assert!((p0 + p1 - 1.0).abs() < 1e-12);
            assert!(p1 > 0.0 && p1 < 1.0);
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[0.05, 0.5, 0.95] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }
}
