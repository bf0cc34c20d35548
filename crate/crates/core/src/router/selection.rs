//! Score normalization and the sampling rules for next-agent and
//! next-context choices. Indices are 0-based.

use rand::Rng;

/// Source of exploration noise. Swappable so tests can pin the draws.
pub trait Noise {
    /// A standard Gumbel(0, 1) draw.
    fn gumbel(&mut self) -> f64;
    /// A uniform draw in `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

/// Noise backed by a random number generator.
#[derive(Debug, Clone)]
pub struct RngNoise<R>(pub R);

impl<R: Rng> Noise for RngNoise<R> {
    fn gumbel(&mut self) -> f64 {
        let u: f64 = self.0.random();
        let u = u.max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    }

    fn uniform(&mut self) -> f64 {
        self.0.random()
    }
}

/// No Gumbel perturbation; uniform draws are fixed at 0.5.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn gumbel(&mut self) -> f64 {
        0.0
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }
}

/// Rescales raw compatibility scores to mean 0 and population standard
/// deviation `alpha`.
///
/// A single score is returned as `[0]`. When every score is equal the result
/// is all zeros and the flag is set, meaning the choice is uniform.
pub fn normalize_scores(raw: &[f64], alpha: f64) -> (Vec<f64>, bool) {
    if raw.len() <= 1 {
        return (vec![0.0; raw.len()], false);
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return (vec![0.0; raw.len()], true);
    }
    (raw.iter().map(|v| alpha * (v - mean) / std).collect(), false)
}

/// Argmax with ties going to the lowest index.
pub fn select_agent_inference(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// Gumbel-max sample from `softmax(scores / temperature)`.
///
/// Returns the index and its log-probability under that softmax.
pub fn select_agent_training(scores: &[f64], temperature: f64, noise: &mut dyn Noise) -> (usize, f64) {
    assert!(temperature > 0.0, "temperature must be positive");
    let logits: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let perturbed: Vec<f64> = logits.iter().map(|l| l + noise.gumbel()).collect();
    let k = select_agent_inference(&perturbed);
    (k, log_softmax_at(&logits, k))
}

/// Uniform choice among `n` options, used when scores are degenerate.
pub fn select_uniform(n: usize, noise: &mut dyn Noise) -> (usize, f64) {
    let k = ((noise.uniform() * n as f64) as usize).min(n - 1);
    (k, -(n as f64).ln())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate values `sigmoid(beta * c)` from cosine scores.
pub fn gates_from_cosines(cosines: &[f64], beta: f64) -> Vec<f64> {
    cosines.iter().map(|c| sigmoid(beta * c)).collect()
}

/// First history index (0-based) inside the newest-`cap` window.
pub fn window_start(len: usize, cap: Option<usize>) -> usize {
    match cap {
        Some(c) => len.saturating_sub(c),
        None => 0,
    }
}

/// Thresholded context mask restricted to the newest `cap` entries.
pub fn select_context_inference(gates: &[f64], eta: f64, cap: Option<usize>) -> Vec<bool> {
    let start = window_start(gates.len(), cap);
    gates.iter().enumerate().map(|(j, g)| j >= start && *g >= eta).collect()
}

/// Bernoulli context mask over the newest `cap` entries, with its
/// log-probability. Entries outside the window are excluded and contribute
/// nothing to the log-probability.
pub fn select_context_training(gates: &[f64], cap: Option<usize>, noise: &mut dyn Noise) -> (Vec<bool>, f64) {
    let start = window_start(gates.len(), cap);
    let mut mask = vec![false; gates.len()];
    let mut logp = 0.0;
    for (j, g) in gates.iter().enumerate().skip(start) {
        let keep = noise.uniform() < *g;
        mask[j] = keep;
        logp += if keep { g.ln() } else { (1.0 - g).ln() };
    }
    (mask, logp)
}

/// Log-probability of a given mask under independent Bernoulli gates.
pub fn context_log_prob(gates: &[f64], mask: &[bool], cap: Option<usize>) -> f64 {
    let start = window_start(gates.len(), cap);
    gates.iter().zip(mask).skip(start).map(|(g, m)| if *m { g.ln() } else { (1.0 - g).ln() }).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_examples() {
        let (s, degenerate) = normalize_scores(&[1.0, 2.0, 3.0], 1.5);
        assert!(!degenerate);
        for (a, b) in s.iter().zip([-1.83712, 0.0, 1.83712]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(normalize_scores(&[5.0, 5.0], 1.5), (vec![0.0, 0.0], true));
        assert_eq!(normalize_scores(&[4.2], 1.5), (vec![0.0], false));
    }

    #[test]
    fn inference_argmax() {
        assert_eq!(select_agent_inference(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(select_agent_inference(&[0.5, 0.5]), 0);
        assert_eq!(select_agent_inference(&[-1.84, 0.0, 1.84]), 2);
    }

    #[test]
    fn zero_noise_training_equals_argmax() {
        let s = [0.2, -1.0, 1.7, 0.3];
        let (k, lp) = select_agent_training(&s, 1.0, &mut ZeroNoise);
        assert_eq!(k, 2);
        assert!(lp < 0.0);
    }

    #[test]
    fn gate_examples() {
        let g = gates_from_cosines(&[1.0, 0.0], 3.0);
        assert!((g[0] - 0.952574).abs() < 1e-6);
        assert_eq!(g[1], 0.5);
    }

    #[test]
    fn context_inference_examples() {
        assert_eq!(select_context_inference(&[0.3, 0.6, 0.9], 0.5, None), vec![false, true, true]);
        assert_eq!(select_context_inference(&[0.9, 0.9, 0.9], 0.5, Some(2)), vec![false, true, true]);
        assert!(select_context_inference(&[], 0.5, None).is_empty());
    }

    #[test]
    fn context_log_prob_definition() {
        let lp = context_log_prob(&[0.8, 0.4], &[true, false], None);
        assert!((lp - (0.8f64.ln() + 0.6f64.ln())).abs() < 1e-15);
        let (mask, lp) = select_context_training(&[], None, &mut ZeroNoise);
        assert!(mask.is_empty());
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn training_mask_respects_window() {
        let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(1));
        for _ in 0..50 {
            let gates = [0.99, 0.99, 0.99, 0.99];
            let (mask, lp) = select_context_training(&gates, Some(2), &mut noise);
            assert!(!mask[0] && !mask[1]);
            assert!((lp - context_log_prob(&gates, &mask, Some(2))).abs() < 1e-15);
        }
    }
}
