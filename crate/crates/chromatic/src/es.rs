//! Evolution-strategies weight optimizer: seed-based Gaussian perturbations,
//! the forward finite-difference gradient estimator with a partition-averaged
//! pivot, plain gradient steps, and state/reward normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::topology::SharedWeightPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ESConfig {
    /// Gaussian smoothing parameter sigma.
    pub sigma: f64,
    /// Learning rate of the weight update.
    pub step_size: f64,
    /// Number of perturbations per iteration.
    pub num_perturbations: usize,
    /// Whether bias vectors are perturbed and trained jointly with weights.
    pub perturb_biases: bool,
}

impl Default for ESConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            step_size: 0.01,
            num_perturbations: 301,
            perturb_biases: true,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::InvalidArgument("sigma must be > 0".into()));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::InvalidArgument("step_size must be > 0".into()));
        }
        if self.num_perturbations == 0 {
            return Err(Error::InvalidArgument(
                "num_perturbations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic standard-normal perturbation for a task seed. Workers and
/// the coordinator expand the same seed to the same vector; see `rng` for the
/// pinned generator algorithm.
pub fn perturbation_from_seed(seed: u64, dim: usize) -> Vec<f64> {
    rng::standard_normal_vec(seed, dim)
}

/// Forward finite-difference gradient estimate:
/// (1/t) Σ_i g_i · (L_i − pivot) / sigma,
/// where the pivot is the average unperturbed loss over sampled partitionings.
pub fn es_gradient(
    config: &ESConfig,
    perturbed_losses: &[(Vec<f64>, f64)],
    pivot: f64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if perturbed_losses.is_empty() {
        return Err(Error::InvalidArgument(
            "es_gradient needs at least one perturbation".into(),
        ));
    }
    if !pivot.is_finite() {
        return Err(Error::NonFinite("pivot loss".into()));
    }
    let dim = perturbed_losses[0].0.len();
    let mut grad = vec![0.0; dim];
    let t = perturbed_losses.len() as f64;
    for (g, loss) in perturbed_losses {
        if !loss.is_finite() {
            return Err(Error::NonFinite("perturbed loss".into()));
        }
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "perturbation",
                expected: dim,
                got: g.len(),
            });
        }
        let scale = (loss - pivot) / (config.sigma * t);
        for (gr, gi) in grad.iter_mut().zip(g) {
            *gr += gi * scale;
        }
    }
    Ok(grad)
}

/// Descent step on the loss (= negated reward): parameters − step_size·grad.
pub fn apply_update(
    pool: &SharedWeightPool,
    gradient: &[f64],
    config: &ESConfig,
) -> Result<SharedWeightPool> {
    pool.with_offset(gradient, -config.step_size, config.perturb_biases)
}

/// Running per-dimension observation statistics (Welford accumulation).
/// Normalization is the identity until two observations have been seen;
/// afterwards it is (obs − mean) / max(std, 1e-8) with the population
/// standard deviation std = sqrt(M2 / count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(obs) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&s| (s / self.count.max(1) as f64).sqrt())
            .collect()
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        if self.count < 2 {
            return obs.to_vec();
        }
        let std = self.std();
        obs.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((&x, &m), &s)| (x - m) / s.max(STD_FLOOR))
            .collect()
    }

    /// Merges another accumulator into this one (Chan et al. parallel
    /// combination). Used to fold per-rollout statistics in task-id order.
    pub fn merge(&mut self, other: &Normalizer) {
        debug_assert_eq!(self.dim(), other.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        for k in 0..self.dim() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * n2 / n;
            self.m2[k] += other.m2[k] + delta * delta * n1 * n2 / n;
        }
        self.count += other.count;
    }
}

/// Centers a reward batch and divides by its population standard deviation
/// (floored at 1e-8). Used only inside gradient estimation; raw rewards are
/// what gets logged.
pub fn normalize_rewards(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.len() < 2 {
        return vec![0.0; rewards.len()];
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;
    use crate::topology::NetworkTopology;

    #[test]
    fn perturbation_is_deterministic_per_seed() {
        assert_eq!(perturbation_from_seed(11, 6), perturbation_from_seed(11, 6));
        assert_ne!(perturbation_from_seed(11, 6), perturbation_from_seed(12, 6));
    }

    #[test]
    fn gradient_zero_when_losses_equal_pivot() {
        let cfg = ESConfig::default();
        let perturbed = vec![
            (vec![1.0, -2.0], 0.5),
            (vec![0.3, 0.7], 0.5),
        ];
        let g = es_gradient(&cfg, &perturbed, 0.5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_is_linear_and_shift_invariant() {
        let cfg = ESConfig::default();
        let perturbed: Vec<(Vec<f64>, f64)> = (0..8)
            .map(|i| (perturbation_from_seed(i, 3), 0.1 * i as f64))
            .collect();
        let g1 = es_gradient(&cfg, &perturbed, 0.2).unwrap();
        let shifted: Vec<(Vec<f64>, f64)> = perturbed
            .iter()
            .map(|(g, l)| (g.clone(), l + 5.0))
            .collect();
        let g2 = es_gradient(&cfg, &shifted, 5.2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rejects_bad_input() {
        let cfg = ESConfig::default();
        assert!(es_gradient(&cfg, &[], 0.0).is_err());
        assert!(es_gradient(&cfg, &[(vec![1.0], f64::NAN)], 0.0).is_err());
        assert!(es_gradient(&cfg, &[(vec![1.0], 0.0)], f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_is_linear_in_the_losses() {
        let cfg = ESConfig::default();
        let base: Vec<(Vec<f64>, f64)> = (0..6)
            .map(|i| (perturbation_from_seed(i, 3), 0.3 * i as f64 - 0.7))
            .collect();
        let scaled: Vec<(Vec<f64>, f64)> =
            base.iter().map(|(g, l)| (g.clone(), 2.5 * l)).collect();
        let g1 = es_gradient(&cfg, &base, 0.4).unwrap();
        let g2 = es_gradient(&cfg, &scaled, 2.5 * 0.4).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_loss_estimator_is_unbiased() {
        // L(w) = c·w around w = 0: the estimator's mean converges to c.
        let c = [1.0, 2.0, 3.0, 4.0, 5.0];
        let cfg = ESConfig {
            sigma: 0.1,
            ..ESConfig::default()
        };
        let n = 100_000u64;
        let mut mean = [0.0; 5];
        for i in 0..n {
            let g = perturbation_from_seed(derive_seed(7, "lin", &[i]), 5);
            let loss: f64 = g.iter().zip(&c).map(|(gi, ci)| cfg.sigma * gi * ci).sum();
            let est = es_gradient(&cfg, &[(g, loss)], 0.0).unwrap();
            for (m, e) in mean.iter_mut().zip(&est) {
                *m += e / n as f64;
            }
        }
        let err: f64 = mean
            .iter()
            .zip(&c)
            .map(|(m, ci)| (m - ci) * (m - ci))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm <= 0.02, "relative error {}", err / norm);
    }

    #[test]
    fn quadratic_loss_matches_smoothed_gradient() {
        // L(w) = ||w||^2 at w = (1, 0): the Gaussian-smoothed gradient is 2w.
        let w = [1.0, 0.0];
        let cfg = ESConfig {
            sigma: 0.1,
            ..ESConfig::default()
        };
        let n = 100_000u64;
        let pivot: f64 = w.iter().map(|v| v * v).sum();
        let mut mean = [0.0; 2];
        for i in 0..n {
            let g = perturbation_from_seed(derive_seed(13, "quad", &[i]), 2);
            let loss: f64 = w
                .iter()
                .zip(&g)
                .map(|(wi, gi)| (wi + cfg.sigma * gi) * (wi + cfg.sigma * gi))
                .sum();
            let est = es_gradient(&cfg, &[(g, loss)], pivot).unwrap();
            for (m, e) in mean.iter_mut().zip(&est) {
                *m += e / n as f64;
            }
        }
        let target = [2.0, 0.0];
        let err = ((mean[0] - target[0]).powi(2) + (mean[1] - target[1]).powi(2)).sqrt();
        assert!(err / 2.0 <= 0.05, "relative error {}", err / 2.0);
    }

    #[test]
    fn apply_update_moves_parameters_down_the_gradient() {
        let t = NetworkTopology::new(vec![2, 2]).unwrap();
        let pool = SharedWeightPool::zeros(3, &t);
        let cfg = ESConfig {
            step_size: 0.01,
            ..ESConfig::default()
        };
        let dim = pool.param_dim(cfg.perturb_biases);
        let updated = apply_update(&pool, &vec![1.0; dim], &cfg).unwrap();
        assert!(updated.weights.iter().all(|&w| (w + 0.01).abs() < 1e-15));
        assert!(updated.biases[0].iter().all(|&b| (b + 0.01).abs() < 1e-15));

        let unchanged = apply_update(&pool, &vec![0.0; dim], &cfg).unwrap();
        assert_eq!(unchanged, pool);

        // Two sequential updates commute with one update of summed gradients.
        let g1: Vec<f64> = (0..dim).map(|i| i as f64).collect();
        let g2: Vec<f64> = (0..dim).map(|i| 0.5 - i as f64).collect();
        let seq = apply_update(&apply_update(&pool, &g1, &cfg).unwrap(), &g2, &cfg).unwrap();
        let summed: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let joint = apply_update(&pool, &summed, &cfg).unwrap();
        for (a, b) in seq.weights.iter().zip(&joint.weights) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_update_rejects_dim_mismatch() {
        let t = NetworkTopology::new(vec![2, 2]).unwrap();
        let pool = SharedWeightPool::zeros(3, &t);
        assert!(apply_update(&pool, &[1.0, 2.0], &ESConfig::default()).is_err());
    }

    #[test]
    fn normalizer_identity_until_two_observations() {
        let mut norm = Normalizer::new(2);
        assert_eq!(norm.normalize(&[3.0, -4.0]), vec![3.0, -4.0]);
        norm.update(&[1.0, 1.0]);
        assert_eq!(norm.normalize(&[3.0, -4.0]), vec![3.0, -4.0]);
    }

    #[test]
    fn normalizer_hand_computed_example() {
        // After observing {1, 3} in 1-D: mean 2, M2 = 2, and with the
        // population std sqrt(M2/n) = 1, normalize(3) = (3 − 2)/1 = 1.
        let mut norm = Normalizer::new(1);
        norm.update(&[1.0]);
        norm.update(&[3.0]);
        assert!((norm.mean[0] - 2.0).abs() < 1e-15);
        assert!((norm.m2[0] - 2.0).abs() < 1e-15);
        assert!((norm.normalize(&[3.0])[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_constant_stream_does_not_divide_by_zero() {
        let mut norm = Normalizer::new(1);
        for _ in 0..10 {
            norm.update(&[5.0]);
        }
        assert_eq!(norm.normalize(&[5.0]), vec![0.0]);
    }

    #[test]
    fn normalizer_matches_two_pass_computation() {
        let mut norm = Normalizer::new(3);
        let mut rng = crate::rng::SplitMix64::new(31);
        let stream: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| 10.0 + 5.0 * rng.next_normal()).collect())
            .collect();
        for obs in &stream {
            norm.update(obs);
        }
        for k in 0..3 {
            let mean = stream.iter().map(|o| o[k]).sum::<f64>() / stream.len() as f64;
            let var = stream
                .iter()
                .map(|o| (o[k] - mean) * (o[k] - mean))
                .sum::<f64>()
                / stream.len() as f64;
            assert!((norm.mean[k] - mean).abs() / mean.abs() < 1e-9);
            assert!(((norm.m2[k] / stream.len() as f64) - var).abs() / var < 1e-9);
        }
    }

    #[test]
    fn normalizer_merge_equals_sequential_updates() {
        let mut rng = crate::rng::SplitMix64::new(77);
        let stream: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..2).map(|_| rng.next_normal()).collect())
            .collect();
        let mut whole = Normalizer::new(2);
        for obs in &stream {
            whole.update(obs);
        }
        let mut left = Normalizer::new(2);
        let mut right = Normalizer::new(2);
        for obs in &stream[..20] {
            left.update(obs);
        }
        for obs in &stream[20..] {
            right.update(obs);
        }
        left.merge(&right);
        assert_eq!(left.count, whole.count);
        for k in 0..2 {
            assert!((left.mean[k] - whole.mean[k]).abs() < 1e-9);
            assert!((left.m2[k] - whole.m2[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_normalization_examples() {
        assert_eq!(normalize_rewards(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
        let n = normalize_rewards(&[0.0, 2.0]);
        assert!((n[0] + 1.0).abs() < 1e-12 && (n[1] - 1.0).abs() < 1e-12);
        // Invariance under positive affine transformations of the batch.
        let base = [3.0, -1.0, 0.5, 7.0];
        let scaled: Vec<f64> = base.iter().map(|r| 10.0 * r + 4.0).collect();
        let a = normalize_rewards(&base);
        let b = normalize_rewards(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
