//! Forward (noising) process and the Gaussian posterior used for both
//! sampling and the stepwise training targets.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::schedule::NoiseSchedule;
use crate::nn::Tensor;

/// Standard normal tensor drawn element-by-element in row-major order.
pub fn noise_like(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// One forward step: `x_k = sqrt(1 - beta_k) x_{k-1} + sqrt(beta_k) eps`.
pub fn q_sample_step(x_prev: &Tensor, beta: f64, noise: &Tensor) -> Tensor {
    let a = (1.0 - beta).sqrt();
    let b = beta.sqrt();
    let mut out = x_prev.scale(a);
    out.axpy(b, noise);
    out
}

/// Jump straight to step `k`: `x_k = sqrt(ab) x_0 + sqrt(1 - ab) eps`.
pub fn q_sample_marginal(x0: &Tensor, alpha_bar: f64, noise: &Tensor) -> Tensor {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    let mut out = x0.scale(a);
    out.axpy(b, noise);
    out
}

/// Coefficients of the posterior mean `coef_x0 * x_0 + coef_xk * x_k`
/// and its scalar variance at step `k`. Exposed separately so training
/// code can rebuild the same linear combination inside an autodiff graph
/// with bit-identical arithmetic.
pub fn posterior_coeffs(schedule: &NoiseSchedule, k: usize) -> (f64, f64, f64) {
    let beta = schedule.beta(k);
    let ab_prev = schedule.alpha_bar(k - 1);
    let ab = schedule.alpha_bar(k);
    let alpha = 1.0 - beta;
    let denom = 1.0 - ab;
    let coef_x0 = ab_prev.sqrt() * beta / denom;
    let coef_xk = alpha.sqrt() * (1.0 - ab_prev) / denom;
    let var = beta * (1.0 - ab_prev) / denom;
    (coef_x0, coef_xk, var)
}

/// Mean and (scalar) variance of `q(x_{k-1} | x_k, x_0)` at step `k` of
/// `schedule`. At `k = 1` the variance is exactly zero and the mean is
/// the clean sample.
pub fn posterior_mean_var(
    schedule: &NoiseSchedule,
    k: usize,
    x0: &Tensor,
    x_k: &Tensor,
) -> (Tensor, f64) {
    let (coef_x0, coef_xk, var) = posterior_coeffs(schedule, k);
    let mut mean = x0.scale(coef_x0);
    mean.axpy(coef_xk, x_k);
    (mean, var)
}

/// Draw from the posterior: mean plus `sqrt(var) * eps`. The final step
/// (`k = 1`) is deterministic and consumes no randomness.
pub fn posterior_sample(
    schedule: &NoiseSchedule,
    k: usize,
    x0: &Tensor,
    x_k: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let (mut mean, var) = posterior_mean_var(schedule, k, x0, x_k);
    if var > 0.0 {
        let noise = noise_like(rng, mean.rows(), mean.cols());
        mean.axpy(var.sqrt(), &noise);
    }
    mean
}

/// Stepwise reconstruction weight `(1 - beta_k) / beta_k`: the inverse
/// noise-to-signal ratio of step `k`, large where steps are nearly
/// deterministic and the stepwise target is trustworthy.
pub fn step_weight(schedule: &NoiseSchedule, k: usize) -> f64 {
    let beta = schedule.beta(k);
    (1.0 - beta) / beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_noise_paths_are_deterministic() {
        let x0 = Tensor::row_vec(vec![1.0, -2.0, 0.5]);
        let zero = Tensor::zeros(1, 3);
        let stepped = q_sample_step(&x0, 0.1, &zero);
        for (s, x) in stepped.data().iter().zip(x0.data()) {
            assert!((s - 0.9_f64.sqrt() * x).abs() < 1e-15);
        }
        let jumped = q_sample_marginal(&x0, 0.25, &zero);
        for (s, x) in jumped.data().iter().zip(x0.data()) {
            assert!((s - 0.5 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn final_posterior_step_returns_clean_sample_with_zero_variance() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let x0 = Tensor::row_vec(vec![0.3, -0.7]);
        let xk = Tensor::row_vec(vec![5.0, 5.0]);
        let (mean, var) = posterior_mean_var(&s, 1, &x0, &xk);
        assert_eq!(var, 0.0);
        for (m, x) in mean.data().iter().zip(x0.data()) {
            assert!((m - x).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_single_step_consistency() {
        // After one step the marginal and the stepwise forms coincide.
        let s = NoiseSchedule::linear(10, 0.05, 0.05).unwrap();
        let x0 = Tensor::row_vec(vec![2.0]);
        let n = Tensor::row_vec(vec![0.7]);
        let a = q_sample_step(&x0, s.beta(1), &n);
        let b = q_sample_marginal(&x0, s.alpha_bar(1), &n);
        assert!((a.item() - b.item()).abs() < 1e-12);
    }

    #[test]
    fn posterior_matches_two_step_forward_statistics() {
        // Monte-Carlo check of E[x_1 | x_2, x_0] against the closed form.
        let s = NoiseSchedule::linear(2, 0.2, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x0v = 1.3;
        let x0 = Tensor::scalar(x0v);
        // Choose a fixed x2 and importance-estimate E[x1 | x2] by binning
        // forward draws near x2.
        let target_x2 = 0.9;
        let tol_bin = 0.02;
        let mut sum = 0.0;
        let mut count = 0u64;
        for _ in 0..400_000 {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let x1 = (1.0 - s.beta(1)).sqrt() * x0v + s.beta(1).sqrt() * e1;
            let x2 = (1.0 - s.beta(2)).sqrt() * x1 + s.beta(2).sqrt() * e2;
            if (x2 - target_x2).abs() < tol_bin {
                sum += x1;
                count += 1;
            }
        }
        assert!(count > 1000, "not enough samples near binning target");
        let empirical = sum / count as f64;
        let (mean, var) = posterior_mean_var(&s, 2, &x0, &Tensor::scalar(target_x2));
        assert!(var > 0.0);
        assert!(
            (empirical - mean.item()).abs() < 0.02,
            "empirical {empirical} vs closed form {}",
            mean.item()
        );
    }

    #[test]
    fn step_weight_is_inverse_snr() {
        let s = NoiseSchedule::linear(10, 0.1, 0.1).unwrap();
        assert!((step_weight(&s, 1) - 9.0).abs() < 1e-12);
    }
}
