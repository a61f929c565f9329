//! Sample diversity: mean pairwise L1 distance between motions generated
//! under the same condition, normalized per frame and channel.

use crate::error::{CoreError, Result};
use crate::nn::Tensor;

pub fn diversity(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(CoreError::validation(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let shape = samples[0].shape();
    for (i, s) in samples.iter().enumerate() {
        if s.shape() != shape {
            return Err(CoreError::validation(format!(
                "sample {i} has shape {:?}, expected {:?}",
                s.shape(),
                shape
            )));
        }
    }
    let norm = (shape.0 * shape.1) as f64;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let l1: f64 = samples[i]
                .data()
                .iter()
                .zip(samples[j].data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            total += l1 / norm;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_have_zero_diversity() {
        let s = Tensor::from_fn(3, 4, |r, c| (r + c) as f64);
        assert_eq!(diversity(&[s.clone(), s.clone(), s]).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_the_offset() {
        let a = Tensor::zeros(5, 7);
        let b = a.map(|_| 0.25);
        assert!((diversity(&[a, b]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn three_way_mean_over_pairs() {
        let a = Tensor::zeros(2, 2);
        let b = a.map(|_| 1.0);
        let c = a.map(|_| 3.0);
        // Pairs: |a-b| = 1, |a-c| = 3, |b-c| = 2; mean = 2.
        assert!((diversity(&[a, b, c]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_two_samples_is_an_error() {
        assert!(diversity(&[Tensor::zeros(2, 2)]).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(diversity(&[Tensor::zeros(2, 2), Tensor::zeros(2, 3)]).is_err());
    }
}
