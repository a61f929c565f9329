//! Fréchet distance between Gaussians fitted to motion embeddings:
//! ‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½). The matrix square root is taken
//! through a symmetric eigendecomposition (cyclic Jacobi) with negative
//! eigenvalues clamped at zero, using the similarity
//! tr((Σ₁Σ₂)^½) = tr((Σ₂^½ Σ₁ Σ₂^½)^½) to stay on symmetric matrices.

use crate::error::{CoreError, Result};
use crate::nn::Tensor;

/// When a set has fewer than 2×dim samples its covariance is rank
/// deficient; this ridge keeps the Gaussian well defined.
const COV_RIDGE: f64 = 1e-6;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Returns (eigenvalues, eigenvectors as columns), unordered.
pub fn sym_eig(a: &Tensor) -> (Vec<f64>, Tensor) {
    let n = a.rows();
    assert_eq!(a.cols(), n, "sym_eig needs a square matrix");
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q] * m[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| m[i * n + i]).collect();
    (eigvals, Tensor::from_vec(n, n, v))
}

/// Symmetric positive-semidefinite square root; negative eigenvalues
/// (numerical noise) clamp to zero.
pub fn sym_sqrt(a: &Tensor) -> Tensor {
    let (vals, vecs) = sym_eig(a);
    let n = a.rows();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = vals[j].max(0.0).sqrt();
        for i in 0..n {
            scaled.set(i, j, vecs.get(i, j) * s);
        }
    }
    scaled.matmul_nt(&vecs)
}

/// tr(M^½) for symmetric PSD `m`, directly from eigenvalues.
fn trace_sqrt(m: &Tensor) -> f64 {
    sym_eig(m).0.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

#[derive(Debug, Clone)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    pub cov: Tensor,
}

impl EmbeddingStats {
    /// Fit mean and (unbiased) covariance to rows of `embeddings`. Sets
    /// with fewer than 2×dim rows get a small diagonal ridge.
    pub fn fit(embeddings: &Tensor) -> Result<EmbeddingStats> {
        let (n, d) = embeddings.shape();
        if n < 2 {
            return Err(CoreError::validation(format!(
                "covariance fit needs at least 2 embeddings, got {n}"
            )));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += embeddings.get(i, j);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = Tensor::zeros(d, d);
        for i in 0..n {
            let row = embeddings.row(i);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    let v = cov.get(a, b) + da * (row[b] - mean[b]);
                    cov.set(a, b, v);
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov.get(a, b) / denom;
                cov.set(a, b, v);
                cov.set(b, a, v);
            }
        }
        if n < 2 * d {
            for a in 0..d {
                cov.set(a, a, cov.get(a, a) + COV_RIDGE);
            }
        }
        Ok(EmbeddingStats { mean, cov })
    }
}

/// Squared Fréchet distance between two embedding Gaussians.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(CoreError::validation(format!(
            "embedding dimensions differ: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let d = a.mean.len();
    let trace = |m: &Tensor| (0..d).map(|i| m.get(i, i)).sum::<f64>();
    let b_half = sym_sqrt(&b.cov);
    let inner = b_half.matmul(&a.cov).matmul(&b_half);
    let cross = trace_sqrt(&inner);
    Ok(mean_sq + trace(&a.cov) + trace(&b.cov) - 2.0 * cross)
}

/// FGD between two sets of embeddings (rows = samples).
pub fn fgd(real: &Tensor, generated: &Tensor) -> Result<f64> {
    if real.cols() != generated.cols() {
        return Err(CoreError::validation(format!(
            "embedding widths differ: {} vs {}",
            real.cols(),
            generated.cols()
        )));
    }
    let a = EmbeddingStats::fit(real)?;
    let b = EmbeddingStats::fit(generated)?;
    frechet_distance(&a, &b)
}
