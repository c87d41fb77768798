//! Frechet distance between Gaussian moment summaries of two feature
//! populations, with the matrix square root taken through a symmetric
//! eigendecomposition of `C_P^{1/2} C_Q C_P^{1/2}`.

use super::EvalError;
use nalgebra::{DMatrix, DVector};

const PSD_TOL: f64 = 1e-10;

/// Mean vector and covariance matrix of a sample set.
#[derive(Debug, Clone)]
pub struct MomentPair {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentPair {
    /// Unbiased sample moments; needs at least two samples.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self, EvalError> {
        if samples.len() < 2 {
            return Err(EvalError::TooFewSamples {
                op: "moments",
                min: 2,
                got: samples.len(),
            });
        }
        let d = samples[0].len();
        for s in samples {
            if s.len() != d {
                return Err(EvalError::LengthMismatch {
                    op: "moments",
                    a: d,
                    b: s.len(),
                });
            }
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            for (i, &v) in s.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let centered = DVector::from_iterator(d, s.iter().copied()) - &mean;
            cov += &centered * centered.transpose();
        }
        cov /= n - 1.0;
        Ok(MomentPair { mean, cov })
    }

    /// Symmetric PSD square root via eigendecomposition; eigenvalues below
    /// `-PSD_TOL * scale` are a hard failure, small negatives clamp to zero.
    fn sqrt(&self) -> Result<DMatrix<f64>, EvalError> {
        psd_sqrt(self.cov.clone())
    }
}

fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    // symmetrize against round-off before decomposing
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(1.0_f64, f64::max);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(EvalError::NonPsd { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let d = roots.len();
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(d, roots.iter().copied()));
    Ok(&eig.eigenvectors * diag * eig.eigenvectors.transpose())
}

/// `||m_P - m_Q||^2 + Tr(C_P + C_Q - 2 (C_P C_Q)^{1/2})` over two feature
/// sample sets.
pub fn fid(features_p: &[Vec<f64>], features_q: &[Vec<f64>]) -> Result<f64, EvalError> {
    let p = MomentPair::from_samples(features_p)?;
    let q = MomentPair::from_samples(features_q)?;
    if p.mean.len() != q.mean.len() {
        return Err(EvalError::LengthMismatch {
            op: "fid",
            a: p.mean.len(),
            b: q.mean.len(),
        });
    }
    let p_sqrt = p.sqrt()?;
    // Tr((C_P C_Q)^{1/2}) = Tr((C_P^{1/2} C_Q C_P^{1/2})^{1/2})
    let inner = &p_sqrt * &q.cov * &p_sqrt;
    let cross = psd_sqrt(inner)?;
    let mean_term = (&p.mean - &q.mean).norm_squared();
    Ok(mean_term + p.cov.trace() + q.cov.trace() - 2.0 * cross.trace())
}
