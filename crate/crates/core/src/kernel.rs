//! RBF kernel `K(a, b) = exp(-‖a - b‖² / (2 h²))` and the particle repulsion
//! term built from its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::scalar::squared_distance;
use crate::numcore::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum Bandwidth<T> {
    Fixed(T),
    /// `h² = median pairwise squared distance / (2 ln(ℓ + 1))`, recomputed per step.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KernelConfig<T> {
    pub bandwidth: Bandwidth<T>,
}

impl<T: Real> Default for KernelConfig<T> {
    fn default() -> Self {
        Self::fixed(T::one())
    }
}

impl<T: Real> KernelConfig<T> {
    pub fn fixed(h: T) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    pub fn median() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed(h) if !(h > T::zero() && h.is_finite()) => Err(
                Error::InvalidConfig(format!("kernel bandwidth must be positive, got {h}")),
            ),
            _ => Ok(()),
        }
    }

    /// Bandwidth to use for the given ensemble.
    pub fn resolve(&self, particles: &Matrix<T>) -> T {
        match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Median => median_heuristic_bandwidth(particles),
        }
    }
}

pub fn median_heuristic_bandwidth<T: Real>(particles: &Matrix<T>) -> T {
    let n = particles.rows();
    if n < 2 {
        return T::one();
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(squared_distance(particles.row(i), particles.row(j)));
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        (d2[m / 2 - 1] + d2[m / 2]) / T::lit(2.0)
    };
    let h2 = median / (T::lit(2.0) * T::from_usize_lossy(n + 1).ln());
    if h2 > T::zero() && h2.is_finite() {
        h2.sqrt()
    } else {
        T::one()
    }
}

pub fn rbf_kernel<T: Real>(a: &[T], b: &[T], h: T) -> Result<T> {
    ensure_len("rbf kernel arguments", a.len(), b.len())?;
    Ok((-squared_distance(a, b) / (T::lit(2.0) * h * h)).exp())
}

/// `∇_{z'} K(z', z) = -((z' - z) / h²) K(z', z)`.
pub fn rbf_grad_first<T: Real>(z_prime: &[T], z: &[T], h: T) -> Result<Vec<T>> {
    let k = rbf_kernel(z_prime, z, h)?;
    let inv_h2 = (h * h).recip();
    Ok(z_prime
        .iter()
        .zip(z)
        .map(|(&a, &b)| -(a - b) * inv_h2 * k)
        .collect())
}

/// `(1/ℓ) Σ_i ∇_{z'} K(z', z)` evaluated at `z' = z_i` over the ensemble rows.
pub fn ensemble_repulsion<T: Real>(particles: &Matrix<T>, z: &[T], h: T) -> Result<Vec<T>> {
    if particles.rows() == 0 {
        return Err(Error::EmptyInput("particle ensemble"));
    }
    ensure_len("repulsion query", particles.cols(), z.len())?;
    let mut out = vec![T::zero(); z.len()];
    repulsion_into(particles, z, h, &mut out);
    Ok(out)
}

/// Allocation-free core of [`ensemble_repulsion`]; shapes must already agree.
pub(crate) fn repulsion_into<T: Real>(particles: &Matrix<T>, z: &[T], h: T, out: &mut [T]) {
    let inv_h2 = (h * h).recip();
    let half_inv_h2 = inv_h2 / T::lit(2.0);
    out.iter_mut().for_each(|o| *o = T::zero());
    for p in particles.row_iter() {
        let k = (-squared_distance(p, z) * half_inv_h2).exp();
        let w = k * inv_h2;
        for ((o, &pi), &zi) in out.iter_mut().zip(p).zip(z) {
            *o -= (pi - zi) * w;
        }
    }
    let inv_n = T::from_usize_lossy(particles.rows()).recip();
    out.iter_mut().for_each(|o| *o *= inv_n);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{central_difference, max_relative_error};

    #[test]
    fn kernel_closed_forms() {
        assert_eq!(rbf_kernel(&[0.3, -1.0], &[0.3, -1.0], 1.0).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0], &[2.0], 1.0).unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.135335).abs() < 1e-6);
        assert!(rbf_kernel(&[0.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn gradient_closed_forms() {
        assert_eq!(rbf_grad_first(&[1.5, 2.0], &[1.5, 2.0], 1.0).unwrap(), vec![0.0, 0.0]);
        let g = rbf_grad_first(&[1.0], &[0.0], 1.0).unwrap();
        assert!((g[0] + (-0.5f64).exp()).abs() < 1e-15);
        assert!((g[0] + 0.606531).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let z = [0.4, -0.3, 1.2];
        for (zp, h) in [([0.1, 0.5, 0.9], 1.0), ([-1.0, 0.2, 2.0], 0.7)] {
            let analytic = rbf_grad_first(&zp, &z, h).unwrap();
            let numeric =
                central_difference(|v: &[f64]| rbf_kernel(v, &z, h).unwrap(), &zp, 1e-5);
            assert!(max_relative_error(&analytic, &numeric) <= 1e-6);
        }
    }

    #[test]
    fn repulsion_examples() {
        let single = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_eq!(
            ensemble_repulsion(&single, &[0.5, 0.5], 1.0).unwrap(),
            vec![0.0, 0.0]
        );

        let sym = Matrix::from_rows(&[[1.3], [0.7]]).unwrap();
        assert!(ensemble_repulsion(&sym, &[1.0f64], 1.0).unwrap()[0].abs() < 1e-15);

        // two-term sum: particle at 0 contributes nothing, particle at 1
        // contributes -(1 - 0) e^{-1/2}; averaged over two particles
        let pair = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let direct = 0.5 * (0.0 + -(1.0 - 0.0) * (-0.5f64).exp());
        let r = ensemble_repulsion(&pair, &[0.0], 1.0).unwrap()[0];
        assert!((r - direct).abs() < 1e-15);
        assert!((r + 0.303265).abs() < 1e-6);
    }

    #[test]
    fn repulsion_rejects_empty() {
        let empty = Matrix::<f64>::zeros(0, 2);
        assert!(matches!(
            ensemble_repulsion(&empty, &[0.0, 0.0], 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn median_heuristic_positive() {
        let p = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        // pairwise d² = {1, 9, 4}, median 4, h² = 4 / (2 ln 4)
        let h = median_heuristic_bandwidth(&p);
        assert!((h * h - 4.0 / (2.0 * 4.0f64.ln())).abs() < 1e-12);
        assert_eq!(median_heuristic_bandwidth(&Matrix::<f64>::zeros(1, 1)), 1.0);
        assert!(KernelConfig::fixed(-1.0).validate().is_err());
    }
}
