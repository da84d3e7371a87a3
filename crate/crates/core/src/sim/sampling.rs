//! Innovation samplers: nominal `N(0, S)` and the gate-truncated law.

use crate::error::{Error, Result};
use crate::filter::{symmetrize, CovFactor};
use crate::selection::GateDecision;
use crate::statx::GateSpec;
use crate::Real;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Draws `L ξ` with `L Lᵀ = S` and `ξ` standard normal.
#[derive(Debug, Clone)]
pub struct GaussianSampler<T: Real> {
    factor: DMatrix<T>,
}

impl<T: Real> GaussianSampler<T>
where
    StandardNormal: Distribution<T>,
{
    /// Sampler for an SPD covariance (Cholesky factor).
    pub fn new(cov: &DMatrix<T>) -> Result<Self> {
        Ok(Self {
            factor: CovFactor::new(cov)?.lower(),
        })
    }

    /// Sampler for a positive semidefinite covariance (symmetric square root,
    /// negative rounding noise in the spectrum clamped to zero).
    pub fn semidefinite(cov: &DMatrix<T>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::NotPositiveDefinite("covariance is not square"));
        }
        let eig = symmetrize(cov).symmetric_eigen();
        let tol = T::cast_from(-1e-12) * num_traits::Float::max(cov.amax(), T::one());
        if eig.eigenvalues.iter().any(|&l| l < tol) {
            return Err(Error::NotPositiveDefinite(
                "covariance has a negative eigenvalue",
            ));
        }
        let roots = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues
                .iter()
                .map(|&l| num_traits::Float::sqrt(num_traits::Float::max(l, T::zero()))),
        );
        Ok(Self {
            factor: &eig.eigenvectors
                * DMatrix::from_diagonal(&roots)
                * eig.eigenvectors.transpose(),
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.factor * xi
    }
}

/// One draw from `N(0, S)`.
pub fn sample_innovation<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    s_cov: &DMatrix<T>,
) -> Result<DVector<T>>
where
    StandardNormal: Distribution<T>,
{
    Ok(GaussianSampler::new(s_cov)?.sample(rng))
}

/// A gate-accepted draw with its NIS and the number of nominal draws it took.
#[derive(Debug, Clone, PartialEq)]
pub struct PostGateDraw<T: Real> {
    pub nu: DVector<T>,
    pub nis: T,
    pub attempts: u64,
}

/// Rejection sampler for `ν | Z ≤ τ`: draw nominal, retry until the gate accepts.
#[derive(Debug, Clone)]
pub struct PostGateSampler<T: Real> {
    gaussian: GaussianSampler<T>,
    factor: CovFactor<T>,
    spec: GateSpec<T>,
}

impl<T: Real> PostGateSampler<T>
where
    StandardNormal: Distribution<T>,
{
    pub fn new(s_cov: &DMatrix<T>, spec: GateSpec<T>) -> Result<Self> {
        let factor = CovFactor::new(s_cov)?;
        if factor.dim() != spec.m().as_usize() {
            return Err(Error::DimensionMismatch {
                context: "gate dimension",
                expected: factor.dim(),
                found: spec.m().as_usize(),
            });
        }
        Ok(Self {
            gaussian: GaussianSampler {
                factor: factor.lower(),
            },
            factor,
            spec,
        })
    }

    pub fn factor(&self) -> &CovFactor<T> {
        &self.factor
    }

    pub fn spec(&self) -> &GateSpec<T> {
        &self.spec
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PostGateDraw<T> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let nu = self.gaussian.sample(rng);
            let nis = self
                .factor
                .nis(&nu)
                .expect("sample dimension matches factor");
            if GateDecision::from_nis(nis, &self.spec).accepted {
                return PostGateDraw { nu, nis, attempts };
            }
        }
    }
}

/// One draw from `ν | Z ≤ τ`.
pub fn sample_post_gate<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    s_cov: &DMatrix<T>,
    spec: &GateSpec<T>,
) -> Result<DVector<T>>
where
    StandardNormal: Distribution<T>,
{
    Ok(PostGateSampler::new(s_cov, *spec)?.draw(rng).nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statx::Dof;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fixed_seed_is_reproducible() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = sample_innovation(&mut ChaCha20Rng::seed_from_u64(9), &s).unwrap();
        let b = sample_innovation(&mut ChaCha20Rng::seed_from_u64(9), &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_pd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(sample_innovation(&mut rng, &bad).is_err());
        assert!(GaussianSampler::semidefinite(&bad).is_err());
        assert!(GaussianSampler::semidefinite(&DMatrix::<f64>::zeros(3, 3)).is_ok());
    }

    #[test]
    fn post_gate_draws_are_in_gate() {
        let spec = GateSpec::new(0.9, Dof::new(3).unwrap()).unwrap();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5]);
        let sampler = PostGateSampler::new(&s, spec).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let d = sampler.draw(&mut rng);
            assert!(d.nis <= spec.tau());
            assert!(d.attempts >= 1);
        }
        let wrong = GateSpec::new(0.9, Dof::new(2).unwrap()).unwrap();
        assert!(PostGateSampler::new(&s, wrong).is_err());
    }
}
