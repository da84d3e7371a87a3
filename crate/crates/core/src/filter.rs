//! Linear-Gaussian Kalman recursion and the innovation it produces.
//!
//! `ν = z − H x̂⁻`, `S = H P⁻ Hᵀ + R`. NIS and whitening go through a
//! factorization of `S` held by [`CovFactor`]; no explicit inverse is formed.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, RealField};

fn symmetric_within<T: RealField + Copy>(a: &DMatrix<T>, rel: T) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(T::one());
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > rel * scale {
                return false;
            }
        }
    }
    true
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<T: RealField + Copy>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * nalgebra::convert::<f64, T>(0.5)
}

fn sym_tol<T: RealField + Copy>() -> T {
    nalgebra::convert(1e-9)
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `x_k = F x_{k−1} + w`, `z_k = H x_k + v`, `w ~ N(0,Q)`, `v ~ N(0,R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T: RealField + Copy> {
    transition: DMatrix<T>,
    measurement: DMatrix<T>,
    process_noise: DMatrix<T>,
    measurement_noise: DMatrix<T>,
}

impl<T: RealField + Copy> StateSpaceModel<T> {
    pub fn new(
        transition: DMatrix<T>,
        measurement: DMatrix<T>,
        process_noise: DMatrix<T>,
        measurement_noise: DMatrix<T>,
    ) -> Result<Self> {
        let n = transition.nrows();
        check_dim("transition columns", n, transition.ncols())?;
        check_dim("measurement columns", n, measurement.ncols())?;
        let m = measurement.nrows();
        check_dim("process noise rows", n, process_noise.nrows())?;
        check_dim("process noise columns", n, process_noise.ncols())?;
        check_dim("measurement noise rows", m, measurement_noise.nrows())?;
        check_dim("measurement noise columns", m, measurement_noise.ncols())?;
        if !symmetric_within(&process_noise, sym_tol()) {
            return Err(Error::NotPositiveDefinite("process noise is not symmetric"));
        }
        if !symmetric_within(&measurement_noise, sym_tol()) {
            return Err(Error::NotPositiveDefinite(
                "measurement noise is not symmetric",
            ));
        }
        let q_min = symmetrize(&process_noise).symmetric_eigenvalues().min();
        let floor: T = nalgebra::convert(-1e-12);
        if q_min < floor * process_noise.amax().max(T::one()) {
            return Err(Error::NotPositiveDefinite(
                "process noise has a negative eigenvalue",
            ));
        }
        if measurement_noise.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("measurement noise"));
        }
        Ok(Self {
            transition,
            measurement,
            process_noise: symmetrize(&process_noise),
            measurement_noise: symmetrize(&measurement_noise),
        })
    }

    /// Planar constant-velocity model with state `[px, py, vx, vy]` and
    /// position-only measurements. `psd` is the continuous white-acceleration
    /// spectral density; `meas_std` the per-axis measurement noise deviation.
    pub fn constant_velocity_2d(dt: T, psd: T, meas_std: T) -> Result<Self> {
        if !(dt > T::zero()) || psd < T::zero() || !(meas_std > T::zero()) {
            return Err(Error::InvalidConfig(
                "constant-velocity model needs dt > 0, psd >= 0, meas_std > 0".into(),
            ));
        }
        let (z, o) = (T::zero(), T::one());
        #[rustfmt::skip]
        let f = DMatrix::from_row_slice(4, 4, &[
            o, z, dt, z,
            z, o, z, dt,
            z, z, o, z,
            z, z, z, o,
        ]);
        #[rustfmt::skip]
        let h = DMatrix::from_row_slice(2, 4, &[
            o, z, z, z,
            z, o, z, z,
        ]);
        let three: T = nalgebra::convert(3.0);
        let two: T = nalgebra::convert(2.0);
        let q11 = psd * dt * dt * dt / three;
        let q12 = psd * dt * dt / two;
        let q22 = psd * dt;
        #[rustfmt::skip]
        let q = DMatrix::from_row_slice(4, 4, &[
            q11, z,   q12, z,
            z,   q11, z,   q12,
            q12, z,   q22, z,
            z,   q12, z,   q22,
        ]);
        let r = DMatrix::identity(2, 2) * (meas_std * meas_std);
        Self::new(f, h, q, r)
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.transition
    }

    pub fn measurement(&self) -> &DMatrix<T> {
        &self.measurement
    }

    pub fn process_noise(&self) -> &DMatrix<T> {
        &self.process_noise
    }

    pub fn measurement_noise(&self) -> &DMatrix<T> {
        &self.measurement_noise
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.measurement.nrows()
    }
}

/// State estimate and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState<T: RealField + Copy> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: RealField + Copy> TrackState<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        check_dim("covariance rows", mean.len(), cov.nrows())?;
        check_dim("covariance columns", mean.len(), cov.ncols())?;
        if !symmetric_within(&cov, sym_tol()) {
            return Err(Error::NotPositiveDefinite(
                "state covariance is not symmetric",
            ));
        }
        let cov = symmetrize(&cov);
        if cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("state covariance"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `ν` together with the covariance `S` of the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation<T: RealField + Copy> {
    pub nu: DVector<T>,
    pub s_cov: DMatrix<T>,
}

impl<T: RealField + Copy> Innovation<T> {
    pub fn new(nu: DVector<T>, s_cov: DMatrix<T>) -> Result<Self> {
        check_dim("innovation covariance rows", nu.len(), s_cov.nrows())?;
        check_dim("innovation covariance columns", nu.len(), s_cov.ncols())?;
        Ok(Self { nu, s_cov })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }
}

/// A factorized SPD covariance: Cholesky factor plus symmetric inverse square root.
///
/// Built once per `S` and reused for every innovation sharing it.
#[derive(Debug, Clone)]
pub struct CovFactor<T: RealField + Copy> {
    cov: DMatrix<T>,
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
    inv_sqrt: DMatrix<T>,
}

impl<T: RealField + Copy> CovFactor<T> {
    pub fn new(cov: &DMatrix<T>) -> Result<Self> {
        if !symmetric_within(cov, sym_tol()) {
            return Err(Error::NotPositiveDefinite(
                "innovation covariance is not symmetric",
            ));
        }
        let cov = symmetrize(cov);
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= T::zero()) {
            return Err(Error::NotPositiveDefinite("innovation covariance"));
        }
        let scaled = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| T::one() / l.sqrt()),
        );
        let inv_sqrt = symmetrize(
            &(&eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose()),
        );
        Ok(Self {
            cov,
            chol,
            inv_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Lower-triangular `L` with `L Lᵀ = S`.
    pub fn lower(&self) -> DMatrix<T> {
        self.chol.l()
    }

    /// Symmetric `S^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<T> {
        &self.inv_sqrt
    }

    pub fn trace(&self) -> T {
        self.cov.trace()
    }

    /// `νᵀ S⁻¹ ν` via a triangular solve.
    pub fn nis(&self, nu: &DVector<T>) -> Result<T> {
        check_dim("innovation", self.dim(), nu.len())?;
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(nu)
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
        Ok(w.norm_squared())
    }

    /// `u = S^{-1/2} ν`.
    pub fn whiten(&self, nu: &DVector<T>) -> Result<DVector<T>> {
        check_dim("innovation", self.dim(), nu.len())?;
        Ok(&self.inv_sqrt * nu)
    }

    /// `S⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }
}

/// `x̂⁻ = F x̂`, `P⁻ = F P Fᵀ + Q`.
pub fn predict<T: RealField + Copy>(
    state: &TrackState<T>,
    model: &StateSpaceModel<T>,
) -> Result<TrackState<T>> {
    check_dim("state", model.state_dim(), state.dim())?;
    let f = model.transition();
    let mean = f * &state.mean;
    let cov = symmetrize(&(f * &state.cov * f.transpose() + model.process_noise()));
    Ok(TrackState { mean, cov })
}

/// Innovation of measurement `z` against a predicted state.
pub fn innovation<T: RealField + Copy>(
    z: &DVector<T>,
    state: &TrackState<T>,
    model: &StateSpaceModel<T>,
) -> Result<Innovation<T>> {
    check_dim("measurement", model.meas_dim(), z.len())?;
    check_dim("state", model.state_dim(), state.dim())?;
    let h = model.measurement();
    let nu = z - h * &state.mean;
    let s_cov = symmetrize(&(h * &state.cov * h.transpose() + model.measurement_noise()));
    if s_cov.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("innovation covariance"));
    }
    Ok(Innovation { nu, s_cov })
}

/// Kalman update with the Joseph-form covariance.
pub fn update<T: RealField + Copy>(
    state: &TrackState<T>,
    inn: &Innovation<T>,
    model: &StateSpaceModel<T>,
) -> Result<TrackState<T>> {
    check_dim("state", model.state_dim(), state.dim())?;
    check_dim("innovation", model.meas_dim(), inn.dim())?;
    let factor = CovFactor::new(&inn.s_cov)?;
    update_with(state, &inn.nu, &factor, model)
}

/// [`update`] with an already factorized `S`.
pub fn update_with<T: RealField + Copy>(
    state: &TrackState<T>,
    nu: &DVector<T>,
    factor: &CovFactor<T>,
    model: &StateSpaceModel<T>,
) -> Result<TrackState<T>> {
    check_dim("innovation", factor.dim(), nu.len())?;
    let h = model.measurement();
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ since P and S are symmetric
    let gain = factor.solve(&(h * &state.cov)).transpose();
    let mean = &state.mean + &gain * nu;
    let joseph = DMatrix::identity(state.dim(), state.dim()) - &gain * h;
    let cov = symmetrize(
        &(&joseph * &state.cov * joseph.transpose()
            + &gain * model.measurement_noise() * gain.transpose()),
    );
    Ok(TrackState { mean, cov })
}

/// Kalman gain `P Hᵀ S⁻¹` for a predicted state.
pub fn gain<T: RealField + Copy>(
    state: &TrackState<T>,
    inn: &Innovation<T>,
    model: &StateSpaceModel<T>,
) -> Result<DMatrix<T>> {
    let factor = CovFactor::new(&inn.s_cov)?;
    Ok(factor
        .solve(&(model.measurement() * &state.cov))
        .transpose())
}

/// Normalized innovation squared `νᵀ S⁻¹ ν`.
pub fn nis<T: RealField + Copy>(inn: &Innovation<T>) -> Result<T> {
    CovFactor::new(&inn.s_cov)?.nis(&inn.nu)
}

/// Whitened innovation `S^{-1/2} ν` using the symmetric square root.
pub fn whiten<T: RealField + Copy>(inn: &Innovation<T>) -> Result<DVector<T>> {
    CovFactor::new(&inn.s_cov)?.whiten(&inn.nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn naive_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), b.ncols());
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn cv() -> StateSpaceModel<f64> {
        StateSpaceModel::constant_velocity_2d(1.0, 0.01, 1.0).unwrap()
    }

    #[test]
    fn predict_identity_dynamics_is_noop() {
        let model = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let s = TrackState::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::identity(2, 2) * 3.0,
        )
        .unwrap();
        assert_eq!(predict(&s, &model).unwrap(), s);
    }

    #[test]
    fn predict_cv_zero_velocity_holds_position() {
        let model = StateSpaceModel::constant_velocity_2d(1.0, 0.0, 1.0).unwrap();
        let s = TrackState::new(
            DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let p = predict(&s, &model).unwrap();
        assert_eq!(p.mean, s.mean);
    }

    #[test]
    fn predict_adds_process_noise() {
        let model = cv();
        let s = TrackState::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let p = predict(&s, &model).unwrap();
        let f = model.transition();
        assert!(p.cov.trace() > (f * &s.cov * f.transpose()).trace());
    }

    #[test]
    fn innovation_examples() {
        let model = cv();
        let s = TrackState::new(
            DVector::from_vec(vec![1.0, 2.0, 0.5, 0.1]),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let z = model.measurement() * &s.mean;
        let inn = innovation(&z, &s, &model).unwrap();
        assert_eq!(inn.nu, DVector::zeros(2));

        let eye = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let s2 = TrackState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let inn = innovation(&DVector::from_vec(vec![1.0, 1.0]), &s2, &eye).unwrap();
        assert_eq!(inn.s_cov, DMatrix::identity(2, 2) * 2.0);

        assert!(matches!(
            innovation(&DVector::zeros(3), &s, &model),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn innovation_covariance_matches_dense_triple_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = cv();
        let p = random_spd(&mut rng, 4);
        let s = TrackState::new(
            DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0)),
            p.clone(),
        )
        .unwrap();
        let z = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
        let inn = innovation(&z, &s, &model).unwrap();
        let h = model.measurement();
        let oracle = naive_mul(&naive_mul(h, &p), &h.transpose()) + model.measurement_noise();
        for (a, b) in inn.s_cov.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_zero_innovation_keeps_mean_and_shrinks_cov() {
        let model = cv();
        let s = TrackState::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let z = model.measurement() * &s.mean;
        let inn = innovation(&z, &s, &model).unwrap();
        let post = update(&s, &inn, &model).unwrap();
        assert_eq!(post.mean, s.mean);
        assert!(post.cov.trace() < s.cov.trace());
    }

    #[test]
    fn update_identity_gain_is_half() {
        let model = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let s = TrackState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let inn = innovation(&DVector::from_vec(vec![2.0, -4.0]), &s, &model).unwrap();
        let k = gain(&s, &inn, &model).unwrap();
        for (a, b) in k.iter().zip((DMatrix::<f64>::identity(2, 2) * 0.5).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let post = update(&s, &inn, &model).unwrap();
        assert_abs_diff_eq!(post.mean[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.mean[1], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn update_matches_information_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let model = cv();
        for _ in 0..20 {
            let p = random_spd(&mut rng, 4);
            let x = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let s = TrackState::new(x.clone(), p.clone()).unwrap();
            let z = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let inn = innovation(&z, &s, &model).unwrap();
            let post = update(&s, &inn, &model).unwrap();

            let h = model.measurement();
            let r_inv = model.measurement_noise().clone().try_inverse().unwrap();
            let p_inv = p.clone().try_inverse().unwrap();
            let info = &p_inv + h.transpose() * &r_inv * h;
            let cov_oracle = info.try_inverse().unwrap();
            let mean_oracle = &cov_oracle * (&p_inv * &x + h.transpose() * &r_inv * &z);
            for (a, b) in post.cov.iter().zip(cov_oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            for (a, b) in post.mean.iter().zip(mean_oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn nis_examples() {
        let zero = Innovation::<f64>::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(nis(&zero).unwrap(), 0.0);
        let e =
            Innovation::new(DVector::from_vec(vec![3.0, 4.0]), DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(nis(&e).unwrap(), 25.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_spd(&mut rng, 3);
            let nu = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let explicit = (nu.transpose() * s.clone().try_inverse().unwrap() * &nu)[(0, 0)];
            let inn = Innovation::new(nu, s).unwrap();
            assert_abs_diff_eq!(nis(&inn).unwrap(), explicit, epsilon = 1e-10);
        }
    }

    #[test]
    fn nis_rejects_indefinite_covariance() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let inn = Innovation::new(DVector::from_vec(vec![1.0, 0.0]), bad).unwrap();
        assert!(matches!(nis(&inn), Err(Error::NotPositiveDefinite(_))));
        assert!(whiten(&inn).is_err());
    }

    #[test]
    fn whiten_examples() {
        let a =
            Innovation::new(DVector::from_vec(vec![1.5, -0.5]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(whiten(&a).unwrap(), a.nu);
        let b = Innovation::new(
            DVector::from_vec(vec![2.0, 0.0]),
            DMatrix::identity(2, 2) * 4.0,
        )
        .unwrap();
        let u = whiten(&b).unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn whitening_uses_symmetric_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(&mut rng, 3);
        let f = CovFactor::new(&s).unwrap();
        let w = f.inv_sqrt();
        assert!(symmetric_within(w, 1e-12));
        let back = w * &s * w;
        for (a, b) in back.iter().zip(DMatrix::<f64>::identity(3, 3).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_validation() {
        let r_bad = DMatrix::<f64>::zeros(2, 2);
        assert!(StateSpaceModel::new(
            DMatrix::identity(4, 4),
            DMatrix::zeros(2, 4),
            DMatrix::zeros(4, 4),
            r_bad
        )
        .is_err());
        assert!(StateSpaceModel::<f64>::new(
            DMatrix::identity(4, 4),
            DMatrix::zeros(2, 3),
            DMatrix::zeros(4, 4),
            DMatrix::identity(2, 2)
        )
        .is_err());
        assert!(StateSpaceModel::constant_velocity_2d(0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn single_precision_recursion() {
        let model = StateSpaceModel::<f32>::constant_velocity_2d(1.0, 0.01, 1.0).unwrap();
        let s = TrackState::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let p = predict(&s, &model).unwrap();
        let inn = innovation(&DVector::from_vec(vec![0.5f32, -0.5]), &p, &model).unwrap();
        let z = nis(&inn).unwrap();
        let u = whiten(&inn).unwrap();
        assert!((u.norm_squared() - z).abs() < 1e-5);
        let post = update(&p, &inn, &model).unwrap();
        assert!(post.cov.trace() < p.cov.trace());
    }
}
