//! Chi-square machinery for gated innovations.
//!
//! Under nominal linear-Gaussian assumptions the NIS `Z = νᵀS⁻¹ν` is `χ²_m`.
//! Gating at `Z ≤ τ` truncates that law; the truncated mean is `m·γ(τ,m)`
//! with `γ(τ,m) = P(χ²_{m+2} ≤ τ) / P(χ²_m ≤ τ)`, and NN selection over `M`
//! in-gate candidates contracts it further to the first order statistic.

mod incgamma;
mod quadrature;

use crate::error::{domain, Error, Result};
use crate::real::lit;
use num_traits::{Float, FloatConst};
use serde::Serialize;

pub use quadrature::GL_NODES;

/// Degrees of freedom, i.e. the measurement dimension `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Dof(u32);

impl Dof {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(domain("degrees of freedom must be at least 1"));
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn as_usize(self) -> usize {
        self.0 as usize
    }

    fn as_float<T: Float>(self) -> T {
        lit(self.0 as f64)
    }
}

impl TryFrom<u32> for Dof {
    type Error = Error;
    fn try_from(m: u32) -> Result<Self> {
        Self::new(m)
    }
}

impl std::fmt::Display for Dof {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Ellipsoidal validation gate `{Z ≤ τ}` with nominal acceptance probability `p_gate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateSpec<T> {
    m: Dof,
    p_gate: T,
    tau: T,
}

impl<T: Float + FloatConst> GateSpec<T> {
    /// Gate whose threshold is the `p_gate` quantile of `χ²_m`.
    pub fn new(p_gate: T, m: Dof) -> Result<Self> {
        let tau = chi2_quantile(p_gate, m)?;
        Ok(Self { m, p_gate, tau })
    }

    /// Gate with an explicit threshold; `p_gate` is recomputed from the cdf.
    pub fn from_threshold(tau: T, m: Dof) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(domain("gate threshold must be positive and finite"));
        }
        let p_gate = chi2_cdf(tau, m)?;
        if !(p_gate > T::zero() && p_gate < T::one()) {
            return Err(domain(
                "gate threshold yields a degenerate acceptance probability",
            ));
        }
        Ok(Self { m, p_gate, tau })
    }

    #[inline]
    pub fn m(&self) -> Dof {
        self.m
    }

    #[inline]
    pub fn p_gate(&self) -> T {
        self.p_gate
    }

    #[inline]
    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn contraction(&self) -> ContractionFactor<T> {
        gamma_factor(self.tau, self.m).expect("gate threshold is positive by construction")
    }
}

/// `γ(τ,m)`: the ratio of the gate-conditioned mean NIS to `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionFactor<T> {
    pub gamma: T,
    pub tau: T,
    pub m: Dof,
}

impl<T: Float> ContractionFactor<T> {
    /// `E[Z | Z ≤ τ] = m·γ`.
    pub fn mean_nis(&self) -> T {
        self.gamma * self.m.as_float()
    }
}

fn check_nonneg<T: Float>(z: T) -> Result<()> {
    if z < T::zero() || z.is_nan() {
        return Err(domain("chi-square argument must be nonnegative"));
    }
    Ok(())
}

fn check_probability<T: Float>(p: T) -> Result<()> {
    if !(p > T::zero() && p < T::one()) {
        return Err(domain("probability must lie strictly inside (0, 1)"));
    }
    Ok(())
}

fn check_tau<T: Float>(tau: T) -> Result<()> {
    if !(tau > T::zero()) {
        return Err(domain("truncation threshold must be positive"));
    }
    Ok(())
}

/// Density of `χ²_m` at `z`. Infinite at the origin for `m = 1`.
pub fn chi2_pdf<T: Float + FloatConst>(z: T, m: Dof) -> Result<T> {
    check_nonneg(z)?;
    let k = m.get();
    if z == T::zero() {
        return Ok(match k {
            1 => T::infinity(),
            2 => lit(0.5),
            _ => T::zero(),
        });
    }
    if z.is_infinite() {
        return Ok(T::zero());
    }
    let a = m.as_float::<T>() * lit(0.5);
    let log_density =
        (a - T::one()) * z.ln() - z * lit(0.5) - a * T::LN_2() - incgamma::ln_gamma_half::<T>(k);
    Ok(log_density.exp())
}

/// `P(χ²_m ≤ z)`.
pub fn chi2_cdf<T: Float + FloatConst>(z: T, m: Dof) -> Result<T> {
    check_nonneg(z)?;
    Ok(incgamma::regularized_pair(m.get(), z * lit(0.5)).0)
}

/// `P(χ²_m > z)`, without cancellation in the upper tail.
pub fn chi2_sf<T: Float + FloatConst>(z: T, m: Dof) -> Result<T> {
    check_nonneg(z)?;
    Ok(incgamma::regularized_pair(m.get(), z * lit(0.5)).1)
}

/// Inverse cdf of `χ²_m`: bracketing bisection with safeguarded Newton steps.
///
/// Iterates to machine precision in cdf units, well inside the 1e-10 contract.
pub fn chi2_quantile<T: Float + FloatConst>(p: T, m: Dof) -> Result<T> {
    check_probability(p)?;
    let f = |z: T| chi2_cdf(z, m).map(|c| c - p);

    let mut lo = T::zero();
    let mut hi = m.as_float::<T>().max(T::one());
    while f(hi)? < T::zero() {
        lo = hi;
        hi = hi + hi;
        if hi.is_infinite() {
            return Err(domain("quantile bracket overflow"));
        }
    }

    let tol = T::epsilon() * lit(4.0);
    let mut x = (lo + hi) * lit(0.5);
    for _ in 0..400 {
        let fx = f(x)?;
        if fx.abs() <= tol {
            break;
        }
        if fx < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chi2_pdf(x, m)?;
        let newton = x - fx / slope;
        let next = if slope > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * lit(0.5)
        };
        if (next - x).abs() <= T::epsilon() * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Closed-form 2D threshold `τ = -2 ln(1 - P_g)`.
pub fn gate_threshold_2d<T: Float>(p_gate: T) -> Result<T> {
    check_probability(p_gate)?;
    Ok(-lit::<T>(2.0) * (-p_gate).ln_1p())
}

/// `P(χ²_{m+2} ≤ τ) / P(χ²_m ≤ τ)`; equals `γ(τ,m)`.
fn contraction_ratio<T: Float + FloatConst>(tau: T, m: Dof) -> T {
    incgamma::lower_ratio(m.get(), tau * lit(0.5))
}

/// `E[Z | Z ≤ τ]` for `Z ~ χ²_m`, via `E[Z·1{Z≤τ}] = m·P(χ²_{m+2} ≤ τ)`.
pub fn truncated_chi2_mean<T: Float + FloatConst>(tau: T, m: Dof) -> Result<T> {
    check_tau(tau)?;
    Ok(m.as_float::<T>() * contraction_ratio(tau, m))
}

/// `E[Z² | Z ≤ τ] = m(m+2)·P(χ²_{m+4} ≤ τ) / P(χ²_m ≤ τ)`.
pub fn truncated_chi2_second_moment<T: Float + FloatConst>(tau: T, m: Dof) -> Result<T> {
    check_tau(tau)?;
    let mf = m.as_float::<T>();
    let next = Dof(m.get() + 2);
    Ok(mf * (mf + lit(2.0)) * contraction_ratio(tau, m) * contraction_ratio(tau, next))
}

/// `Var[Z | Z ≤ τ]`.
pub fn truncated_chi2_variance<T: Float + FloatConst>(tau: T, m: Dof) -> Result<T> {
    let mean = truncated_chi2_mean(tau, m)?;
    let second = truncated_chi2_second_moment(tau, m)?;
    Ok((second - mean * mean).max(T::zero()))
}

/// Contraction factor `γ(τ,m) = E[Z | Z ≤ τ] / m`, in `(0, 1)` for finite `τ`.
pub fn gamma_factor<T: Float + FloatConst>(tau: T, m: Dof) -> Result<ContractionFactor<T>> {
    check_tau(tau)?;
    Ok(ContractionFactor {
        gamma: contraction_ratio(tau, m),
        tau,
        m,
    })
}

/// Closed-form 2D contraction `γ(P_g,2) = 1 + (1-P_g) ln(1-P_g) / P_g`.
pub fn gamma_factor_2d<T: Float>(p_gate: T) -> Result<ContractionFactor<T>> {
    let tau = gate_threshold_2d(p_gate)?;
    let miss = T::one() - p_gate;
    Ok(ContractionFactor {
        gamma: T::one() + miss * (-p_gate).ln_1p() / p_gate,
        tau,
        m: Dof(2),
    })
}

fn check_min_args<T: Float>(p_gate: T, multiplicity: u32) -> Result<()> {
    if multiplicity == 0 {
        return Err(domain("candidate multiplicity must be at least 1"));
    }
    if !(p_gate > T::zero() && p_gate <= T::one()) {
        return Err(domain("gate probability must lie in (0, 1]"));
    }
    Ok(())
}

/// `E[min of M iid (Z | Z ≤ τ)]` for `m = 2`, where `Z` is `Exp(1/2)`.
///
/// Integrates the survival function `(1 - F_c)^M` of the minimum over
/// `[0, τ]` with 256-node Gauss-Legendre. `p_gate = 1` means no gate.
pub fn min_nis_mean_2d<T: Float>(p_gate: T, multiplicity: u32) -> Result<T> {
    check_min_args(p_gate, multiplicity)?;
    let mf = lit::<T>(multiplicity as f64);
    if p_gate == T::one() {
        return Ok(lit::<T>(2.0) / mf);
    }
    let tau = gate_threshold_2d(p_gate)?;
    let miss = T::one() - p_gate;
    // in-gate survival: (e^{-z/2} - (1 - P_g)) / P_g
    let survival = |z: T| ((-z * lit(0.5)).exp() - miss) / p_gate;
    Ok(quadrature::integrate(
        |z| survival(z).max(T::zero()).powi(multiplicity as i32),
        T::zero(),
        tau,
    ))
}

/// General-`m` counterpart of [`min_nis_mean_2d`].
///
/// Uses the substitution `z = τ s²`, under which the truncated cdf is smooth
/// in `s` for every integer `m`.
pub fn min_nis_mean<T: Float + FloatConst>(p_gate: T, m: Dof, multiplicity: u32) -> Result<T> {
    check_min_args(p_gate, multiplicity)?;
    if m.get() == 2 {
        return min_nis_mean_2d(p_gate, multiplicity);
    }
    if p_gate == T::one() {
        // E[min] = ∫_0^∞ P(Z > z)^M dz; map [0, ∞) onto [0, 1) by z = s/(1-s).
        return Ok(quadrature::integrate(
            |s: T| {
                if s >= T::one() {
                    return T::zero();
                }
                let z = s / (T::one() - s);
                let sf = incgamma::regularized_pair(m.get(), z * lit(0.5)).1;
                sf.powi(multiplicity as i32) / ((T::one() - s) * (T::one() - s))
            },
            T::zero(),
            T::one(),
        ));
    }
    let tau = chi2_quantile(p_gate, m)?;
    let mass = chi2_cdf(tau, m)?;
    let two_tau = tau + tau;
    Ok(quadrature::integrate(
        |s: T| {
            let z = tau * s * s;
            let inside = incgamma::regularized_pair(m.get(), z * lit(0.5)).0 / mass;
            (T::one() - inside).max(T::zero()).powi(multiplicity as i32) * two_tau * s
        },
        T::zero(),
        T::one(),
    ))
}

/// Standard normal quantile, via `z_{(1+q)/2}² = χ²_1` quantile at `q`.
pub fn normal_quantile<T: Float + FloatConst>(p: T) -> Result<T> {
    check_probability(p)?;
    let half = lit::<T>(0.5);
    if p == half {
        return Ok(T::zero());
    }
    let q = (p - half).abs() * lit(2.0);
    let r = chi2_quantile(q, Dof(1))?.sqrt();
    Ok(if p > half { r } else { -r })
}
