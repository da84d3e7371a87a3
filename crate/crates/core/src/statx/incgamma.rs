//! Regularized incomplete gamma function at half-integer shape `a = k/2`.
//!
//! Series expansion below `x = a + 1`, Lentz continued fraction above it.

use crate::real::lit;
use num_traits::{Float, FloatConst};

const MAX_ITER: usize = 2000;

/// `ln Γ(k/2)` for `k ≥ 1`, by exact recurrence from `Γ(1) = 1`, `Γ(1/2) = √π`.
pub(crate) fn ln_gamma_half<T: Float + FloatConst>(k: u32) -> T {
    debug_assert!(k >= 1);
    let mut acc = T::zero();
    if k.is_multiple_of(2) {
        for j in 1..k / 2 {
            acc = acc + lit::<T>(j as f64).ln();
        }
    } else {
        acc = lit::<T>(0.5) * T::PI().ln();
        for i in 1..=(k - 1) / 2 {
            acc = acc + lit::<T>(i as f64 - 0.5).ln();
        }
    }
    acc
}

/// `Σ_{n≥0} xⁿ / ((a+1)(a+2)…(a+n))`, so that `P(a,x) = xᵃ e⁻ˣ / Γ(a+1) · sum`.
fn series_sum<T: Float>(a: T, x: T) -> T {
    let mut ap = a;
    let mut term = T::one();
    let mut sum = T::one();
    for _ in 0..MAX_ITER {
        ap = ap + T::one();
        term = term * x / ap;
        sum = sum + term;
        if term.abs() <= sum.abs() * T::epsilon() {
            break;
        }
    }
    sum
}

/// Continued fraction for `Γ(a,x) eˣ x⁻ᵃ`.
fn upper_fraction<T: Float>(a: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    let two = lit::<T>(2.0);
    for i in 1..MAX_ITER {
        let fi = lit::<T>(i as f64);
        let an = -fi * (fi - a);
        b = b + two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let del = d * c;
        h = h * del;
        if (del - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    h
}

fn in_series_regime<T: Float>(a: T, x: T) -> bool {
    x < a + T::one()
}

/// `(P(a,x), Q(a,x))` with `a = k/2`.
pub(crate) fn regularized_pair<T: Float + FloatConst>(k: u32, x: T) -> (T, T) {
    if x <= T::zero() {
        return (T::zero(), T::one());
    }
    if x.is_infinite() {
        return (T::one(), T::zero());
    }
    let a = lit::<T>(k as f64) * lit(0.5);
    if in_series_regime(a, x) {
        let log_pref = a * x.ln() - x - ln_gamma_half::<T>(k + 2);
        let p = (log_pref.exp() * series_sum(a, x)).min(T::one());
        (p, T::one() - p)
    } else {
        let log_pref = a * x.ln() - x - ln_gamma_half::<T>(k);
        let q = (log_pref.exp() * upper_fraction(a, x)).min(T::one());
        (T::one() - q, q)
    }
}

/// `P(a+1, x) / P(a, x)` with `a = k/2`, stable as `x → 0`.
pub(crate) fn lower_ratio<T: Float + FloatConst>(k: u32, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x.is_infinite() {
        return T::one();
    }
    let a = lit::<T>(k as f64) * lit(0.5);
    if in_series_regime(a, x) {
        let a1 = a + T::one();
        x / a1 * series_sum(a1, x) / series_sum(a, x)
    } else {
        regularized_pair(k + 2, x).0 / regularized_pair(k, x).0
    }
}
