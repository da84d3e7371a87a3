//! Empirical innovation statistics and NIS consistency verdicts.
//!
//! Gated streams are judged against the gate-conditioned reference `m·γ(τ,m)`
//! ([`Mode::GateAware`]) or against the nominal `m` ([`Mode::Nominal`]); the
//! latter reports spurious overconfidence whenever a gate is active.

use crate::error::{domain, Error, Result};
use crate::filter::{self, Innovation};
use crate::statx::{self, Dof, GateSpec};
use crate::Real;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

/// Running sums over a stream of innovations.
///
/// Merging is component-wise addition, so shards combined in a fixed order
/// give bit-identical totals.
#[derive(Debug, Clone, PartialEq)]
pub struct NisAccumulator<T: Real> {
    m: Dof,
    count: u64,
    sum: T,
    sum_sq: T,
    /// `Σ ν`
    vec_sum: DVector<T>,
    /// `Σ ν νᵀ`
    outer_sum: DMatrix<T>,
    /// `Σ (ν_i ν_j)²`, for standard errors of the covariance entries
    outer_sq_sum: DMatrix<T>,
}

impl<T: Real> NisAccumulator<T> {
    pub fn new(m: Dof) -> Self {
        let d = m.as_usize();
        Self {
            m,
            count: 0,
            sum: T::zero(),
            sum_sq: T::zero(),
            vec_sum: DVector::zeros(d),
            outer_sum: DMatrix::zeros(d, d),
            outer_sq_sum: DMatrix::zeros(d, d),
        }
    }

    pub fn m(&self) -> Dof {
        self.m
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> T {
        self.sum
    }

    pub fn sum_sq(&self) -> T {
        self.sum_sq
    }

    pub fn outer_sum(&self) -> &DMatrix<T> {
        &self.outer_sum
    }

    /// Adds one sample whose NIS is already known.
    pub fn record(&mut self, nis: T, nu: &DVector<T>) -> Result<()> {
        if nu.len() != self.m.as_usize() {
            return Err(Error::DimensionMismatch {
                context: "accumulated innovation",
                expected: self.m.as_usize(),
                found: nu.len(),
            });
        }
        self.count += 1;
        self.sum += nis;
        self.sum_sq += nis * nis;
        self.vec_sum += nu;
        let d = nu.len();
        for j in 0..d {
            for i in 0..d {
                let p = nu[i] * nu[j];
                self.outer_sum[(i, j)] += p;
                self.outer_sq_sum[(i, j)] += p * p;
            }
        }
        Ok(())
    }

    pub fn push(&mut self, inn: &Innovation<T>) -> Result<()> {
        let z = filter::nis(inn)?;
        self.record(z, &inn.nu)
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.m != self.m {
            return Err(Error::DimensionMismatch {
                context: "accumulator merge",
                expected: self.m.as_usize(),
                found: other.m.as_usize(),
            });
        }
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.vec_sum += &other.vec_sum;
        self.outer_sum += &other.outer_sum;
        self.outer_sq_sum += &other.outer_sq_sum;
        Ok(())
    }

    fn n(&self) -> T {
        T::cast_from(self.count as f64)
    }

    fn require(&self, needed: u64) -> Result<()> {
        if self.count < needed {
            return Err(Error::InsufficientSamples {
                needed,
                found: self.count,
            });
        }
        Ok(())
    }

    pub fn mean_nis(&self) -> Result<T> {
        self.require(1)?;
        Ok(self.sum / self.n())
    }

    /// Unbiased sample variance of the NIS values.
    pub fn nis_variance(&self) -> Result<T> {
        self.require(2)?;
        let n = self.n();
        let mean = self.sum / n;
        Ok(Float::max(
            (self.sum_sq - n * mean * mean) / (n - T::one()),
            T::zero(),
        ))
    }

    pub fn nis_std_error(&self) -> Result<T> {
        Ok(Float::sqrt(self.nis_variance()? / self.n()))
    }

    pub fn mean_vector(&self) -> Result<DVector<T>> {
        self.require(1)?;
        Ok(&self.vec_sum / self.n())
    }

    pub fn mean_vector_std_errors(&self) -> Result<DVector<T>> {
        self.require(2)?;
        let n = self.n();
        Ok(DVector::from_fn(self.m.as_usize(), |i, _| {
            let mean = self.vec_sum[i] / n;
            let var = (self.outer_sum[(i, i)] - n * mean * mean) / (n - T::one());
            Float::sqrt(Float::max(var, T::zero()) / n)
        }))
    }

    /// Zero-mean estimate `Σ ν νᵀ / count` of `E[ν νᵀ]`.
    pub fn empirical_covariance(&self) -> Result<DMatrix<T>> {
        self.require(2)?;
        Ok(&self.outer_sum / self.n())
    }

    /// Standard error of each entry of [`Self::empirical_covariance`].
    pub fn covariance_std_errors(&self) -> Result<DMatrix<T>> {
        self.require(2)?;
        let n = self.n();
        let d = self.m.as_usize();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            let mean = self.outer_sum[(i, j)] / n;
            let var = (self.outer_sq_sum[(i, j)] - n * mean * mean) / (n - T::one());
            Float::sqrt(Float::max(var, T::zero()) / n)
        }))
    }
}

fn rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl<T: Real + Serialize> Serialize for NisAccumulator<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("NisAccumulator", 7)?;
        s.serialize_field("m", &self.m)?;
        s.serialize_field("count", &self.count)?;
        s.serialize_field("sum", &self.sum)?;
        s.serialize_field("sum_sq", &self.sum_sq)?;
        s.serialize_field("vec_sum", &self.vec_sum.iter().copied().collect::<Vec<T>>())?;
        s.serialize_field("outer_sum", &rows(&self.outer_sum))?;
        s.serialize_field("outer_sq_sum", &rows(&self.outer_sq_sum))?;
        s.end()
    }
}

/// Value-style [`NisAccumulator::push`].
pub fn accumulate<T: Real>(
    mut acc: NisAccumulator<T>,
    inn: &Innovation<T>,
) -> Result<NisAccumulator<T>> {
    acc.push(inn)?;
    Ok(acc)
}

/// `Z / γ(τ,m)`: restores mean `m` on gate-accepted samples.
pub fn corrected_nis<T: Real>(z: T, spec: &GateSpec<T>) -> Result<T> {
    NisCorrection::new(spec).apply(z)
}

/// [`corrected_nis`] with `γ` computed once.
#[derive(Debug, Clone, Copy)]
pub struct NisCorrection<T> {
    gamma: T,
}

impl<T: Real> NisCorrection<T> {
    pub fn new(spec: &GateSpec<T>) -> Self {
        Self {
            gamma: spec.contraction().gamma,
        }
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn apply(&self, z: T) -> Result<T> {
        if !(z >= T::zero()) {
            return Err(domain("NIS value must be nonnegative"));
        }
        Ok(z / self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nominal,
    GateAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    /// Empirical mean NIS significantly below the reference.
    Overconfident,
    /// Empirical mean NIS significantly above the reference.
    Underconfident,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyVerdict<T> {
    pub empirical_mean_nis: T,
    pub reference: T,
    /// Standard deviation of the reference law (`√(2m)` nominally, the
    /// truncated chi-square deviation when gate-aware).
    pub reference_std: T,
    pub z_score: T,
    pub verdict: Verdict,
    pub mode: Mode,
    pub count: u64,
    pub significance: T,
}

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;
pub const MIN_ASSESS_SAMPLES: u64 = 30;

/// [`assess_at`] with two-sided significance 0.05.
pub fn assess<T: Real>(
    acc: &NisAccumulator<T>,
    gate: Option<&GateSpec<T>>,
    mode: Mode,
) -> Result<ConsistencyVerdict<T>> {
    assess_at(acc, gate, mode, T::cast_from(DEFAULT_SIGNIFICANCE))
}

/// Tests the cumulative mean NIS against its reference.
///
/// `gate = None` means no gate was applied, so both modes use `m`. The
/// z-score uses the sample standard deviation of the accumulated NIS.
pub fn assess_at<T: Real>(
    acc: &NisAccumulator<T>,
    gate: Option<&GateSpec<T>>,
    mode: Mode,
    significance: T,
) -> Result<ConsistencyVerdict<T>> {
    acc.require(MIN_ASSESS_SAMPLES)?;
    if !(significance > T::zero() && significance < T::one()) {
        return Err(domain("significance must lie in (0, 1)"));
    }
    if let Some(g) = gate {
        if g.m() != acc.m() {
            return Err(Error::DimensionMismatch {
                context: "gate vs accumulator dimension",
                expected: acc.m().as_usize(),
                found: g.m().as_usize(),
            });
        }
    }
    let m = T::cast_from(acc.m().get() as f64);
    let (reference, reference_var) = match (mode, gate) {
        (Mode::GateAware, Some(g)) => (
            statx::truncated_chi2_mean(g.tau(), g.m())?,
            statx::truncated_chi2_variance(g.tau(), g.m())?,
        ),
        _ => (m, m + m),
    };
    let mean = acc.mean_nis()?;
    let sd = Float::sqrt(acc.nis_variance()?);
    let diff = mean - reference;
    let z_score = if sd > T::zero() {
        diff * Float::sqrt(acc.n()) / sd
    } else if diff == T::zero() {
        T::zero()
    } else {
        Float::signum(diff) * T::infinity()
    };
    let half = T::cast_from(0.5);
    let critical = statx::normal_quantile(T::one() - significance * half)?;
    let verdict = if z_score < -critical {
        Verdict::Overconfident
    } else if z_score > critical {
        Verdict::Underconfident
    } else {
        Verdict::Consistent
    };
    Ok(ConsistencyVerdict {
        empirical_mean_nis: mean,
        reference,
        reference_std: Float::sqrt(reference_var),
        z_score,
        verdict,
        mode,
        count: acc.count(),
        significance,
    })
}
