//! Seeded Monte Carlo experiments.
//!
//! Work is cut into fixed-size logical shards, each with its own ChaCha20
//! stream keyed by `(seed, stream id)`. Shards run on a pool of `workers`
//! threads and are merged in shard order, so reports are bit-identical for
//! any worker count.

mod experiments;
mod histogram;
mod sampling;
mod tracking;

pub use experiments::{reference_covariance, run_gate_experiment, run_nn_experiment};
pub use histogram::Histogram;
pub use sampling::{
    sample_innovation, sample_post_gate, GaussianSampler, PostGateDraw, PostGateSampler,
};
pub use tracking::{run_tracking_experiment, TrackingOutcome, TrajectoryRecord};

use crate::diagnostics::{ConsistencyVerdict, NisAccumulator};
use crate::error::{Error, Result};
use crate::statx::{Dof, GateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Samples per logical shard.
pub const SHARD_SIZE: u64 = 1 << 16;

/// Recorded in every report.
pub const GENERATOR: &str =
    "rand_chacha 0.9 ChaCha20Rng; seed_from_u64(seed), one stream per logical shard";

/// Planar constant-velocity model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvParams {
    /// Sampling interval, seconds.
    pub dt: f64,
    /// White-acceleration power spectral density, length²/s³.
    pub process_noise_psd: f64,
    /// Per-axis measurement noise standard deviation, length.
    pub meas_noise_std: f64,
}

impl Default for CvParams {
    fn default() -> Self {
        Self {
            dt: 1.0,
            process_noise_psd: 0.01,
            meas_noise_std: 1.0,
        }
    }
}

/// Which innovation drives the Kalman update in the tracking experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    /// Update with the target-originated measurement every step; the gate and
    /// NN stages only select the innovation that diagnostics see. Keeps every
    /// step's innovation exactly `N(0, S)`.
    Truth,
    /// Update with the NN-selected measurement, coasting when nothing passes.
    /// Rejections then feed back into later innovations.
    Selected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_samples: u64,
    pub m: u32,
    /// Gate probability in `(0, 1]`; `1` disables the gate.
    pub p_gate: f64,
    pub multiplicities: Vec<u32>,
    pub model_params: CvParams,
    /// Physical threads; never changes results.
    pub workers: usize,
    pub update_policy: UpdatePolicy,
    /// Divergence guard on `trace(P)` in the tracking experiment.
    pub divergence_trace: f64,
    /// Two-sided size of the consistency test.
    pub significance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 100_000,
            m: 2,
            p_gate: 0.95,
            multiplicities: vec![1],
            model_params: CvParams::default(),
            workers: 1,
            update_policy: UpdatePolicy::Truth,
            divergence_trace: 1e6,
            significance: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.m == 0 || self.m > 64 {
            return bad("m must lie in 1..=64");
        }
        if !(self.p_gate > 0.0 && self.p_gate <= 1.0) {
            return bad("p_gate must lie in (0, 1]");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.multiplicities.is_empty() || self.multiplicities.contains(&0) {
            return bad("multiplicities must be a nonempty list of positive integers");
        }
        let p = &self.model_params;
        if !(p.dt > 0.0 && p.process_noise_psd >= 0.0 && p.meas_noise_std > 0.0) {
            return bad("model parameters need dt > 0, psd >= 0, meas_noise_std > 0");
        }
        if !(self.divergence_trace > 0.0) {
            return bad("divergence bound must be positive");
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad("significance must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn dof(&self) -> Result<Dof> {
        Dof::new(self.m)
    }

    /// `None` when `p_gate == 1` (no gate).
    pub fn gate(&self) -> Result<Option<GateSpec<f64>>> {
        if self.p_gate == 1.0 {
            return Ok(None);
        }
        Ok(Some(GateSpec::new(self.p_gate, self.dof()?)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gate,
    Nn,
    Track,
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `(value − reference) / std_error`.
    pub fn gap_in_se(&self, reference: f64) -> f64 {
        (self.value - reference) / self.std_error
    }
}

/// Count, sum and sum of squares of a scalar stream.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn add(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, o: &Self) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    pub fn estimate(&self) -> Estimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Estimate {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticMinNis {
    pub multiplicity: u32,
    pub mean_min_nis: f64,
}

/// Closed-form quantities, reproducible from `statx` alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticSummary {
    pub gamma: f64,
    /// `m·γ`
    pub mean_nis: f64,
    /// `tr(S)`
    pub nominal_energy: f64,
    /// `γ·tr(S)`
    pub gated_energy: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_multiplicity: Vec<AnalyticMinNis>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnEmpirical {
    pub multiplicity: u32,
    pub trials: u64,
    /// Mean NIS of the NN-selected candidate.
    pub mean_min_nis: Estimate,
    /// Mean NIS of a single in-gate candidate from the same trials.
    pub gate_conditioned_nis: Estimate,
    /// Paired mean of `single − selected`; positive under NN contraction.
    pub contraction_gap: Estimate,
    /// `E‖ν^{(i*)}‖²`
    pub selected_energy: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_nis: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<Estimate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mean_vector: Vec<Estimate>,
    /// `E[u uᵀ | A]` for whitened `u = S^{-1/2} ν`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub whitened_cov: Vec<Vec<Estimate>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_multiplicity: Vec<NnEmpirical>,
}

/// Labelled histogram for plot-data output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelledHistogram {
    pub label: String,
    pub multiplicity: u32,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub generator: String,
    pub seed: u64,
    pub m: u32,
    pub p_gate: f64,
    /// `None` when ungated.
    pub tau: Option<f64>,
    pub n_samples: u64,
    /// Accepted (or selected) sample count.
    pub n_effective: u64,
    pub s_cov: Vec<Vec<f64>>,
    pub analytic: AnalyticSummary,
    pub empirical: EmpiricalSummary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<ConsistencyVerdict<f64>>,
    #[serde(skip)]
    pub histograms: Vec<LabelledHistogram>,
}

pub(crate) fn shard_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `job(shard_index, len)` over the logical shards of `n` samples on
/// `workers` threads; results come back in shard order.
pub(crate) fn run_sharded<R, F>(n: u64, workers: usize, job: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, u64) -> Result<R> + Sync,
{
    let shards = n.div_ceil(SHARD_SIZE);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..shards)
            .into_par_iter()
            .map(|k| job(k, SHARD_SIZE.min(n - k * SHARD_SIZE)))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect()
}

pub(crate) fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn estimates_from(
    acc: &NisAccumulator<f64>,
) -> Result<(Vec<Estimate>, Vec<Vec<Estimate>>)> {
    let mean = acc.mean_vector()?;
    let mean_se = acc.mean_vector_std_errors()?;
    let cov = acc.empirical_covariance()?;
    let cov_se = acc.covariance_std_errors()?;
    let d = mean.len();
    let vector = (0..d)
        .map(|i| Estimate {
            value: mean[i],
            std_error: mean_se[i],
        })
        .collect();
    let matrix = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| Estimate {
                    value: cov[(i, j)],
                    std_error: cov_se[(i, j)],
                })
                .collect()
        })
        .collect();
    Ok((vector, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let cases = [
            ExperimentConfig {
                n_samples: 0,
                ..Default::default()
            },
            ExperimentConfig {
                p_gate: 0.0,
                ..Default::default()
            },
            ExperimentConfig {
                p_gate: 1.2,
                ..Default::default()
            },
            ExperimentConfig {
                workers: 0,
                ..Default::default()
            },
            ExperimentConfig {
                multiplicities: vec![],
                ..Default::default()
            },
            ExperimentConfig {
                multiplicities: vec![2, 0],
                ..Default::default()
            },
            ExperimentConfig {
                m: 0,
                ..Default::default()
            },
        ];
        for c in cases {
            assert!(
                matches!(c.validate(), Err(Error::InvalidConfig(_))),
                "{c:?}"
            );
        }
        let ungated = ExperimentConfig {
            p_gate: 1.0,
            ..Default::default()
        };
        assert!(ungated.gate().unwrap().is_none());
    }

    #[test]
    fn shards_partition_samples_in_order() {
        let n = 3 * SHARD_SIZE + 17;
        for workers in [1, 3] {
            let parts = run_sharded(n, workers, |k, len| Ok((k, len))).unwrap();
            assert_eq!(parts.len(), 4);
            assert_eq!(parts.iter().map(|p| p.1).sum::<u64>(), n);
            assert!(parts.iter().enumerate().all(|(i, p)| p.0 == i as u64));
        }
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = shard_rng(1, 0).random();
        let b: u64 = shard_rng(1, 1).random();
        let c: u64 = shard_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
