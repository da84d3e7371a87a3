//! Planar constant-velocity tracking through the gate → NN pipeline.

use super::sampling::GaussianSampler;
use super::{
    matrix_rows, shard_rng, AnalyticMinNis, AnalyticSummary, EmpiricalSummary, Estimate,
    ExperimentConfig, ExperimentKind, ExperimentReport, UpdatePolicy, GENERATOR,
};
use crate::diagnostics::{assess_at, Mode, NisAccumulator};
use crate::error::{Error, Result};
use crate::filter::{self, CovFactor, StateSpaceModel, TrackState};
use crate::selection::{self, nn_select, CandidateSet, Selected};
use crate::statx;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// One row of the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub truth_px: f64,
    pub truth_py: f64,
    pub est_px: f64,
    pub est_py: f64,
    /// NIS of the selected innovation, or of the target's when nothing passed.
    pub nis: f64,
    pub accepted: bool,
    pub selected_index: Option<usize>,
    /// In-gate candidate count.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingOutcome {
    pub report: ExperimentReport,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Gate (when configured) and NN-select among `z_list`; index 0 is the target.
fn select(
    z_list: &[DVector<f64>],
    predicted: &TrackState<f64>,
    model: &StateSpaceModel<f64>,
    factor: &CovFactor<f64>,
    gate: Option<&statx::GateSpec<f64>>,
) -> Result<Option<Selected<f64>>> {
    match gate {
        Some(spec) => selection::pipeline(z_list, predicted, model, spec),
        None => {
            let center = model.measurement() * &predicted.mean;
            let nus = z_list.iter().map(|z| z - &center).collect();
            Ok(Some(nn_select(&CandidateSet::new(factor, nus)?)?))
        }
    }
}

/// Simulates truth and measurements, runs the Kalman filter, and feeds the
/// pipeline-selected NIS into diagnostics. Extra candidates (beyond the
/// target measurement) are iid draws from the predicted measurement law.
///
/// Returns [`Error::Divergence`] if `trace(P)` exceeds the configured bound.
pub fn run_tracking_experiment(cfg: &ExperimentConfig) -> Result<TrackingOutcome> {
    cfg.validate()?;
    if cfg.m != 2 {
        return Err(Error::InvalidConfig(
            "the tracking experiment measures planar position (m = 2)".into(),
        ));
    }
    let &[big_m] = cfg.multiplicities.as_slice() else {
        return Err(Error::InvalidConfig(
            "the tracking experiment takes exactly one candidate multiplicity".into(),
        ));
    };
    let m = cfg.dof()?;
    let gate = cfg.gate()?;
    let p = cfg.model_params;
    let model = StateSpaceModel::constant_velocity_2d(p.dt, p.process_noise_psd, p.meas_noise_std)?;
    let process = GaussianSampler::semidefinite(model.process_noise())?;
    let meas = GaussianSampler::new(model.measurement_noise())?;
    let mut rng = shard_rng(cfg.seed, 0);

    let r2 = p.meas_noise_std * p.meas_noise_std;
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![r2, r2, 1.0, 1.0]));
    let mut truth = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.5]);
    let init_err = GaussianSampler::new(&p0)?.sample(&mut rng);
    let mut est = TrackState::new(&truth + init_err, p0)?;

    let mut acc = NisAccumulator::new(m);
    let mut target_in_gate = 0u64;
    let mut trajectory = Vec::with_capacity(cfg.n_samples as usize);
    let mut last_s = DMatrix::identity(2, 2);

    for step in 0..cfg.n_samples {
        truth = model.transition() * &truth + process.sample(&mut rng);
        let predicted = filter::predict(&est, &model)?;
        let z_true = model.measurement() * &truth + meas.sample(&mut rng);
        let target = filter::innovation(&z_true, &predicted, &model)?;
        let factor = CovFactor::new(&target.s_cov)?;

        let center = model.measurement() * &predicted.mean;
        let clutter = GaussianSampler::new(&target.s_cov)?;
        let mut z_list = Vec::with_capacity(big_m as usize);
        z_list.push(z_true);
        for _ in 1..big_m {
            z_list.push(&center + clutter.sample(&mut rng));
        }

        let target_nis = factor.nis(&target.nu)?;
        if gate.is_none_or(|g| target_nis <= g.tau()) {
            target_in_gate += 1;
        }
        let selected = select(&z_list, &predicted, &model, &factor, gate.as_ref())?;
        if let Some(sel) = &selected {
            acc.record(sel.nis, &sel.innovation.nu)?;
        }

        est = match (cfg.update_policy, &selected) {
            (UpdatePolicy::Truth, _) => {
                filter::update_with(&predicted, &target.nu, &factor, &model)?
            }
            (UpdatePolicy::Selected, Some(sel)) => {
                filter::update_with(&predicted, &sel.innovation.nu, &factor, &model)?
            }
            (UpdatePolicy::Selected, None) => predicted,
        };
        let trace = est.cov.trace();
        if !(trace <= cfg.divergence_trace) {
            return Err(Error::Divergence {
                step,
                trace,
                bound: cfg.divergence_trace,
            });
        }
        last_s = target.s_cov;

        trajectory.push(TrajectoryRecord {
            step,
            truth_px: truth[0],
            truth_py: truth[1],
            est_px: est.mean[0],
            est_py: est.mean[1],
            nis: selected.as_ref().map_or(target_nis, |s| s.nis),
            accepted: selected.is_some(),
            selected_index: selected.as_ref().map(|s| s.index),
            multiplicity: selected.as_ref().map_or(0, |s| s.multiplicity),
        });
    }

    let mut verdicts = Vec::new();
    if acc.count() >= crate::diagnostics::MIN_ASSESS_SAMPLES {
        for mode in [Mode::Nominal, Mode::GateAware] {
            verdicts.push(assess_at(&acc, gate.as_ref(), mode, cfg.significance)?);
        }
    }
    let mean_nis = if acc.count() >= 2 {
        Some(Estimate {
            value: acc.mean_nis()?,
            std_error: acc.nis_std_error()?,
        })
    } else {
        None
    };
    let rate = target_in_gate as f64 / cfg.n_samples as f64;
    let gamma = gate.map_or(1.0, |g| g.contraction().gamma);
    let trace = last_s.trace();

    let report = ExperimentReport {
        experiment: ExperimentKind::Track,
        generator: GENERATOR.to_string(),
        seed: cfg.seed,
        m: 2,
        p_gate: cfg.p_gate,
        tau: gate.map(|g| g.tau()),
        n_samples: cfg.n_samples,
        n_effective: acc.count(),
        s_cov: matrix_rows(&last_s),
        analytic: AnalyticSummary {
            gamma,
            mean_nis: 2.0 * gamma,
            nominal_energy: trace,
            gated_energy: gamma * trace,
            per_multiplicity: vec![AnalyticMinNis {
                multiplicity: big_m,
                mean_min_nis: statx::min_nis_mean_2d(cfg.p_gate, big_m)?,
            }],
        },
        empirical: EmpiricalSummary {
            mean_nis,
            acceptance_rate: Some(Estimate {
                value: rate,
                std_error: (rate * (1.0 - rate) / cfg.n_samples as f64).sqrt(),
            }),
            energy: None,
            mean_vector: vec![],
            whitened_cov: vec![],
            per_multiplicity: vec![],
        },
        verdicts,
        histograms: vec![],
    };
    Ok(TrackingOutcome { report, trajectory })
}
