use super::sampling::{GaussianSampler, PostGateSampler};
use super::{
    estimates_from, matrix_rows, run_sharded, shard_rng, AnalyticMinNis, AnalyticSummary,
    EmpiricalSummary, Estimate, ExperimentConfig, ExperimentKind, ExperimentReport, Histogram,
    LabelledHistogram, Moments, NnEmpirical, GENERATOR,
};
use crate::diagnostics::NisAccumulator;
use crate::error::Result;
use crate::filter::CovFactor;
use crate::selection::{nn_select, CandidateSet};
use crate::statx::{self, Dof, GateSpec};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;

const HIST_BINS: usize = 60;

/// Fixed correlated SPD innovation covariance used by the raw sampling
/// experiments: `S_ij = σ_i σ_j 0.5^{|i−j|}` with `σ_i = 1 + i/2`.
pub fn reference_covariance(m: usize) -> DMatrix<f64> {
    let sigma = |i: usize| 1.0 + 0.5 * i as f64;
    DMatrix::from_fn(m, m, |i, j| {
        sigma(i) * sigma(j) * 0.5f64.powi((i as i32 - j as i32).abs())
    })
}

/// Nominal or gate-truncated source of `(ν, Z, attempts)`.
enum Source {
    Gated(PostGateSampler<f64>),
    Nominal(GaussianSampler<f64>, CovFactor<f64>),
}

impl Source {
    fn new(s_cov: &DMatrix<f64>, gate: Option<GateSpec<f64>>) -> Result<Self> {
        Ok(match gate {
            Some(spec) => Source::Gated(PostGateSampler::new(s_cov, spec)?),
            None => Source::Nominal(GaussianSampler::new(s_cov)?, CovFactor::new(s_cov)?),
        })
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> Result<(DVector<f64>, f64, u64)> {
        match self {
            Source::Gated(s) => {
                let d = s.draw(rng);
                Ok((d.nu, d.nis, d.attempts))
            }
            Source::Nominal(g, f) => {
                let nu = g.sample(rng);
                let z = f.nis(&nu)?;
                Ok((nu, z, 1))
            }
        }
    }
}

fn histogram_upper(gate: Option<&GateSpec<f64>>, m: Dof) -> Result<f64> {
    match gate {
        Some(g) => Ok(g.tau()),
        None => statx::chi2_quantile(0.999, m),
    }
}

fn analytic_summary(
    gate: Option<&GateSpec<f64>>,
    m: Dof,
    trace: f64,
    per_multiplicity: Vec<AnalyticMinNis>,
) -> AnalyticSummary {
    let gamma = gate.map_or(1.0, |g| g.contraction().gamma);
    AnalyticSummary {
        gamma,
        mean_nis: gamma * m.get() as f64,
        nominal_energy: trace,
        gated_energy: gamma * trace,
        per_multiplicity,
    }
}

struct GateShard {
    raw: NisAccumulator<f64>,
    white: NisAccumulator<f64>,
    energy: Moments,
    attempts: u64,
    hist: Histogram,
}

/// Gated sampling of `ν ~ N(0, S) | Z ≤ τ`: empirical mean NIS, whitened
/// covariance and acceptance rate against `m·γ`, `γ I` and `P_g`.
pub fn run_gate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let m = cfg.dof()?;
    let gate = cfg.gate()?;
    let s_cov = reference_covariance(m.as_usize());
    let factor = CovFactor::new(&s_cov)?;
    let source = Source::new(&s_cov, gate)?;
    let upper = histogram_upper(gate.as_ref(), m)?;

    let shards = run_sharded(cfg.n_samples, cfg.workers, |k, len| {
        let mut rng = shard_rng(cfg.seed, k);
        let mut shard = GateShard {
            raw: NisAccumulator::new(m),
            white: NisAccumulator::new(m),
            energy: Moments::default(),
            attempts: 0,
            hist: Histogram::new(0.0, upper, HIST_BINS),
        };
        for _ in 0..len {
            let (nu, z, attempts) = source.draw(&mut rng)?;
            let u = factor.whiten(&nu)?;
            shard.raw.record(z, &nu)?;
            shard.white.record(z, &u)?;
            shard.energy.add(nu.norm_squared());
            shard.attempts += attempts;
            shard.hist.add(z);
        }
        Ok(shard)
    })?;

    let mut shards = shards.into_iter();
    let mut total = shards
        .next()
        .expect("n_samples >= 1 gives at least one shard");
    for s in shards {
        total.raw.merge(&s.raw)?;
        total.white.merge(&s.white)?;
        total.energy.merge(&s.energy);
        total.attempts += s.attempts;
        total.hist.merge(&s.hist);
    }

    let (mean_vector, _) = estimates_from(&total.raw)?;
    let (_, whitened_cov) = if total.white.count() >= 2 {
        estimates_from(&total.white)?
    } else {
        (vec![], vec![])
    };
    let accepted = total.raw.count();
    let acceptance_rate = gate.map(|_| {
        let p = accepted as f64 / total.attempts as f64;
        Estimate {
            value: p,
            std_error: (p * (1.0 - p) / total.attempts as f64).sqrt(),
        }
    });
    let mean_nis = Estimate {
        value: total.raw.mean_nis()?,
        std_error: if accepted >= 2 {
            total.raw.nis_std_error()?
        } else {
            f64::NAN
        },
    };

    Ok(ExperimentReport {
        experiment: ExperimentKind::Gate,
        generator: GENERATOR.to_string(),
        seed: cfg.seed,
        m: m.get(),
        p_gate: cfg.p_gate,
        tau: gate.map(|g| g.tau()),
        n_samples: cfg.n_samples,
        n_effective: accepted,
        s_cov: matrix_rows(&s_cov),
        analytic: analytic_summary(gate.as_ref(), m, s_cov.trace(), vec![]),
        empirical: EmpiricalSummary {
            mean_nis: Some(mean_nis),
            acceptance_rate,
            energy: Some(total.energy.estimate()),
            mean_vector,
            whitened_cov,
            per_multiplicity: vec![],
        },
        verdicts: vec![],
        histograms: vec![LabelledHistogram {
            label: "gated_nis".into(),
            multiplicity: 1,
            histogram: total.hist,
        }],
    })
}

#[derive(Default)]
struct NnShard {
    selected: Moments,
    single: Moments,
    gap: Moments,
    energy: Moments,
    hist: Option<Histogram>,
}

/// NN selection over `M` iid in-gate candidates, for each configured `M`.
pub fn run_nn_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let m = cfg.dof()?;
    let gate = cfg.gate()?;
    let s_cov = reference_covariance(m.as_usize());
    let source = Source::new(&s_cov, gate)?;
    let upper = histogram_upper(gate.as_ref(), m)?;

    let mut analytic = Vec::new();
    let mut empirical = Vec::new();
    let mut histograms = Vec::new();
    for (idx, &big_m) in cfg.multiplicities.iter().enumerate() {
        analytic.push(AnalyticMinNis {
            multiplicity: big_m,
            mean_min_nis: statx::min_nis_mean(cfg.p_gate, m, big_m)?,
        });
        let stream_base = (idx as u64 + 1) << 40;
        let shards = run_sharded(cfg.n_samples, cfg.workers, |k, len| {
            let mut rng = shard_rng(cfg.seed, stream_base | k);
            let mut shard = NnShard {
                hist: Some(Histogram::new(0.0, upper, HIST_BINS)),
                ..Default::default()
            };
            let hist = shard.hist.as_mut().expect("initialized above");
            for _ in 0..len {
                let mut nus = Vec::with_capacity(big_m as usize);
                let mut nis = Vec::with_capacity(big_m as usize);
                for _ in 0..big_m {
                    let (nu, z, _) = source.draw(&mut rng)?;
                    nus.push(nu);
                    nis.push(z);
                }
                let first = nis[0];
                let cands = CandidateSet::from_parts(s_cov.clone(), nus, nis)?;
                let sel = nn_select(&cands)?;
                shard.selected.add(sel.nis);
                shard.single.add(first);
                shard.gap.add(first - sel.nis);
                shard.energy.add(sel.innovation.nu.norm_squared());
                hist.add(sel.nis);
            }
            Ok(shard)
        })?;
        let mut total = NnShard {
            hist: Some(Histogram::new(0.0, upper, HIST_BINS)),
            ..Default::default()
        };
        for s in &shards {
            total.selected.merge(&s.selected);
            total.single.merge(&s.single);
            total.gap.merge(&s.gap);
            total.energy.merge(&s.energy);
            if let (Some(t), Some(h)) = (total.hist.as_mut(), s.hist.as_ref()) {
                t.merge(h);
            }
        }
        empirical.push(NnEmpirical {
            multiplicity: big_m,
            trials: total.selected.count,
            mean_min_nis: total.selected.estimate(),
            gate_conditioned_nis: total.single.estimate(),
            contraction_gap: total.gap.estimate(),
            selected_energy: total.energy.estimate(),
        });
        histograms.push(LabelledHistogram {
            label: "min_nis".into(),
            multiplicity: big_m,
            histogram: total.hist.expect("initialized above"),
        });
    }

    Ok(ExperimentReport {
        experiment: ExperimentKind::Nn,
        generator: GENERATOR.to_string(),
        seed: cfg.seed,
        m: m.get(),
        p_gate: cfg.p_gate,
        tau: gate.map(|g| g.tau()),
        n_samples: cfg.n_samples,
        n_effective: cfg.n_samples,
        s_cov: matrix_rows(&s_cov),
        analytic: analytic_summary(gate.as_ref(), m, s_cov.trace(), analytic),
        empirical: EmpiricalSummary {
            mean_nis: None,
            acceptance_rate: None,
            energy: None,
            mean_vector: vec![],
            whitened_cov: vec![],
            per_multiplicity: empirical,
        },
        verdicts: vec![],
        histograms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_covariance_is_spd_and_correlated() {
        for m in 1..=6 {
            let s = reference_covariance(m);
            assert!(s.clone().cholesky().is_some());
            assert_eq!(s, s.transpose());
        }
        assert_eq!(reference_covariance(2)[(0, 1)], 0.75);
    }

    #[test]
    fn small_gate_run_is_sane() {
        let cfg = ExperimentConfig {
            n_samples: 5_000,
            ..Default::default()
        };
        let r = run_gate_experiment(&cfg).unwrap();
        assert_eq!(r.n_effective, 5_000);
        let mean = r.empirical.mean_nis.unwrap();
        assert!(mean.gap_in_se(r.analytic.mean_nis).abs() < 5.0);
        assert_eq!(r.empirical.whitened_cov.len(), 2);
    }

    #[test]
    fn single_candidate_nn_equals_gate_conditioned() {
        let cfg = ExperimentConfig {
            n_samples: 2_000,
            multiplicities: vec![1],
            ..Default::default()
        };
        let r = run_nn_experiment(&cfg).unwrap();
        let e = &r.empirical.per_multiplicity[0];
        assert_eq!(e.mean_min_nis, e.gate_conditioned_nis);
        assert_eq!(e.contraction_gap.value, 0.0);
    }
}
