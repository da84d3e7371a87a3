use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};

use anyhow::{anyhow, Context};
use gil_core::diagnostics::{Mode, NisCorrection};
use gil_core::sim::{
    self, CvParams, Estimate, ExperimentConfig, ExperimentReport, LabelledHistogram, UpdatePolicy,
};
use gil_core::statx::{self, GateSpec};
use gil_core::Dof;
use serde::Serialize;

use crate::args::{
    Common, Format, GammaTableArgs, GateArgs, ModeArg, NisCorrectArgs, NnArgs, PolicyArg, TrackArgs,
};
use crate::output::{sink, write_report, write_rows};
use crate::Failure;

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn dof(m: u32) -> Result<Dof, Failure> {
    Dof::new(m).map_err(usage)
}

/// Rounds toward zero at three decimals, the convention of the reference table.
fn truncate3(x: f64) -> f64 {
    // the nudge keeps values like 0.744 from landing one ulp below the cut
    (x * 1000.0 + 1e-9).floor() / 1000.0
}

/// Shortest decimal form, padded to at least two places (`0.9` → `0.90`).
fn probability_label(p: f64) -> String {
    let s = p.to_string();
    match s.split_once('.') {
        Some((_, frac)) if frac.len() >= 2 => s,
        Some(_) => format!("{s}0"),
        None => format!("{s}.00"),
    }
}

#[derive(Debug, Serialize)]
pub struct TableRow {
    pub p_gate: f64,
    pub m: u32,
    pub tau: f64,
    pub gamma: f64,
    pub mean_nis: f64,
}

pub fn gamma_table_rows(
    p_gates: &[f64],
    m_values: &[u32],
    full: bool,
) -> Result<Vec<TableRow>, Failure> {
    let mut rows = Vec::new();
    for &m in m_values {
        let d = dof(m)?;
        for &p in p_gates {
            let c = GateSpec::new(p, d).map_err(usage)?.contraction();
            let f = |x: f64| if full { x } else { truncate3(x) };
            rows.push(TableRow {
                p_gate: p,
                m,
                tau: f(c.tau),
                gamma: f(c.gamma),
                mean_nis: f(c.mean_nis()),
            });
        }
    }
    Ok(rows)
}

pub fn gamma_table(a: &GammaTableArgs) -> Outcome {
    let rows = gamma_table_rows(&a.p_gates, &a.m_values, a.full_precision)?;
    let mut plot = open(a.plot_data.as_deref())?;
    let mut w = sink(a.output.as_deref()).map_err(runtime)?;
    match a.format {
        Format::Json => write_report(&mut *w, &rows, Format::Json),
        Format::Csv if a.full_precision => {
            write_rows(&mut *w, &["p_gate", "m", "tau", "gamma", "mean_nis"], &rows)
        }
        Format::Csv => {
            let fixed: Vec<_> = rows
                .iter()
                .map(|r| {
                    (
                        probability_label(r.p_gate),
                        r.m,
                        format!("{:.3}", r.tau),
                        format!("{:.3}", r.gamma),
                        format!("{:.3}", r.mean_nis),
                    )
                })
                .collect();
            write_rows(
                &mut *w,
                &["p_gate", "m", "tau", "gamma", "mean_nis"],
                &fixed,
            )
        }
    }
    .map_err(runtime)?;
    if let Some(plot) = plot.as_mut() {
        write_rows(
            &mut **plot,
            &["p_gate", "m", "z", "density"],
            &truncated_density(a)?,
        )
        .map_err(runtime)?;
    }
    Ok(())
}

/// Gate-conditioned chi-square density at the midpoints of 200 cells over `[0, τ]`.
fn truncated_density(a: &GammaTableArgs) -> Result<Vec<(f64, u32, f64, f64)>, Failure> {
    const CELLS: usize = 200;
    let mut out = Vec::new();
    for &m in &a.m_values {
        let d = dof(m)?;
        for &p in &a.p_gates {
            let spec = GateSpec::new(p, d).map_err(usage)?;
            let h = spec.tau() / CELLS as f64;
            for i in 0..CELLS {
                let z = (i as f64 + 0.5) * h;
                out.push((p, m, z, statx::chi2_pdf(z, d).map_err(runtime)? / p));
            }
        }
    }
    Ok(out)
}

fn workers(c: &Common) -> usize {
    c.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn base_config(c: &Common, n: u64, m: u32, p_gate: f64) -> ExperimentConfig {
    ExperimentConfig {
        seed: c.seed,
        n_samples: n,
        m,
        p_gate,
        workers: workers(c),
        ..Default::default()
    }
}

fn est(label: &str, e: &Estimate, reference: f64) -> String {
    format!(
        "{label}: {:.6} ± {:.2e} (analytic {reference:.6}, gap {:+.2} SE)",
        e.value,
        e.std_error,
        e.gap_in_se(reference)
    )
}

type Sink = Option<Box<dyn Write>>;

/// Opens an optional destination before any computation so bad paths fail fast.
fn open(path: Option<&std::path::Path>) -> Result<Sink, Failure> {
    path.map(|p| sink(Some(p))).transpose().map_err(runtime)
}

fn emit_report(c: &Common, w: &mut Sink, report: &ExperimentReport) -> Outcome {
    if let Some(w) = w.as_mut() {
        write_report(&mut **w, report, c.format).map_err(runtime)?;
    }
    Ok(())
}

/// `(label, multiplicity, bin_lo, bin_hi, density, analytic_density)`.
type HistogramRow = (String, u32, f64, f64, f64, f64);

/// Histogram rows with the exact bin-averaged analytic density alongside.
///
/// For multiplicity `M` the analytic law is the minimum of `M` gated draws, whose
/// survival function is `(1 − F(z)/P_g)^M`.
fn histogram_rows(
    report: &ExperimentReport,
    hists: &[LabelledHistogram],
) -> Result<Vec<HistogramRow>, Failure> {
    let d = dof(report.m)?;
    let p = report.p_gate;
    let surv = |z: f64| -> Result<f64, Failure> {
        let f = statx::chi2_cdf(z, d).map_err(runtime)?.min(p);
        Ok(1.0 - f / p)
    };
    let mut rows = Vec::new();
    for h in hists {
        let mm = h.multiplicity as i32;
        for (lo, hi, density) in h.histogram.density_rows() {
            let mass = surv(lo)?.powi(mm) - surv(hi)?.powi(mm);
            rows.push((
                h.label.clone(),
                h.multiplicity,
                lo,
                hi,
                density,
                mass / (hi - lo),
            ));
        }
    }
    Ok(rows)
}

fn emit_plot(w: &mut Sink, report: &ExperimentReport) -> Outcome {
    if let Some(w) = w.as_mut() {
        let rows = histogram_rows(report, &report.histograms)?;
        write_rows(
            &mut *w,
            &[
                "label",
                "multiplicity",
                "bin_lo",
                "bin_hi",
                "density",
                "analytic_density",
            ],
            &rows,
        )
        .map_err(runtime)?;
    }
    Ok(())
}

fn print_header(r: &ExperimentReport) {
    let tau = r.tau.map_or("inf".to_owned(), |t| format!("{t:.6}"));
    println!(
        "{:?} experiment: m={} P_g={} tau={tau} n={} seed={} ({})",
        r.experiment, r.m, r.p_gate, r.n_effective, r.seed, r.generator
    );
}

pub fn gate_experiment(a: &GateArgs) -> Outcome {
    let cfg = base_config(&a.common, a.samples, a.m, a.p_gate);
    cfg.validate().map_err(usage)?;
    let (mut report_out, mut plot_out) = (
        open(a.common.output.as_deref())?,
        open(a.plot_data.as_deref())?,
    );
    let r = sim::run_gate_experiment(&cfg).map_err(runtime)?;
    print_header(&r);
    println!("gamma: {:.6}", r.analytic.gamma);
    if let Some(e) = &r.empirical.mean_nis {
        println!("{}", est("mean NIS", e, r.analytic.mean_nis));
    }
    if let Some(e) = &r.empirical.acceptance_rate {
        println!("{}", est("acceptance rate", e, a.p_gate));
    }
    let worst = r
        .empirical
        .whitened_cov
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            let g = r.analytic.gamma;
            row.iter()
                .enumerate()
                .map(move |(j, e)| e.gap_in_se(if i == j { g } else { 0.0 }).abs())
        })
        .fold(0.0, f64::max);
    println!("whitened covariance vs gamma*I: max |gap| {worst:.2} SE");
    emit_report(&a.common, &mut report_out, &r)?;
    emit_plot(&mut plot_out, &r)
}

pub fn nn_experiment(a: &NnArgs) -> Outcome {
    let cfg = ExperimentConfig {
        multiplicities: a.multiplicities.clone(),
        ..base_config(&a.common, a.samples, a.m, a.p_gate)
    };
    cfg.validate().map_err(usage)?;
    let (mut report_out, mut plot_out) = (
        open(a.common.output.as_deref())?,
        open(a.plot_data.as_deref())?,
    );
    let r = sim::run_nn_experiment(&cfg).map_err(runtime)?;
    print_header(&r);
    println!(
        "gate-conditioned mean NIS (analytic): {:.6}",
        r.analytic.mean_nis
    );
    for (e, an) in r
        .empirical
        .per_multiplicity
        .iter()
        .zip(&r.analytic.per_multiplicity)
    {
        println!(
            "{}",
            est(
                &format!("M={} mean min NIS", e.multiplicity),
                &e.mean_min_nis,
                an.mean_min_nis
            )
        );
        println!(
            "M={} contraction below single-candidate mean: {:.6} ({:.1} SE)",
            e.multiplicity,
            e.contraction_gap.value,
            e.contraction_gap.value / e.contraction_gap.std_error
        );
        println!(
            "M={} selected energy: {:.6} vs trace(S) {:.6} ({:+.1} SE), gamma*trace(S) {:.6}",
            e.multiplicity,
            e.selected_energy.value,
            r.analytic.nominal_energy,
            e.selected_energy.gap_in_se(r.analytic.nominal_energy),
            r.analytic.gated_energy
        );
    }
    emit_report(&a.common, &mut report_out, &r)?;
    emit_plot(&mut plot_out, &r)
}

pub fn track(a: &TrackArgs) -> Outcome {
    let mut cfg = ExperimentConfig {
        multiplicities: vec![a.multiplicity],
        model_params: CvParams {
            dt: a.dt,
            process_noise_psd: a.psd,
            meas_noise_std: a.meas_std,
        },
        update_policy: match a.policy {
            PolicyArg::Truth => UpdatePolicy::Truth,
            PolicyArg::Selected => UpdatePolicy::Selected,
        },
        divergence_trace: a.divergence_trace,
        ..base_config(&a.common, a.steps, 2, a.p_gate)
    };
    cfg.workers = cfg.workers.max(1);
    cfg.validate().map_err(usage)?;
    let mut report_out = open(a.common.output.as_deref())?;
    let mut traj = open(a.trajectory.as_deref())?;
    let mut out = sim::run_tracking_experiment(&cfg).map_err(runtime)?;
    let keep = |m: Mode| match a.mode {
        ModeArg::Both => true,
        ModeArg::Nominal => m == Mode::Nominal,
        ModeArg::GateAware => m == Mode::GateAware,
    };
    out.report.verdicts.retain(|v| keep(v.mode));
    let r = &out.report;
    print_header(r);
    if let Some(e) = &r.empirical.mean_nis {
        println!("{}", est("mean NIS", e, r.analytic.mean_nis));
    }
    if let (Some(e), Some(_)) = (&r.empirical.acceptance_rate, r.tau) {
        println!("{}", est("target acceptance rate", e, a.p_gate));
    }
    for v in &r.verdicts {
        let mode = serde_json::to_value(v.mode).map_err(runtime)?;
        let verdict = serde_json::to_value(v.verdict).map_err(runtime)?;
        println!(
            "verdict ({}): {} (mean {:.6}, reference {:.6}, z {:+.2})",
            mode.as_str().unwrap_or_default(),
            verdict.as_str().unwrap_or_default(),
            v.empirical_mean_nis,
            v.reference,
            v.z_score
        );
    }
    emit_report(&a.common, &mut report_out, r)?;
    if let Some(w) = traj.as_mut() {
        let mut csv = csv::Writer::from_writer(&mut **w);
        for rec in &out.trajectory {
            csv.serialize(rec).map_err(runtime)?;
        }
        csv.flush().map_err(runtime)?;
        drop(csv);
        w.flush().map_err(runtime)?;
    }
    Ok(())
}

pub fn nis_correct(a: &NisCorrectArgs) -> Outcome {
    let spec = GateSpec::new(a.p_gate, dof(a.m)?).map_err(usage)?;
    let corr = NisCorrection::new(&spec);
    let input: Box<dyn BufRead> = match a.input.as_deref() {
        Some(p) => Box::new(BufReader::new(
            File::open(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .map_err(runtime)?,
        )),
        None => Box::new(BufReader::new(io::stdin().lock())),
    };
    let mut w = sink(a.output.as_deref()).map_err(runtime)?;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(runtime)?;
        let text = line.trim();
        let z: f64 = text
            .parse()
            .map_err(|_| usage(anyhow!("line {}: not a number: {text:?}", i + 1)))?;
        let c = corr
            .apply(z)
            .map_err(|e| usage(anyhow!("line {}: {e}", i + 1)))?;
        writeln!(w, "{c}").map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}
