//! The five subcommands. Each one validates its config, computes, writes its
//! artifacts and finally the manifest.

use std::fmt::Write as _;
use std::path::Path;

use driftbound::model::{initial_state, DataSet, ModelConfig, SuffState};
use driftbound::report::{assemble_gibbs_bound, AssembleOptions, BoundConstants, GibbsBoundReport};
use driftbound::simulation::{
    reference_chain, run_ensemble, split_half_tv, tv_curve, BinGrid, SimulationPlan, StepAggregate, TvEstimate, TvPoint,
};
use serde::{Deserialize, Serialize};

use crate::config::{synthesize_checked, DataSource, ExperimentConfig, Resolved, SynthSpec};
use crate::error::{CliError, CliResult};
use crate::manifest::{OutputDir, RunManifest};
use crate::validation::{run_validation, ValidationReport, CRITERIA};

pub const BOUND_CURVE_HEADER: &str = "k,term1,term2,tail,total,clamped_total";
pub const SWEEP_HEADER: &str = "n,lambda_t,b_drift,d_small,epsilon,q_mass,gamma,log_gamma,k_bar,n_c,status";
pub const TV_CURVE_HEADER: &str = "k,tv,se,bound,clamped_bound";

/// 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn assemble_options(cfg: &ExperimentConfig, t: Option<f64>) -> AssembleOptions {
    AssembleOptions {
        t,
        d: cfg.small_set_d,
        k_max: cfg.k_max,
        mixing_c: cfg.mixing_c,
        ..AssembleOptions::default()
    }
}

pub fn bound_report(r: &Resolved) -> CliResult<GibbsBoundReport> {
    assemble_gibbs_bound(&r.data, &r.config.model, &assemble_options(&r.config, Some(r.large_set.t)))
        .map_err(CliError::numerical("bound"))
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<OutputDir> {
    OutputDir::create(out.unwrap_or(&cfg.output_dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub n: usize,
    pub center: f64,
    pub seed: u64,
    /// Draws needed before the data assumption held.
    pub attempts: u64,
    pub y_bar: f64,
    pub spread: f64,
    pub a_hat: f64,
}

pub fn synth_data(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunManifest> {
    cfg.validate()?;
    let DataSource::Synth(spec) = &cfg.data else {
        return Err(CliError::Config("synth-data needs a synth data source".into()));
    };
    let (ds, attempts) = synthesize_checked(spec, &cfg.model, cfg.seed)?;
    let mut dir = output_dir(cfg, out)?;
    let mut text = String::with_capacity(24 * ds.n());
    for y in &ds.y {
        writeln!(text, "{}", fmt(*y)).unwrap();
    }
    dir.write("data.txt", text.as_bytes())?;
    dir.write_json(
        "synth.json",
        &SynthSummary {
            n: ds.n(),
            center: spec.center,
            seed: cfg.seed,
            attempts,
            y_bar: ds.y_bar,
            spread: ds.delta / (ds.n() - 1) as f64,
            a_hat: ds.a_hat(cfg.model.v),
        },
    )?;
    dir.finish("synth-data", cfg)
}

pub fn bound_curve_csv(report: &GibbsBoundReport) -> String {
    let mut s = String::from(BOUND_CURVE_HEADER);
    s.push('\n');
    for t in &report.curve {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            t.k,
            fmt(t.coupling),
            fmt(t.drift),
            fmt(t.tail),
            fmt(t.total),
            fmt(t.clamped())
        )
        .unwrap();
    }
    s
}

pub fn bound_curve(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunManifest> {
    let resolved = cfg.resolve()?;
    let report = bound_report(&resolved)?;
    let mut dir = output_dir(cfg, out)?;
    dir.write("bound_curve.csv", bound_curve_csv(&report).as_bytes())?;
    dir.write_json("bound_report.json", &report)?;
    dir.finish("bound-curve", cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub status: String,
    pub error: Option<String>,
    pub attempts: Option<u64>,
    pub constants: Option<BoundConstants>,
    pub k_bar: Option<f64>,
    pub n_c: Option<f64>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.constants.is_some()
    }

    fn csv(&self) -> String {
        match (&self.constants, self.k_bar, self.n_c) {
            (Some(c), Some(k), Some(nc)) => format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.n,
                fmt(c.lambda_t),
                fmt(c.b_drift),
                fmt(c.d_small),
                fmt(c.epsilon),
                fmt(c.q_mass),
                fmt(c.gamma),
                fmt(c.log_gamma),
                fmt(k),
                fmt(nc),
                self.status
            ),
            _ => format!("{},,,,,,,,,,{}", self.n, self.status),
        }
    }
}

fn failed_row(n: usize, attempts: Option<u64>, e: CliError) -> SweepRow {
    SweepRow {
        n,
        status: "failed".into(),
        error: Some(e.to_string()),
        attempts,
        constants: None,
        k_bar: None,
        n_c: None,
    }
}

/// All constants recomputed for each `n` at the configured centre; a failing `n` becomes a failed row.
pub fn sweep_rows(cfg: &ExperimentConfig) -> CliResult<Vec<SweepRow>> {
    cfg.validate()?;
    let DataSource::Synth(base) = &cfg.data else {
        return Err(CliError::Config("sweep-n needs a synth data source to fix the centre".into()));
    };
    Ok(cfg
        .n_list
        .iter()
        .map(|&n| {
            let spec = SynthSpec { n, ..base.clone() };
            let (ds, attempts) = match synthesize_checked(&spec, &cfg.model, cfg.seed) {
                Ok(x) => x,
                Err(e) => return failed_row(n, None, e),
            };
            match assemble_gibbs_bound(&ds, &cfg.model, &assemble_options(cfg, cfg.large_set_t)) {
                Ok(rep) => SweepRow {
                    n,
                    status: "ok".into(),
                    error: None,
                    attempts: Some(attempts),
                    constants: Some(rep.constants),
                    k_bar: Some(rep.mixing.k_bar),
                    n_c: Some(rep.mixing.n_c),
                },
                Err(e) => failed_row(n, Some(attempts), CliError::numerical("bound")(e)),
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

pub fn sweep_n(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunManifest> {
    let rows = sweep_rows(cfg)?;
    let mut dir = output_dir(cfg, out)?;
    dir.write("sweep_n.csv", sweep_csv(&rows).as_bytes())?;
    dir.write_json("sweep_n.json", &rows)?;
    dir.finish("sweep-n", cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub constants: BoundConstants,
    pub aggregates: Vec<StepAggregate>,
    pub reference_samples: usize,
    pub n_bins: usize,
    /// TV between the two halves of the reference sample.
    pub reference_split_tv: TvEstimate,
    /// Steps at which the bound sits below the empirical TV minus 3 SE.
    pub violations: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct TvComparison {
    pub points: Vec<TvPoint>,
    pub bound: Vec<f64>,
    pub reference_samples: usize,
    pub n_bins: usize,
    pub split_half: TvEstimate,
}

impl TvComparison {
    pub fn clamped(&self, i: usize) -> f64 {
        self.bound[i].min(1.0)
    }

    pub fn violations(&self) -> Vec<u64> {
        self.points
            .iter()
            .enumerate()
            .filter(|(i, p)| self.clamped(*i) < p.tv - 3.0 * p.se)
            .map(|(_, p)| p.k)
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(TV_CURVE_HEADER);
        s.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{}",
                p.k,
                fmt(p.tv),
                fmt(p.se),
                fmt(self.bound[i]),
                fmt(self.clamped(i))
            )
            .unwrap();
        }
        s
    }
}

/// Empirical binned TV from the initial state against the theorem bound, `k = 0..=k_max`.
///
/// At `k = 0` the bound is the trivial 1.
#[allow(clippy::too_many_arguments)]
pub fn tv_comparison(
    ds: &DataSet,
    model: &ModelConfig,
    report: &GibbsBoundReport,
    seed: u64,
    reference_burn_in: u64,
    reference_steps: u64,
    reference_thin: u64,
    bins: (usize, usize),
    replicas: usize,
    k_max: u64,
) -> CliResult<TvComparison> {
    let x0 = SuffState::from(&initial_state(ds, model));
    let n_ref = (reference_steps / reference_thin) as usize;
    let reference = reference_chain(ds, model, x0, seed, 0, reference_burn_in, n_ref, reference_thin, None)
        .map_err(CliError::numerical("reference chain"))?;
    let grid = BinGrid::equal_mass(&reference, bins.0, bins.1).map_err(CliError::numerical("bins"))?;
    let split_half = split_half_tv(&reference, &grid).map_err(CliError::numerical("tv"))?;
    let points =
        tv_curve(ds, model, x0, replicas, k_max, seed, &reference, &grid).map_err(CliError::numerical("tv curve"))?;
    let bound = points
        .iter()
        .map(|p| if p.k == 0 { 1.0 } else { report.curve[p.k as usize - 1].total })
        .collect();
    Ok(TvComparison {
        points,
        bound,
        reference_samples: reference.len(),
        n_bins: grid.n_bins(),
        split_half,
    })
}

pub fn simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunManifest> {
    let resolved = cfg.resolve()?;
    let s = cfg.simulation;
    let report = bound_report(&resolved)?;
    let (ds, model) = (&resolved.data, &cfg.model);
    let plan = SimulationPlan {
        n_chains: s.n_chains,
        n_steps: s.n_steps,
        burn_in: s.burn_in,
        seed: cfg.seed,
        record_stride: s.record_stride,
    };
    let ensemble = run_ensemble(&plan, ds, model, &resolved.large_set, &initial_state(ds, model), s.kernel)
        .map_err(CliError::numerical("ensemble"))?;
    let tv = tv_comparison(
        ds,
        model,
        &report,
        cfg.seed,
        s.reference_burn_in,
        s.reference_steps,
        s.reference_thin,
        (s.bins_theta, s.bins_a),
        s.tv_replicas,
        cfg.k_max,
    )?;

    let mut dir = output_dir(cfg, out)?;
    let mut csv = Vec::new();
    ensemble.write_csv(&mut csv).map_err(CliError::io(dir.root().join("ensemble.csv")))?;
    dir.write("ensemble.csv", &csv)?;
    dir.write("tv_curve.csv", tv.csv().as_bytes())?;
    dir.write_json(
        "simulate_summary.json",
        &SimulateSummary {
            constants: report.constants,
            aggregates: ensemble.aggregates,
            reference_samples: tv.reference_samples,
            n_bins: tv.n_bins,
            reference_split_tv: tv.split_half,
            violations: tv.violations(),
        },
    )?;
    dir.finish("simulate", cfg)
}

/// Runs the acceptance suite. The report is written whether or not every criterion passes.
pub fn validate(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    only: Option<&[u32]>,
) -> CliResult<(RunManifest, ValidationReport)> {
    // Rejects a bad config before any work or output.
    cfg.resolve()?;
    if let Some(bad) = only.and_then(|ids| ids.iter().find(|id| !CRITERIA.contains(id))) {
        return Err(CliError::Config(format!("no criterion {bad}")));
    }
    let report = run_validation(cfg.seed, cfg.validation_scale, only);
    let mut dir = output_dir(cfg, out)?;
    dir.write_json("validation_report.json", &report)?;
    let manifest = dir.finish("validate", cfg)?;
    Ok((manifest, report))
}
