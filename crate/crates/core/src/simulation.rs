//! Chain ensembles, trace and restricted chains, binned TV estimates, exit
//! frequencies and joint return times to the small set.
//!
//! Every chain owns an [`RngStream`] derived from `(seed, domain, index)`, so
//! results are the same for any rayon pool size.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Error, Result};
use crate::model::{
    draw_a, draw_mu_theta, drift_value, gibbs_step, s_of, ChainState, DataSet, LargeSetSpec, ModelConfig,
    SufficientKernel, SuffState,
};
use crate::numerics::{batch_means_se, RngStream};

/// Stream domains for [`RngStream::derived`].
pub mod domain {
    pub const ENSEMBLE: u32 = 1;
    pub const REFERENCE: u32 = 2;
    pub const EXIT: u32 = 3;
    pub const HITTING: u32 = 4;
    pub const TV_REPLICAS: u32 = 5;
    pub const SYNTH: u32 = 6;
    pub const OVERLAP: u32 = 7;
    pub const ORACLE: u32 = 8;
}

/// Cap on stored trace records per ensemble.
pub const MAX_RECORDS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n_chains: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub record_stride: u64,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_steps == 0 || self.record_stride == 0 {
            return Err(invalid("n_chains, n_steps and record_stride must be positive"));
        }
        if self.burn_in >= self.n_steps {
            return Err(invalid(format!("burn_in = {} must be below n_steps = {}", self.burn_in, self.n_steps)));
        }
        Ok(())
    }

    fn recorded(&self, step: u64) -> bool {
        step >= self.burn_in && (step - self.burn_in) % self.record_stride == 0
    }

    fn records_per_chain(&self) -> usize {
        ((self.n_steps - self.burn_in) / self.record_stride + 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub theta_bar: f64,
    pub a: f64,
    pub f: f64,
    pub in_large_set: bool,
}

impl TraceRecord {
    pub fn new(step: u64, x: SuffState, ds: &DataSet, cfg: &ModelConfig, spec: &LargeSetSpec) -> Self {
        Self {
            step,
            theta_bar: x.theta_bar,
            a: x.a,
            f: drift_value(ds, cfg, x.theta_bar, x.a),
            in_large_set: spec.contains(x.a),
        }
    }

    pub fn state(&self) -> SuffState {
        SuffState {
            theta_bar: self.theta_bar,
            a: self.a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAggregate {
    pub step: u64,
    pub mean_f: f64,
    pub se_f: f64,
    pub frac_in_large_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub plan: SimulationPlan,
    /// `records[chain][i]`
    pub records: Vec<Vec<TraceRecord>>,
    pub aggregates: Vec<StepAggregate>,
}

impl EnsembleSummary {
    pub const CSV_HEADER: &'static str = "chain,step,theta_bar,a,f,in_large_set";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (c, chain) in self.records.iter().enumerate() {
            for r in chain {
                writeln!(
                    w,
                    "{},{},{:.16e},{:.16e},{:.16e},{}",
                    c, r.step, r.theta_bar, r.a, r.f, r.in_large_set as u8
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelMode {
    /// Every `theta_i` drawn.
    Full,
    /// Exact `(theta_bar, A)` marginal kernel.
    Sufficient,
}

/// `n_chains` independent chains from `x0`, chain `i` on stream `(seed, ENSEMBLE, i)`.
pub fn run_ensemble(
    plan: &SimulationPlan,
    ds: &DataSet,
    cfg: &ModelConfig,
    spec: &LargeSetSpec,
    x0: &ChainState,
    mode: KernelMode,
) -> Result<EnsembleSummary> {
    plan.validate()?;
    let per_chain = plan.records_per_chain();
    if per_chain.saturating_mul(plan.n_chains) > MAX_RECORDS {
        return Err(Error::ResourceLimit(format!(
            "{} chains x {per_chain} records exceeds {MAX_RECORDS}",
            plan.n_chains
        )));
    }
    let kernel = SufficientKernel::new(ds, cfg)?;
    let records = (0..plan.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::derived(plan.seed, domain::ENSEMBLE, c as u64);
            let mut out = Vec::with_capacity(per_chain);
            let mut full = x0.clone();
            let mut x = SuffState::from(x0);
            if plan.recorded(0) {
                out.push(TraceRecord::new(0, x, ds, cfg, spec));
            }
            for step in 1..=plan.n_steps {
                x = match mode {
                    KernelMode::Sufficient => kernel.step(x, &mut rng),
                    KernelMode::Full => {
                        full = gibbs_step(&full, ds, cfg, &mut rng)?;
                        SuffState::from(&full)
                    }
                };
                if plan.recorded(step) {
                    out.push(TraceRecord::new(step, x, ds, cfg, spec));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = (0..per_chain)
        .map(|i| {
            let fs: Vec<f64> = records.iter().map(|r| r[i].f).collect();
            let (mean_f, se_f) = crate::numerics::mean_se(&fs);
            let inside = records.iter().filter(|r| r[i].in_large_set).count();
            StepAggregate {
                step: records[0][i].step,
                mean_f,
                se_f,
                frac_in_large_set: inside as f64 / records.len() as f64,
            }
        })
        .collect();
    Ok(EnsembleSummary {
        plan: *plan,
        records,
        aggregates,
    })
}

/// Keep only states inside the large set and renumber them consecutively.
pub fn trace_chain_transform(records: &[TraceRecord], spec: &LargeSetSpec) -> Result<Vec<TraceRecord>> {
    let out: Vec<TraceRecord> = records
        .iter()
        .filter(|r| spec.contains(r.a))
        .enumerate()
        .map(|(i, r)| TraceRecord {
            step: i as u64,
            in_large_set: true,
            ..*r
        })
        .collect();
    if out.is_empty() {
        return Err(precondition("chain never visits the large set"));
    }
    Ok(out)
}

/// Gibbs sweep whose `A`-update is rejected when it would leave the large set.
///
/// Consumes the stream exactly as [`gibbs_step`] does.
pub fn restricted_kernel_step(
    x: &ChainState,
    ds: &DataSet,
    cfg: &ModelConfig,
    spec: &LargeSetSpec,
    stream: &mut RngStream,
) -> Result<ChainState> {
    if !spec.contains(x.a) {
        return Err(precondition(format!("A = {} lies outside the large set", x.a)));
    }
    let (mu, theta) = draw_mu_theta(x, ds, cfg, stream)?;
    let s = s_of(&theta);
    let theta_bar = theta.iter().sum::<f64>() / theta.len() as f64;
    let proposal = draw_a(s, ds.n(), cfg, stream)?;
    Ok(ChainState {
        mu,
        theta,
        a: if spec.contains(proposal) { proposal } else { x.a },
        theta_bar,
        s,
    })
}

/// Long single chain on the sufficient kernel, thinned; optionally restricted to the large set.
pub fn reference_chain(
    ds: &DataSet,
    cfg: &ModelConfig,
    start: SuffState,
    seed: u64,
    index: u64,
    burn_in: u64,
    n_samples: usize,
    thin: u64,
    restricted: Option<&LargeSetSpec>,
) -> Result<Vec<SuffState>> {
    if thin == 0 || n_samples == 0 {
        return Err(invalid("thin and n_samples must be positive"));
    }
    if let Some(spec) = restricted {
        if !spec.contains(start.a) {
            return Err(precondition("restricted chain must start inside the large set"));
        }
    }
    let kernel = SufficientKernel::new(ds, cfg)?;
    let mut rng = RngStream::derived(seed, domain::REFERENCE, index);
    let mut x = start;
    let step = |x: SuffState, rng: &mut RngStream| match restricted {
        Some(spec) => kernel.step_restricted(x, spec, rng),
        None => kernel.step(x, rng),
    };
    for _ in 0..burn_in {
        x = step(x, &mut rng);
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for _ in 0..thin {
            x = step(x, &mut rng);
        }
        out.push(x);
    }
    Ok(out)
}

/// Equal-mass bins: quantile slabs in `theta_bar`, then quantiles of `A` within each slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub theta_edges: Vec<f64>,
    pub a_edges: Vec<Vec<f64>>,
}

fn inner_quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    (1..bins)
        .map(|i| {
            let idx = (i * sorted.len()) / bins;
            sorted[idx.min(sorted.len() - 1)]
        })
        .collect()
}

fn bucket(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|e| *e <= x)
}

impl BinGrid {
    pub fn equal_mass(reference: &[SuffState], bins_theta: usize, bins_a: usize) -> Result<Self> {
        if reference.is_empty() {
            return Err(invalid("empty reference sample"));
        }
        if bins_theta == 0 || bins_a == 0 {
            return Err(invalid("bin counts must be positive"));
        }
        let mut thetas: Vec<f64> = reference.iter().map(|x| x.theta_bar).collect();
        thetas.sort_by(f64::total_cmp);
        let theta_edges = inner_quantile_edges(&thetas, bins_theta);
        let mut slabs: Vec<Vec<f64>> = vec![Vec::new(); bins_theta];
        for x in reference {
            slabs[bucket(&theta_edges, x.theta_bar)].push(x.a);
        }
        let a_edges = slabs
            .into_iter()
            .map(|mut s| {
                if s.is_empty() {
                    return Vec::new();
                }
                s.sort_by(f64::total_cmp);
                inner_quantile_edges(&s, bins_a)
            })
            .collect();
        Ok(Self { theta_edges, a_edges })
    }

    pub fn n_bins(&self) -> usize {
        self.a_edges.iter().map(|e| e.len() + 1).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.a_edges.len());
        let mut acc = 0;
        for e in &self.a_edges {
            off.push(acc);
            acc += e.len() + 1;
        }
        off
    }

    pub fn histogram(&self, xs: &[SuffState]) -> Vec<u64> {
        let off = self.offsets();
        let mut counts = vec![0u64; self.n_bins()];
        for x in xs {
            let t = bucket(&self.theta_edges, x.theta_bar);
            counts[off[t] + bucket(&self.a_edges[t], x.a)] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub tv: f64,
    pub se: f64,
}

/// Half L1 distance between two binned empirical measures, with a delta-method SE
/// that treats both samples as independent draws.
pub fn tv_from_counts(a: &[u64], b: &[u64]) -> Result<TvEstimate> {
    if a.len() != b.len() {
        return Err(invalid("histograms have different bin counts"));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(invalid("empty sample set"));
    }
    let (na, nb) = (na as f64, nb as f64);
    let mut tv = 0.0;
    let (mut sp, mut sq, mut sp2, mut sq2) = (0.0, 0.0, 0.0, 0.0);
    for (&ca, &cb) in a.iter().zip(b) {
        let p = ca as f64 / na;
        let q = cb as f64 / nb;
        let d = p - q;
        tv += d.abs();
        let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        sp += s * p;
        sq += s * q;
        sp2 += s * s * p;
        sq2 += s * s * q;
    }
    let var = 0.25 * ((sp2 - sp * sp).max(0.0) / na + (sq2 - sq * sq).max(0.0) / nb);
    Ok(TvEstimate {
        tv: (0.5 * tv).clamp(0.0, 1.0),
        se: var.sqrt(),
    })
}

pub fn tv_lower_bound_estimate(a: &[SuffState], b: &[SuffState], grid: &BinGrid) -> Result<TvEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("empty sample set"));
    }
    tv_from_counts(&grid.histogram(a), &grid.histogram(b))
}

/// TV between the two halves of a reference sample, as a gauge of its own error.
pub fn split_half_tv(samples: &[SuffState], grid: &BinGrid) -> Result<TvEstimate> {
    let mid = samples.len() / 2;
    tv_lower_bound_estimate(&samples[..mid], &samples[mid..], grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvPoint {
    pub k: u64,
    pub tv: f64,
    pub se: f64,
}

/// Binned TV between `n_replicas` chains started at `x0` and the reference sample, at every `k <= k_max`.
pub fn tv_curve(
    ds: &DataSet,
    cfg: &ModelConfig,
    x0: SuffState,
    n_replicas: usize,
    k_max: u64,
    seed: u64,
    reference: &[SuffState],
    grid: &BinGrid,
) -> Result<Vec<TvPoint>> {
    if n_replicas == 0 {
        return Err(invalid("need at least one replica"));
    }
    let kernel = SufficientKernel::new(ds, cfg)?;
    let ref_counts = grid.histogram(reference);
    let mut chains: Vec<(SuffState, RngStream)> = (0..n_replicas)
        .map(|i| (x0, RngStream::derived(seed, domain::TV_REPLICAS, i as u64)))
        .collect();
    let mut out = Vec::with_capacity(k_max as usize + 1);
    for k in 0..=k_max {
        if k > 0 {
            chains.par_iter_mut().for_each(|(x, rng)| *x = kernel.step(*x, rng));
        }
        let states: Vec<SuffState> = chains.iter().map(|c| c.0).collect();
        let est = tv_from_counts(&grid.histogram(&states), &ref_counts)?;
        out.push(TvPoint { k, tv: est.tv, se: est.se });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitFrequency {
    pub step: u64,
    pub p_hat: f64,
    pub se: f64,
    /// Mean number of exits over steps `1..=step`, i.e. the estimate of `sum_i P^i(x0, R_T^c)`.
    pub cumulative: f64,
    /// Per-chain standard error of `cumulative`.
    pub cumulative_se: f64,
}

/// Empirical `P^i(x0, R_T^c)` for `i = 1..=n_steps` with binomial standard errors.
pub fn exit_probability_estimate(
    plan: &SimulationPlan,
    ds: &DataSet,
    cfg: &ModelConfig,
    spec: &LargeSetSpec,
    x0: &ChainState,
) -> Result<Vec<ExitFrequency>> {
    plan.validate()?;
    let kernel = SufficientKernel::new(ds, cfg)?;
    let steps = plan.n_steps as usize;
    let start = SuffState::from(x0);
    let outside: Vec<Vec<bool>> = (0..plan.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::derived(plan.seed, domain::EXIT, c as u64);
            let mut x = start;
            (0..steps)
                .map(|_| {
                    x = kernel.step(x, &mut rng);
                    !spec.contains(x.a)
                })
                .collect()
        })
        .collect();
    let m = plan.n_chains as f64;
    let mut counts = vec![0.0; plan.n_chains];
    Ok((0..steps)
        .map(|i| {
            for (c, o) in counts.iter_mut().zip(&outside) {
                *c += f64::from(u8::from(o[i]));
            }
            let p = outside.iter().filter(|o| o[i]).count() as f64 / m;
            let (cumulative, cumulative_se) = crate::numerics::mean_se(&counts);
            ExitFrequency {
                step: i as u64 + 1,
                p_hat: p,
                se: (p * (1.0 - p) / m).sqrt(),
                cumulative,
                cumulative_se,
            }
        })
        .collect())
}

/// Fraction of a (correlated) reference sample outside the large set, batch-means SE.
pub fn stationary_exit_fraction(reference: &[SuffState], spec: &LargeSetSpec) -> (f64, f64) {
    let ind: Vec<f64> = reference.iter().map(|x| if spec.contains(x.a) { 0.0 } else { 1.0 }).collect();
    batch_means_se(&ind, 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub n_pairs: usize,
    pub n_steps: u64,
    /// Restricted-chain steps used to draw the second chain's start from `pi'`.
    pub stationary_burn_in: u64,
    pub seed: u64,
    /// Number of joint returns tracked per pair.
    pub j_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub j: usize,
    pub k: u64,
    /// Empirical `Pr(N_k < j)`.
    pub p_hat: f64,
    pub se: f64,
    /// `(alpha^k - alpha^j)^{-1} [E alpha^{r_1 + .. + r_j} - alpha^j]` from the same runs.
    pub bound: f64,
    /// Fraction of pairs whose `j`-th return was not seen.
    pub censored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    /// Joint return times `t_1 < t_2 < ...` per pair.
    pub returns: Vec<Vec<u64>>,
    /// Gaps `r_1 = t_1 + 1`, `r_i = t_i - t_{i-1}`.
    pub gaps: Vec<Vec<u64>>,
    /// Mean `N_k` for `k = 0..=n_steps`.
    pub mean_n_k: Vec<f64>,
    pub checks: Vec<LemmaCheck>,
}

/// Independent restricted chains `X` from `x0` and `Y` from (approximately) `pi'`,
/// with joint visits to `{f <= d}`.
pub fn hitting_time_stats(
    plan: &PairPlan,
    d_small: f64,
    alpha: f64,
    ds: &DataSet,
    cfg: &ModelConfig,
    spec: &LargeSetSpec,
    x0: &ChainState,
    k_grid: &[u64],
) -> Result<HittingStats> {
    if plan.n_pairs == 0 || plan.n_steps == 0 || plan.j_max == 0 {
        return Err(invalid("pair plan needs positive n_pairs, n_steps and j_max"));
    }
    if !(alpha > 1.0) {
        return Err(invalid(format!("alpha = {alpha} must exceed 1")));
    }
    if !spec.contains(x0.a) {
        return Err(precondition("x0 lies outside the large set"));
    }
    let kernel = SufficientKernel::new(ds, cfg)?;
    let start = SuffState::from(x0);
    let in_small = |x: SuffState| kernel.drift(x) <= d_small;
    let returns: Vec<Vec<u64>> = (0..plan.n_pairs)
        .into_par_iter()
        .map(|p| {
            let mut rx = RngStream::derived(plan.seed, domain::HITTING, 2 * p as u64);
            let mut ry = RngStream::derived(plan.seed, domain::HITTING, 2 * p as u64 + 1);
            let mut x = start;
            let mut y = start;
            for _ in 0..plan.stationary_burn_in {
                y = kernel.step_restricted(y, spec, &mut ry);
            }
            let mut t = Vec::new();
            for m in 0..=plan.n_steps {
                if m > 0 {
                    x = kernel.step_restricted(x, spec, &mut rx);
                    y = kernel.step_restricted(y, spec, &mut ry);
                }
                if in_small(x) && in_small(y) {
                    t.push(m);
                    if t.len() == plan.j_max {
                        break;
                    }
                }
            }
            t
        })
        .collect();
    let gaps = returns
        .iter()
        .map(|t| {
            let mut prev: i64 = -1;
            t.iter()
                .map(|&ti| {
                    let g = ti as i64 - prev;
                    prev = ti as i64;
                    g as u64
                })
                .collect()
        })
        .collect();
    let pairs = plan.n_pairs as f64;
    let mean_n_k = (0..=plan.n_steps)
        .map(|k| returns.iter().map(|t| t.iter().filter(|&&ti| ti < k).count()).sum::<usize>() as f64 / pairs)
        .collect();
    let mut checks = Vec::new();
    for j in 1..=plan.j_max {
        let seen: Vec<u64> = returns.iter().filter_map(|t| t.get(j - 1).copied()).collect();
        let censored = 1.0 - seen.len() as f64 / pairs;
        let ln_alpha = alpha.ln();
        let aj = alpha.powi(j as i32);
        // E alpha^{t_j + 1} - alpha^j, term by term so that t_j = j - 1 contributes exactly 0.
        let excess = aj * seen.iter().map(|&tj| ((tj as f64 + 1.0 - j as f64) * ln_alpha).exp_m1()).sum::<f64>()
            / seen.len().max(1) as f64;
        for &k in k_grid.iter().filter(|&&k| k > j as u64) {
            let below = returns.iter().filter(|t| t.get(j - 1).is_none_or(|&tj| tj >= k)).count() as f64;
            let p_hat = below / pairs;
            let bound = excess / (aj * ((k as f64 - j as f64) * ln_alpha).exp_m1());
            checks.push(LemmaCheck {
                j,
                k,
                p_hat,
                se: (p_hat * (1.0 - p_hat) / pairs).sqrt(),
                bound,
                censored,
            });
        }
    }
    Ok(HittingStats {
        returns,
        gaps,
        mean_n_k,
        checks,
    })
}
