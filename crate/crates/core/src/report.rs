//! End-to-end bound for the hierarchical normal Gibbs sampler.

use serde::{Deserialize, Serialize};

use crate::bound::{
    evaluate_bound, mixing_time_certificate, BoundTerms, CertificateConstants, CumulativeExit, DerivedConstants,
    DriftParameters, MinorizationCertificate, MixingCertificate, TailSequence,
};
use crate::error::{invalid, precondition, Result};
use crate::minorization::{epsilon_lower_bound, q_mass_certificate, EpsilonBreakdown, QMass, SmallSetBox};
use crate::model::{
    drift_offset_b, drift_value, require_data_assumption, ChainState, DataSet, DriftOffset, LargeSetSpec, ModelConfig,
};
use crate::numerics::QuadratureSpec;

/// Default `d = D_HEADROOM * b / (1 - lambda_T)`.
pub const D_HEADROOM: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub t: Option<f64>,
    pub d: Option<f64>,
    pub k_max: u64,
    /// Target distance for the mixing-time certificate.
    pub mixing_c: f64,
    /// Sample size past which the asymptotic steps of the argument hold.
    pub n_floor: f64,
    pub quad: QuadratureSpec,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            t: None,
            d: None,
            k_max: 200,
            mixing_c: 0.25,
            n_floor: 1.0,
            quad: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub n: usize,
    pub center: f64,
    pub t: f64,
    pub lambda_t: f64,
    pub b_drift: f64,
    pub d_small: f64,
    pub epsilon: f64,
    pub q_mass: f64,
    pub alpha: f64,
    pub big_lambda: f64,
    pub r: f64,
    pub gamma: f64,
    pub log_gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsBoundReport {
    pub constants: BoundConstants,
    pub drift_offset: DriftOffset,
    pub epsilon_detail: EpsilonBreakdown,
    pub q_detail: QMass,
    pub drift: DriftParameters,
    pub minorization: MinorizationCertificate,
    pub derived: DerivedConstants,
    pub tails: TailSequence,
    /// Terms of the bound for `k = 1..=k_max`.
    pub curve: Vec<BoundTerms>,
    pub mixing_c: f64,
    pub mixing: MixingCertificate,
}

impl GibbsBoundReport {
    pub fn large_set(&self) -> LargeSetSpec {
        LargeSetSpec {
            t: self.constants.t,
            center: self.constants.center,
        }
    }
}

pub fn resolve_large_set(ds: &DataSet, cfg: &ModelConfig, t: Option<f64>) -> Result<LargeSetSpec> {
    match t {
        Some(t) => LargeSetSpec::new(ds, cfg, t),
        None => LargeSetSpec::with_default_t(ds, cfg),
    }
}

/// Drift constants, minorization, rate, bound curve and mixing certificate, started at the
/// initial state (so `E_nu f = 0`).
pub fn assemble_gibbs_bound(ds: &DataSet, cfg: &ModelConfig, opts: &AssembleOptions) -> Result<GibbsBoundReport> {
    require_data_assumption(ds, cfg)?;
    let spec = resolve_large_set(ds, cfg, opts.t)?;
    let offset = drift_offset_b(ds, cfg, &spec)?;
    let lambda_t = offset.lambda_t;
    let b = offset.b;
    let d = match opts.d {
        Some(d) => d,
        None => D_HEADROOM * b / (1.0 - lambda_t),
    };
    let drift = DriftParameters::new(lambda_t, b, d, 0.0)?;
    let bx = SmallSetBox::new(ds, cfg, d)?;
    let eps = epsilon_lower_bound(&bx, ds, cfg, &opts.quad)?;
    let qm = q_mass_certificate(&bx, ds, cfg, &spec, &eps, &opts.quad)?;
    let minorization = MinorizationCertificate::new(eps.epsilon, qm.value)?;
    let derived = DerivedConstants::derive(&drift, &minorization)?;

    let n = ds.n() as f64;
    let v = cfg.v;
    let gap = spec.center - spec.t;
    let c1 = 2.0 + b / (1.0 - lambda_t);
    let c2 = b / (2.0 * gap * gap);
    let c3 = b.sqrt() * (2.0 * v / cfg.delta_margin + 1.0) / gap;
    // Keeping f(x_0) in E f(X_i) <= f(x_0) + i b gives the extra f(x_0) k/n term.
    let c4 = 1.0 / (gap * gap);
    let tails = TailSequence::new(
        c3 / n.sqrt(),
        CumulativeExit::Linear {
            intercept: 0.0,
            slope: b / (n * gap * gap),
        },
    )?;
    let curve = (1..=opts.k_max)
        .map(|k| evaluate_bound(&drift, &minorization, &derived, &tails, k))
        .collect::<Result<Vec<_>>>()?;
    let cc = CertificateConstants { c1, c2, c3, c4 };
    let mixing = mixing_time_certificate(&cc, -derived.log_gamma, opts.mixing_c, opts.n_floor)?;

    Ok(GibbsBoundReport {
        constants: BoundConstants {
            n: ds.n(),
            center: spec.center,
            t: spec.t,
            lambda_t,
            b_drift: b,
            d_small: d,
            epsilon: eps.epsilon,
            q_mass: qm.value,
            alpha: derived.alpha,
            big_lambda: derived.big_lambda,
            r: derived.r,
            gamma: derived.gamma,
            log_gamma: derived.log_gamma,
            c1,
            c2,
            c3,
            c4,
        },
        drift_offset: offset,
        epsilon_detail: eps,
        q_detail: qm,
        drift,
        minorization,
        derived,
        tails,
        curve,
        mixing_c: opts.mixing_c,
        mixing,
    })
}

/// `[C1 + f(x0)] gamma^k + C2 k(1+k)/n + C3 k/sqrt(n) + C4 f(x0) k/n` for a start inside the large set.
pub fn extended_bound_general_start(
    x0: &ChainState,
    ds: &DataSet,
    cfg: &ModelConfig,
    k: u64,
    report: &GibbsBoundReport,
) -> Result<f64> {
    let c = &report.constants;
    if c.n != ds.n() {
        return Err(invalid("report and data disagree on n"));
    }
    if !report.large_set().contains(x0.a) {
        return Err(precondition("no bound available outside the large set"));
    }
    let f0 = drift_value(ds, cfg, x0.theta_bar, x0.a);
    Ok(general_start_formula(c, f0, k))
}

pub(crate) fn general_start_formula(c: &BoundConstants, f0: f64, k: u64) -> f64 {
    let kf = k as f64;
    let n = c.n as f64;
    (c.c1 + f0) * (kf * c.log_gamma).exp()
        + c.c2 * kf * (1.0 + kf) / n
        + c.c3 * kf / n.sqrt()
        + c.c4 * f0 * kf / n
}

/// Same formula on caller-supplied constants.
pub fn general_start_bound(c: &BoundConstants, f0: f64, k: u64) -> Result<f64> {
    if !(f0 >= 0.0) {
        return Err(invalid(format!("f(x0) = {f0} must be >= 0")));
    }
    Ok(general_start_formula(c, f0, k))
}
