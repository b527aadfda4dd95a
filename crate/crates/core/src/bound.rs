//! Generalized drift/minorization total-variation bound.
//!
//! Works for a chain that satisfies a drift condition and a minorization only
//! inside a large set, with the escape probability from that set entering as
//! additive tail terms. The classic bound is the special case `q_mass = 1`
//! with zero tails.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Result};
use crate::numerics::ln_expm1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParameters {
    pub lambda: f64,
    pub b_drift: f64,
    pub d_small: f64,
    /// E_nu f(X_0); zero for a point start at the drift minimum.
    pub initial_drift_expectation: f64,
}

impl DriftParameters {
    pub fn new(lambda: f64, b_drift: f64, d_small: f64, initial_drift_expectation: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(invalid(format!("lambda = {lambda} must lie in (0, 1)")));
        }
        if !(b_drift >= 0.0 && b_drift.is_finite()) {
            return Err(invalid(format!("b = {b_drift} must be finite and >= 0")));
        }
        if !(initial_drift_expectation >= 0.0 && initial_drift_expectation.is_finite()) {
            return Err(invalid(format!("E_nu f = {initial_drift_expectation} must be finite and >= 0")));
        }
        let threshold = 2.0 * b_drift / (1.0 - lambda);
        if !(d_small > threshold && d_small.is_finite()) {
            return Err(invalid(format!("d = {d_small} must exceed 2b/(1-lambda) = {threshold}")));
        }
        Ok(Self {
            lambda,
            b_drift,
            d_small,
            initial_drift_expectation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinorizationCertificate {
    pub epsilon: f64,
    /// Lower bound on Q(R_0): minorizing-measure mass on the large set.
    pub q_mass: f64,
}

impl MinorizationCertificate {
    pub fn new(epsilon: f64, q_mass: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(invalid(format!("epsilon = {epsilon} must lie in (0, 1]")));
        }
        if !(q_mass > 0.0 && q_mass <= 1.0) {
            return Err(invalid(format!("q_mass = {q_mass} must lie in (0, 1]")));
        }
        Ok(Self { epsilon, q_mass })
    }

    pub fn eps_q(&self) -> f64 {
        self.epsilon * self.q_mass
    }
}

/// Rate constants derived from drift and minorization.
///
/// `gamma` rounds to 1.0 in f64 whenever `eps_q` is below about 1e-16; keep
/// `log_gamma` for anything that depends on the rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub big_lambda: f64,
    pub r: f64,
    pub gamma: f64,
    pub log_gamma: f64,
}

impl DerivedConstants {
    pub fn derive(p: &DriftParameters, m: &MinorizationCertificate) -> Result<Self> {
        let (alpha, big_lambda) = derive_alpha_lambda(p)?;
        let c = optimal_r(alpha, big_lambda, m.eps_q())?;
        Ok(Self {
            alpha,
            big_lambda,
            r: c.r,
            gamma: c.gamma,
            log_gamma: c.log_gamma,
        })
    }

    /// Constants at a caller-chosen `r`; the rate is the slower of the two terms.
    pub fn with_r(p: &DriftParameters, m: &MinorizationCertificate, r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(invalid(format!("r = {r} must lie in (0, 1)")));
        }
        let (alpha, big_lambda) = derive_alpha_lambda(p)?;
        let eq = m.eps_q();
        if eq >= 1.0 {
            return Err(invalid("eps * q must be below 1"));
        }
        let coupling = r * (-eq).ln_1p();
        let drift = -alpha.ln() + r * (alpha * big_lambda).ln();
        let log_gamma = coupling.max(drift);
        if !(log_gamma < 0.0) {
            return Err(precondition(format!("r = {r} gives no contraction")));
        }
        Ok(Self {
            alpha,
            big_lambda,
            r,
            gamma: log_gamma.exp(),
            log_gamma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub r: f64,
    pub gamma: f64,
    pub log_gamma: f64,
}

/// Escape terms: `k * pi_exit_bound + cumulative(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSequence {
    pub pi_exit_bound: f64,
    pub cumulative: CumulativeExit,
}

/// Bound on `sum_{i=1..k} P^i(x_0, R_0^c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CumulativeExit {
    Zero,
    /// `P^i <= intercept + slope * i`.
    Linear { intercept: f64, slope: f64 },
    /// Partial sums, entry `k - 1` covering steps `1..=k`.
    Tabulated(Vec<f64>),
}

impl TailSequence {
    pub fn zero() -> Self {
        Self {
            pi_exit_bound: 0.0,
            cumulative: CumulativeExit::Zero,
        }
    }

    pub fn new(pi_exit_bound: f64, cumulative: CumulativeExit) -> Result<Self> {
        if !(pi_exit_bound >= 0.0 && pi_exit_bound.is_finite()) {
            return Err(invalid(format!("pi exit bound {pi_exit_bound} must be finite and >= 0")));
        }
        match &cumulative {
            CumulativeExit::Zero => {}
            CumulativeExit::Linear { intercept, slope } => {
                if !(*intercept >= 0.0 && *slope >= 0.0 && intercept.is_finite() && slope.is_finite()) {
                    return Err(invalid("linear exit coefficients must be finite and >= 0"));
                }
            }
            CumulativeExit::Tabulated(v) => {
                let mut prev = 0.0;
                for &x in v {
                    if !(x >= prev && x.is_finite()) {
                        return Err(invalid("tabulated exit sums must be finite and nondecreasing"));
                    }
                    prev = x;
                }
            }
        }
        Ok(Self {
            pi_exit_bound,
            cumulative,
        })
    }

    pub fn at(&self, k: u64) -> Result<f64> {
        let kf = k as f64;
        let cum = match &self.cumulative {
            CumulativeExit::Zero => 0.0,
            CumulativeExit::Linear { intercept, slope } => kf * intercept + slope * kf * (kf + 1.0) / 2.0,
            CumulativeExit::Tabulated(v) => {
                if k == 0 {
                    0.0
                } else {
                    *v.get(k as usize - 1)
                        .ok_or_else(|| invalid(format!("exit table has {} entries, asked for k = {k}", v.len())))?
                }
            }
        };
        Ok(kf * self.pi_exit_bound + cum)
    }
}

/// `alpha^{-1} = (1 + 2b + lambda d) / (1 + d)` and `Lambda = 1 + 2(lambda d + b)`.
pub fn derive_alpha_lambda(p: &DriftParameters) -> Result<(f64, f64)> {
    let (l, b, d) = (p.lambda, p.b_drift, p.d_small);
    if !(d > 2.0 * b / (1.0 - l)) {
        return Err(precondition(format!("d = {d} must exceed 2b/(1-lambda) = {}", 2.0 * b / (1.0 - l))));
    }
    let alpha = (1.0 + d) / (1.0 + 2.0 * b + l * d);
    if !(alpha > 1.0) {
        return Err(precondition(format!("alpha = {alpha} must exceed 1")));
    }
    Ok((alpha, 1.0 + 2.0 * (l * d + b)))
}

/// The `r` that equalizes the coupling and return-time rates.
pub fn optimal_r(alpha: f64, big_lambda: f64, eps_q: f64) -> Result<Contraction> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(precondition(format!("alpha = {alpha} must exceed 1")));
    }
    if !(big_lambda >= 1.0 && big_lambda.is_finite()) {
        return Err(invalid(format!("Lambda = {big_lambda} must be >= 1")));
    }
    if !(eps_q > 0.0 && eps_q < 1.0) {
        return Err(invalid(format!("eps * q = {eps_q} must lie in (0, 1)")));
    }
    let neg_ln_coupling = -(-eps_q).ln_1p();
    let ln_alpha = alpha.ln();
    let r = ln_alpha / ((alpha * big_lambda).ln() + neg_ln_coupling);
    let log_gamma = -r * neg_ln_coupling;
    Ok(Contraction {
        r,
        gamma: log_gamma.exp(),
        log_gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub k: u64,
    /// `(1 - eps Q)^{rk}`
    pub coupling: f64,
    /// Return-time term.
    pub drift: f64,
    pub tail: f64,
    pub total: f64,
}

impl BoundTerms {
    pub fn clamped(&self) -> f64 {
        self.total.min(1.0)
    }
}

fn saturate(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else {
        x.min(f64::MAX)
    }
}

/// Raw (unclamped) bound on `||L(X_k) - pi||` after `k >= 1` steps.
pub fn evaluate_bound(
    p: &DriftParameters,
    m: &MinorizationCertificate,
    dc: &DerivedConstants,
    tails: &TailSequence,
    k: u64,
) -> Result<BoundTerms> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if !(dc.r > 0.0 && dc.r < 1.0) {
        return Err(precondition(format!("r = {} must lie in (0, 1)", dc.r)));
    }
    let kf = k as f64;
    let r = dc.r;
    let coupling = (r * kf * (-m.eps_q()).ln_1p()).exp();
    // [(aL)^{rk} M - a^{rk}] / (a^k - a^{rk}) = (L^{rk} M - 1) / (a^{k(1-r)} - 1)
    let big_m = 1.0 + p.initial_drift_expectation + p.b_drift / (1.0 - p.lambda);
    let u = r * kf * dc.big_lambda.ln() + big_m.ln();
    let v = kf * (1.0 - r) * dc.alpha.ln();
    if !(v > 0.0) {
        return Err(precondition("alpha^k - alpha^{rk} vanished"));
    }
    let drift = if u > 0.0 { saturate((ln_expm1(u) - ln_expm1(v)).exp()) } else { 0.0 };
    let tail = tails.at(k)?;
    let total = saturate(coupling + drift + tail);
    Ok(BoundTerms {
        k,
        coupling,
        drift,
        tail,
        total,
    })
}

/// Bound with a whole-space minorization and no escape terms.
pub fn classic_bound(p: &DriftParameters, epsilon: f64, k: u64) -> Result<f64> {
    let m = MinorizationCertificate::new(epsilon, 1.0)?;
    let dc = DerivedConstants::derive(p, &m)?;
    Ok(evaluate_bound(p, &m, &dc, &TailSequence::zero(), k)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    pub c1: f64,
    /// Coefficient of `k(1+k)/n`.
    pub c2: f64,
    /// Coefficient of `k/sqrt(n)`.
    pub c3: f64,
    /// Coefficient of `f(x_0) k/n`.
    pub c4: f64,
}

/// Step count and sample-size threshold past which the bound is below `c`.
///
/// Stored as f64: for realistic minorization constants both exceed u64 range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingCertificate {
    pub k_bar: f64,
    pub n_c: f64,
}

/// `K = ceil[(ln C1 - ln(c/3)) / ln(1/gamma)]`, `N_c = ceil max{N, (3 K C3/c)^2, 3 C2 (K+1)^2 / c}`.
pub fn mixing_time_certificate(
    cc: &CertificateConstants,
    log_inv_gamma: f64,
    c: f64,
    n_floor: f64,
) -> Result<MixingCertificate> {
    if !(c > 0.0 && c < 1.0) {
        return Err(invalid(format!("target c = {c} must lie in (0, 1)")));
    }
    if !(log_inv_gamma > 0.0) || log_inv_gamma.is_nan() {
        return Err(precondition(format!("ln(1/gamma) = {log_inv_gamma} gives no contraction")));
    }
    if !(cc.c1 > 0.0 && cc.c2 >= 0.0 && cc.c3 >= 0.0) {
        return Err(invalid("certificate constants must be positive"));
    }
    let k_bar = ((cc.c1.ln() - (c / 3.0).ln()) / log_inv_gamma).ceil().max(0.0);
    let n_c = n_floor
        .max((k_bar * 3.0 * cc.c3 / c).powi(2))
        .max(3.0 * cc.c2 * (k_bar + 1.0).powi(2) / c)
        .ceil();
    Ok(MixingCertificate { k_bar, n_c })
}

/// [`mixing_time_certificate`] from `gamma` itself; loses precision as gamma -> 1.
pub fn mixing_time_certificate_from_gamma(
    cc: &CertificateConstants,
    gamma: f64,
    c: f64,
    n_floor: f64,
) -> Result<MixingCertificate> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    mixing_time_certificate(cc, -gamma.ln(), c, n_floor)
}
