//! Hierarchical normal model `Y_i ~ N(theta_i, V)`, `theta_i ~ N(mu, A)`,
//! flat prior on `mu`, `A ~ IG(a, b)`, and its deterministic-scan Gibbs sampler.
//!
//! The drift function is `f = n(theta_bar - Y_bar)^2 + n(A_hat - A)^2` with
//! `A_hat = Delta/(n-1) - V`, and the large set is `R_T = {T <= A <= 2 A_hat - T}`.

use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Result};
use crate::numerics::{self, minimize_scalar, QuadratureSpec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Known observation variance V.
    pub v: f64,
    pub prior_shape_a: f64,
    pub prior_scale_b: f64,
    /// The data must satisfy `Delta/(n-1) > V + delta_margin`.
    pub delta_margin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            v: 1.0,
            prior_shape_a: 2.0,
            prior_scale_b: 1.0,
            delta_margin: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("V", self.v),
            ("prior shape a", self.prior_shape_a),
            ("prior scale b", self.prior_scale_b),
            ("delta", self.delta_margin),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(invalid(format!("{name} = {x} must be finite and positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub y: Vec<f64>,
    pub y_bar: f64,
    /// `sum (Y_i - Y_bar)^2`
    pub delta: f64,
}

impl DataSet {
    /// Sufficient statistics by compensated summation.
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(invalid(format!("need at least 2 observations, got {}", y.len())));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("observation {bad} is not finite")));
        }
        let n = y.len() as f64;
        let y_bar = neumaier_sum(y.iter().copied()) / n;
        let delta = neumaier_sum(y.iter().map(|v| (v - y_bar) * (v - y_bar)));
        Ok(Self { y, y_bar, delta })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `Delta / (n - 1) - V`
    pub fn a_hat(&self, v: f64) -> f64 {
        self.delta / (self.n() - 1) as f64 - v
    }
}

/// Full sampler state. `theta_bar` and `s = sum (theta_i - theta_bar)^2/(n-1)` track `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub mu: f64,
    pub theta: Vec<f64>,
    pub a: f64,
    pub theta_bar: f64,
    pub s: f64,
}

impl ChainState {
    pub fn new(mu: f64, theta: Vec<f64>, a: f64) -> Result<Self> {
        if theta.len() < 2 {
            return Err(invalid("theta needs at least two entries"));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!("A = {a} must be finite and positive")));
        }
        let (theta_bar, s) = mean_and_s(&theta);
        Ok(Self {
            mu,
            theta,
            a,
            theta_bar,
            s,
        })
    }
}

fn neumaier_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean_and_s(theta: &[f64]) -> (f64, f64) {
    let n = theta.len() as f64;
    let m = theta.iter().sum::<f64>() / n;
    let ss = theta.iter().map(|t| (t - m) * (t - m)).sum::<f64>();
    (m, ss / (n - 1.0))
}

/// `Delta/(n-1) >= V + delta`.
pub fn check_data_assumption(ds: &DataSet, cfg: &ModelConfig) -> bool {
    ds.delta / (ds.n() - 1) as f64 >= cfg.v + cfg.delta_margin
}

pub fn require_data_assumption(ds: &DataSet, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if check_data_assumption(ds, cfg) {
        Ok(())
    } else {
        Err(precondition(format!(
            "Delta/(n-1) = {} is below V + delta = {}",
            ds.delta / (ds.n() - 1) as f64,
            cfg.v + cfg.delta_margin
        )))
    }
}

/// `theta_i = Y_bar`, `mu = 0`, `A = A_hat` (or `Delta/(n-1)` if `A_hat <= 0`).
pub fn initial_state(ds: &DataSet, cfg: &ModelConfig) -> ChainState {
    let a_hat = ds.a_hat(cfg.v);
    let a = if a_hat > 0.0 { a_hat } else { ds.delta / (ds.n() - 1) as f64 };
    ChainState {
        mu: 0.0,
        theta: vec![ds.y_bar; ds.n()],
        a,
        theta_bar: ds.y_bar,
        s: 0.0,
    }
}

/// One sweep: `mu`, then every `theta_i`, then `A`.
pub fn gibbs_step(x: &ChainState, ds: &DataSet, cfg: &ModelConfig, stream: &mut RngStream) -> Result<ChainState> {
    let (mu, theta) = draw_mu_theta(x, ds, cfg, stream)?;
    let (theta_bar, s) = mean_and_s(&theta);
    let a = draw_a(s, ds.n(), cfg, stream)?;
    Ok(ChainState {
        mu,
        theta,
        a,
        theta_bar,
        s,
    })
}

pub(crate) fn draw_mu_theta(
    x: &ChainState,
    ds: &DataSet,
    cfg: &ModelConfig,
    stream: &mut RngStream,
) -> Result<(f64, Vec<f64>)> {
    if x.theta.len() != ds.n() {
        return Err(invalid(format!("state has {} thetas, data has {}", x.theta.len(), ds.n())));
    }
    let n = ds.n() as f64;
    let a = x.a;
    let v = cfg.v;
    let mu = numerics::draw_normal(stream, x.theta_bar, a / n)?;
    let sd = (a * v / (v + a)).sqrt();
    let theta = ds
        .y
        .iter()
        .map(|yi| (mu * v + yi * a) / (v + a) + sd * stream.std_normal())
        .collect();
    Ok((mu, theta))
}

pub(crate) fn draw_a(s: f64, n: usize, cfg: &ModelConfig, stream: &mut RngStream) -> Result<f64> {
    let nm1 = (n - 1) as f64;
    numerics::draw_inverse_gamma(stream, cfg.prior_shape_a + nm1 / 2.0, cfg.prior_scale_b + nm1 * s / 2.0)
}

pub fn drift_value(ds: &DataSet, cfg: &ModelConfig, theta_bar: f64, a: f64) -> f64 {
    let n = ds.n() as f64;
    let dt = theta_bar - ds.y_bar;
    let da = ds.a_hat(cfg.v) - a;
    n * dt * dt + n * da * da
}

/// `lambda(A) = ((V^2 + 2VA) / (V + A)^2)^2`, checked.
pub fn lambda_factor(a: f64, v: f64) -> Result<f64> {
    if !(a >= 0.0) || !(v > 0.0) {
        return Err(invalid(format!("lambda(A) needs A >= 0 and V > 0, got ({a}, {v})")));
    }
    Ok(lambda_of_a(v, a))
}

pub fn lambda_of_a(v: f64, a: f64) -> f64 {
    let x = (v * v + 2.0 * v * a) / ((v + a) * (v + a));
    x * x
}

/// Mean and variance of `S'` given the current `A` (independent of `mu'`).
///
/// `(n-1) S' / sigma^2` is noncentral chi-square with `n-1` degrees of freedom
/// and noncentrality `c^2 Delta / sigma^2`, `sigma^2 = AV/(V+A)`, `c = A/(V+A)`.
/// Returns `(mean, variance, second moment)`.
pub fn conditional_s_moments(ds: &DataSet, cfg: &ModelConfig, a: f64) -> Result<(f64, f64, f64)> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid(format!("A = {a} must be finite and positive")));
    }
    let v = cfg.v;
    let nm1 = (ds.n() - 1) as f64;
    let s2 = a * v / (v + a);
    let c = a / (v + a);
    let mean = s2 + c * c * ds.delta / nm1;
    let var = (2.0 * nm1 * s2 * s2 + 4.0 * c * c * s2 * ds.delta) / (nm1 * nm1);
    Ok((mean, var, var + mean * mean))
}

/// Exact `E[f(X_1) | theta_bar, A]` for one Gibbs sweep.
pub fn expected_drift(ds: &DataSet, cfg: &ModelConfig, theta_bar: f64, a: f64) -> Result<f64> {
    let n = ds.n() as f64;
    let v = cfg.v;
    let a_part = expected_a_deviation_sq(ds, cfg, a)?;
    let s2 = a * v / (v + a);
    let g = (v / (v + a)).powi(2);
    let dt = theta_bar - ds.y_bar;
    Ok(s2 + n * g * (dt * dt + a / n) + n * a_part)
}

/// `E[(A_hat - A_1)^2 | A]`, through the first two moments of `S'` and of the inverse gamma.
pub fn expected_a_deviation_sq(ds: &DataSet, cfg: &ModelConfig, a: f64) -> Result<f64> {
    let nm1 = (ds.n() - 1) as f64;
    let shape = cfg.prior_shape_a + nm1 / 2.0;
    if !(shape > 2.0) {
        return Err(precondition(format!(
            "a + (n-1)/2 = {shape} must exceed 2 for the second moment of A to exist"
        )));
    }
    let (m, _, m2) = conditional_s_moments(ds, cfg, a)?;
    let bp = cfg.prior_scale_b;
    let e_beta = bp + nm1 * m / 2.0;
    let e_beta2 = bp * bp + bp * nm1 * m + nm1 * nm1 * m2 / 4.0;
    let e_a = e_beta / (shape - 1.0);
    let e_a2 = e_beta2 / ((shape - 1.0) * (shape - 2.0));
    let ah = ds.a_hat(cfg.v);
    Ok(ah * ah - 2.0 * ah * e_a + e_a2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeSetSpec {
    pub t: f64,
    /// `A_hat`; the set is symmetric about it.
    pub center: f64,
}

impl LargeSetSpec {
    pub fn new(ds: &DataSet, cfg: &ModelConfig, t: f64) -> Result<Self> {
        let center = ds.a_hat(cfg.v);
        if !(t > 0.0 && t < center) {
            return Err(invalid(format!("T = {t} must lie in (0, A_hat = {center})")));
        }
        Ok(Self { t, center })
    }

    /// `T = min(delta, A_hat / 2)`.
    pub fn with_default_t(ds: &DataSet, cfg: &ModelConfig) -> Result<Self> {
        let center = ds.a_hat(cfg.v);
        Self::new(ds, cfg, cfg.delta_margin.min(center / 2.0))
    }

    pub fn upper(&self) -> f64 {
        2.0 * self.center - self.t
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.t && a <= self.upper()
    }

    pub fn contains_state(&self, x: &ChainState) -> bool {
        self.contains(x.a)
    }

    pub fn lambda_t(&self, v: f64) -> f64 {
        lambda_of_a(v, self.t)
    }
}

/// Relative headroom added to the maximized drift offset.
pub const B_INFLATION: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftOffset {
    pub b: f64,
    pub lambda_t: f64,
    /// Where the offset peaks before inflation.
    pub argmax_a: f64,
    pub raw_sup: f64,
}

/// Offset `b` with `E f(X_1) <= lambda(A) f(x) + b` on `R_T`, hence also with `lambda_T`.
///
/// `E f_1 - lambda(A) f = (g(A) - lambda(A)) n (theta_bar - Y_bar)^2 + r(A)`
/// with `g = (V/(V+A))^2 <= lambda(A)`, so the sup sits at `theta_bar = Y_bar`.
pub fn drift_offset_b(ds: &DataSet, cfg: &ModelConfig, spec: &LargeSetSpec) -> Result<DriftOffset> {
    let v = cfg.v;
    let lo = spec.t;
    let hi = spec.upper();
    let mut err = None;
    let mut residual = |a: f64| -> f64 {
        match expected_drift(ds, cfg, ds.y_bar, a) {
            Ok(e) => -(e - lambda_of_a(v, a) * drift_value(ds, cfg, ds.y_bar, a)),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        }
    };
    let (argmax_a, neg) = minimize_scalar(&mut residual, lo, hi, 1e-10 * (hi - lo))?;
    if let Some(e) = err {
        return Err(e);
    }
    for i in 0..=200 {
        let a = lo + (hi - lo) * i as f64 / 200.0;
        let g = (v / (v + a)).powi(2);
        if g > lambda_of_a(v, a) {
            return Err(precondition(format!("theta coefficient exceeds lambda(A) at A = {a}")));
        }
    }
    let raw_sup = (-neg).max(0.0);
    Ok(DriftOffset {
        b: B_INFLATION * raw_sup,
        lambda_t: spec.lambda_t(v),
        argmax_a,
        raw_sup,
    })
}

/// `(k/sqrt n) sqrt(b) (2V/delta + 1) / |A_hat - T| + k(1+k)/(2n) b/(A_hat - T)^2`.
pub fn tail_probability_bound(b: f64, spec: &LargeSetSpec, delta: f64, v: f64, n: usize, k: u64) -> Result<f64> {
    let gap = spec.center - spec.t;
    if !(gap > 0.0) {
        return Err(precondition("T must lie below A_hat"));
    }
    if !(delta > 0.0 && v > 0.0 && b >= 0.0) || n == 0 {
        return Err(invalid("tail bound needs delta > 0, V > 0, b >= 0, n >= 1"));
    }
    let kf = k as f64;
    let nf = n as f64;
    Ok(kf / nf.sqrt() * pi_exit_coefficient(b, spec, delta, v) + kf * (1.0 + kf) / (2.0 * nf) * b / (gap * gap))
}

/// `sqrt(b) (2V/delta + 1) / |A_hat - T|`, the `k/sqrt(n)` coefficient.
pub fn pi_exit_coefficient(b: f64, spec: &LargeSetSpec, delta: f64, v: f64) -> f64 {
    b.sqrt() * (2.0 * v / delta + 1.0) / (spec.center - spec.t).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFunctional {
    pub value: f64,
    pub error_estimate: f64,
}

fn log_a_kernel(a: f64, n: usize, delta: f64, cfg: &ModelConfig, extra_inverse_power: f64) -> f64 {
    let v = cfg.v;
    -(cfg.prior_shape_a + 1.0 + extra_inverse_power) * a.ln() - cfg.prior_scale_b / a
        - 0.5 * (n - 1) as f64 * (v + a).ln()
        - delta / (2.0 * (v + a))
}

/// `E_pi(1/A)` as a function of `n` and `Delta`, by two half-line integrals.
pub fn posterior_functional_h(n: usize, delta: f64, cfg: &ModelConfig, quad: &QuadratureSpec) -> Result<PosteriorFunctional> {
    cfg.validate()?;
    if n < 2 || !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!("need n >= 2 and Delta > 0, got ({n}, {delta})")));
    }
    let log_num = |a: f64| log_a_kernel(a, n, delta, cfg, 1.0);
    let log_den = |a: f64| log_a_kernel(a, n, delta, cfg, 0.0);
    // Normalize both by the denominator's peak so neither integral under- or overflows.
    let scale = delta / (n - 1) as f64 + cfg.v + cfg.prior_scale_b;
    let (mode, neg_peak) = minimize_scalar(|a| -log_den(a), 1e-8 * scale, 20.0 * scale, 1e-12 * scale)?;
    let peak = -neg_peak;
    let spec = QuadratureSpec {
        abs_tol: f64::MIN_POSITIVE,
        ..*quad
    };
    let num = numerics::integrate_half_line(|a| if a > 0.0 { (log_num(a) - peak).exp() } else { 0.0 }, &[mode], 64, &spec)?;
    let den = numerics::integrate_half_line(|a| if a > 0.0 { (log_den(a) - peak).exp() } else { 0.0 }, &[mode], 64, &spec)?;
    if !(den.value > 0.0) {
        return Err(crate::Error::Numerical("posterior normalizer vanished".into()));
    }
    let value = num.value / den.value;
    let error_estimate = value * (num.error_estimate / num.value.abs() + den.error_estimate / den.value);
    Ok(PosteriorFunctional { value, error_estimate })
}

/// `h_n(Delta) = E_pi(1/A)` for the given data.
pub fn expected_inv_a(ds: &DataSet, cfg: &ModelConfig, quad: &QuadratureSpec) -> Result<PosteriorFunctional> {
    posterior_functional_h(ds.n(), ds.delta, cfg, quad)
}

/// Position of the two-dimensional `(theta_bar, A)` marginal chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffState {
    pub theta_bar: f64,
    pub a: f64,
}

impl From<&ChainState> for SuffState {
    fn from(x: &ChainState) -> Self {
        Self {
            theta_bar: x.theta_bar,
            a: x.a,
        }
    }
}

/// The Gibbs sweep pushed forward to `(theta_bar, A)`, exactly and in O(1) per step.
///
/// Given `A` and `mu'`, `theta_bar'` is normal and independent of `S'`, and
/// `(n-1) S'/sigma^2 = (Z + sqrt(nc))^2 + chi^2_{n-2}`.
#[derive(Debug, Clone)]
pub struct SufficientKernel {
    n: f64,
    v: f64,
    y_bar: f64,
    delta: f64,
    prior_b: f64,
    a_shape_gamma: Gamma<f64>,
    chi_rest: Option<Gamma<f64>>,
}

impl SufficientKernel {
    pub fn new(ds: &DataSet, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = ds.n();
        let nm1 = (n - 1) as f64;
        let a_shape_gamma =
            Gamma::new(cfg.prior_shape_a + nm1 / 2.0, 1.0).map_err(|e| invalid(e.to_string()))?;
        let chi_rest = if n > 2 {
            Some(Gamma::new((n - 2) as f64 / 2.0, 2.0).map_err(|e| invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            n: n as f64,
            v: cfg.v,
            y_bar: ds.y_bar,
            delta: ds.delta,
            prior_b: cfg.prior_scale_b,
            a_shape_gamma,
            chi_rest,
        })
    }

    /// `(theta_bar', S', A'_proposal)` from the current state.
    #[inline]
    pub fn propose(&self, x: SuffState, rng: &mut RngStream) -> (f64, f64, f64) {
        let (n, v, a) = (self.n, self.v, x.a);
        let mu = x.theta_bar + (a / n).sqrt() * rng.std_normal();
        let s2 = a * v / (v + a);
        let c = a / (v + a);
        let theta_bar = (mu * v + self.y_bar * a) / (v + a) + (s2 / n).sqrt() * rng.std_normal();
        let shift = (c * c * self.delta / s2).sqrt() + rng.std_normal();
        let rest = self.chi_rest.as_ref().map_or(0.0, |g| rng.sample(g));
        let s = s2 * (shift * shift + rest) / (n - 1.0);
        let a_new = (self.prior_b + (n - 1.0) * s / 2.0) / rng.sample(&self.a_shape_gamma);
        (theta_bar, s, a_new)
    }

    #[inline]
    pub fn step(&self, x: SuffState, rng: &mut RngStream) -> SuffState {
        let (theta_bar, _, a) = self.propose(x, rng);
        SuffState { theta_bar, a }
    }

    /// Sweep of the chain whose `A`-update is rejected outside the large set.
    #[inline]
    pub fn step_restricted(&self, x: SuffState, spec: &LargeSetSpec, rng: &mut RngStream) -> SuffState {
        let (theta_bar, _, a) = self.propose(x, rng);
        SuffState {
            theta_bar,
            a: if spec.contains(a) { a } else { x.a },
        }
    }

    pub fn drift(&self, x: SuffState) -> f64 {
        let dt = x.theta_bar - self.y_bar;
        let da = self.delta / (self.n - 1.0) - self.v - x.a;
        self.n * (dt * dt + da * da)
    }
}

/// Synthetic observations: `theta_i ~ N(0, center)`, `Y_i ~ N(theta_i, V)`.
///
/// With `exact_center` the spread is rescaled so that `Delta/(n-1) = center + V` exactly.
pub fn synthesize(n: usize, center: f64, v: f64, exact_center: bool, stream: &mut RngStream) -> Result<DataSet> {
    if n < 2 || !(center > 0.0) || !(v > 0.0) {
        return Err(invalid(format!("synthesis needs n >= 2, center > 0, V > 0; got ({n}, {center}, {v})")));
    }
    let mut y: Vec<f64> = (0..n)
        .map(|_| {
            let theta = center.sqrt() * stream.std_normal();
            theta + v.sqrt() * stream.std_normal()
        })
        .collect();
    if exact_center {
        let ds = DataSet::new(y.clone())?;
        let target = (center + v) * (n - 1) as f64;
        let k = (target / ds.delta).sqrt();
        for yi in &mut y {
            *yi = ds.y_bar + (*yi - ds.y_bar) * k;
        }
    }
    DataSet::new(y)
}

pub(crate) fn s_of(theta: &[f64]) -> f64 {
    mean_and_s(theta).1
}
