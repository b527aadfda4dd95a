//! One-step minorization on the small set `{f <= d}`, enclosed in the box
//! `|theta_bar - Y_bar| <= sqrt(d/n)`, `|A - A_hat| <= sqrt(d/n)`.
//!
//! The density of a sweep factors as `mu'`, then `theta_bar'` given `mu'`, then
//! `S'`, then `A'` given `S'`. The `A'` factor does not depend on the start, so
//! `eps` is the product of an `S'` overlap and a `(mu', theta_bar')` overlap.
//! The `S'` law used here is the shifted, scaled chi-square with the
//! `O(1/sqrt(n))` cross term between the centred noise and the data dropped.

use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Error, Result};
use crate::model::{expected_a_deviation_sq, DataSet, LargeSetSpec, ModelConfig, SuffState};
use crate::numerics::{
    chi_square_ln_pdf, erfc, integrate_panels, inverse_gamma_cdf, linspace, mean_se, minimize_scalar,
    minimize_scalar_grid, normal_pdf, QuadratureSpec, RngStream,
};

/// Grid size for infima nested inside quadrature.
const INNER_GRID: usize = 33;
/// Half-width, in standard deviations, of every truncated integration domain.
const TRUNCATION_SD: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallSetBox {
    pub theta_bar_center: f64,
    pub theta_bar_halfwidth: f64,
    pub a_center: f64,
    pub a_halfwidth: f64,
    pub d_small: f64,
    pub n: usize,
}

impl SmallSetBox {
    pub fn new(ds: &DataSet, cfg: &ModelConfig, d_small: f64) -> Result<Self> {
        if !(d_small > 0.0 && d_small.is_finite()) {
            return Err(invalid(format!("d = {d_small} must be finite and positive")));
        }
        let n = ds.n();
        let h = (d_small / n as f64).sqrt();
        let a_center = ds.a_hat(cfg.v);
        if !(a_center - h > 0.0) {
            return Err(precondition(format!(
                "small-set box reaches A <= 0: A_hat = {a_center}, half-width sqrt(d/n) = {h}"
            )));
        }
        Ok(Self {
            theta_bar_center: ds.y_bar,
            theta_bar_halfwidth: h,
            a_center,
            a_halfwidth: h,
            d_small,
            n,
        })
    }

    pub fn a_lo(&self) -> f64 {
        self.a_center - self.a_halfwidth
    }

    pub fn a_hi(&self) -> f64 {
        self.a_center + self.a_halfwidth
    }

    pub fn contains(&self, x: SuffState) -> bool {
        (x.theta_bar - self.theta_bar_center).abs() <= self.theta_bar_halfwidth
            && (x.a - self.a_center).abs() <= self.a_halfwidth
    }

    /// Four corners then the centre.
    pub fn corners(&self) -> [SuffState; 5] {
        let (t, ht) = (self.theta_bar_center, self.theta_bar_halfwidth);
        let (a, ha) = (self.a_center, self.a_halfwidth);
        [
            SuffState { theta_bar: t - ht, a: a - ha },
            SuffState { theta_bar: t - ht, a: a + ha },
            SuffState { theta_bar: t + ht, a: a - ha },
            SuffState { theta_bar: t + ht, a: a + ha },
            SuffState { theta_bar: t, a },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBreakdown {
    /// `int dS inf_A f_S(A; S)`
    pub s_factor: f64,
    /// `int dmu [theta_bar' overlap at mu] inf_box N(theta_bar_0, A_0/n; mu)`
    pub mu_factor: f64,
    /// Product of the two factors after subtracting quadrature error estimates.
    pub epsilon: f64,
    /// Upper bound on the `mu` mass cut off by domain truncation (not added back).
    pub truncation_mass_bound: f64,
    /// The `S'` density drops the cross term; see the module docs.
    pub approximate_s_density: bool,
}

struct Geometry {
    n: f64,
    v: f64,
    y_bar: f64,
    spread: f64,
    a_lo: f64,
    a_hi: f64,
}

impl Geometry {
    fn new(bx: &SmallSetBox, ds: &DataSet, cfg: &ModelConfig) -> Self {
        Self {
            n: ds.n() as f64,
            v: cfg.v,
            y_bar: ds.y_bar,
            spread: ds.delta / (ds.n() - 1) as f64,
            a_lo: bx.a_lo(),
            a_hi: bx.a_hi(),
        }
    }

    fn sigma2(&self, a: f64) -> f64 {
        a * self.v / (self.v + a)
    }

    fn shift(&self, a: f64) -> f64 {
        let c = a / (self.v + a);
        c * c * self.spread
    }

    fn s_density(&self, a: f64, s: f64) -> f64 {
        let k = (self.n - 1.0) / self.sigma2(a);
        let x = k * (s - self.shift(a));
        if x <= 0.0 {
            0.0
        } else {
            (k.ln() + chi_square_ln_pdf(x, self.n - 1.0)).exp()
        }
    }

    fn inf_over_a<F: FnMut(f64) -> f64>(&self, f: F) -> f64 {
        let tol = 1e-9 * (self.a_hi - self.a_lo);
        minimize_scalar_grid(f, self.a_lo, self.a_hi, tol, INNER_GRID)
            .map(|(_, y)| y.max(0.0))
            .unwrap_or(0.0)
    }

    fn s_inf(&self, s: f64) -> f64 {
        self.inf_over_a(|a| self.s_density(a, s))
    }

    fn s_domain(&self) -> (f64, f64) {
        let spread = |a: f64| {
            let s2 = self.sigma2(a);
            self.shift(a) + s2 * (1.0 + TRUNCATION_SD * (2.0 / (self.n - 1.0)).sqrt())
        };
        (self.shift(self.a_lo), spread(self.a_lo).max(spread(self.a_hi)))
    }

    fn theta_mean(&self, mu: f64, a: f64) -> f64 {
        (mu * self.v + self.y_bar * a) / (self.v + a)
    }

    fn theta_var(&self, a: f64) -> f64 {
        self.sigma2(a) / self.n
    }

    /// `int dt inf_A N(theta_mean(mu, A), theta_var(A); t)`
    fn theta_overlap(&self, mu: f64, quad: &QuadratureSpec) -> Result<f64> {
        let m1 = self.theta_mean(mu, self.a_lo);
        let m2 = self.theta_mean(mu, self.a_hi);
        let sd = self.theta_var(self.a_hi).sqrt();
        let lo = m1.min(m2) - TRUNCATION_SD * sd;
        let hi = m1.max(m2) + TRUNCATION_SD * sd;
        let r = integrate_panels(
            |t| self.inf_over_a(|a| normal_pdf(t, self.theta_mean(mu, a), self.theta_var(a))),
            &linspace(lo, hi, 16),
            quad,
        )?;
        Ok((r.value - r.error_estimate).clamp(0.0, 1.0))
    }
}

fn relative_spec(quad: &QuadratureSpec) -> QuadratureSpec {
    QuadratureSpec {
        abs_tol: f64::MIN_POSITIVE,
        ..*quad
    }
}

/// Lower bound on `eps` with `P(x, .) >= eps Q(.)` for every `x` in the box.
pub fn epsilon_lower_bound(bx: &SmallSetBox, ds: &DataSet, cfg: &ModelConfig, quad: &QuadratureSpec) -> Result<EpsilonBreakdown> {
    cfg.validate()?;
    if bx.n != ds.n() {
        return Err(invalid("box and data disagree on n"));
    }
    let g = Geometry::new(bx, ds, cfg);
    let spec = relative_spec(quad);

    let (s_lo, s_hi) = g.s_domain();
    let s_res = integrate_panels(|s| g.s_inf(s), &linspace(s_lo, s_hi, 64), &spec)?;
    let s_factor = (s_res.value - s_res.error_estimate).clamp(0.0, 1.0);

    let h = bx.theta_bar_halfwidth;
    let sd_hi = (g.a_hi / g.n).sqrt();
    let half = h + TRUNCATION_SD * sd_hi;
    let mu_lo = g.y_bar - half;
    let mu_hi = g.y_bar + half;
    let inner = QuadratureSpec {
        rel_tol: quad.rel_tol.max(1e-7),
        ..spec
    };
    let mut failure: Option<Error> = None;
    let mu_res = integrate_panels(
        |mu| {
            if failure.is_some() {
                return 0.0;
            }
            // The box infimum over theta_bar_0 sits at the far edge.
            let far = if mu >= g.y_bar { g.y_bar - h } else { g.y_bar + h };
            let start = g.inf_over_a(|a0| normal_pdf(mu, far, a0 / g.n));
            if start == 0.0 {
                return 0.0;
            }
            match g.theta_overlap(mu, &inner) {
                Ok(t) => t * start,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        &linspace(mu_lo, mu_hi, 64),
        &spec,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mu_factor = (mu_res.value - mu_res.error_estimate).clamp(0.0, 1.0);
    let epsilon = s_factor * mu_factor;
    if !(epsilon > 0.0) {
        return Err(Error::Numerical(format!(
            "degenerate small set: eps underflows (S factor {s_factor:e}, mu factor {mu_factor:e})"
        )));
    }
    Ok(EpsilonBreakdown {
        s_factor,
        mu_factor,
        epsilon: epsilon.min(1.0),
        truncation_mass_bound: erfc(TRUNCATION_SD / std::f64::consts::SQRT_2),
        approximate_s_density: true,
    })
}

/// `max(0, 1 - exit_prob_upper / eps)`, from `eps Q(R_0^c) <= P(x, R_0^c)` on the small set.
pub fn q_mass_lower_bound(epsilon: f64, exit_prob_upper: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon = {epsilon} must be positive")));
    }
    if !(exit_prob_upper >= 0.0) {
        return Err(invalid(format!("exit bound {exit_prob_upper} must be >= 0")));
    }
    Ok((1.0 - exit_prob_upper / epsilon).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QMass {
    /// `sup_{x in box} P(x, R_T^c)` by Chebyshev on `A_1 - A_hat`.
    pub exit_upper: f64,
    /// `max(0, 1 - exit_upper / eps)`.
    pub from_exit: f64,
    /// `Q(R_T)` integrated directly from the minorizing measure's `A'` marginal.
    pub direct: f64,
    pub value: f64,
}

/// Lower bound on `Q(R_T)`, the better of the exit-probability device and direct integration.
pub fn q_mass_certificate(
    bx: &SmallSetBox,
    ds: &DataSet,
    cfg: &ModelConfig,
    large: &LargeSetSpec,
    eps: &EpsilonBreakdown,
    quad: &QuadratureSpec,
) -> Result<QMass> {
    let gap = large.center - large.t;
    let (_, neg) = minimize_scalar(
        |a| -expected_a_deviation_sq(ds, cfg, a).unwrap_or(f64::INFINITY),
        bx.a_lo(),
        bx.a_hi(),
        1e-10 * (bx.a_hi() - bx.a_lo()),
    )?;
    let exit_upper = (-neg / (gap * gap)).min(1.0);
    let from_exit = q_mass_lower_bound(eps.epsilon, exit_upper)?;

    let g = Geometry::new(bx, ds, cfg);
    let spec = relative_spec(quad);
    let nm1 = g.n - 1.0;
    let shape = cfg.prior_shape_a + nm1 / 2.0;
    let (s_lo, s_hi) = g.s_domain();
    let breaks = linspace(s_lo, s_hi, 64);
    let total = integrate_panels(|s| g.s_inf(s), &breaks, &spec)?;
    let inside = integrate_panels(
        |s| {
            let q = g.s_inf(s);
            if q == 0.0 {
                return 0.0;
            }
            let scale = cfg.prior_scale_b + nm1 * s / 2.0;
            let p = inverse_gamma_cdf(large.upper(), shape, scale) - inverse_gamma_cdf(large.t, shape, scale);
            q * p.clamp(0.0, 1.0)
        },
        &breaks,
        &spec,
    )?;
    let direct = if total.value > 0.0 {
        ((inside.value - inside.error_estimate) / (total.value + total.error_estimate)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(QMass {
        exit_upper,
        from_exit,
        direct,
        value: from_exit.max(direct),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub from: usize,
    pub to: usize,
    pub overlap: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub states: Vec<SuffState>,
    pub pairs: Vec<PairOverlap>,
    /// Pair with the smallest estimated overlap.
    pub min: PairOverlap,
}

/// One sweep from `x` in the coordinates `(mu', theta_bar', u, R)`: `u` is the component of
/// `theta' - theta_bar'` along `Y - Y_bar`, `R` the squared norm of the remainder. These carry
/// every start-dependent part of the sweep density; `A'` given `S'` is start-free.
#[derive(Debug, Clone, Copy)]
struct SweepLaw {
    /// Mean and precision of `(mu', theta_bar')`.
    mean: [f64; 2],
    prec: [[f64; 2]; 2],
    u_mean: f64,
    u_prec: f64,
    /// `R ~ Gamma((n-2)/2, r_rate)`.
    r_rate: f64,
}

impl SweepLaw {
    fn new(x: SuffState, ds: &DataSet, v: f64) -> Self {
        let n = ds.n() as f64;
        let a = x.a;
        let w = v / (v + a);
        let s2 = a * v / (v + a);
        let s_mu = a / n;
        let (c00, c01, c11) = (s_mu, w * s_mu, w * w * s_mu + s2 / n);
        let det = c00 * c11 - c01 * c01;
        Self {
            mean: [x.theta_bar, w * x.theta_bar + (1.0 - w) * ds.y_bar],
            prec: [[c11 / det, -c01 / det], [-c01 / det, c00 / det]],
            u_mean: (1.0 - w) * ds.delta.sqrt(),
            u_prec: 1.0 / s2,
            r_rate: 0.5 / s2,
        }
    }

    /// Normalized geometric mean `sqrt(p q) / BC`, again of this form.
    fn geometric_mean(&self, o: &Self) -> Self {
        let p = [
            [0.5 * (self.prec[0][0] + o.prec[0][0]), 0.5 * (self.prec[0][1] + o.prec[0][1])],
            [0.5 * (self.prec[1][0] + o.prec[1][0]), 0.5 * (self.prec[1][1] + o.prec[1][1])],
        ];
        let h = |l: &Self, i: usize| l.prec[i][0] * l.mean[0] + l.prec[i][1] * l.mean[1];
        let rhs = [0.5 * (h(self, 0) + h(o, 0)), 0.5 * (h(self, 1) + h(o, 1))];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let u_prec = 0.5 * (self.u_prec + o.u_prec);
        Self {
            mean: [
                (p[1][1] * rhs[0] - p[0][1] * rhs[1]) / det,
                (p[0][0] * rhs[1] - p[1][0] * rhs[0]) / det,
            ],
            prec: p,
            u_mean: 0.5 * (self.u_prec * self.u_mean + o.u_prec * o.u_mean) / u_prec,
            u_prec,
            r_rate: 0.5 * (self.r_rate + o.r_rate),
        }
    }

    fn ln_density(&self, y: &[f64; 4], r_shape: f64) -> f64 {
        let d0 = y[0] - self.mean[0];
        let d1 = y[1] - self.mean[1];
        let det = self.prec[0][0] * self.prec[1][1] - self.prec[0][1] * self.prec[1][0];
        let quad = self.prec[0][0] * d0 * d0 + 2.0 * self.prec[0][1] * d0 * d1 + self.prec[1][1] * d1 * d1;
        let du = y[2] - self.u_mean;
        let mut l = 0.5 * det.ln() - 0.5 * quad + 0.5 * self.u_prec.ln() - 0.5 * self.u_prec * du * du;
        if r_shape > 0.0 {
            l += r_shape * self.r_rate.ln() + (r_shape - 1.0) * y[3].ln() - self.r_rate * y[3];
        }
        l
    }

    fn sample(&self, r_gamma: Option<&Gamma<f64>>, rng: &mut RngStream) -> [f64; 4] {
        // Cholesky of the covariance, the inverse of `prec`.
        let det = self.prec[0][0] * self.prec[1][1] - self.prec[0][1] * self.prec[1][0];
        let (c00, c01, c11) = (self.prec[1][1] / det, -self.prec[0][1] / det, self.prec[0][0] / det);
        let l00 = c00.sqrt();
        let l10 = c01 / l00;
        let l11 = (c11 - l10 * l10).max(0.0).sqrt();
        let (z0, z1) = (rng.std_normal(), rng.std_normal());
        [
            self.mean[0] + l00 * z0,
            self.mean[1] + l10 * z0 + l11 * z1,
            self.u_mean + rng.std_normal() / self.u_prec.sqrt(),
            r_gamma.map_or(0.0, |g| rng.sample(g) / self.r_rate),
        ]
    }
}

/// Monte Carlo `int min(P(x_j, .), P(x_j', .))` over pairs of box corners and centre.
pub fn overlap_oracle_mc(bx: &SmallSetBox, ds: &DataSet, cfg: &ModelConfig, n_samples: usize, seed: u64) -> Result<OverlapEstimate> {
    pair_overlap_mc(&bx.corners(), ds, cfg, n_samples, seed)
}

/// Pairwise overlaps of the exact one-sweep laws.
///
/// Importance sampling from the normalized geometric mean `r = sqrt(p q) / BC`, so that
/// `int min(p, q) = BC E_r exp(-|ln p - ln q| / 2)` with weights bounded by `BC`.
pub fn pair_overlap_mc(states: &[SuffState], ds: &DataSet, cfg: &ModelConfig, n_samples: usize, seed: u64) -> Result<OverlapEstimate> {
    if n_samples < 2 || states.len() < 2 {
        return Err(invalid("need at least two samples and two states"));
    }
    cfg.validate()?;
    let r_shape = (ds.n() - 2) as f64 / 2.0;
    let r_gamma = if r_shape > 0.0 {
        Some(Gamma::new(r_shape, 1.0).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let laws: Vec<SweepLaw> = states.iter().map(|x| SweepLaw::new(*x, ds, cfg.v)).collect();
    const CHUNK: usize = 4096;
    let chunks = n_samples.div_ceil(CHUNK);
    let mut pairs = Vec::new();
    let mut pair_index = 0;
    for j in 0..states.len() {
        for jj in j + 1..states.len() {
            let (p, q) = (&laws[j], &laws[jj]);
            let r = p.geometric_mean(q);
            let at = [r.mean[0], r.mean[1], r.u_mean, if r_shape > 0.0 { r_shape / r.r_rate } else { 0.0 }];
            let ln_bc = 0.5 * (p.ln_density(&at, r_shape) + q.ln_density(&at, r_shape)) - r.ln_density(&at, r_shape);
            let per_chunk: Vec<Result<Vec<f64>>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = RngStream::derived(seed, crate::simulation::domain::OVERLAP, (pair_index * chunks + c) as u64);
                    let count = CHUNK.min(n_samples - c * CHUNK);
                    (0..count)
                        .map(|_| {
                            let y = r.sample(r_gamma.as_ref(), &mut rng);
                            let diff = p.ln_density(&y, r_shape) - q.ln_density(&y, r_shape);
                            if !diff.is_finite() {
                                return Err(Error::NonFinite { at: y[0], value: diff });
                            }
                            Ok((-0.5 * diff.abs()).exp())
                        })
                        .collect()
                })
                .collect();
            let all: Vec<f64> = per_chunk.into_iter().collect::<Result<Vec<_>>>()?.concat();
            let (m, se) = mean_se(&all);
            let bc = ln_bc.min(0.0).exp();
            pairs.push(PairOverlap {
                from: j,
                to: jj,
                overlap: (bc * m).min(1.0),
                se: bc * se,
            });
            pair_index += 1;
        }
    }
    let min = *pairs
        .iter()
        .min_by(|a, b| a.overlap.total_cmp(&b.overlap))
        .ok_or_else(|| invalid("no pairs"))?;
    Ok(OverlapEstimate {
        states: states.to_vec(),
        pairs,
        min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon_quadrature: f64,
    pub epsilon_mc_overlap: f64,
    pub mc_standard_error: f64,
}

/// Quadrature `eps` checked against the overlap oracle; errors if the lower bound exceeds it.
pub fn epsilon_report(
    bx: &SmallSetBox,
    ds: &DataSet,
    cfg: &ModelConfig,
    quad: &QuadratureSpec,
    n_samples: usize,
    seed: u64,
) -> Result<EpsilonReport> {
    let eps = epsilon_lower_bound(bx, ds, cfg, quad)?;
    let oracle = overlap_oracle_mc(bx, ds, cfg, n_samples, seed)?;
    let report = EpsilonReport {
        epsilon_quadrature: eps.epsilon,
        epsilon_mc_overlap: oracle.min.overlap,
        mc_standard_error: oracle.min.se,
    };
    if report.epsilon_quadrature > report.epsilon_mc_overlap + 3.0 * report.mc_standard_error {
        return Err(Error::Numerical(format!(
            "eps = {:e} exceeds the overlap oracle {:e} + 3 SE",
            report.epsilon_quadrature, report.epsilon_mc_overlap
        )));
    }
    Ok(report)
}
