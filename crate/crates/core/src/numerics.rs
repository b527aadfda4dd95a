//! Quadrature, scalar minimization, special functions and seeded random streams.
//!
//! Everything downstream evaluates densities that live many orders of magnitude
//! below one, so the quadrature contract is relative-first: an interval is done
//! once its Kronrod/Gauss gap is below `max(abs_tol, rel_tol * |total|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 1_000_000,
        }
    }
}

impl QuadratureSpec {
    /// Tolerance suited to integrands far below one: only the relative part bites.
    pub fn relative(rel_tol: f64) -> Self {
        Self {
            abs_tol: f64::MIN_POSITIVE,
            rel_tol,
            max_subdivisions: 1_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_subdivisions == 0 {
            return Err(invalid(format!("quadrature spec {self:?} must have positive tolerances")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval<F: FnMut(f64) -> f64>(f: &mut F, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite { at: x, value: y })
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Panel> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = eval(f, c)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = eval(f, c - dx)?;
        let f2 = eval(f, c + dx)?;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * h;
    let roundoff = 50.0 * f64::EPSILON * abs_sum * h.abs();
    let error = ((kronrod - gauss) * h).abs().max(roundoff);
    Ok(Panel { a, b, value, error })
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    integrate_panels(f, &[a, b], spec)
}

/// Like [`integrate`], with the interval pre-split at the given ascending breakpoints.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], spec: &QuadratureSpec) -> Result<QuadResult> {
    spec.validate()?;
    if breaks.len() < 2 {
        return Err(invalid("need at least two breakpoints"));
    }
    for w in breaks.windows(2) {
        if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
            return Err(invalid(format!("interval [{}, {}] is not finite and ordered", w[0], w[1])));
        }
    }
    let mut heap = BinaryHeap::new();
    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    let mut value = 0.0;
    let mut error = 0.0;
    for w in breaks.windows(2) {
        let p = gk15(&mut f, w[0], w[1])?;
        value += p.value;
        error += p.error;
        heap.push(p);
    }
    let mut subdivisions = 0;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * value.abs());
        if error <= tol {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= spec.max_subdivisions {
            heap.push(worst);
            break;
        }
        if !(worst.a < mid && mid < worst.b) {
            frozen_value += worst.value;
            frozen_error += worst.error;
            continue;
        }
        let left = gk15(&mut f, worst.a, mid)?;
        let right = gk15(&mut f, mid, worst.b)?;
        subdivisions += 1;
        // Recompute totals from scratch now and then to shed accumulated cancellation.
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if subdivisions % 256 == 0 {
            value = frozen_value + heap.iter().map(|p| p.value).sum::<f64>();
            error = frozen_error + heap.iter().map(|p| p.error).sum::<f64>();
        }
    }
    value = frozen_value + heap.iter().map(|p| p.value).sum::<f64>();
    error = frozen_error + heap.iter().map(|p| p.error).sum::<f64>();
    let tol = spec.abs_tol.max(spec.rel_tol * value.abs());
    if error > tol {
        return Err(Error::QuadratureNotConverged {
            estimate: value,
            error_estimate: error,
            subdivisions,
        });
    }
    Ok(QuadResult {
        value,
        error_estimate: error,
        subdivisions,
    })
}

/// Integral over `(0, inf)` through `u = x / (1 + x)`.
///
/// `breaks_x` are optional interior points in x (e.g. the integrand's mode) at
/// which the mapped interval is pre-split.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks_x: &[f64],
    panels: usize,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    let mut us: Vec<f64> = breaks_x
        .iter()
        .filter(|x| x.is_finite() && **x > 0.0)
        .map(|x| x / (1.0 + x))
        .collect();
    let panels = panels.max(1);
    us.extend((0..=panels).map(|i| i as f64 / panels as f64));
    us.sort_by(f64::total_cmp);
    us.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    integrate_panels(
        |u| {
            let one_minus = 1.0 - u;
            let x = u / one_minus;
            let y = f(x);
            if y == 0.0 {
                0.0
            } else {
                y / (one_minus * one_minus)
            }
        },
        &us,
        spec,
    )
}

/// Evenly spaced breakpoints for [`integrate_panels`].
pub fn linspace(a: f64, b: f64, intervals: usize) -> Vec<f64> {
    let m = intervals.max(1);
    (0..=m).map(|i| if i == m { b } else { a + (b - a) * i as f64 / m as f64 }).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub const DEFAULT_GRID: usize = 1001;

/// Minimum of `f` over `[lo, hi]`: dense grid scan then golden-section refinement
/// inside the bracket around the best grid point. Not certified for multimodal `f`.
pub fn minimize_scalar<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    minimize_scalar_grid(f, lo, hi, tol, DEFAULT_GRID)
}

pub fn minimize_scalar_grid<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    grid: usize,
) -> Result<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(invalid(format!("minimization interval [{lo}, {hi}] is empty or not finite")));
    }
    if !(tol > 0.0) || grid < 3 {
        return Err(invalid("minimization needs tol > 0 and at least 3 grid points"));
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let xs = |i: usize| if i + 1 == grid { hi } else { lo + step * i as f64 };
    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for i in 0..grid {
        let x = xs(i);
        let y = eval(&mut f, x)?;
        if y < best {
            best = y;
            best_i = i;
        }
    }
    let mut best_x = xs(best_i);
    let mut a = xs(best_i.saturating_sub(1));
    let mut b = xs((best_i + 1).min(grid - 1));
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(&mut f, c)?;
    let mut fd = eval(&mut f, d)?;
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(&mut f, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(&mut f, d)?;
        }
    }
    for (x, y) in [(c, fc), (d, fd)] {
        if y < best {
            best = y;
            best_x = x;
        }
    }
    Ok((best_x, best))
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Upper regularized incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        statrs::function::gamma::gamma_ur(a, x)
    }
}

/// P(X <= x) for X ~ IG(shape, scale), i.e. 1/X ~ Gamma(shape, rate = scale).
pub fn inverse_gamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_q(shape, scale / x)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * z * z / var - 0.5 * var.ln() - LN_SQRT_2PI
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    normal_ln_pdf(x, mean, var).exp()
}

/// Log density of a chi-square with `dof` degrees of freedom.
pub fn chi_square_ln_pdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = 0.5 * dof;
    (k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// `ln(exp(x) - 1)` for x > 0 without overflow.
pub fn ln_expm1(x: f64) -> f64 {
    if x > 35.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Seeded, stream-indexed generator. Every consumer gets its own stream index
/// so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    /// Stream `index` inside a named domain; domains keep module draws disjoint.
    pub fn derived(seed: u64, domain: u32, index: u64) -> Self {
        Self::new(seed, (u64::from(domain) << 40) | (index & ((1 << 40) - 1)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn sample<T, D: Distribution<T>>(&mut self, d: &D) -> T {
        d.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn draw_normal(stream: &mut RngStream, mean: f64, var: f64) -> Result<f64> {
    if !(mean.is_finite() && var.is_finite() && var >= 0.0) {
        return Err(invalid(format!("normal needs finite mean and variance >= 0, got ({mean}, {var})")));
    }
    Ok(mean + var.sqrt() * stream.std_normal())
}

/// Gamma with the given shape and rate.
pub fn draw_gamma(stream: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(invalid(format!("gamma needs shape > 0 and rate > 0, got ({shape}, {rate})")));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| invalid(e.to_string()))?;
    Ok(stream.sample(&g))
}

/// Inverse gamma: reciprocal of Gamma(shape, rate = scale).
pub fn draw_inverse_gamma(stream: &mut RngStream, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return Err(invalid(format!("inverse gamma needs shape > 0 and scale > 0, got ({shape}, {scale})")));
    }
    let g = Gamma::new(shape, 1.0).map_err(|e| invalid(e.to_string()))?;
    Ok(scale / stream.sample(&g))
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Batch-means standard error for an autocorrelated series.
pub fn batch_means_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let b = batches.max(2).min(xs.len().max(2));
    let len = xs.len() / b;
    if len == 0 {
        return mean_se(xs);
    }
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let (m, se) = mean_se(&means);
    (m, se)
}
