//! Numerical kernels shared by the analytic modules: adaptive Gauss–Kronrod
//! quadrature on finite, semi-infinite and polar domains, Brent root finding
//! and a damped fixed-point iteration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("integrand returned a non-finite value at x = {at}")]
    NonFiniteIntegrand { at: f64 },
    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {estimate:e}, error {error:e})")]
    QuadratureNotConverged {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },
    #[error("invalid integration domain [{lo}, {hi}]")]
    InvalidDomain { lo: f64, hi: f64 },
    #[error("no sign change on bracket [{lo}, {hi}] (f(lo) = {f_lo:e}, f(hi) = {f_hi:e})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder exceeded {0} iterations")]
    RootMaxIterations(usize),
    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})")]
    FixedPointNotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
    #[error("fixed-point iteration diverged at iteration {iterations} (residual {residual:e})")]
    FixedPointDiverged { iterations: usize, residual: f64 },
    #[error("map returned a non-finite component at iteration {0}")]
    NonFiniteMap(usize),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Tolerances for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Semi-infinite integrals dominated by a void-probability kernel
    /// `exp(-c*pi*x^2)` are truncated at `x = tail_cutoff_sigma / sqrt(pi*c)`.
    pub tail_cutoff_sigma: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_subdivisions: 400,
            tail_cutoff_sigma: 6.5,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(NumericsError::InvalidSettings(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol < 1.0) {
            return Err(NumericsError::InvalidSettings(format!(
                "abs_tol must lie in (0, 1), got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(NumericsError::InvalidSettings(
                "max_subdivisions must be positive".into(),
            ));
        }
        if !(self.tail_cutoff_sigma >= 3.0) {
            return Err(NumericsError::InvalidSettings(format!(
                "tail_cutoff_sigma must be at least 3, got {}",
                self.tail_cutoff_sigma
            )));
        }
        Ok(())
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    /// Truncation radius for an integrand dominated by `exp(-c*pi*x^2)`.
    pub fn gaussian_cutoff(&self, c: f64) -> f64 {
        self.tail_cutoff_sigma / (PI * c).sqrt()
    }
}

// Gauss–Kronrod 10/21 nodes and weights (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Result<Segment> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(NumericsError::NonFiniteIntegrand { at: center });
    }
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let (a, b) = (center - dx, center + dx);
        let (fa, fb) = (f(a), f(b));
        if !fa.is_finite() {
            return Err(NumericsError::NonFiniteIntegrand { at: a });
        }
        if !fb.is_finite() {
            return Err(NumericsError::NonFiniteIntegrand { at: b });
        }
        kronrod += WGK[j] * (fa + fb);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (fa + fb);
        }
    }
    let value = kronrod * half;
    let raw_err = ((kronrod - gauss) * half).abs();
    // QUADPACK-style pessimistic scaling of the Kronrod–Gauss difference.
    let error = if raw_err > 0.0 {
        let scaled = (200.0 * raw_err / value.abs().max(f64::MIN_POSITIVE)).powf(1.5);
        raw_err.max(value.abs() * scaled.min(1.0)).max(50.0 * f64::EPSILON * value.abs())
    } else {
        50.0 * f64::EPSILON * value.abs()
    };
    Ok(Segment {
        lo,
        hi,
        value,
        error,
    })
}

/// Globally adaptive bisection over a list of initial break points.
fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    breaks: &[f64],
    settings: &QuadratureSettings,
) -> Result<f64> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut total_err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let seg = gauss_kronrod(f, w[0], w[1])?;
            total += seg.value;
            total_err += seg.error;
            heap.push(seg);
        }
    }
    let mut subdivisions = heap.len();
    loop {
        let tol = settings.abs_tol.max(settings.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(total);
        }
        if subdivisions >= settings.max_subdivisions {
            return Err(NumericsError::QuadratureNotConverged {
                estimate: total,
                error: total_err,
                subdivisions,
            });
        }
        let Some(worst) = heap.pop() else {
            return Ok(total);
        };
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // Interval exhausted at machine precision; accept what we have.
            return Ok(total);
        }
        let left = gauss_kronrod(f, worst.lo, mid)?;
        let right = gauss_kronrod(f, mid, worst.hi)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
    }
}

/// Integrates `f` over `[lo, hi]`; `hi` may be `f64::INFINITY`, in which case
/// the tail is mapped onto a finite interval with `x = lo + t / (1 - t)`.
pub fn integrate_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    settings: &QuadratureSettings,
) -> Result<f64> {
    integrate_1d_with_breaks(&mut f, lo, hi, &[], settings)
}

/// Fixed composite rule: the 21-point Kronrod rule on every panel between
/// consecutive `breaks`. Useful when the same integral is evaluated many
/// times with a slowly changing integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(breaks: &[f64]) -> Self {
        let mut nodes = Vec::with_capacity(21 * breaks.len());
        let mut weights = Vec::with_capacity(21 * breaks.len());
        for w in breaks.windows(2) {
            assert!(w[1] > w[0], "panel breaks must increase");
            let center = 0.5 * (w[0] + w[1]);
            let half = 0.5 * (w[1] - w[0]);
            for j in 0..10 {
                nodes.push(center - half * XGK[j]);
                weights.push(half * WGK[j]);
            }
            nodes.push(center);
            weights.push(half * WGK[10]);
            for j in (0..10).rev() {
                nodes.push(center + half * XGK[j]);
                weights.push(half * WGK[j]);
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// As [`integrate_1d`], with interior points where the integrand is known to
/// be non-smooth.
pub fn integrate_1d_with_breaks<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    interior: &[f64],
    settings: &QuadratureSettings,
) -> Result<f64> {
    if lo.is_nan() || hi.is_nan() || !lo.is_finite() || hi < lo {
        return Err(NumericsError::InvalidDomain { lo, hi });
    }
    if hi == lo {
        return Ok(0.0);
    }
    if hi.is_infinite() {
        let mut g = |t: f64| {
            let s = 1.0 - t;
            f(lo + t / s) / (s * s)
        };
        let mut breaks = vec![0.0];
        breaks.extend(
            interior
                .iter()
                .filter(|&&b| b > lo)
                .map(|&b| (b - lo) / (1.0 + b - lo)),
        );
        breaks.push(1.0);
        breaks.sort_by(f64::total_cmp);
        return adaptive(&mut g, &breaks, settings);
    }
    let mut breaks = vec![lo];
    breaks.extend(interior.iter().copied().filter(|&b| b > lo && b < hi));
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    adaptive(f, &breaks, settings)
}

/// `∫_0^{x_max} ∫_0^{2π} f(x, θ) x dθ dx` with `x_max = tail_cutoff_sigma / sqrt(π c)`,
/// for integrands decaying at least like `exp(-c π x²)`.
pub fn integrate_2d_polar<F: Fn(f64, f64) -> f64>(
    f: F,
    decay_c: f64,
    settings: &QuadratureSettings,
) -> Result<f64> {
    if !(decay_c > 0.0) {
        return Err(NumericsError::InvalidSettings(format!(
            "decay constant must be positive, got {decay_c}"
        )));
    }
    let x_max = settings.gaussian_cutoff(decay_c);
    integrate_polar_disk(f, x_max, &[0.0, 2.0 * PI], settings)
}

/// Polar integral over the disk of radius `x_max`, splitting the angular range
/// at the supplied break points (which must start at the lower and end at the
/// upper angular limit).
pub fn integrate_polar_disk<F: Fn(f64, f64) -> f64>(
    f: F,
    x_max: f64,
    angle_breaks: &[f64],
    settings: &QuadratureSettings,
) -> Result<f64> {
    let inner_settings = QuadratureSettings {
        rel_tol: (settings.rel_tol * 0.1).max(1e-14),
        ..*settings
    };
    let mut failure = None;
    let mut radial = |x: f64| {
        if failure.is_some() {
            return 0.0;
        }
        let mut ang = |theta: f64| f(x, theta);
        match adaptive(&mut ang, angle_breaks, &inner_settings) {
            Ok(v) => v * x,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    let value = integrate_1d(&mut radial, 0.0, x_max, settings)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Brent's method on a sign-changing bracket.
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, bracket: (f64, f64), rel_tol: f64) -> Result<f64> {
    const MAX_ITERS: usize = 200;
    let (mut a, mut b) = bracket;
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITERS {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * rel_tol * b.abs().max(f64::MIN_POSITIVE);
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(NumericsError::NonFiniteIntegrand { at: b });
        }
    }
    Err(NumericsError::RootMaxIterations(MAX_ITERS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSettings {
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Relaxation weight on the new iterate; 1.0 is plain Picard iteration.
    pub damping: f64,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iters: 500,
            damping: 1.0,
        }
    }
}

impl FixedPointSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(NumericsError::InvalidSettings(format!(
                "fixed-point rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(NumericsError::InvalidSettings(
                "max_iters must be positive".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(NumericsError::InvalidSettings(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Result of a converged fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Residual `max_i |map(x)_i - x_i| / |x_i|` of every evaluated iterate.
    pub residual_history: Vec<f64>,
    /// Damping actually used for the final run (after any fallback).
    pub damping: f64,
}

fn relative_residual(x: &[f64], fx: &[f64]) -> f64 {
    x.iter()
        .zip(fx)
        .map(|(&a, &b)| (b - a).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn run_fixed_point<M: FnMut(&[f64]) -> Result<Vec<f64>>>(
    map: &mut M,
    x0: &[f64],
    rel_tol: f64,
    max_iters: usize,
    damping: f64,
) -> Result<FixedPoint> {
    let mut x = x0.to_vec();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_step = f64::INFINITY;
    for it in 0..max_iters {
        let fx = map(&x)?;
        if fx.len() != x.len() || fx.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteMap(it));
        }
        let residual = relative_residual(&x, &fx);
        history.push(residual);
        if residual <= rel_tol {
            return Ok(FixedPoint {
                x,
                residual,
                iterations: it,
                residual_history: history,
                damping,
            });
        }
        // The relative residual saturates on runaway iterates, so the absolute
        // step is watched as well.
        let step = x.iter().zip(&fx).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        best = best.min(residual);
        best_step = best_step.min(step);
        if it > 5 && (residual > 10.0 * best || step > 10.0 * best_step) {
            return Err(NumericsError::FixedPointDiverged {
                iterations: it,
                residual,
            });
        }
        for (xi, fi) in x.iter_mut().zip(&fx) {
            *xi = (1.0 - damping) * *xi + damping * fi;
        }
    }
    let residual = *history.last().unwrap_or(&f64::INFINITY);
    Err(NumericsError::FixedPointNotConverged {
        iterations: max_iters,
        residual,
        last: x,
    })
}

/// Damped iteration `x <- (1 - w) x + w map(x)` until the componentwise relative
/// residual falls below `rel_tol`. On detected divergence the run restarts from
/// `x0` with half the damping.
pub fn solve_fixed_point<M: FnMut(&[f64]) -> Result<Vec<f64>>>(
    mut map: M,
    x0: &[f64],
    settings: &FixedPointSettings,
) -> Result<FixedPoint> {
    settings.validate()?;
    match run_fixed_point(&mut map, x0, settings.rel_tol, settings.max_iters, settings.damping) {
        Err(NumericsError::FixedPointDiverged { .. }) if settings.damping > 0.5 => {
            log::debug!("fixed point diverged; retrying with damping 0.5");
            run_fixed_point(&mut map, x0, settings.rel_tol, settings.max_iters, 0.5)
        }
        other => other,
    }
}

/// Natural cubic spline through `(xs[i], ys[i])` with strictly increasing `xs`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() == ys.len() && xs.len() >= 2, "spline needs >= 2 nodes");
        let n = xs.len();
        let mut second = vec![0.0; n];
        let mut u = vec![0.0; n];
        for i in 1..n - 1 {
            let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            let p = sig * second[i - 1] + 2.0;
            second[i] = (sig - 1.0) / p;
            let dy = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) - (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
            u[i] = (6.0 * dy / (xs[i + 1] - xs[i - 1]) - sig * u[i - 1]) / p;
        }
        second[n - 1] = 0.0;
        for k in (0..n - 1).rev() {
            second[k] = second[k] * second[k + 1] + u[k];
        }
        Self { xs, ys, second }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Evaluates the spline; outside the node range the end values are held.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let hi = self.xs.partition_point(|&v| v < x).clamp(1, n - 1);
        let lo = hi - 1;
        let h = self.xs[hi] - self.xs[lo];
        let a = (self.xs[hi] - x) / h;
        let b = (x - self.xs[lo]) / h;
        a * self.ys[lo]
            + b * self.ys[hi]
            + ((a * a * a - a) * self.second[lo] + (b * b * b - b) * self.second[hi]) * h * h / 6.0
    }
}
