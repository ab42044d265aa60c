//! Backhaul QoS of the MBS links: the law of the ideal backhaul per-bit delay,
//! the density of the per-bit delay demanded by an MBS's users, and the
//! resulting violation probability.

use std::f64::consts::PI;

use thiserror::Error;

use crate::analytic::{capacity, mean_interference, AnalyticError, DelaySolution, SlotState};
use crate::geometry::{CellIntegralCache, CellIntegrals};
use crate::numerics::{find_root, integrate_1d, integrate_1d_with_breaks, NumericsError, QuadratureSettings};
use crate::scenario::RadioParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackhaulError {
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("delay solution did not converge (residual {0:e})")]
    NotConverged(f64),
    #[error("backhaul analysis needs a positive MBS density")]
    NoMobiles,
    #[error("backhaul delay g(r) is not increasing near r = {at} m; cannot invert")]
    NonMonotone { at: f64 },
}

pub type Result<T> = std::result::Result<T, BackhaulError>;

/// Lower end of the inversion grid for `g`.
pub const G_GRID_MIN_R: f64 = 0.1;
pub const G_GRID_POINTS: usize = 256;

// (343/15) sqrt(7 / 2π), the normalizing constant of the Gamma(7/2, 7/2) area law.
const AREA_LAW_C: f64 = 24.135_813_804_269_166;

/// Everything the backhaul formulas need for one region and slot.
#[derive(Debug, Clone)]
pub struct BackhaulContext {
    pub st: SlotState,
    pub radio: RadioParams,
    pub delays: DelaySolution,
    h: CellIntegrals,
    grid_r: Vec<f64>,
    grid_g: Vec<f64>,
    monotone: std::result::Result<(), f64>,
}

impl BackhaulContext {
    pub fn new(st: &SlotState, radio: &RadioParams, delays: &DelaySolution) -> Result<Self> {
        Self::with_cache(st, radio, delays, &QuadratureSettings::default(), CellIntegralCache::global())
    }

    /// `q.tail_cutoff_sigma` fixes the upper end of the inversion grid,
    /// `σ / sqrt(π λ_s)`.
    pub fn with_cache(
        st: &SlotState,
        radio: &RadioParams,
        delays: &DelaySolution,
        q: &QuadratureSettings,
        cache: &CellIntegralCache,
    ) -> Result<Self> {
        st.validate()?;
        if st.lambda_m <= 0.0 {
            return Err(BackhaulError::NoMobiles);
        }
        if !delays.converged {
            return Err(BackhaulError::NotConverged(delays.residual));
        }
        let h = cache.integrals(&st.densities(radio))?;
        let mut ctx = Self {
            st: *st,
            radio: radio.clone(),
            delays: delays.clone(),
            h,
            grid_r: Vec::new(),
            grid_g: Vec::new(),
            monotone: Ok(()),
        };
        let r_max = q.gaussian_cutoff(st.lambda_s);
        let (lo, hi) = (G_GRID_MIN_R.ln(), r_max.max(1.0).ln());
        for i in 0..G_GRID_POINTS {
            let r = (lo + (hi - lo) * i as f64 / (G_GRID_POINTS - 1) as f64).exp();
            ctx.grid_r.push(r);
            ctx.grid_g.push(ctx.g(r));
        }
        if let Some(i) = ctx.grid_g.windows(2).position(|w| !(w[1] > w[0])) {
            ctx.monotone = Err(ctx.grid_r[i + 1]);
        }
        Ok(ctx)
    }

    fn g(&self, r: f64) -> f64 {
        let st = &self.st;
        let i = mean_interference(r, self.delays.tau_bar_m, self.delays.tau_bar_s, st, &self.radio);
        let c = capacity(r, self.radio.power_static_w, i, &self.radio).expect("r > 0 on the grid");
        (st.lambda_m * self.h.h_bh(r) + st.phi * st.lambda_u * self.h.h_s(r)) / c
    }

    /// Scanned `(r, g(r))` grid used for inversion.
    pub fn g_grid(&self) -> (&[f64], &[f64]) {
        (&self.grid_r, &self.grid_g)
    }

    pub fn g_is_monotone(&self) -> bool {
        self.monotone.is_ok()
    }

    /// Distance law of the SBS hosting an MBS, `1 - exp(-λ_s π y²)`.
    pub fn host_distance_cdf(&self, y: f64) -> f64 {
        -(-self.st.lambda_s * PI * y * y).exp_m1()
    }

    /// `a = τ0 (ρ λ_m + λ_s) / λ_u`, the scale of the demand per-bit delay.
    pub fn demand_scale(&self) -> f64 {
        self.radio.target_delay_tau0_s * (self.radio.rho_ms() * self.st.lambda_m + self.st.lambda_s)
            / self.st.lambda_u
    }

    /// `Ū_s = τ̄_s / τ0`.
    pub fn sbs_utilization(&self) -> f64 {
        self.delays.util_s
    }

    /// `g^{-1}(τ)` clamped to the grid range.
    pub fn g_inverse(&self, tau: f64) -> Result<f64> {
        if let Err(at) = self.monotone {
            return Err(BackhaulError::NonMonotone { at });
        }
        let (r, g) = (&self.grid_r, &self.grid_g);
        let n = g.len();
        if tau <= g[0] {
            return Ok(0.0);
        }
        if tau >= g[n - 1] {
            return Ok(r[n - 1]);
        }
        let hi = g.partition_point(|&v| v < tau);
        let lo = hi - 1;
        Ok(find_root(|x| self.g(x) - tau, (r[lo], r[hi]), 1e-12)?)
    }

    /// Probability that the backhaul link fails to deliver per-bit delay `tau`.
    fn delay_ccdf(&self, tau: f64) -> Result<f64> {
        let y = self.g_inverse(tau)?;
        Ok((-self.st.lambda_s * PI * y * y).exp())
    }
}

/// Ideal backhaul per-bit delay of an MBS at distance `r` from its SBS:
/// `(λ_m h_BH(r) + φ λ_u h_s(r)) / C(r, P_s, Ī(r))`.
pub fn bh_delay_g(r: f64, ctx: &BackhaulContext) -> Result<f64> {
    if !(r > 0.0) {
        return Err(AnalyticError::ZeroDistance.into());
    }
    Ok(ctx.g(r))
}

/// CDF of the ideal backhaul per-bit delay, `1 - exp(-λ_s π g^{-1}(τ)²)`.
pub fn bh_delay_cdf(tau: f64, ctx: &BackhaulContext) -> Result<f64> {
    if !(tau > 0.0) {
        return Ok(0.0);
    }
    Ok(1.0 - ctx.delay_ccdf(tau)?)
}

/// Density of the per-bit delay demanded by an MBS's users,
/// `a^{7/2} C t^{-9/2} exp(-7a / 2t)`.
pub fn demand_delay_pdf(tau: f64, ctx: &BackhaulContext) -> f64 {
    demand_delay_pdf_scaled(tau, ctx.demand_scale())
}

pub fn demand_delay_pdf_scaled(tau: f64, a: f64) -> f64 {
    if !(tau > 0.0) {
        return 0.0;
    }
    let z = a / tau;
    AREA_LAW_C * (3.5 * z.ln() - tau.ln() - 3.5 * z).exp()
}

/// Normalized cell-area density `C y^{5/2} exp(-7y/2)`.
pub fn area_pdf(y: f64) -> f64 {
    if !(y > 0.0) {
        return 0.0;
    }
    AREA_LAW_C * (2.5 * y.ln() - 3.5 * y).exp()
}

// Gamma(7/2, 7/2) mass beyond 40 is below 1e-55.
const AREA_Y_MAX: f64 = 40.0;

/// `∫ f_A(y) ccdf(u_s a / y) dy`, i.e. `P(τ_M > u_s τ_d)` for `τ_d = a / A`.
pub fn violation_integral<F: FnMut(f64) -> f64>(
    mut ccdf: F,
    a: f64,
    u_s: f64,
    breaks_tau: &[f64],
    q: &QuadratureSettings,
) -> Result<f64> {
    if u_s <= 0.0 {
        return Ok(1.0);
    }
    let interior: Vec<f64> = breaks_tau
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| u_s * a / t)
        .filter(|&y| y < AREA_Y_MAX)
        .collect();
    let v = integrate_1d_with_breaks(
        &mut |y: f64| {
            if y <= 0.0 {
                return 0.0;
            }
            area_pdf(y) * ccdf(u_s * a / y)
        },
        0.0,
        AREA_Y_MAX,
        &interior,
        q,
    )?;
    Ok(v.clamp(0.0, 1.0))
}

/// Probability that the backhaul per-bit delay exceeds `Ū_s τ_d`.
pub fn violation_probability(ctx: &BackhaulContext, q: &QuadratureSettings) -> Result<f64> {
    if let Err(at) = ctx.monotone {
        return Err(BackhaulError::NonMonotone { at });
    }
    let mut failure = None;
    let g = &ctx.grid_g;
    let ends = [g[0], g[g.len() - 1]];
    let v = violation_integral(
        |tau| match ctx.delay_ccdf(tau) {
            Ok(p) => p,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        ctx.demand_scale(),
        ctx.sbs_utilization(),
        &ends,
        q,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Comparison of the two sources of variance in an MBS's user count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    /// `Var(A) = (2/7) (1 / (ρ λ_m + λ_s))²`.
    pub area_variance: f64,
    pub mean_area: f64,
    /// Poisson part `λ_u E[A]`.
    pub count_variance: f64,
    /// Area part `λ_u² Var(A)`.
    pub area_term: f64,
    /// `λ_u < 1` (per m²).
    pub premise_holds: bool,
    pub area_dominates: bool,
}

pub fn variance_dominance_check(ctx: &BackhaulContext) -> VarianceReport {
    area_variance_report(ctx.st.lambda_u, ctx.st.lambda_m, ctx.st.lambda_s, ctx.radio.rho_ms())
}

pub fn area_variance_report(lambda_u: f64, lambda_m: f64, lambda_s: f64, rho: f64) -> VarianceReport {
    let mean_area = 1.0 / (rho * lambda_m + lambda_s);
    let area_variance = 2.0 / 7.0 * mean_area * mean_area;
    let count_variance = lambda_u * mean_area;
    let area_term = lambda_u * lambda_u * area_variance;
    VarianceReport {
        area_variance,
        mean_area,
        count_variance,
        area_term,
        premise_holds: lambda_u < 1.0,
        area_dominates: area_term > count_variance,
    }
}

/// `∫ f_{τ_d}` over `(0, ∞)`, evaluated in the area variable.
pub fn demand_delay_mass(a: f64, q: &QuadratureSettings) -> Result<f64> {
    Ok(integrate_1d(|t| demand_delay_pdf_scaled(t, a), 0.0, f64::INFINITY, q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::solve_delays;
    use crate::numerics::FixedPointSettings;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn radio() -> RadioParams {
        RadioParams {
            power_static_w: 10.0,
            power_mobile_w: 10.0,
            target_delay_tau0_s: 1e-3,
            noise_psd_w_per_hz: 6e-9,
            ..RadioParams::default()
        }
    }

    fn ctx(lu: f64, ls: f64, lm: f64, phi: f64) -> BackhaulContext {
        let st = SlotState::new(lu, ls, lm, phi);
        let d = solve_delays(&st, &radio(), &FixedPointSettings::default(), &QuadratureSettings::default())
            .unwrap();
        BackhaulContext::new(&st, &radio(), &d).unwrap()
    }

    #[test]
    fn area_constant() {
        let c = 343.0 / 15.0 * (7.0 / (2.0 * PI)).sqrt();
        assert!((c - AREA_LAW_C).abs() < 1e-12);
        // also the Gamma(7/2, 7/2) constant 3.5^3.5 / Γ(3.5)
        let gamma_35 = 15.0 * PI.sqrt() / 8.0;
        assert!((3.5f64.powf(3.5) / gamma_35 - AREA_LAW_C).abs() < 1e-12);
    }

    #[test]
    fn demand_pdf_normalized_with_mode() {
        let q = QuadratureSettings::default();
        let a = 2.3e-4;
        assert!((demand_delay_mass(a, &q).unwrap() - 1.0).abs() < 1e-6);
        let mode = 7.0 * a / 9.0;
        let f = |t: f64| demand_delay_pdf_scaled(t, a);
        assert!(f(mode) > f(mode * (1.0 + 1e-4)) && f(mode) > f(mode * (1.0 - 1e-4)));
    }

    #[test]
    fn g_limits_and_degeneration() {
        let c = ctx(1e-2, 3.39e-4, 3.39e-4, 0.5);
        assert!(c.g_is_monotone());
        assert!(bh_delay_g(1e-3, &c).unwrap() < 1e-3 * bh_delay_g(50.0, &c).unwrap());
        let st = c.st;
        let r = 40.0;
        let i = mean_interference(r, c.delays.tau_bar_m, c.delays.tau_bar_s, &st, &c.radio);
        let cap = capacity(r, 10.0, i, &c.radio).unwrap();
        let expected = (st.lambda_m * c.h.h_bh(r) + 0.5 * st.lambda_u * c.h.h_s(r)) / cap;
        assert!((bh_delay_g(r, &c).unwrap() / expected - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_round_trip() {
        let c = ctx(1e-2, 3.39e-4, 3.39e-4, 0.5);
        for &r in &[3.0, 17.0, 55.0, 120.0] {
            let tau = bh_delay_g(r, &c).unwrap();
            let back = c.g_inverse(tau).unwrap();
            assert!((back / r - 1.0).abs() < 1e-9, "{r} -> {back}");
        }
    }

    #[test]
    fn cdf_limits() {
        let c = ctx(1e-2, 3.39e-4, 3.39e-4, 0.5);
        assert_eq!(bh_delay_cdf(1e-30, &c).unwrap(), 0.0);
        assert!((bh_delay_cdf(1e3, &c).unwrap() - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for i in 0..100 {
            let tau = 10f64.powf(-9.0 + i as f64 * 0.07);
            let p = bh_delay_cdf(tau, &c).unwrap();
            assert!((0.0..=1.0).contains(&p) && p >= prev);
            prev = p;
        }
    }

    #[test]
    fn violation_limits() {
        let q = QuadratureSettings::default();
        assert_eq!(violation_integral(|_| 0.0, 1e-4, 0.3, &[], &q).unwrap(), 0.0);
        assert_eq!(violation_integral(|_| 0.0, 1e-4, 0.0, &[], &q).unwrap(), 1.0);
        let v = violation_integral(|_| 1.0, 1e-4, 1e-12, &[], &q).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn violation_matches_two_variable_monte_carlo() {
        let c = ctx(1e-3, 0.895e-4, 0.895e-4, 0.3);
        let v = violation_probability(&c, &QuadratureSettings::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma = Gamma::new(3.5, 1.0 / 3.5).unwrap();
        let a = c.demand_scale();
        let u = c.sbs_utilization();
        let n = 200_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let e: f64 = rng.gen();
            let r = (-(1.0 - e).ln() / (PI * c.st.lambda_s)).sqrt();
            let tau_d = a / gamma.sample(&mut rng);
            if c.g(r.max(1e-9)) > u * tau_d {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (v * (1.0 - v) / n as f64).sqrt().max(1e-6);
        assert!((p - v).abs() < 4.0 * se, "mc {p} quad {v} se {se}");
    }

    #[test]
    fn variance_report_arithmetic() {
        let r = area_variance_report(1e-2, 1e-4, 1e-4, 1.0);
        assert!((r.area_variance - 2e7 / 2.8).abs() < 1e-6);
        assert!(r.premise_holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn demand_pdf_normalization(log_a in -7.0f64..-1.0) {
            let q = QuadratureSettings::default();
            let m = demand_delay_mass(10f64.powf(log_a), &q).unwrap();
            prop_assert!((m - 1.0).abs() < 1e-6);
        }
    }
}
