//! Per-bit delay engine: Shannon capacity, mean interference, the coupled
//! fixed point for the Palm-expected ideal per-bit delays of both tiers, and
//! the resulting utilizations.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{CellIntegralCache, CellIntegrals, TierDensities};
use crate::numerics::{
    integrate_1d, solve_fixed_point, FixedPoint, FixedPointSettings, NumericsError, PanelRule,
    QuadratureSettings,
};
use crate::scenario::RadioParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid slot state: {0}")]
    InvalidState(String),
    #[error("capacity is singular at r = 0")]
    ZeroDistance,
}

pub type Result<T> = std::result::Result<T, AnalyticError>;

/// Densities and WPS weight of one region in one time slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotState {
    pub lambda_u: f64,
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub phi: f64,
}

impl SlotState {
    pub fn new(lambda_u: f64, lambda_s: f64, lambda_m: f64, phi: f64) -> Self {
        Self {
            lambda_u,
            lambda_m,
            lambda_s,
            phi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AnalyticError::InvalidState(m.to_string()));
        if !(self.lambda_u > 0.0 && self.lambda_u.is_finite()) {
            return bad("lambda_u must be positive");
        }
        if !(self.lambda_s >= 0.0 && self.lambda_m >= 0.0)
            || !(self.lambda_s + self.lambda_m).is_finite()
        {
            return bad("BS densities must be finite and nonnegative");
        }
        if self.lambda_s + self.lambda_m <= 0.0 {
            return bad("at least one tier must be deployed");
        }
        if self.lambda_m > 0.0 && self.lambda_s <= 0.0 {
            return bad("MBSs need SBSs to host their backhaul");
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return bad("phi must be finite and nonnegative");
        }
        if self.lambda_m > 0.0 && self.phi <= 0.0 {
            return bad("phi must be positive when MBSs are present");
        }
        if self.lambda_u < self.lambda_s + self.lambda_m {
            log::debug!(
                "user density {:e} below BS density {:e}; many cells will be empty",
                self.lambda_u,
                self.lambda_s + self.lambda_m
            );
        }
        Ok(())
    }

    pub fn densities(&self, radio: &RadioParams) -> TierDensities {
        TierDensities::from_radio(self.lambda_s, self.lambda_m, radio)
    }
}

/// Fixed-point outputs for one region and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySolution {
    pub tau_bar_m: f64,
    pub tau_bar_s: f64,
    pub util_m: f64,
    pub util_s: f64,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

impl DelaySolution {
    pub fn qos_feasible(&self) -> bool {
        self.util_m <= 1.0 && self.util_s <= 1.0
    }
}

/// `(B/k) log2(1 + P r^-α / (N0 B/k + I))`.
pub fn capacity(r: f64, p: f64, interference: f64, radio: &RadioParams) -> Result<f64> {
    if !(r > 0.0) {
        return Err(AnalyticError::ZeroDistance);
    }
    Ok(capacity_unchecked(r, p, interference, radio))
}

fn capacity_unchecked(r: f64, p: f64, interference: f64, radio: &RadioParams) -> f64 {
    let sinr = p * r.powf(-radio.path_loss_alpha) / (radio.noise_power() + interference);
    radio.channel_bandwidth() * sinr.ln_1p() / std::f64::consts::LN_2
}

/// Mean interference at distance `r` from the serving BS:
/// `2π r^(2-α) / (k (α-2) τ0) · (P_m τ_m λ_m + P_s τ_s λ_s)`.
pub fn mean_interference(r: f64, tau_m: f64, tau_s: f64, st: &SlotState, radio: &RadioParams) -> f64 {
    let a = radio.path_loss_alpha;
    assert!(a > 2.0, "path-loss exponent must exceed 2");
    let load = radio.power_mobile_w * tau_m * st.lambda_m + radio.power_static_w * tau_s * st.lambda_s;
    2.0 * PI * r.powf(2.0 - a) / (radio.reuse_factor_k as f64 * (a - 2.0) * radio.target_delay_tau0_s) * load
}

/// Mean of a Poisson(x) count conditioned on being positive, `x / (1 - e^-x)`.
pub fn truncated_poisson_factor(x: f64) -> f64 {
    if x < 1e-8 {
        return 1.0 + 0.5 * x;
    }
    x / -(-x).exp_m1()
}

pub fn utilization(tau_bar: f64, radio: &RadioParams) -> f64 {
    tau_bar / radio.target_delay_tau0_s
}

/// Inputs shared by every evaluation of the delay map for one slot.
pub struct DelayModel<'a> {
    st: SlotState,
    radio: &'a RadioParams,
    h: CellIntegrals,
    c: f64,
    r_max: f64,
    q: QuadratureSettings,
}

impl<'a> DelayModel<'a> {
    pub fn new(
        st: &SlotState,
        radio: &'a RadioParams,
        q: &QuadratureSettings,
        cache: &CellIntegralCache,
    ) -> Result<Self> {
        st.validate()?;
        let d = st.densities(radio);
        let h = cache.integrals(&d)?;
        let c = d.serving_density();
        Ok(Self {
            st: *st,
            radio,
            h,
            c,
            r_max: q.gaussian_cutoff(c),
            q: *q,
        })
    }

    pub fn integrals(&self) -> &CellIntegrals {
        &self.h
    }

    pub fn state(&self) -> &SlotState {
        &self.st
    }

    // e^{-cπr²} c 2πr, the serving-distance density.
    fn kernel(&self, r: f64) -> f64 {
        2.0 * PI * r * self.c * (-PI * r * r * self.c).exp()
    }

    /// One application of the delay map `(τ_m, τ_s) -> (τ_m', τ_s')`.
    pub fn apply(&self, tau_m: f64, tau_s: f64) -> Result<(f64, f64)> {
        Ok(self.apply_raw(tau_m, tau_s)?)
    }

    fn apply_raw(&self, tau_m: f64, tau_s: f64) -> crate::numerics::Result<(f64, f64)> {
        let st = &self.st;
        let radio = self.radio;
        let tm = integrate_1d(
            |r| {
                if r <= 0.0 {
                    return 0.0;
                }
                let i = mean_interference(r, tau_m, tau_s, st, radio);
                let cap = capacity_unchecked(r, radio.power_mobile_w, i, radio);
                truncated_poisson_factor(st.lambda_u * self.h.h_m(r)) * self.kernel(r) / cap
            },
            0.0,
            self.r_max,
            &self.q,
        )?;
        let phi = if st.lambda_m > 0.0 { st.phi } else { 1.0 };
        let ts = integrate_1d(
            |r| {
                if r <= 0.0 {
                    return 0.0;
                }
                let i = mean_interference(r, tau_m, tau_s, st, radio);
                let cap = capacity_unchecked(r, radio.power_static_w, i, radio);
                let mut load = phi * truncated_poisson_factor(st.lambda_u * self.h.h_s(r));
                if st.lambda_m > 0.0 {
                    load += st.lambda_m * self.h.h_bh(r);
                }
                load * self.kernel(r) / (phi * cap)
            },
            0.0,
            self.r_max,
            &self.q,
        )?;
        Ok((tm, ts))
    }

    /// Starting point: mean load over the capacity at the mean serving
    /// distance without interference.
    pub fn initial_guess(&self) -> (f64, f64) {
        let st = &self.st;
        let r = 0.5 / self.c.sqrt();
        let cm = capacity_unchecked(r, self.radio.power_mobile_w, 0.0, self.radio);
        let cs = capacity_unchecked(r, self.radio.power_static_w, 0.0, self.radio);
        let tm = truncated_poisson_factor(st.lambda_u * self.h.h_m(r)) / cm;
        let mut ls = truncated_poisson_factor(st.lambda_u * self.h.h_s(r));
        if st.lambda_m > 0.0 {
            ls += st.lambda_m * self.h.h_bh(r) / st.phi;
        }
        (tm, ls / cs)
    }
}

// The outer integrals must be resolved well below the fixed-point tolerance.
fn inner_quadrature(fp: &FixedPointSettings, q: &QuadratureSettings) -> QuadratureSettings {
    q.with_rel_tol(q.rel_tol.min(1e-2 * fp.rel_tol).max(1e-14))
}

/// Solves the coupled delay equations of both tiers.
pub fn solve_delays(
    st: &SlotState,
    radio: &RadioParams,
    fp: &FixedPointSettings,
    q: &QuadratureSettings,
) -> Result<DelaySolution> {
    solve_delays_with(st, radio, fp, q, CellIntegralCache::global())
}

pub fn solve_delays_with(
    st: &SlotState,
    radio: &RadioParams,
    fp: &FixedPointSettings,
    q: &QuadratureSettings,
    cache: &CellIntegralCache,
) -> Result<DelaySolution> {
    let model = DelayModel::new(st, radio, &inner_quadrature(fp, q), cache)?;
    let (m0, s0) = model.initial_guess();
    let outcome = solve_fixed_point(
        |x| {
            let (m, s) = model.apply_raw(x[0], x[1])?;
            Ok(vec![m, s])
        },
        &[m0, s0],
        fp,
    );
    finish(outcome, radio)
}

fn finish(outcome: crate::numerics::Result<FixedPoint>, radio: &RadioParams) -> Result<DelaySolution> {
    let (x, converged, residual, iterations, history) = match outcome {
        Ok(p) => (p.x, true, p.residual, p.iterations, p.residual_history),
        Err(NumericsError::FixedPointNotConverged {
            iterations,
            residual,
            last,
        }) => (last, false, residual, iterations, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    Ok(DelaySolution {
        tau_bar_m: x[0],
        tau_bar_s: x[1],
        util_m: utilization(x[0], radio),
        util_s: utilization(x[1], radio),
        converged,
        residual,
        iterations,
        residual_history: history,
    })
}

// Panel ends in x = π c r², where the serving-distance law becomes e^-x.
const TABULATED_BREAKS: [f64; 24] = [
    0.0, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.03, 0.1, 0.3, 0.6, 1.0, 1.5, 2.2, 3.0, 4.0, 5.5, 7.5,
    10.0, 13.0, 17.0, 22.0, 28.0, 35.0, 42.25,
];

struct Node {
    weight: f64,
    // interference per unit of (P_m τ_m λ_m + P_s τ_s λ_s)
    interference: f64,
    signal: f64,
    load_m: f64,
    load_s: f64,
}

/// The delay map evaluated on a fixed rule with every `r`-dependent factor
/// precomputed; much cheaper per iteration than the adaptive map, at a
/// relative accuracy around 1e-8.
pub struct TabulatedDelayModel<'a> {
    st: SlotState,
    radio: &'a RadioParams,
    nodes: Vec<Node>,
}

impl<'a> TabulatedDelayModel<'a> {
    pub fn new(
        st: &SlotState,
        radio: &'a RadioParams,
        q: &QuadratureSettings,
        cache: &CellIntegralCache,
    ) -> Result<Self> {
        st.validate()?;
        let d = st.densities(radio);
        let h = cache.integrals(&d)?;
        let c = d.serving_density();
        let x_max = q.tail_cutoff_sigma * q.tail_cutoff_sigma;
        let mut breaks: Vec<f64> = TABULATED_BREAKS.iter().copied().filter(|&x| x < x_max).collect();
        breaks.push(x_max);
        let rule = PanelRule::new(&breaks);
        let a = radio.path_loss_alpha;
        let phi = if st.lambda_m > 0.0 { st.phi } else { 1.0 };
        let nodes = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| {
                let r = (x / (PI * c)).sqrt();
                let mut load_s = phi * truncated_poisson_factor(st.lambda_u * h.h_s(r));
                if st.lambda_m > 0.0 {
                    load_s += st.lambda_m * h.h_bh(r);
                }
                Node {
                    weight: w * (-x).exp(),
                    interference: 2.0 * PI * r.powf(2.0 - a)
                        / (radio.reuse_factor_k as f64 * (a - 2.0) * radio.target_delay_tau0_s),
                    signal: r.powf(-a),
                    load_m: truncated_poisson_factor(st.lambda_u * h.h_m(r)),
                    load_s: load_s / phi,
                }
            })
            .collect();
        Ok(Self {
            st: *st,
            radio,
            nodes,
        })
    }

    pub fn apply(&self, tau_m: f64, tau_s: f64) -> (f64, f64) {
        let radio = self.radio;
        let st = &self.st;
        let activity = radio.power_mobile_w * tau_m * st.lambda_m + radio.power_static_w * tau_s * st.lambda_s;
        let noise = radio.noise_power();
        let scale = std::f64::consts::LN_2 / radio.channel_bandwidth();
        let (mut tm, mut ts) = (0.0, 0.0);
        for n in &self.nodes {
            let denom = noise + n.interference * activity;
            let inv_cap_m = scale / (radio.power_mobile_w * n.signal / denom).ln_1p();
            let inv_cap_s = scale / (radio.power_static_w * n.signal / denom).ln_1p();
            tm += n.weight * n.load_m * inv_cap_m;
            ts += n.weight * n.load_s * inv_cap_s;
        }
        (tm, ts)
    }
}

/// [`solve_delays_with`] on the tabulated map.
pub fn solve_delays_tabulated(
    st: &SlotState,
    radio: &RadioParams,
    fp: &FixedPointSettings,
    q: &QuadratureSettings,
    cache: &CellIntegralCache,
) -> Result<DelaySolution> {
    let model = TabulatedDelayModel::new(st, radio, q, cache)?;
    let x0 = model.apply(0.0, 0.0);
    let outcome = solve_fixed_point(
        |x| {
            let (m, s) = model.apply(x[0], x[1]);
            Ok(vec![m, s])
        },
        &[x0.0, x0.1],
        fp,
    );
    finish(outcome, radio)
}

/// Single-tier (SBS-only) delay fixed point, solved as a scalar problem.
pub fn solve_single_tier(
    lambda_u: f64,
    lambda_s: f64,
    radio: &RadioParams,
    fp: &FixedPointSettings,
    q: &QuadratureSettings,
) -> Result<f64> {
    if !(lambda_u > 0.0 && lambda_s > 0.0) {
        return Err(AnalyticError::InvalidState(
            "single-tier solve needs positive user and SBS densities".into(),
        ));
    }
    let q = inner_quadrature(fp, q);
    let h = CellIntegralCache::global().integrals(&TierDensities::new(lambda_s, 0.0, 1.0))?;
    let st = SlotState::new(lambda_u, lambda_s, 0.0, 1.0);
    let r_max = q.gaussian_cutoff(lambda_s);
    let map = |tau: f64| {
        integrate_1d(
            |r| {
                if r <= 0.0 {
                    return 0.0;
                }
                let i = mean_interference(r, 0.0, tau, &st, radio);
                let cap = capacity_unchecked(r, radio.power_static_w, i, radio);
                let kernel = 2.0 * PI * r * lambda_s * (-PI * r * r * lambda_s).exp();
                truncated_poisson_factor(lambda_u * h.h_bh(r)) * kernel / cap
            },
            0.0,
            r_max,
            &q,
        )
    };
    let x0 = map(0.0)?;
    let p = solve_fixed_point(|x| Ok(vec![map(x[0])?]), &[x0], fp)?;
    Ok(p.x[0])
}
