//! Stochastic-geometry primitives: the exclusion area `A(r, x, θ)`, the
//! conditional mean cell integrals `h_m`, `h_s`, `h_BH`, and the law of the
//! distance to the serving base station.
//!
//! The h-integrals obey the Poisson scaling law
//! `h(r; cλ_s, cλ_m) = h(r√c; λ_s, λ_m) / c`, so they are tabulated once per
//! (mobile fraction, ρ) pair in normalized units and reused for every density.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, OnceLock, RwLock};

use crate::numerics::{integrate_polar_disk, CubicSpline, QuadratureSettings, Result};
use crate::scenario::RadioParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierDensities {
    pub lambda_s: f64,
    pub lambda_m: f64,
    pub rho_ms: f64,
}

impl TierDensities {
    pub fn new(lambda_s: f64, lambda_m: f64, rho_ms: f64) -> Self {
        assert!(
            lambda_s >= 0.0 && lambda_m >= 0.0 && lambda_s + lambda_m > 0.0,
            "densities must be nonnegative with a positive sum"
        );
        assert!(rho_ms > 0.0 && rho_ms <= 1.0, "rho_ms must lie in (0, 1]");
        Self {
            lambda_s,
            lambda_m,
            rho_ms,
        }
    }

    pub fn from_radio(lambda_s: f64, lambda_m: f64, radio: &RadioParams) -> Self {
        Self::new(lambda_s, lambda_m, radio.rho_ms())
    }

    pub fn total(&self) -> f64 {
        self.lambda_s + self.lambda_m
    }

    /// Mobile share `λ_m / (λ_s + λ_m)`.
    pub fn mobile_fraction(&self) -> f64 {
        self.lambda_m / self.total()
    }

    /// Density of the power-equivalent process, `λ_s + ρ² λ_m`.
    pub fn serving_density(&self) -> f64 {
        self.lambda_s + self.rho_ms * self.rho_ms * self.lambda_m
    }
}

/// Area of the intersection of two disks with radii `r1`, `r2` whose centers
/// are `d` apart.
pub fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    if d <= (r1 - r2).abs() {
        let m = r1.min(r2);
        return PI * m * m;
    }
    let c1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0);
    let c2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0);
    let k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    r1 * r1 * c1.acos() + r2 * r2 * c2.acos() - 0.5 * k.max(0.0).sqrt()
}

/// Area of the disk centered at polar point `(x, θ)` with radius `x` that is
/// not covered by the disk of radius `r` centered at `(0, -r)`.
pub fn exclusion_area(r: f64, x: f64, theta: f64) -> f64 {
    assert!(
        !(r.is_nan() || x.is_nan() || theta.is_nan()),
        "exclusion_area: NaN input"
    );
    let full = PI * x * x;
    if r <= 0.0 || x <= 0.0 {
        return full;
    }
    let d = (x * x + r * r + 2.0 * x * r * theta.sin()).max(0.0).sqrt();
    let overlap = lens_area(r, x, d);
    (full - overlap).clamp((full - PI * r * r).max(0.0), full)
}

fn default_quadrature() -> QuadratureSettings {
    QuadratureSettings::default().with_rel_tol(1e-8)
}

// Both h-integrands are even under θ -> π - θ, so only [-π/2, π/2] is integrated.
fn half_plane_integral<F: Fn(f64, f64) -> f64>(
    f: F,
    x_max: f64,
    q: &QuadratureSettings,
) -> Result<f64> {
    Ok(2.0 * integrate_polar_disk(f, x_max, &[-FRAC_PI_2, 0.0, FRAC_PI_2], q)?)
}

// exp(-Σ λ A) ≤ exp(π r² Σλ) exp(-c π x²), with c the x² coefficient.
fn tail_radius(r: f64, lambda_sum: f64, c: f64, q: &QuadratureSettings) -> f64 {
    let s = q.tail_cutoff_sigma;
    ((s * s + PI * r * r * lambda_sum) / (PI * c)).sqrt()
}

/// `h_m(r) = ∫∫ exp(-λ_s A(r, x/ρ, θ) - λ_m A(r, x, θ)) x dθ dx` by direct
/// quadrature.
pub fn mean_cell_integral_m(r: f64, d: &TierDensities, q: &QuadratureSettings) -> Result<f64> {
    let rho = d.rho_ms;
    let c = d.lambda_m + d.lambda_s / (rho * rho);
    let x_max = tail_radius(r, d.total(), c, q);
    half_plane_integral(
        |x, t| (-d.lambda_s * exclusion_area(r, x / rho, t) - d.lambda_m * exclusion_area(r, x, t)).exp(),
        x_max,
        q,
    )
}

/// `h_s(r) = ∫∫ exp(-λ_s A(r, x, θ) - λ_m A(r, xρ, θ)) x dθ dx`.
pub fn mean_cell_integral_s(r: f64, d: &TierDensities, q: &QuadratureSettings) -> Result<f64> {
    let rho = d.rho_ms;
    let c = d.lambda_s + d.lambda_m * rho * rho;
    let x_max = tail_radius(r, d.total(), c, q);
    half_plane_integral(
        |x, t| {
            let mut e = -d.lambda_s * exclusion_area(r, x, t);
            if d.lambda_m > 0.0 {
                e -= d.lambda_m * exclusion_area(r, x * rho, t);
            }
            e.exp()
        },
        x_max,
        q,
    )
}

/// `h_BH(r) = ∫∫ exp(-λ_s A(r, x, θ)) x dθ dx`.
pub fn mean_cell_integral_bh(r: f64, lambda_s: f64, q: &QuadratureSettings) -> Result<f64> {
    assert!(lambda_s > 0.0, "lambda_s must be positive");
    let x_max = tail_radius(r, lambda_s, lambda_s, q);
    half_plane_integral(|x, t| (-lambda_s * exclusion_area(r, x, t)).exp(), x_max, q)
}

/// Density of the distance to the serving base station,
/// `2πr c exp(-π r² c)` with `c = λ_s + ρ² λ_m`.
pub fn serving_distance_pdf(r: f64, d: &TierDensities) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    let c = d.serving_density();
    2.0 * PI * r * c * (-PI * r * r * c).exp()
}

pub fn serving_distance_cdf(r: f64, d: &TierDensities) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    -(-PI * r * r * d.serving_density()).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Mobile,
    Static,
    Backhaul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TableKey {
    kind: Kind,
    fraction_bits: u64,
    rho_bits: u64,
}

/// Normalized h-table: `log h` against `log u` with `u = r √Λ`, where `Λ` is
/// the normalizing density.
#[derive(Debug)]
pub struct CellTable {
    spline: CubicSpline,
    end_slope: f64,
}

impl CellTable {
    fn build<F: Fn(f64) -> Result<f64>>(u_max: f64, nodes: usize, h: F) -> Result<Self> {
        let lo = TABLE_U_MIN.ln();
        let hi = u_max.ln();
        let mut xs = Vec::with_capacity(nodes);
        let mut ys = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let lu = lo + (hi - lo) * i as f64 / (nodes - 1) as f64;
            xs.push(lu);
            ys.push(h(lu.exp())?.ln());
        }
        let n = xs.len();
        let end_slope = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
        Ok(Self {
            spline: CubicSpline::new(xs, ys),
            end_slope,
        })
    }

    /// Normalized value; below the grid the first node is held, above it the
    /// last log-log slope is continued.
    pub fn eval(&self, u: f64) -> f64 {
        let lu = u.max(TABLE_U_MIN).ln();
        let (_, hi) = self.spline.domain();
        if lu > hi {
            return (self.spline.eval(hi) + self.end_slope * (lu - hi)).exp();
        }
        self.spline.eval(lu).exp()
    }
}

const TABLE_U_MIN: f64 = 1e-3;
const TABLE_U_CAP: f64 = 60.0;

/// Memoized normalized tables keyed on (kind, mobile fraction, ρ).
///
/// With `fraction_grid = Some(n)` the mobile fraction is snapped to the two
/// neighbouring nodes of an `n`-interval uniform grid and the normalized values
/// are linearly interpolated, which bounds the number of tables the optimizer
/// can trigger.
#[derive(Debug)]
pub struct CellIntegralCache {
    quadrature: QuadratureSettings,
    nodes: usize,
    fraction_grid: Option<usize>,
    tables: RwLock<HashMap<TableKey, Arc<CellTable>>>,
}

impl CellIntegralCache {
    pub fn new(quadrature: QuadratureSettings, nodes: usize, fraction_grid: Option<usize>) -> Self {
        assert!(nodes >= 4, "need at least 4 table nodes");
        Self {
            quadrature,
            nodes,
            fraction_grid,
            tables: RwLock::new(HashMap::new()),
        }
    }

    /// Process-wide cache with exact fractions, 64 nodes and 1e-8 quadrature.
    pub fn global() -> &'static CellIntegralCache {
        static CACHE: OnceLock<CellIntegralCache> = OnceLock::new();
        CACHE.get_or_init(|| CellIntegralCache::new(default_quadrature(), 64, None))
    }

    /// Process-wide cache on a 32-interval fraction grid (optimizer use).
    pub fn global_gridded() -> &'static CellIntegralCache {
        static CACHE: OnceLock<CellIntegralCache> = OnceLock::new();
        CACHE.get_or_init(|| CellIntegralCache::new(default_quadrature(), 64, Some(32)))
    }

    pub fn len(&self) -> usize {
        self.tables.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn table(&self, kind: Kind, fraction: f64, rho: f64) -> Result<Arc<CellTable>> {
        let key = TableKey {
            kind,
            fraction_bits: fraction.to_bits(),
            rho_bits: rho.to_bits(),
        };
        if let Some(t) = self.tables.read().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let table = Arc::new(self.build(kind, fraction, rho)?);
        let mut w = self.tables.write().expect("cache lock");
        Ok(w.entry(key).or_insert(table).clone())
    }

    fn build(&self, kind: Kind, p: f64, rho: f64) -> Result<CellTable> {
        let q = &self.quadrature;
        let sigma = q.tail_cutoff_sigma;
        match kind {
            Kind::Backhaul => {
                let u_max = (sigma / PI.sqrt()).min(TABLE_U_CAP);
                CellTable::build(u_max, self.nodes, |u| mean_cell_integral_bh(u, 1.0, q))
            }
            Kind::Mobile | Kind::Static => {
                let d = TierDensities {
                    lambda_s: 1.0 - p,
                    lambda_m: p,
                    rho_ms: rho,
                };
                // Covers both the serving-distance kernel and the backhaul-distance range.
                let mut c = d.serving_density();
                if d.lambda_s > 0.0 {
                    c = c.min(d.lambda_s);
                }
                let u_max = (sigma / (PI * c).sqrt()).min(TABLE_U_CAP);
                if kind == Kind::Mobile {
                    CellTable::build(u_max, self.nodes, |u| mean_cell_integral_m(u, &d, q))
                } else {
                    CellTable::build(u_max, self.nodes, |u| mean_cell_integral_s(u, &d, q))
                }
            }
        }
    }

    fn tier_tables(&self, kind: Kind, d: &TierDensities) -> Result<Blend> {
        let p = d.mobile_fraction();
        match self.fraction_grid {
            None => Ok(Blend::single(self.table(kind, p, d.rho_ms)?)),
            Some(n) => {
                let pos = p * n as f64;
                let i = (pos.floor() as usize).min(n - 1);
                let w = pos - i as f64;
                let lo = self.table(kind, i as f64 / n as f64, d.rho_ms)?;
                if w <= 0.0 {
                    return Ok(Blend::single(lo));
                }
                let hi = self.table(kind, (i + 1) as f64 / n as f64, d.rho_ms)?;
                Ok(Blend {
                    lo,
                    hi: Some(hi),
                    w,
                })
            }
        }
    }

    /// Cheap evaluators for `h_m`, `h_s` and `h_BH` at the given densities.
    pub fn integrals(&self, d: &TierDensities) -> Result<CellIntegrals> {
        let bh = if d.lambda_s > 0.0 {
            Some(self.table(Kind::Backhaul, 0.0, 1.0)?)
        } else {
            None
        };
        Ok(CellIntegrals {
            densities: *d,
            m: self.tier_tables(Kind::Mobile, d)?,
            s: self.tier_tables(Kind::Static, d)?,
            bh,
        })
    }
}

#[derive(Debug, Clone)]
struct Blend {
    lo: Arc<CellTable>,
    hi: Option<Arc<CellTable>>,
    w: f64,
}

impl Blend {
    fn single(t: Arc<CellTable>) -> Self {
        Self {
            lo: t,
            hi: None,
            w: 0.0,
        }
    }

    fn eval(&self, u: f64) -> f64 {
        match &self.hi {
            None => self.lo.eval(u),
            Some(hi) => (1.0 - self.w) * self.lo.eval(u) + self.w * hi.eval(u),
        }
    }
}

/// Tabulated h-integrals for one set of tier densities.
#[derive(Debug, Clone)]
pub struct CellIntegrals {
    densities: TierDensities,
    m: Blend,
    s: Blend,
    bh: Option<Arc<CellTable>>,
}

impl CellIntegrals {
    pub fn densities(&self) -> &TierDensities {
        &self.densities
    }

    pub fn h_m(&self, r: f64) -> f64 {
        let lam = self.densities.total();
        self.m.eval(r * lam.sqrt()) / lam
    }

    pub fn h_s(&self, r: f64) -> f64 {
        let lam = self.densities.total();
        self.s.eval(r * lam.sqrt()) / lam
    }

    /// Zero when there are no SBSs.
    pub fn h_bh(&self, r: f64) -> f64 {
        match &self.bh {
            None => 0.0,
            Some(t) => {
                let ls = self.densities.lambda_s;
                t.eval(r * ls.sqrt()) / ls
            }
        }
    }
}
