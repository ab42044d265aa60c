//! Deployment-cost minimization: penalized fitness of a network
//! configuration and the three-step reuse heuristic (SBS-only bounds, per
//! region mixed optima, then the coupled multi-region problem with MBS
//! conservation).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{solve_delays_tabulated, DelaySolution, SlotState};
use crate::backhaul::{violation_probability, BackhaulContext};
use crate::geometry::CellIntegralCache;
use crate::numerics::{FixedPointSettings, QuadratureSettings};
use crate::scenario::{invalid, NetworkConfiguration, Scenario, ScenarioError};

pub mod metaheuristic;

pub use metaheuristic::{
    algorithm, metaheuristic_minimize, Algorithm, Bounds, Genetic, Hippopotamus, Metaheuristic,
    MetaheuristicSettings, Scored, SearchOutcome, TraceRow,
};

/// Added per region/slot cell whose delay equations cannot be solved.
pub const INFEASIBLE_PENALTY: f64 = 1e6;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("region {region}: no feasible SBS-only density up to {ceiling:e} /m²")]
    NoFeasibleDensity { region: usize, ceiling: f64 },
    #[error("region {region}: SBS-only feasibility is not monotone (infeasible at {at:e} /m² above a feasible density)")]
    NonMonotoneFeasibility { region: usize, at: f64 },
    #[error("degenerate search bounds: {0}")]
    DegenerateBounds(String),
    #[error("invalid optimizer settings: {0}")]
    Settings(String),
    #[error("step {step}: {source}")]
    Step {
        step: u8,
        #[source]
        source: Box<OptimizerError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn at_step<T>(step: u8, r: Result<T, OptimizerError>) -> Result<T, OptimizerError> {
    r.map_err(|e| OptimizerError::Step {
        step,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyWeights {
    pub w_tau_m: f64,
    pub w_tau_s: f64,
    pub w_violation: f64,
    pub w_conservation: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            w_tau_m: 150.0,
            w_tau_s: 100.0,
            w_violation: 1000.0,
            w_conservation: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub weights: PenaltyWeights,
    pub metaheuristic: MetaheuristicSettings,
    pub algorithm: Algorithm,
    /// Largest SBS density tried when sizing the SBS-only deployment.
    pub sbs_density_ceiling: f64,
    /// MBS densities are searched in `[0, factor * λ_OnlyStatic]`.
    pub mbs_density_factor: f64,
    /// Search range of `log10 φ`.
    pub phi_log10_bounds: [f64; 2],
    pub fixed_point: FixedPointSettings,
    pub quadrature: QuadratureSettings,
    /// Reuse fractions below this are indistinguishable from search noise.
    pub reuse_noise_floor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: PenaltyWeights::default(),
            metaheuristic: MetaheuristicSettings::default(),
            algorithm: Algorithm::Hippopotamus,
            sbs_density_ceiling: 1.0,
            mbs_density_factor: 2.0,
            phi_log10_bounds: [-3.0, 1.0],
            fixed_point: FixedPointSettings {
                rel_tol: 1e-8,
                max_iters: 300,
                damping: 1.0,
            },
            quadrature: QuadratureSettings::default().with_rel_tol(1e-7),
            reuse_noise_floor: 0.02,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let w = &self.weights;
        for (name, v) in [
            ("w_tau_m", w.w_tau_m),
            ("w_tau_s", w.w_tau_s),
            ("w_violation", w.w_violation),
            ("w_conservation", w.w_conservation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("optimizer.weights.{name}"), "must be nonnegative"));
            }
        }
        let m = &self.metaheuristic;
        if m.population < 4 {
            return Err(invalid("optimizer.metaheuristic.population", "must be at least 4"));
        }
        if m.stall_window == 0 || m.max_iters == 0 {
            return Err(invalid(
                "optimizer.metaheuristic",
                "stall_window and max_iters must be positive",
            ));
        }
        if !(m.stall_tol > 0.0) {
            return Err(invalid("optimizer.metaheuristic.stall_tol", "must be positive"));
        }
        if !(self.sbs_density_ceiling > 0.0 && self.sbs_density_ceiling.is_finite()) {
            return Err(invalid("optimizer.sbs_density_ceiling", "must be positive"));
        }
        if !(self.mbs_density_factor >= 0.0 && self.mbs_density_factor.is_finite()) {
            return Err(invalid("optimizer.mbs_density_factor", "must be nonnegative"));
        }
        let [lo, hi] = self.phi_log10_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid("optimizer.phi_log10_bounds", "must be finite with lo <= hi"));
        }
        if !(0.0..1.0).contains(&self.reuse_noise_floor) {
            return Err(invalid("optimizer.reuse_noise_floor", "must lie in [0, 1)"));
        }
        self.fixed_point
            .validate()
            .map_err(|e| invalid("optimizer.fixed_point", e.to_string()))?;
        self.quadrature
            .validate()
            .map_err(|e| invalid("optimizer.quadrature", e.to_string()))?;
        Ok(())
    }
}

/// Analytic outcome of one region in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub delays: Option<DelaySolution>,
    pub violation: Option<f64>,
    pub penalty: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub cost: f64,
    pub penalty: f64,
    pub feasible: bool,
    pub conservation_spread: f64,
    /// Indexed `[region][slot]`.
    pub cells: Vec<Vec<CellOutcome>>,
}

/// `μ M + Σ_z λ_s^z E_z`, with `M` the mean over slots of the MBS total.
pub fn deployment_cost(cfg: &NetworkConfiguration, s: &Scenario) -> f64 {
    let totals = cfg.slot_mbs_totals(s);
    let fleet = totals.iter().sum::<f64>() / totals.len() as f64;
    let sbs: f64 = cfg
        .sbs_density
        .iter()
        .zip(&s.regions)
        .map(|(l, r)| l * r.area_m2)
        .sum();
    sbs + s.mbs_relative_cost_mu * fleet
}

pub fn evaluate_cell(lambda_u: f64, lambda_s: f64, lambda_m: f64, phi: f64, s: &Scenario, w: &PenaltyWeights) -> CellOutcome {
    let radio = &s.radio;
    let oc = &s.optimizer;
    let tau0 = radio.target_delay_tau0_s;
    let failed = |delays| CellOutcome {
        delays,
        violation: None,
        penalty: INFEASIBLE_PENALTY,
        feasible: false,
    };
    if !(lambda_s > 0.0) || (lambda_m > 0.0 && !(phi > 0.0)) {
        return failed(None);
    }
    let cache = CellIntegralCache::global_gridded();
    let st = SlotState::new(lambda_u, lambda_s, lambda_m, phi);
    let sol = match solve_delays_tabulated(&st, radio, &oc.fixed_point, &oc.quadrature, cache) {
        Ok(sol) if sol.converged => sol,
        Ok(sol) => return failed(Some(sol)),
        Err(_) => return failed(None),
    };
    let excess = |tau: f64| ((tau - tau0) / tau0).max(0.0);
    let mut penalty = w.w_tau_s * excess(sol.tau_bar_s);
    let mut feasible = sol.tau_bar_s <= tau0;
    let mut violation = None;
    if lambda_m > 0.0 {
        penalty += w.w_tau_m * excess(sol.tau_bar_m);
        feasible &= sol.tau_bar_m <= tau0;
        let v = BackhaulContext::with_cache(&st, radio, &sol, &oc.quadrature, cache)
            .and_then(|ctx| violation_probability(&ctx, &oc.quadrature));
        match v {
            Ok(v) => {
                penalty += w.w_violation * (v - radio.violation_target_delta).max(0.0);
                feasible &= v <= radio.violation_target_delta;
                violation = Some(v);
            }
            Err(_) => {
                penalty += INFEASIBLE_PENALTY;
                feasible = false;
            }
        }
    }
    CellOutcome {
        delays: Some(sol),
        violation,
        penalty,
        feasible,
    }
}

fn evaluate_with(cfg: &NetworkConfiguration, s: &Scenario, w: &PenaltyWeights, conservation: bool) -> Evaluation {
    cfg.check_dimensions(s)
        .expect("configuration must be dimensioned for the scenario");
    let cells: Vec<Vec<CellOutcome>> = s
        .regions
        .iter()
        .enumerate()
        .map(|(z, region)| {
            region
                .user_density_per_slot
                .iter()
                .enumerate()
                .map(|(j, &lu)| {
                    evaluate_cell(
                        lu,
                        cfg.sbs_density[z],
                        cfg.mbs_density[z][j],
                        cfg.wps_weight_phi[z][j],
                        s,
                        w,
                    )
                })
                .collect()
        })
        .collect();
    let cost = deployment_cost(cfg, s);
    let mut penalty: f64 = cells.iter().flatten().map(|c| c.penalty).sum();
    let mut feasible = cells.iter().flatten().all(|c| c.feasible);
    let spread = cfg.conservation_spread(s);
    if conservation {
        penalty += w.w_conservation * spread;
        feasible &= spread <= crate::scenario::CONSERVATION_REL_TOL;
    }
    Evaluation {
        fitness: cost + penalty,
        cost,
        penalty,
        feasible,
        conservation_spread: spread,
        cells,
    }
}

/// Full evaluation of a configuration under every constraint of the
/// deployment problem.
pub fn evaluate_configuration(cfg: &NetworkConfiguration, s: &Scenario, w: &PenaltyWeights) -> Evaluation {
    evaluate_with(cfg, s, w, true)
}

/// Objective plus penalties; finite for every dimensioned configuration.
pub fn penalized_fitness(cfg: &NetworkConfiguration, s: &Scenario, w: &PenaltyWeights) -> f64 {
    evaluate_configuration(cfg, s, w).fitness
}

/// Equalizes the per-slot MBS totals inside the box `0 <= λ_m <= ub`. Slots
/// above the target are scaled down and slots below move linearly toward
/// `ub`; the target is the mean slot total capped by the smallest slot
/// capacity.
pub fn project_conservation(mbs: &mut [Vec<f64>], ub: &[Vec<f64>], areas: &[f64]) {
    let slots = mbs.first().map_or(0, |m| m.len());
    let total = |v: &[Vec<f64>], j: usize| -> f64 { v.iter().zip(areas).map(|(m, e)| m[j] * e).sum() };
    let totals: Vec<f64> = (0..slots).map(|j| total(mbs, j)).collect();
    let caps: Vec<f64> = (0..slots).map(|j| total(ub, j)).collect();
    let mean = totals.iter().sum::<f64>() / slots.max(1) as f64;
    let target = caps.iter().copied().fold(mean, f64::min);
    for j in 0..slots {
        let t = totals[j];
        if t > target {
            let f = target / t;
            for m in mbs.iter_mut() {
                m[j] *= f;
            }
        } else if t < target {
            let a = (target - t) / (caps[j] - t);
            for (m, u) in mbs.iter_mut().zip(ub) {
                m[j] += a * (u[j] - m[j]);
            }
        }
    }
}

fn single_region(s: &Scenario, z: usize) -> Scenario {
    Scenario {
        regions: vec![s.regions[z].clone()],
        ..s.clone()
    }
}

// Decision vector per region: [λ_s, λ_m(1..J), log10 φ(1..J)].
fn block_len(slots: usize) -> usize {
    1 + 2 * slots
}

fn decode(x: &[f64], regions: usize, slots: usize) -> NetworkConfiguration {
    let n = block_len(slots);
    let mut cfg = NetworkConfiguration {
        sbs_density: Vec::with_capacity(regions),
        mbs_density: Vec::with_capacity(regions),
        wps_weight_phi: Vec::with_capacity(regions),
    };
    for z in 0..regions {
        let b = &x[z * n..(z + 1) * n];
        cfg.sbs_density.push(b[0]);
        cfg.mbs_density.push(b[1..=slots].to_vec());
        cfg.wps_weight_phi.push(b[slots + 1..].iter().map(|l| 10f64.powf(*l)).collect());
    }
    cfg
}

fn encode(cfg: &NetworkConfiguration) -> Vec<f64> {
    let mut x = Vec::new();
    for z in 0..cfg.sbs_density.len() {
        x.push(cfg.sbs_density[z]);
        x.extend(&cfg.mbs_density[z]);
        x.extend(cfg.wps_weight_phi[z].iter().map(|p| p.log10()));
    }
    x
}

/// Outcome of step 1: the least SBS-only density per region.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticBounds {
    pub density: Vec<f64>,
    pub config: NetworkConfiguration,
    pub fitness: f64,
}

fn static_feasible(s: &Scenario, z: usize, lambda_s: f64) -> bool {
    let w = &s.optimizer.weights;
    s.regions[z]
        .user_density_per_slot
        .iter()
        .all(|&lu| evaluate_cell(lu, lambda_s, 0.0, 1.0, s, w).feasible)
}

const STEP1_GRID_PER_DECADE: usize = 4;
const STEP1_DECADES: usize = 9;

/// Smallest SBS-only density meeting the delay target in every slot, per
/// region. Feasibility is scanned on a coarse log grid (and required to be
/// monotone there) before bisecting the bracketing interval.
pub fn step1_static_bounds(s: &Scenario) -> Result<StaticBounds, OptimizerError> {
    let ceiling = s.optimizer.sbs_density_ceiling;
    let n = STEP1_GRID_PER_DECADE * STEP1_DECADES;
    let grid: Vec<f64> = (0..=n)
        .map(|i| ceiling * 10f64.powf(-(STEP1_DECADES as f64) * (1.0 - i as f64 / n as f64)))
        .collect();
    let mut density = Vec::with_capacity(s.num_regions());
    for z in 0..s.num_regions() {
        let ok: Vec<bool> = grid.iter().map(|&l| static_feasible(s, z, l)).collect();
        let first = ok
            .iter()
            .position(|&b| b)
            .ok_or(OptimizerError::NoFeasibleDensity { region: z, ceiling })?;
        if let Some(k) = ok[first..].iter().position(|&b| !b) {
            return Err(OptimizerError::NonMonotoneFeasibility {
                region: z,
                at: grid[first + k],
            });
        }
        if first == 0 {
            density.push(grid[0]);
            continue;
        }
        let (mut lo, mut hi) = (grid[first - 1], grid[first]);
        while hi / lo - 1.0 > 1e-6 {
            let mid = (lo * hi).sqrt();
            if static_feasible(s, z, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        density.push(hi);
    }
    let config = NetworkConfiguration::static_only(density.clone(), s.num_slots_j);
    let fitness = penalized_fitness(&config, s, &s.optimizer.weights);
    Ok(StaticBounds {
        density,
        config,
        fitness,
    })
}

/// Region-local optimum from step 2.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSolution {
    pub sbs_density: f64,
    pub mbs_density: Vec<f64>,
    pub phi: Vec<f64>,
    pub fitness: f64,
    pub feasible: bool,
    pub trace: Vec<TraceRow>,
}

fn phi_seed(s: &Scenario) -> f64 {
    let [lo, hi] = s.optimizer.phi_log10_bounds;
    0.0f64.clamp(lo, hi)
}

fn region_seed(base: u64, z: usize) -> u64 {
    base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(z as u64 + 1))
}

/// Mixed deployment of each region on its own, with `λ_s <= λ_OnlyStatic` and
/// no MBS conservation; the fleet is charged at its mean size over slots.
pub fn step2_per_region(s: &Scenario, bounds: &StaticBounds) -> Result<Vec<RegionSolution>, OptimizerError> {
    let oc = &s.optimizer;
    let slots = s.num_slots_j;
    let [plo, phi_hi] = oc.phi_log10_bounds;
    let search = algorithm(oc.algorithm);
    (0..s.num_regions())
        .map(|z| {
            let sub = single_region(s, z);
            let l_os = bounds.density[z];
            let mut lo = vec![1e-3 * l_os];
            let mut hi = vec![l_os];
            lo.extend(std::iter::repeat(0.0).take(slots));
            hi.extend(std::iter::repeat(oc.mbs_density_factor * l_os).take(slots));
            lo.extend(std::iter::repeat(plo).take(slots));
            hi.extend(std::iter::repeat(phi_hi).take(slots));
            let b = Bounds::new(lo, hi)?;
            let mut seed = vec![l_os];
            seed.extend(std::iter::repeat(0.0).take(slots));
            seed.extend(std::iter::repeat(phi_seed(s)).take(slots));
            let f = |x: &[f64]| {
                let e = evaluate_with(&decode(x, 1, slots), &sub, &oc.weights, false);
                Scored {
                    value: e.fitness,
                    feasible: e.feasible,
                }
            };
            let ms = MetaheuristicSettings {
                rng_seed: region_seed(oc.metaheuristic.rng_seed, z),
                ..oc.metaheuristic.clone()
            };
            let out = search.minimize(&f, &b, &ms, &[seed])?;
            let cfg = decode(&out.best, 1, slots);
            Ok(RegionSolution {
                sbs_density: cfg.sbs_density[0],
                mbs_density: cfg.mbs_density[0].clone(),
                phi: cfg.wps_weight_phi[0].clone(),
                fitness: out.fitness,
                feasible: out.feasible,
                trace: out.trace,
            })
        })
        .collect()
}

fn aggregate(step2: &[RegionSolution]) -> NetworkConfiguration {
    NetworkConfiguration {
        sbs_density: step2.iter().map(|r| r.sbs_density).collect(),
        mbs_density: step2.iter().map(|r| r.mbs_density.clone()).collect(),
        wps_weight_phi: step2.iter().map(|r| r.phi.clone()).collect(),
    }
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTraceRow {
    pub step: u8,
    pub region: Option<usize>,
    pub iteration: usize,
    pub best_fitness: f64,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub config: NetworkConfiguration,
    pub cost: f64,
    pub fitness: f64,
    pub feasible: bool,
    /// Indexed `[region][slot]`; `None` where the delay equations failed.
    pub per_slot_solutions: Vec<Vec<Option<DelaySolution>>>,
    pub violation_grid: Vec<Vec<Option<f64>>>,
    /// `1 - cost / cost(SBS-only deployment)`, clamped to `[0, 1]`.
    pub reuse_fraction: f64,
    /// `1 - M / Σ_z max_j λ_m E_z`: share of the per-region peak fleets saved
    /// by moving MBSs between regions.
    pub fleet_sharing: f64,
    pub static_bounds: Vec<f64>,
    pub static_cost: f64,
    /// Fitness after steps 1, 2 (sum of region-local optima) and 3.
    pub step_fitness: [f64; 3],
    pub trace: Vec<StepTraceRow>,
}

/// Step 3: the full problem over the box `λ_s* <= λ_s <= λ_s* + min_j λ_m,j*`,
/// `0 <= λ_m,j <= λ_m,j*`, with slot totals projected onto conservation.
pub fn step3_coupled(
    s: &Scenario,
    step1: &StaticBounds,
    step2: &[RegionSolution],
) -> Result<OptimizationResult, OptimizerError> {
    let oc = &s.optimizer;
    let slots = s.num_slots_j;
    let regions = s.num_regions();
    let [plo, phi_hi] = oc.phi_log10_bounds;
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for r in step2 {
        let delta = r.mbs_density.iter().copied().fold(f64::INFINITY, f64::min);
        lo.push(r.sbs_density);
        hi.push(r.sbs_density + delta);
        lo.extend(std::iter::repeat(0.0).take(slots));
        hi.extend(&r.mbs_density);
        lo.extend(std::iter::repeat(plo).take(slots));
        hi.extend(std::iter::repeat(phi_hi).take(slots));
    }
    let b = Bounds::new(lo, hi)?;
    let ub: Vec<Vec<f64>> = step2.iter().map(|r| r.mbs_density.clone()).collect();
    let areas: Vec<f64> = s.regions.iter().map(|r| r.area_m2).collect();
    let build = |x: &[f64]| {
        let mut cfg = decode(x, regions, slots);
        project_conservation(&mut cfg.mbs_density, &ub, &areas);
        cfg
    };
    let f = |x: &[f64]| {
        let e = evaluate_configuration(&build(x), s, &oc.weights);
        Scored {
            value: e.fitness,
            feasible: e.feasible,
        }
    };
    let agg = aggregate(step2);
    let ms = MetaheuristicSettings {
        rng_seed: region_seed(oc.metaheuristic.rng_seed, regions + 1),
        ..oc.metaheuristic.clone()
    };
    let out = algorithm(oc.algorithm).minimize(&f, &b, &ms, &[encode(&agg)])?;
    let config = build(&out.best);
    let eval = evaluate_configuration(&config, s, &oc.weights);

    let static_cost = deployment_cost(&step1.config, s);
    let peak_fleets: f64 = config
        .mbs_density
        .iter()
        .zip(&areas)
        .map(|(m, e)| m.iter().copied().fold(0.0, f64::max) * e)
        .sum();
    let totals = config.slot_mbs_totals(s);
    let fleet = totals.iter().sum::<f64>() / totals.len() as f64;
    let mut trace = Vec::new();
    for (z, r) in step2.iter().enumerate() {
        trace.extend(r.trace.iter().map(|t| StepTraceRow {
            step: 2,
            region: Some(z),
            iteration: t.iteration,
            best_fitness: t.best_fitness,
            feasible_count: t.feasible_count,
        }));
    }
    trace.extend(out.trace.iter().map(|t| StepTraceRow {
        step: 3,
        region: None,
        iteration: t.iteration,
        best_fitness: t.best_fitness,
        feasible_count: t.feasible_count,
    }));
    Ok(OptimizationResult {
        per_slot_solutions: eval
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.delays.clone()).collect())
            .collect(),
        violation_grid: eval
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.violation).collect())
            .collect(),
        cost: eval.cost,
        fitness: eval.fitness,
        feasible: eval.feasible,
        reuse_fraction: if static_cost > 0.0 {
            (1.0 - eval.cost / static_cost).clamp(0.0, 1.0)
        } else {
            0.0
        },
        fleet_sharing: if peak_fleets > 0.0 {
            (1.0 - fleet / peak_fleets).clamp(0.0, 1.0)
        } else {
            0.0
        },
        static_bounds: step1.density.clone(),
        static_cost,
        step_fitness: [
            step1.fitness,
            step2.iter().map(|r| r.fitness).sum(),
            eval.fitness,
        ],
        trace,
        config,
    })
}

/// Runs steps 1 to 3.
pub fn optimize_deployment(s: &Scenario) -> Result<OptimizationResult, OptimizerError> {
    s.validate()?;
    let step1 = at_step(1, step1_static_bounds(s))?;
    log::info!("step 1: SBS-only densities {:?}", step1.density);
    let step2 = at_step(2, step2_per_region(s, &step1))?;
    log::info!(
        "step 2: region fitness {:?}",
        step2.iter().map(|r| r.fitness).collect::<Vec<_>>()
    );
    at_step(3, step3_coupled(s, &step1, &step2))
}

pub const TRACE_CSV_HEADER: &str = "step,region,iteration,best_fitness,feasible_count";

pub fn write_trace_csv<W: Write>(trace: &[StepTraceRow], mut w: W) -> Result<(), OptimizerError> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{:e},{}",
            t.step,
            t.region.map(|r| r.to_string()).unwrap_or_default(),
            t.iteration,
            t.best_fitness,
            t.feasible_count
        )?;
    }
    Ok(())
}
