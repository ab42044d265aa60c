//! Monte-Carlo engine: both BS tiers and the users are sampled as Poisson
//! processes on a torus, users attach to the strongest BS, MBSs backhaul to
//! the nearest SBS, and per-bit delays follow the WPS sharing rules.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{solve_delays, AnalyticError, DelaySolution, SlotState};
use crate::backhaul::{violation_probability, BackhaulContext, BackhaulError};
use crate::numerics::{FixedPointSettings, QuadratureSettings};
use crate::scenario::RadioParams;
use crate::stats::t_confidence_interval;

pub mod voronoi;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no base stations were placed in replication {0}")]
    EmptyTiers(usize),
    #[error("MBSs present but no SBS to host their backhaul (replication {0})")]
    NoHosts(usize),
    #[error("invalid simulation settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Backhaul(#[from] BackhaulError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceMode {
    /// Every interferer is weighted by its tier's activity `Ū / k`.
    #[default]
    Expected,
    /// Each interferer is on with probability `min(1, Ū / k)`, redrawn every
    /// coupling round.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub window_side_m: f64,
    pub replications: usize,
    pub rng_seed: u64,
    pub utilization_coupling_iters: usize,
    pub interference: InterferenceMode,
    /// Users whose delay is evaluated per replication (a uniform subsample);
    /// cell loads always count every user.
    pub max_delay_users: Option<usize>,
    /// Keep per-user serving distances and per-MBS backhaul delays.
    pub collect_samples: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            window_side_m: 2000.0,
            replications: 30,
            rng_seed: 1,
            utilization_coupling_iters: 10,
            interference: InterferenceMode::Expected,
            max_delay_users: Some(20_000),
            collect_samples: false,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_side_m > 0.0 && self.window_side_m.is_finite()) {
            return Err(SimError::InvalidSettings("window_side_m must be positive".into()));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidSettings("replications must be positive".into()));
        }
        if self.utilization_coupling_iters == 0 {
            return Err(SimError::InvalidSettings(
                "utilization_coupling_iters must be positive".into(),
            ));
        }
        if self.max_delay_users == Some(0) {
            return Err(SimError::InvalidSettings("max_delay_users must be positive".into()));
        }
        Ok(())
    }
}

/// Square torus `[0, side)²` with wrap-around distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Torus {
    pub side: f64,
}

impl Torus {
    pub fn new(side: f64) -> Self {
        Self { side }
    }

    fn axis(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        d.min(self.side - d)
    }

    pub fn dist2(&self, p: &Point, q: &Point) -> f64 {
        let dx = self.axis(p[0], q[0]);
        let dy = self.axis(p[1], q[1]);
        dx * dx + dy * dy
    }

    pub fn dist(&self, p: &Point, q: &Point) -> f64 {
        self.dist2(p, q).sqrt()
    }
}

/// Homogeneous Poisson process of the given intensity on `[0, side)²`.
pub fn sample_ppp<R: Rng + ?Sized>(intensity: f64, side: f64, rng: &mut R) -> Vec<Point> {
    let mean = intensity * side * side;
    if !(mean > 0.0) {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    (0..n)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side])
        .collect()
}

/// Bucket grid over the torus for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    torus: Torus,
    n: usize,
    cell: f64,
    buckets: Vec<Vec<u32>>,
}

impl SpatialGrid {
    pub fn new(points: &[Point], torus: Torus) -> Self {
        let n = ((points.len() as f64 / 2.0).sqrt().floor() as usize).clamp(1, 2048);
        let cell = torus.side / n as f64;
        let mut buckets = vec![Vec::new(); n * n];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(p, cell, n);
            buckets[cy * n + cx].push(i as u32);
        }
        Self {
            torus,
            n,
            cell,
            buckets,
        }
    }

    fn cell_of(p: &Point, cell: f64, n: usize) -> (usize, usize) {
        let cx = ((p[0] / cell) as usize).min(n - 1);
        let cy = ((p[1] / cell) as usize).min(n - 1);
        (cx, cy)
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, p: &Point, points: &[Point]) -> Option<(usize, f64)> {
        if points.is_empty() {
            return None;
        }
        let n = self.n as isize;
        let (cx, cy) = Self::cell_of(p, self.cell, self.n);
        let mut best: Option<(usize, f64)> = None;
        let mut k: isize = 0;
        loop {
            if 2 * k + 1 >= n {
                // the ring covers the whole torus: finish with a full scan
                for (i, q) in points.iter().enumerate() {
                    let d = self.torus.dist2(p, q);
                    if best.map_or(true, |(_, b)| d < b) {
                        best = Some((i, d));
                    }
                }
                return best;
            }
            for dy in -k..=k {
                for dx in -k..=k {
                    if dx.abs() != k && dy.abs() != k {
                        continue;
                    }
                    let bx = (cx as isize + dx).rem_euclid(n) as usize;
                    let by = (cy as isize + dy).rem_euclid(n) as usize;
                    for &i in &self.buckets[by * self.n + bx] {
                        let d = self.torus.dist2(p, &points[i as usize]);
                        if best.map_or(true, |(_, b)| d < b) {
                            best = Some((i as usize, d));
                        }
                    }
                }
            }
            if let Some((_, d)) = best {
                let reach = k as f64 * self.cell;
                if d <= reach * reach {
                    return best;
                }
            }
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Static,
    Mobile,
}

/// Strongest-power association of every user.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub tier: Vec<Tier>,
    pub bs: Vec<usize>,
    pub distance: Vec<f64>,
}

/// Attaches each user to the BS with the largest `P d^-α`, i.e. the nearest
/// BS once MBS distances are divided by `ρ_ms`.
pub fn associate(
    users: &[Point],
    sbs: &[Point],
    mbs: &[Point],
    radio: &RadioParams,
    torus: Torus,
) -> Result<Assignment> {
    if sbs.is_empty() && mbs.is_empty() {
        return Err(SimError::EmptyTiers(0));
    }
    let gs = SpatialGrid::new(sbs, torus);
    let gm = SpatialGrid::new(mbs, torus);
    Ok(associate_with(users, sbs, mbs, &gs, &gm, radio.rho_ms()))
}

fn associate_with(
    users: &[Point],
    sbs: &[Point],
    mbs: &[Point],
    gs: &SpatialGrid,
    gm: &SpatialGrid,
    rho: f64,
) -> Assignment {
    let mut out = Assignment {
        tier: Vec::with_capacity(users.len()),
        bs: Vec::with_capacity(users.len()),
        distance: Vec::with_capacity(users.len()),
    };
    for u in users {
        let s = gs.nearest(u, sbs);
        let m = gm.nearest(u, mbs);
        let pick_static = match (s, m) {
            (Some((_, ds)), Some((_, dm))) => ds.sqrt() <= dm.sqrt() / rho,
            (Some(_), None) => true,
            _ => false,
        };
        let (tier, (i, d2)) = if pick_static {
            (Tier::Static, s.unwrap())
        } else {
            (Tier::Mobile, m.unwrap())
        };
        out.tier.push(tier);
        out.bs.push(i);
        out.distance.push(d2.sqrt());
    }
    out
}

/// Summary of one tier's per-bit delays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierStats {
    pub mean: f64,
    pub ci95: Option<(f64, f64)>,
    pub samples: usize,
    pub per_replication: Vec<f64>,
}

impl TierStats {
    fn from_replications(means: Vec<f64>, samples: usize) -> Option<Self> {
        if means.is_empty() {
            return None;
        }
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        Some(Self {
            mean,
            ci95: t_confidence_interval(&means, 0.95),
            samples,
            per_replication: means,
        })
    }

    pub fn contains(&self, x: f64) -> Option<bool> {
        self.ci95.map(|(lo, hi)| lo <= x && x <= hi)
    }
}

/// Raw per-user and per-MBS samples of one slot measurement.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleDump {
    /// Serving distance scaled to SBS-equivalent power, `d · (P_s / P)^(1/α)`.
    pub serving_distance_eq: Vec<f64>,
    /// Ideal backhaul per-bit delay of every MBS.
    pub backhaul_delay: Vec<f64>,
    /// Distance from every MBS to its host SBS.
    pub backhaul_distance: Vec<f64>,
    /// Users per MBS cell and per SBS cell (area-driven load variance).
    pub users_per_mbs: Vec<usize>,
    pub users_per_sbs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub sbs: Option<TierStats>,
    pub mbs: Option<TierStats>,
    /// Fraction of MBSs with at least one user whose backhaul misses the demand.
    pub empirical_violation: Option<f64>,
    pub violation_samples: usize,
    /// Largest relative utilization change in the final coupling round.
    pub coupling_residual: f64,
    pub utilization_s: f64,
    pub utilization_m: f64,
    #[serde(skip)]
    pub samples: Option<SampleDump>,
}

struct Replication {
    mean_s: Option<f64>,
    mean_m: Option<f64>,
    n_s: usize,
    n_m: usize,
    viol_hits: usize,
    viol_n: usize,
    residual: f64,
    util_s: f64,
    util_m: f64,
    dump: Option<SampleDump>,
}

struct Gains {
    g_s: f64,
    g_m: f64,
}

fn path_gain(d2: f64, alpha: f64) -> f64 {
    if alpha == 3.0 {
        1.0 / (d2 * d2.sqrt())
    } else {
        d2.powf(-0.5 * alpha)
    }
}

/// Sum of path gains at `p` from each tier, skipping one BS per tier.
fn gains_at(
    p: &Point,
    sbs: &[Point],
    mbs: &[Point],
    skip_s: Option<usize>,
    skip_m: Option<usize>,
    active_s: Option<&[bool]>,
    active_m: Option<&[bool]>,
    torus: &Torus,
    alpha: f64,
) -> Gains {
    let sum = |pts: &[Point], skip: Option<usize>, active: Option<&[bool]>| {
        let mut g = 0.0;
        for (j, q) in pts.iter().enumerate() {
            if Some(j) == skip || active.is_some_and(|a| !a[j]) {
                continue;
            }
            let d2 = torus.dist2(p, q);
            if d2 > 0.0 {
                g += path_gain(d2, alpha);
            }
        }
        g
    };
    Gains {
        g_s: sum(sbs, skip_s, active_s),
        g_m: sum(mbs, skip_m, active_m),
    }
}

fn capacity_raw(d: f64, p: f64, i: f64, radio: &RadioParams) -> f64 {
    let sinr = p * d.powf(-radio.path_loss_alpha) / (radio.noise_power() + i);
    radio.channel_bandwidth() * sinr.ln_1p() / std::f64::consts::LN_2
}

fn replicate(
    index: usize,
    st: &SlotState,
    radio: &RadioParams,
    sim: &SimSettings,
) -> Result<Replication> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.rng_seed);
    rng.set_stream(index as u64);
    let torus = Torus::new(sim.window_side_m);
    let side = sim.window_side_m;
    let sbs = sample_ppp(st.lambda_s, side, &mut rng);
    let mbs = sample_ppp(st.lambda_m, side, &mut rng);
    let users = sample_ppp(st.lambda_u, side, &mut rng);
    if sbs.is_empty() && mbs.is_empty() {
        return Err(SimError::EmptyTiers(index));
    }
    if !mbs.is_empty() && sbs.is_empty() {
        return Err(SimError::NoHosts(index));
    }
    let alpha = radio.path_loss_alpha;
    let k = radio.reuse_factor_k as f64;
    let tau0 = radio.target_delay_tau0_s;
    let (ps, pm) = (radio.power_static_w, radio.power_mobile_w);
    let rho = radio.rho_ms();

    let gs = SpatialGrid::new(&sbs, torus);
    let gm = SpatialGrid::new(&mbs, torus);
    let assign = associate_with(&users, &sbs, &mbs, &gs, &gm, rho);
    let mut n_u_s = vec![0usize; sbs.len()];
    let mut n_u_m = vec![0usize; mbs.len()];
    for (t, &b) in assign.tier.iter().zip(&assign.bs) {
        match t {
            Tier::Static => n_u_s[b] += 1,
            Tier::Mobile => n_u_m[b] += 1,
        }
    }
    let mut host = Vec::with_capacity(mbs.len());
    let mut host_dist = Vec::with_capacity(mbs.len());
    let mut n_m = vec![0usize; sbs.len()];
    for p in &mbs {
        let (j, d2) = gs.nearest(p, &sbs).expect("SBSs present");
        host.push(j);
        host_dist.push(d2.sqrt());
        n_m[j] += 1;
    }

    let subset: Vec<usize> = match sim.max_delay_users {
        Some(cap) if users.len() > cap => {
            let mut v = sample_indices(&mut rng, users.len(), cap).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..users.len()).collect(),
    };
    let skip = |u: usize| match assign.tier[u] {
        Tier::Static => (Some(assign.bs[u]), None),
        Tier::Mobile => (None, Some(assign.bs[u])),
    };
    let user_gains = |act_s: Option<&[bool]>, act_m: Option<&[bool]>| -> Vec<Gains> {
        subset
            .iter()
            .map(|&u| {
                let (a, b) = skip(u);
                gains_at(&users[u], &sbs, &mbs, a, b, act_s, act_m, &torus, alpha)
            })
            .collect()
    };
    let mbs_gains = |act_s: Option<&[bool]>, act_m: Option<&[bool]>| -> Vec<Gains> {
        mbs.iter()
            .enumerate()
            .map(|(i, p)| gains_at(p, &sbs, &mbs, Some(host[i]), Some(i), act_s, act_m, &torus, alpha))
            .collect()
    };
    let bernoulli = sim.interference == InterferenceMode::Bernoulli;
    let mut ug = if bernoulli { Vec::new() } else { user_gains(None, None) };
    let mut mg = if bernoulli { Vec::new() } else { mbs_gains(None, None) };

    let phi = if st.lambda_m > 0.0 { st.phi } else { 1.0 };
    let user_delay = |u: usize, i: f64| -> f64 {
        let d = assign.distance[u];
        let b = assign.bs[u];
        match assign.tier[u] {
            Tier::Static => {
                let load = n_m[b] as f64 + phi * n_u_s[b] as f64;
                load / (phi * capacity_raw(d, ps, i, radio))
            }
            Tier::Mobile => n_u_m[b] as f64 / capacity_raw(d, pm, i, radio),
        }
    };

    let (mut us, mut um) = (1.0f64, 1.0f64);
    let mut residual = f64::INFINITY;
    let mut means = (None, None, 0usize, 0usize);
    for _ in 0..sim.utilization_coupling_iters {
        let (ws, wm) = if bernoulli {
            let qs = (us / k).min(1.0);
            let qm = (um / k).min(1.0);
            let act_s: Vec<bool> = (0..sbs.len()).map(|_| rng.gen::<f64>() < qs).collect();
            let act_m: Vec<bool> = (0..mbs.len()).map(|_| rng.gen::<f64>() < qm).collect();
            ug = user_gains(Some(&act_s), Some(&act_m));
            mg = mbs_gains(Some(&act_s), Some(&act_m));
            (ps, pm)
        } else {
            (ps * us / k, pm * um / k)
        };
        let (mut sum_s, mut sum_m, mut cnt_s, mut cnt_m) = (0.0, 0.0, 0usize, 0usize);
        for (g, &u) in ug.iter().zip(&subset) {
            let tau = user_delay(u, ws * g.g_s + wm * g.g_m);
            match assign.tier[u] {
                Tier::Static => {
                    sum_s += tau;
                    cnt_s += 1;
                }
                Tier::Mobile => {
                    sum_m += tau;
                    cnt_m += 1;
                }
            }
        }
        let ms = (cnt_s > 0).then(|| sum_s / cnt_s as f64);
        let mm = (cnt_m > 0).then(|| sum_m / cnt_m as f64);
        let new_s = ms.map_or(us, |m| m / tau0);
        let new_m = mm.map_or(um, |m| m / tau0);
        residual = ((new_s - us).abs() / new_s.max(f64::MIN_POSITIVE))
            .max((new_m - um).abs() / new_m.max(f64::MIN_POSITIVE));
        us = new_s;
        um = new_m;
        means = (ms, mm, cnt_s, cnt_m);
        let _ = (ws, wm);
    }

    // Backhaul, evaluated with the final coupled utilizations.
    let (ws, wm) = if bernoulli { (ps, pm) } else { (ps * us / k, pm * um / k) };
    let mut viol_hits = 0usize;
    let mut viol_n = 0usize;
    let mut bh_delay = Vec::with_capacity(mbs.len());
    for (i, g) in mg.iter().enumerate() {
        let j = host[i];
        let cap = capacity_raw(host_dist[i], ps, ws * g.g_s + wm * g.g_m, radio);
        let tau_m = (n_m[j] as f64 + phi * n_u_s[j] as f64) / cap;
        bh_delay.push(tau_m);
        if n_u_m[i] >= 1 {
            viol_n += 1;
            if tau_m > us * tau0 / n_u_m[i] as f64 {
                viol_hits += 1;
            }
        }
    }

    let dump = sim.collect_samples.then(|| SampleDump {
        serving_distance_eq: (0..users.len())
            .map(|u| match assign.tier[u] {
                Tier::Static => assign.distance[u],
                Tier::Mobile => assign.distance[u] / rho,
            })
            .collect(),
        backhaul_delay: bh_delay,
        backhaul_distance: host_dist.clone(),
        users_per_mbs: n_u_m.clone(),
        users_per_sbs: n_u_s.clone(),
    });

    Ok(Replication {
        mean_s: means.0,
        mean_m: means.1,
        n_s: means.2,
        n_m: means.3,
        viol_hits,
        viol_n,
        residual,
        util_s: us,
        util_m: um,
        dump,
    })
}

/// Runs `sim.replications` independent replications of one slot.
pub fn measure_slot(st: &SlotState, radio: &RadioParams, sim: &SimSettings) -> Result<SimulationReport> {
    st.validate()?;
    radio
        .validate()
        .map_err(|e| SimError::InvalidSettings(e.to_string()))?;
    sim.validate()?;
    let area = sim.window_side_m * sim.window_side_m;
    for (name, l) in [("SBS", st.lambda_s), ("MBS", st.lambda_m)] {
        if l > 0.0 && l * area < 200.0 {
            log::warn!(
                "expected {name} count {:.0} below 200; edge effects and variance grow",
                l * area
            );
        }
    }
    let reps: Vec<Replication> = (0..sim.replications)
        .into_par_iter()
        .map(|i| replicate(i, st, radio, sim))
        .collect::<Result<_>>()?;

    let collect = |f: &dyn Fn(&Replication) -> Option<f64>, n: &dyn Fn(&Replication) -> usize| {
        let means: Vec<f64> = reps.iter().filter_map(f).collect();
        let samples = reps.iter().map(n).sum();
        TierStats::from_replications(means, samples)
    };
    let sbs = collect(&|r| r.mean_s, &|r| r.n_s);
    let mbs = collect(&|r| r.mean_m, &|r| r.n_m);
    let viol_n: usize = reps.iter().map(|r| r.viol_n).sum();
    let viol_hits: usize = reps.iter().map(|r| r.viol_hits).sum();
    let nrep = reps.len() as f64;
    let samples = sim.collect_samples.then(|| {
        let mut all = SampleDump::default();
        for r in &reps {
            if let Some(d) = &r.dump {
                all.serving_distance_eq.extend(&d.serving_distance_eq);
                all.backhaul_delay.extend(&d.backhaul_delay);
                all.backhaul_distance.extend(&d.backhaul_distance);
                all.users_per_mbs.extend(&d.users_per_mbs);
                all.users_per_sbs.extend(&d.users_per_sbs);
            }
        }
        all
    });
    Ok(SimulationReport {
        sbs,
        mbs,
        empirical_violation: (viol_n > 0).then(|| viol_hits as f64 / viol_n as f64),
        violation_samples: viol_n,
        coupling_residual: reps.iter().map(|r| r.residual).fold(0.0, f64::max),
        utilization_s: reps.iter().map(|r| r.util_s).sum::<f64>() / nrep,
        utilization_m: reps.iter().map(|r| r.util_m).sum::<f64>() / nrep,
        samples,
    })
}

/// One slot configuration of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub id: String,
    pub st: SlotState,
    pub radio: RadioParams,
}

/// Simulated and analytic results for one setup.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub id: String,
    pub report: SimulationReport,
    pub analytic: DelaySolution,
    pub analytic_violation: Option<f64>,
}

impl CampaignRow {
    pub fn sbs_in_ci(&self) -> Option<bool> {
        self.report.sbs.as_ref()?.contains(self.analytic.tau_bar_s)
    }

    pub fn mbs_in_ci(&self) -> Option<bool> {
        self.report.mbs.as_ref()?.contains(self.analytic.tau_bar_m)
    }

    /// Every available CI contains the analytic mean.
    pub fn analysis_in_ci(&self) -> bool {
        self.sbs_in_ci().unwrap_or(true) && self.mbs_in_ci().unwrap_or(true)
    }
}

pub fn run_campaign(
    setups: &[Setup],
    sim: &SimSettings,
    fp: &FixedPointSettings,
    q: &QuadratureSettings,
) -> Result<Vec<CampaignRow>> {
    if setups.is_empty() {
        return Err(SimError::InvalidSettings("campaign needs at least one setup".into()));
    }
    setups
        .iter()
        .map(|s| {
            let report = measure_slot(&s.st, &s.radio, sim)?;
            let analytic = solve_delays(&s.st, &s.radio, fp, q)?;
            let analytic_violation = if s.st.lambda_m > 0.0 && analytic.converged {
                let ctx = BackhaulContext::new(&s.st, &s.radio, &analytic)?;
                Some(violation_probability(&ctx, q)?)
            } else {
                None
            };
            if !(report.sbs.as_ref().and_then(|t| t.contains(analytic.tau_bar_s)).unwrap_or(true)
                && report.mbs.as_ref().and_then(|t| t.contains(analytic.tau_bar_m)).unwrap_or(true))
            {
                log::warn!("setup {}: analytic mean outside the simulated 95% CI", s.id);
            }
            Ok(CampaignRow {
                id: s.id.clone(),
                report,
                analytic,
                analytic_violation,
            })
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str =
    "setup_id,tier,mean,ci_lo,ci_hi,violation,n,analytic,analytic_in_ci,analytic_violation";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Long-format report, one row per setup and tier.
pub fn write_report_csv<W: Write>(rows: &[CampaignRow], mut w: W) -> Result<()> {
    writeln!(w, "{REPORT_CSV_HEADER}")?;
    for row in rows {
        for (tier, stats, analytic) in [
            ("sbs", &row.report.sbs, row.analytic.tau_bar_s),
            ("mbs", &row.report.mbs, row.analytic.tau_bar_m),
        ] {
            let Some(s) = stats else { continue };
            writeln!(
                w,
                "{},{},{:e},{},{},{},{},{:e},{},{}",
                row.id,
                tier,
                s.mean,
                opt(s.ci95.map(|c| c.0)),
                opt(s.ci95.map(|c| c.1)),
                opt(row.report.empirical_violation),
                s.samples,
                analytic,
                s.contains(analytic).map(|b| b.to_string()).unwrap_or_default(),
                opt(row.analytic_violation),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_p_value;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn empty_process() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_ppp(0.0, 2000.0, &mut rng).is_empty());
    }

    #[test]
    fn ppp_counts_are_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let counts: Vec<usize> = (0..1000).map(|_| sample_ppp(1e-4, 2000.0, &mut rng).len()).collect();
        // bins of width 10 around the mean 400, tails merged
        let edges: Vec<f64> = (0..=8).map(|i| 360.0 + 10.0 * i as f64).collect();
        let poisson = statrs::distribution::Poisson::new(400.0).unwrap();
        use statrs::distribution::DiscreteCDF;
        let cdf = |x: f64| poisson.cdf(x.floor() as u64);
        let mut expected = vec![cdf(edges[0] - 1.0) * 1000.0];
        let mut observed = vec![counts.iter().filter(|&&c| (c as f64) < edges[0]).count() as f64];
        for w in edges.windows(2) {
            expected.push((cdf(w[1] - 1.0) - cdf(w[0] - 1.0)) * 1000.0);
            observed.push(counts.iter().filter(|&&c| (c as f64) >= w[0] && (c as f64) < w[1]).count() as f64);
        }
        expected.push((1.0 - cdf(edges[8] - 1.0)) * 1000.0);
        observed.push(counts.iter().filter(|&&c| (c as f64) >= edges[8]).count() as f64);
        assert!(chi_square_p_value(&observed, &expected, 0) > 0.01);
    }

    #[test]
    fn disjoint_windows_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let pts = sample_ppp(1e-4, 2000.0, &mut rng);
            a.push(pts.iter().filter(|p| p[0] < 1000.0).count() as f64);
            b.push(pts.iter().filter(|p| p[0] >= 1000.0).count() as f64);
        }
        let (ma, va) = crate::stats::mean_var(&a);
        let (mb, vb) = crate::stats::mean_var(&b);
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / 999.0;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.1, "{corr}");
    }

    #[test]
    fn single_sbs_takes_everyone() {
        let radio = RadioParams::default();
        let torus = Torus::new(100.0);
        let users = vec![[1.0, 2.0], [50.0, 50.0], [99.0, 0.5]];
        let a = associate(&users, &[[10.0, 10.0]], &[], &radio, torus).unwrap();
        assert!(a.bs.iter().all(|&b| b == 0));
        assert!(a.tier.iter().all(|&t| t == Tier::Static));
        assert!(associate(&users, &[], &[], &radio, torus).is_err());
    }

    #[test]
    fn equal_power_association_is_nearest_neighbour() {
        let radio = RadioParams::default();
        let torus = Torus::new(1000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sbs = sample_ppp(5e-5, 1000.0, &mut rng);
        let mbs = sample_ppp(5e-5, 1000.0, &mut rng);
        let users = sample_ppp(1e-4, 1000.0, &mut rng);
        let a = associate(&users, &sbs, &mbs, &radio, torus).unwrap();
        for (u, p) in users.iter().enumerate() {
            let best = sbs
                .iter()
                .chain(&mbs)
                .map(|q| torus.dist(p, q))
                .fold(f64::INFINITY, f64::min);
            assert!((a.distance[u] - best).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_handles_sparse_and_dense_sets() {
        let torus = Torus::new(500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &l in &[4e-6, 1e-3] {
            let pts = sample_ppp(l, 500.0, &mut rng);
            let g = SpatialGrid::new(&pts, torus);
            for _ in 0..200 {
                let p = [rng.gen::<f64>() * 500.0, rng.gen::<f64>() * 500.0];
                let (_, d2) = g.nearest(&p, &pts).unwrap();
                let brute = pts.iter().map(|q| torus.dist2(&p, q)).fold(f64::INFINITY, f64::min);
                assert_eq!(d2, brute);
            }
        }
    }

    #[test]
    fn closed_form_single_cell() {
        // one SBS, no interferers: delay = n / C(r, P_s, 0)
        let radio = RadioParams::default();
        let n = 7.0;
        let r = 35.0;
        let expected = n / crate::analytic::capacity(r, radio.power_static_w, 0.0, &radio).unwrap();
        let got = n / capacity_raw(r, radio.power_static_w, 0.0, &radio);
        assert!((got / expected - 1.0).abs() < 1e-15);
        let gains = gains_at(&[0.0, 0.0], &[[35.0, 0.0]], &[], Some(0), None, None, None, &Torus::new(1e4), 3.0);
        assert_eq!(gains.g_s, 0.0);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let radio = RadioParams {
            target_delay_tau0_s: 1e-3,
            noise_psd_w_per_hz: 6e-9,
            power_static_w: 10.0,
            power_mobile_w: 10.0,
            ..RadioParams::default()
        };
        let st = SlotState::new(1e-3, 5e-5, 5e-5, 0.5);
        let sim = SimSettings {
            window_side_m: 1000.0,
            replications: 3,
            ..SimSettings::default()
        };
        let a = measure_slot(&st, &radio, &sim).unwrap();
        let b = measure_slot(&st, &radio, &sim).unwrap();
        assert_eq!(a, b);
        let s = a.sbs.unwrap();
        let (lo, hi) = s.ci95.unwrap();
        assert!(lo <= s.mean && s.mean <= hi);
    }

    #[test]
    fn tier_cell_areas_match_effective_density() {
        // fraction of users on each tier divided by the tier density
        let radio = RadioParams {
            power_mobile_w: 1.0,
            power_static_w: 8.0,
            ..RadioParams::default()
        };
        let rho = radio.rho_ms();
        let torus = Torus::new(3000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (ls, lm) = (1e-3, 1e-3);
        let sbs = sample_ppp(ls, 3000.0, &mut rng);
        let mbs = sample_ppp(lm, 3000.0, &mut rng);
        let users = sample_ppp(0.05, 3000.0, &mut rng);
        let a = associate(&users, &sbs, &mbs, &radio, torus).unwrap();
        let on_s = a.tier.iter().filter(|&&t| t == Tier::Static).count() as f64;
        let on_m = users.len() as f64 - on_s;
        let c = ls + rho * rho * lm;
        let area_s = on_s / 0.05 / sbs.len() as f64;
        let area_m = on_m / 0.05 / mbs.len() as f64;
        assert!((area_s * c - 1.0).abs() < 0.03, "{}", area_s * c);
        assert!((area_m * c / (rho * rho) - 1.0).abs() < 0.03, "{}", area_m * c / (rho * rho));
    }

    proptest! {
        #[test]
        fn torus_metric(ax in 0.0f64..100.0, ay in 0.0f64..100.0, bx in 0.0f64..100.0,
                        by in 0.0f64..100.0, cx in 0.0f64..100.0, cy in 0.0f64..100.0) {
            let t = Torus::new(100.0);
            let (a, b, c) = ([ax, ay], [bx, by], [cx, cy]);
            prop_assert!((t.dist(&a, &b) - t.dist(&b, &a)).abs() < 1e-12);
            prop_assert!(t.dist(&a, &c) <= t.dist(&a, &b) + t.dist(&b, &c) + 1e-9);
            prop_assert!(t.dist(&a, &b) <= 50.0 * 2f64.sqrt() + 1e-9);
        }

        #[test]
        fn path_gains_positive_and_reciprocal(ax in 0.0f64..100.0, ay in 0.0f64..100.0,
                                              bx in 0.0f64..100.0, by in 0.0f64..100.0) {
            let t = Torus::new(100.0);
            let (a, b) = ([ax, ay], [bx, by]);
            let d2 = t.dist2(&a, &b);
            prop_assume!(d2 > 1e-6);
            let g1 = path_gain(t.dist2(&a, &b), 3.0);
            let g2 = path_gain(t.dist2(&b, &a), 3.0);
            prop_assert!(g1 > 0.0 && g1 == g2);
            prop_assert!((path_gain(d2, 3.0) / d2.powf(-1.5) - 1.0).abs() < 1e-12);
        }
    }
}
