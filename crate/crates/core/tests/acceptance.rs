//! End-to-end acceptance checks. Every test writes one `criterion N: PASS|FAIL`
//! line straight to stderr (so it shows up without `--nocapture`) and then
//! asserts the same condition.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use movnet::analytic::{solve_delays, DelaySolution, SlotState};
use movnet::backhaul::{
    bh_delay_cdf, bh_delay_g, demand_delay_mass, demand_delay_pdf_scaled, violation_probability,
    BackhaulContext,
};
use movnet::geometry::{serving_distance_cdf, CellIntegralCache, TierDensities};
use movnet::numerics::{integrate_1d, FixedPointSettings, QuadratureSettings};
use movnet::optimizer::{optimize_deployment, OptimizationResult};
use movnet::scenario::{load_scenario, CommutingProfile, NetworkConfiguration, RadioParams, Scenario};
use movnet::simulator::voronoi::conditioned_cell_area;
use movnet::simulator::{measure_slot, run_campaign, CampaignRow, SimSettings, Setup};
use movnet::stats::{ks_statistic, ks_test};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict}  {detail}");
}

fn fixture_json(name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn table1() -> (Scenario, NetworkConfiguration, SimSettings) {
    let doc = fixture_json("table1.json");
    let s = load_scenario(fixture("table1.json")).unwrap();
    let cfg = serde_json::from_value(doc["configuration"].clone()).unwrap();
    let sim = serde_json::from_value(doc["simulation"].clone()).unwrap();
    (s, cfg, sim)
}

fn table1_states() -> Vec<SlotState> {
    let (s, cfg, _) = table1();
    (0..s.num_regions())
        .map(|z| {
            SlotState::new(
                s.regions[z].user_density_per_slot[0],
                cfg.sbs_density[z],
                cfg.mbs_density[z][0],
                cfg.wps_weight_phi[z][0],
            )
        })
        .collect()
}

/// The three-column campaign, with per-MBS samples kept for the backhaul check.
fn campaign() -> &'static Vec<CampaignRow> {
    static ROWS: OnceLock<Vec<CampaignRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let (s, _, mut sim) = table1();
        assert!(sim.replications >= 30 && sim.window_side_m >= 2000.0);
        sim.collect_samples = true;
        let setups: Vec<Setup> = table1_states()
            .into_iter()
            .zip(&s.regions)
            .map(|(st, r)| Setup {
                id: r.name.clone().unwrap(),
                st,
                radio: s.radio.clone(),
            })
            .collect();
        run_campaign(&setups, &sim, &FixedPointSettings::default(), &QuadratureSettings::default()).unwrap()
    })
}

/// Optimizer runs shared between criteria, keyed by a label.
fn optimized(label: &str, build: impl FnOnce() -> Scenario) -> Arc<OptimizationResult> {
    static RUNS: OnceLock<Mutex<HashMap<String, Arc<OnceLock<Arc<OptimizationResult>>>>>> = OnceLock::new();
    let slot = RUNS
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(label.to_string())
        .or_default()
        .clone();
    slot.get_or_init(|| Arc::new(optimize_deployment(&build()).unwrap())).clone()
}

fn mbs_share(s: &Scenario, r: &OptimizationResult) -> f64 {
    let (mut m, mut total) = (0.0, 0.0);
    for (z, region) in s.regions.iter().enumerate() {
        let mean_m = r.config.mbs_density[z].iter().sum::<f64>() / s.num_slots_j as f64;
        m += mean_m * region.area_m2;
        total += (mean_m + r.config.sbs_density[z]) * region.area_m2;
    }
    m / total
}

fn single_region(lambda_u: f64, mu: f64) -> Scenario {
    let mut s = load_scenario(fixture("single_region.json")).unwrap();
    s.regions[0].user_density_per_slot = vec![lambda_u];
    s.mbs_relative_cost_mu = mu;
    s
}

fn commuting(peak_to_trough: f64) -> Scenario {
    let mut s = load_scenario(fixture("commuting.json")).unwrap();
    for (region, peak) in s.regions.iter_mut().zip([2, 0]) {
        let p = CommutingProfile {
            mean_density: 0.01,
            peak_to_trough,
            peak_slot: peak,
        };
        region.user_density_per_slot = p.densities(4);
    }
    s
}

#[test]
fn criterion_01_table1_means_inside_ci() {
    const REFERENCE_S: [f64; 3] = [334.0, 150.0, 274.0];
    const REFERENCE_M: [f64; 3] = [437.0, 403.0, 350.0];
    let rows = campaign();
    let mut pass = true;
    let mut secondary = true;
    let mut cells = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let s_in = r.sbs_in_ci() == Some(true);
        let m_in = r.mbs_in_ci() == Some(true);
        pass &= s_in && m_in;
        let (ts, tm) = (r.analytic.tau_bar_s * 1e6, r.analytic.tau_bar_m * 1e6);
        secondary &= (ts / REFERENCE_S[i] - 1.0).abs() <= 0.2 && (tm / REFERENCE_M[i] - 1.0).abs() <= 0.2;
        let ci = |t: &Option<movnet::simulator::TierStats>| {
            t.as_ref()
                .and_then(|t| t.ci95)
                .map(|(a, b)| format!("[{:.1},{:.1}]", a * 1e6, b * 1e6))
                .unwrap_or_default()
        };
        cells.push(format!(
            "{}: s {ts:.1} in {} {} / m {tm:.1} in {} {}",
            r.id,
            ci(&r.report.sbs),
            if s_in { "ok" } else { "out" },
            ci(&r.report.mbs),
            if m_in { "ok" } else { "out" },
        ));
    }
    report(
        1,
        pass,
        &format!(
            "analytic means (us) vs 95% CI; {}; within 20% of reference values: {}",
            cells.join("; "),
            if secondary { "yes" } else { "no" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_violation_probability_matches_simulation() {
    const REFERENCE: [f64; 3] = [0.0155, 0.0, 0.0056];
    let rows = campaign();
    let mut pass = true;
    let mut cells = Vec::new();
    for (r, reference) in rows.iter().zip(REFERENCE) {
        let v = r.analytic_violation.unwrap();
        let e = r.report.empirical_violation.unwrap();
        pass &= (v - e).abs() <= 0.02;
        cells.push(format!(
            "{}: analytic {:.2}% empirical {:.2}% (reference {:.2}%)",
            r.id,
            100.0 * v,
            100.0 * e,
            100.0 * reference
        ));
    }
    report(2, pass, &format!("|analytic - empirical| <= 2 pp; {}", cells.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_03_serving_distance_law() {
    // (λ_s, λ_m, P_mobile); P_static = 10 W, so ρ = (P_m / 10)^(1/3).
    let combos = [(2e-4, 2e-4, 10.0), (1e-4, 4e-4, 1.0), (3e-4, 1e-4, 5.0)];
    let (base, _, _) = table1();
    let mut pass = true;
    let mut cells = Vec::new();
    for (i, &(ls, lm, pm)) in combos.iter().enumerate() {
        let mut radio = base.radio.clone();
        radio.power_mobile_w = pm;
        // sparse users keep the per-realization correlation of distances small
        let st = SlotState::new(1e-4, ls, lm, 1.0);
        let sim = SimSettings {
            replications: 30,
            rng_seed: 10 + i as u64,
            utilization_coupling_iters: 1,
            max_delay_users: Some(1),
            collect_samples: true,
            ..SimSettings::default()
        };
        let dump = measure_slot(&st, &radio, &sim).unwrap().samples.unwrap();
        let samples = &dump.serving_distance_eq[..10_000];
        let d = TierDensities::from_radio(ls, lm, &radio);
        let ks = ks_test(samples, |r| serving_distance_cdf(r, &d));
        pass &= ks.p_value >= 0.01;
        cells.push(format!("rho={:.3}: D={:.4} p={:.3}", d.rho_ms, ks.statistic, ks.p_value));
    }
    report(3, pass, &format!("KS on 1e4 distances, p >= 0.01; {}", cells.join("; ")));
    assert!(pass);
}

fn mc_mean_area(lambda: f64, void_r: f64, n: usize, seed: u64) -> f64 {
    const CHUNK: usize = 5000;
    let total: f64 = (0..n / CHUNK)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            (0..CHUNK).map(|_| conditioned_cell_area(lambda, void_r, &mut rng)).sum::<f64>()
        })
        .sum();
    total / (n / CHUNK * CHUNK) as f64
}

#[test]
fn criterion_04_cell_integrals_match_voronoi() {
    // middle column of the table1 fixture, equal powers: both tiers share one tessellation.
    let (ls, lm) = (3.39e-4, 3.39e-4);
    let d = TierDensities::new(ls, lm, 1.0);
    let h = CellIntegralCache::global().integrals(&d).unwrap();
    let n = 100_000;
    let mut pass = true;
    let mut worst = 0.0f64;
    for (i, u) in [0.1, 0.3, 0.6, 1.0, 1.5].into_iter().enumerate() {
        let r_all = u / (ls + lm).sqrt();
        let mc_all = mc_mean_area(ls + lm, r_all, n, 100 + i as u64);
        let r_bh = u / ls.sqrt();
        let mc_bh = mc_mean_area(ls, r_bh, n, 200 + i as u64);
        for rel in [
            h.h_m(r_all) / mc_all - 1.0,
            h.h_s(r_all) / mc_all - 1.0,
            h.h_bh(r_bh) / mc_bh - 1.0,
        ] {
            worst = worst.max(rel.abs());
        }
    }
    pass &= worst <= 0.02;
    let at_zero = h.h_bh(0.0) * ls;
    pass &= (at_zero - 1.0).abs() <= 0.05;
    report(
        4,
        pass,
        &format!("worst |h/MC - 1| over 5 radii = {:.3}% (<= 2%); h_BH(0) lambda_s = {at_zero:.4}", 100.0 * worst),
    );
    assert!(pass);
}

#[test]
fn criterion_05_demand_delay_density() {
    let q = QuadratureSettings::default();
    let (lu, ls, lm, tau0) = (1e-2, 3.39e-4, 3.39e-4, 1e-3);
    let lambda = ls + lm;
    let a = tau0 * lambda / lu;
    let mass = demand_delay_mass(a, &q).unwrap();
    let n = 100_000;
    let mut samples: Vec<f64> = (0..20)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            rng.set_stream(c);
            (0..n / 20)
                .map(|_| tau0 / (lu * conditioned_cell_area(lambda, 0.0, &mut rng)))
                .collect::<Vec<_>>()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    // CDF at the sorted samples by accumulating the density between them
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &t in &samples {
        acc += integrate_1d(|x| demand_delay_pdf_scaled(x, a), prev, t, &q.with_rel_tol(1e-8)).unwrap();
        cdf.push(acc);
        prev = t;
    }
    let nf = n as f64;
    let d = cdf
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / nf).max((i + 1) as f64 / nf - f))
        .fold(0.0, f64::max);
    let pass = (mass - 1.0).abs() <= 1e-6 && d < 0.05;
    report(5, pass, &format!("mass - 1 = {:.2e}; KS D = {d:.4} on 1e5 Voronoi areas (< 0.05)", mass - 1.0));
    assert!(pass);
}

#[test]
fn criterion_06_backhaul_delay_cdf() {
    let rows = campaign();
    let row = &rows[1];
    let (s, _, _) = table1();
    let st = table1_states()[1];
    let ctx = BackhaulContext::new(&st, &s.radio, &row.analytic).unwrap();
    let samples = &row.report.samples.as_ref().unwrap().backhaul_delay;
    assert!(samples.len() >= 10_000, "{} MBS samples", samples.len());
    let d = ks_statistic(samples, |t| bh_delay_cdf(t, &ctx).unwrap());
    let pass = d < 0.05;
    report(6, pass, &format!("KS D = {d:.4} on {} simulated MBS backhaul delays (< 0.05)", samples.len()));
    assert!(pass);
}

#[test]
fn criterion_07_fixed_point_contracts() {
    let (s, _, _) = table1();
    let fp = FixedPointSettings::default();
    let q = QuadratureSettings::default();
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut iters = Vec::new();
    let mut fully_monotone = true;
    for lu in [1e-3, 1e-2, 1e-1] {
        for ratio in [0.02, 0.07, 0.18] {
            let bs = ratio * lu;
            let st = SlotState::new(lu, bs / 2.0, bs / 2.0, 1.0);
            let sol: DelaySolution = solve_delays(&st, &s.radio, &fp, &q).unwrap();
            let h = &sol.residual_history;
            let monotone = h.len() <= 5 || h[4..].windows(2).all(|w| w[1] <= w[0]);
            fully_monotone &= h.windows(2).all(|w| w[1] <= w[0]);
            pass &= sol.converged && sol.residual <= 1e-9 && monotone;
            worst = worst.max(sol.residual);
            iters.push(sol.iterations);
        }
    }
    report(
        7,
        pass,
        &format!("3x3 grid: worst final residual {worst:.1e} (<= 1e-9), iterations {iters:?}, decay monotone from the first step: {fully_monotone}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_optimizer_switches_with_cost() {
    let grid = [1e-3, 1e-2, 1e-1];
    let mut shares = HashMap::new();
    for mu in [1.0, 0.1] {
        for lu in grid {
            let build = || single_region(lu, mu);
            let r = optimized(&format!("single_{lu}_{mu}"), build);
            shares.insert((mu.to_bits(), lu.to_bits()), mbs_share(&build(), &r));
        }
    }
    let share = |mu: f64, lu: f64| shares[&(mu.to_bits(), lu.to_bits())];
    let unit_cost_static = grid.iter().all(|&lu| share(1.0, lu) < 0.01);
    let switches = share(0.1, 1e-2) >= 0.01 && share(0.1, 1e-1) < 0.01;
    let pass = unit_cost_static && switches;
    let fmt = |mu: f64| grid.iter().map(|&lu| format!("{:.1}%", 100.0 * share(mu, lu))).collect::<Vec<_>>().join("/");
    report(
        8,
        pass,
        &format!("MBS share at lambda_u 1e-3/1e-2/1e-1: mu=1 {}, mu=0.1 {}", fmt(1.0), fmt(0.1)),
    );
    assert!(pass);
}

#[test]
fn criterion_09_reuse_needs_commuting() {
    let ratios = [10.0, 3.0, 1.0];
    let reuse: Vec<f64> = ratios
        .iter()
        .map(|&p| optimized(&format!("commuting_{p}"), || commuting(p)).reuse_fraction)
        .collect();
    let floor = commuting(1.0).optimizer.reuse_noise_floor;
    let positive = reuse[0] > 0.0;
    let flat = reuse[2] <= floor;
    let monotone = reuse.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let pass = positive && flat && monotone;
    report(
        9,
        pass,
        &format!(
            "reuse at peak-to-trough 10/3/1 = {:.3}/{:.3}/{:.3}; positive {positive}, flat <= {floor} {flat}, nonincreasing {monotone}",
            reuse[0], reuse[1], reuse[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_dominance_chain() {
    let runs = [
        ("table1", optimized("table1", || table1().0)),
        ("single_region", optimized("single_0.01_1", || single_region(1e-2, 1.0))),
        ("commuting", optimized("commuting_10", || commuting(10.0))),
    ];
    let mut pass = true;
    let mut cells = Vec::new();
    for (name, r) in &runs {
        let [f1, f2, f3] = r.step_fitness;
        // step fitnesses are sums over regions; allow for summation order
        let slack = 1e-12 * f1.abs().max(1.0);
        pass &= f3 <= f2 + slack && f2 <= f1 + slack;
        cells.push(format!("{name}: {f1:.6} >= {f2:.6} >= {f3:.6}"));
    }
    report(10, pass, &cells.join("; "));
    assert!(pass);
}

#[test]
fn criterion_11_violation_monte_carlo_identity() {
    let (s, _, _) = table1();
    let radio: RadioParams = s.radio.clone();
    let fp = FixedPointSettings::default();
    let q = QuadratureSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pass = true;
    let mut cells = Vec::new();
    while cells.len() < 5 {
        let lu = 10f64.powf(rng.gen_range(-3.0..-1.0));
        let bs = lu * 10f64.powf(rng.gen_range(-2.0..-0.7));
        let frac: f64 = rng.gen_range(0.2..0.8);
        let phi = 10f64.powf(rng.gen_range(-1.0..0.5));
        let st = SlotState::new(lu, bs * (1.0 - frac), bs * frac, phi);
        let sol = match solve_delays(&st, &radio, &fp, &q) {
            Ok(sol) if sol.converged => sol,
            _ => continue,
        };
        let ctx = BackhaulContext::new(&st, &radio, &sol).unwrap();
        let v = violation_probability(&ctx, &q).unwrap();
        let a = ctx.demand_scale();
        let u = ctx.sbs_utilization();
        let seed = rng.gen::<u64>();
        let n = 1_000_000usize;
        let hits: usize = (0..20u64)
            .into_par_iter()
            .map(|c| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(c);
                let area = Gamma::new(3.5, 1.0 / 3.5).unwrap();
                (0..n / 20)
                    .filter(|_| {
                        let e: f64 = r.gen();
                        let dist = (-(1.0 - e).ln() / (std::f64::consts::PI * st.lambda_s)).sqrt();
                        let tau_d = a / area.sample(&mut r);
                        bh_delay_g(dist.max(1e-9), &ctx).unwrap() > u * tau_d
                    })
                    .count()
            })
            .sum();
        let p = hits as f64 / n as f64;
        let sigma = (v * (1.0 - v) / n as f64).sqrt().max(1e-6);
        let z = (p - v) / sigma;
        pass &= z.abs() <= 3.0;
        cells.push(format!("V={v:.4} mc={p:.4} z={z:+.2}"));
    }
    report(11, pass, &format!("quadrature vs 1e6 draws within 3 sigma; {}", cells.join("; ")));
    assert!(pass);
}
