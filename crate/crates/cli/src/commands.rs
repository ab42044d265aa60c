//! Subcommand implementations and their output files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use movnet::analytic::{solve_delays, SlotState};
use movnet::backhaul::{violation_probability, BackhaulContext};
use movnet::numerics::{FixedPointSettings, QuadratureSettings};
use movnet::optimizer::{optimize_deployment, write_trace_csv, OptimizationResult};
use movnet::scenario::{NetworkConfiguration, Scenario};
use movnet::simulator::{run_campaign, write_report_csv, CampaignRow, Setup};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{
    derive_seed, load_document, read_configuration, read_scenario_text, usage, Loaded,
    Provenance, RunManifest, SWEEP_STREAM_BASE,
};

/// `α - 2` below this makes the mean interference blow up like `1/(α - 2)`.
const NEAR_DIVERGENT_ALPHA_GAP: f64 = 0.25;

pub const DELAYS_CSV_HEADER: &str = "region,slot,tau_m,tau_s,util_m,util_s,violation,feasible,status";
pub const SWEEP_CSV_HEADER_TAIL: &str = "region,slot,metric,value";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn region_label(s: &Scenario, z: usize) -> String {
    s.regions[z].name.clone().unwrap_or_else(|| format!("r{z}"))
}

struct Inputs {
    loaded: Loaded,
    provenance: Provenance,
}

fn prepare(m: &RunManifest) -> Result<Inputs> {
    let text = read_scenario_text(&m.scenario_path)?;
    let mut loaded = load_document(&text, &m.overrides)?.seeded(m.seed, m);
    let mut inputs = vec![text];
    if let Some(p) = &m.config_path {
        let (cfg, ctext) = read_configuration(p)?;
        loaded.configuration = Some(cfg);
        inputs.push(ctext);
    }
    let refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
    let provenance = m.provenance(&refs);
    fs::create_dir_all(&m.output_dir)
        .with_context(|| format!("creating {}", m.output_dir.display()))?;
    Ok(Inputs { loaded, provenance })
}

fn require_configuration(l: &Loaded) -> Result<NetworkConfiguration> {
    let cfg = l.configuration.clone().ok_or_else(|| {
        usage("scenario has no `configuration` block; add one or pass --config")
    })?;
    cfg.check_dimensions(&l.scenario)?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRow {
    pub region: String,
    pub slot: usize,
    pub tau_m: Option<f64>,
    pub tau_s: Option<f64>,
    pub util_m: Option<f64>,
    pub util_s: Option<f64>,
    pub violation: Option<f64>,
    pub feasible: bool,
    pub status: String,
}

/// Full-accuracy analytic evaluation of every region/slot cell.
pub fn evaluate_cells(s: &Scenario, cfg: &NetworkConfiguration) -> Vec<CellRow> {
    let fp = FixedPointSettings::default();
    let q = QuadratureSettings::default();
    let radio = &s.radio;
    let tau0 = radio.target_delay_tau0_s;
    let mut cells = Vec::new();
    for z in 0..s.num_regions() {
        for (j, &lu) in s.regions[z].user_density_per_slot.iter().enumerate() {
            cells.push((z, j, lu));
        }
    }
    cells
        .par_iter()
        .map(|&(z, j, lu)| {
            let lm = cfg.mbs_density[z][j];
            let st = SlotState::new(lu, cfg.sbs_density[z], lm, cfg.wps_weight_phi[z][j]);
            let mut row = CellRow {
                region: region_label(s, z),
                slot: j,
                tau_m: None,
                tau_s: None,
                util_m: None,
                util_s: None,
                violation: None,
                feasible: false,
                status: "ok".into(),
            };
            let sol = match solve_delays(&st, radio, &fp, &q) {
                Ok(sol) => sol,
                Err(e) => {
                    row.status = format!("error: {e}");
                    return row;
                }
            };
            row.tau_s = Some(sol.tau_bar_s);
            row.util_s = Some(sol.util_s);
            if lm > 0.0 {
                row.tau_m = Some(sol.tau_bar_m);
                row.util_m = Some(sol.util_m);
            }
            if !sol.converged {
                row.status = "not_converged".into();
                return row;
            }
            let mut feasible = sol.tau_bar_s <= tau0;
            if lm > 0.0 {
                feasible &= sol.tau_bar_m <= tau0;
                match BackhaulContext::new(&st, radio, &sol).and_then(|c| violation_probability(&c, &q)) {
                    Ok(v) => {
                        row.violation = Some(v);
                        feasible &= v <= radio.violation_target_delta;
                    }
                    Err(e) => {
                        row.status = format!("violation error: {e}");
                        feasible = false;
                    }
                }
            }
            row.feasible = feasible;
            row
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn near_divergent(s: &Scenario) -> bool {
    s.radio.path_loss_alpha - 2.0 < NEAR_DIVERGENT_ALPHA_GAP
}

pub fn cmd_evaluate(m: &RunManifest) -> Result<()> {
    let Inputs { loaded, provenance } = prepare(m)?;
    let cfg = require_configuration(&loaded)?;
    let s = &loaded.scenario;
    let rows = evaluate_cells(s, &cfg);
    let mut w = create(&m.output_dir, "delays.csv")?;
    writeln!(w, "{}", provenance.csv_comment())?;
    writeln!(w, "{DELAYS_CSV_HEADER}")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&r.region),
            r.slot,
            opt(r.tau_m),
            opt(r.tau_s),
            opt(r.util_m),
            opt(r.util_s),
            opt(r.violation),
            r.feasible,
            csv_field(&r.status)
        )?;
    }
    w.flush()?;
    let divergent = near_divergent(s);
    if divergent {
        log::warn!(
            "path-loss exponent {} is close to 2: mean interference is near divergence",
            s.radio.path_loss_alpha
        );
    }
    write_json(
        &m.output_dir,
        "summary.json",
        &json!({
            "provenance": provenance,
            "command": "evaluate",
            "near_divergent_interference": divergent,
            "path_loss_alpha": s.radio.path_loss_alpha,
            "all_feasible": rows.iter().all(|r| r.feasible),
            "cells": rows,
        }),
    )
}

fn campaign_setups(s: &Scenario, cfg: &NetworkConfiguration) -> Vec<Setup> {
    let mut setups = Vec::new();
    for z in 0..s.num_regions() {
        for (j, &lu) in s.regions[z].user_density_per_slot.iter().enumerate() {
            setups.push(Setup {
                id: format!("{}_s{j}", region_label(s, z)),
                st: SlotState::new(lu, cfg.sbs_density[z], cfg.mbs_density[z][j], cfg.wps_weight_phi[z][j]),
                radio: s.radio.clone(),
            });
        }
    }
    setups
}

pub fn cmd_simulate(m: &RunManifest) -> Result<()> {
    let Inputs { loaded, provenance } = prepare(m)?;
    let cfg = require_configuration(&loaded)?;
    let s = &loaded.scenario;
    let sim = &loaded.simulation;
    if sim.replications < 2 {
        log::warn!("{} replication(s): confidence intervals are left empty", sim.replications);
    }
    let rows: Vec<CampaignRow> = run_campaign(
        &campaign_setups(s, &cfg),
        sim,
        &FixedPointSettings::default(),
        &QuadratureSettings::default(),
    )?;
    let mut w = create(&m.output_dir, "sim_report.csv")?;
    writeln!(w, "{}", provenance.csv_comment())?;
    write_report_csv(&rows, &mut w)?;
    w.flush()?;
    let summary: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "id": r.id,
                "analysis_in_ci": r.analysis_in_ci(),
                "sbs_in_ci": r.sbs_in_ci(),
                "mbs_in_ci": r.mbs_in_ci(),
                "analytic_tau_s": r.analytic.tau_bar_s,
                "analytic_tau_m": r.analytic.tau_bar_m,
                "simulated": r.report,
                "analytic_violation": r.analytic_violation,
            })
        })
        .collect();
    write_json(
        &m.output_dir,
        "summary.json",
        &json!({
            "provenance": provenance,
            "command": "simulate",
            "simulation": sim,
            "all_analysis_in_ci": rows.iter().all(|r| r.analysis_in_ci()),
            "rows": summary,
        }),
    )
}

fn optimization_summary(s: &Scenario, r: &OptimizationResult) -> serde_json::Value {
    let mut cells = Vec::new();
    for z in 0..s.num_regions() {
        for j in 0..s.num_slots_j {
            let d = r.per_slot_solutions[z][j].as_ref();
            let tau0 = s.radio.target_delay_tau0_s;
            let lm = r.config.mbs_density[z][j];
            let v = r.violation_grid[z][j];
            let feasible = d.is_some_and(|d| {
                d.converged
                    && d.tau_bar_s <= tau0
                    && (lm <= 0.0
                        || (d.tau_bar_m <= tau0 && v.is_some_and(|v| v <= s.radio.violation_target_delta)))
            });
            cells.push(json!({
                "region": region_label(s, z),
                "slot": j,
                "tau_s": d.map(|d| d.tau_bar_s),
                "tau_m": if lm > 0.0 { d.map(|d| d.tau_bar_m) } else { None },
                "util_s": d.map(|d| d.util_s),
                "violation": v,
                "feasible": feasible,
            }));
        }
    }
    json!({
        "cost": r.cost,
        "fitness": r.fitness,
        "feasible": r.feasible,
        "reuse_fraction": r.reuse_fraction,
        "fleet_sharing": r.fleet_sharing,
        "mbs_share": mbs_share(s, &r.config),
        "static_cost": r.static_cost,
        "static_bounds": r.static_bounds,
        "step_fitness": r.step_fitness,
        "cells": cells,
    })
}

/// Mean MBS density over slots as a fraction of the mean total density.
pub fn mbs_share(s: &Scenario, cfg: &NetworkConfiguration) -> f64 {
    let totals = cfg.slot_mbs_totals(s);
    let m = totals.iter().sum::<f64>() / totals.len() as f64;
    let sbs: f64 = cfg.sbs_density.iter().zip(&s.regions).map(|(l, r)| l * r.area_m2).sum();
    if m + sbs > 0.0 {
        m / (m + sbs)
    } else {
        0.0
    }
}

pub fn cmd_optimize(m: &RunManifest) -> Result<()> {
    let Inputs { loaded, provenance } = prepare(m)?;
    let s = &loaded.scenario;
    let r = optimize_deployment(s)?;
    write_json(
        &m.output_dir,
        "config.json",
        &json!({ "provenance": provenance, "configuration": r.config }),
    )?;
    let mut w = create(&m.output_dir, "trace.csv")?;
    writeln!(w, "{}", provenance.csv_comment())?;
    write_trace_csv(&r.trace, &mut w)?;
    w.flush()?;
    let mut summary = optimization_summary(s, &r);
    summary["provenance"] = serde_json::to_value(&provenance)?;
    summary["command"] = json!("optimize");
    write_json(&m.output_dir, "summary.json", &summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTask {
    Evaluate,
    Optimize,
}

struct MetricRow {
    region: Option<String>,
    slot: Option<usize>,
    metric: &'static str,
    value: f64,
}

fn scalar(metric: &'static str, value: f64) -> MetricRow {
    MetricRow {
        region: None,
        slot: None,
        metric,
        value,
    }
}

fn sweep_point(text: &str, m: &RunManifest, task: SweepTask, index: usize, point: &[(String, String)]) -> Result<Vec<MetricRow>> {
    let mut overrides = m.overrides.clone();
    overrides.extend(point.iter().cloned());
    let seed = derive_seed(m.seed, SWEEP_STREAM_BASE + index as u64);
    let loaded = load_document(text, &overrides)?.seeded(seed, m);
    let s = &loaded.scenario;
    let mut out = Vec::new();
    match task {
        SweepTask::Optimize => {
            let r = optimize_deployment(s)?;
            out.push(scalar("cost", r.cost));
            out.push(scalar("static_cost", r.static_cost));
            out.push(scalar("reuse_fraction", r.reuse_fraction));
            out.push(scalar("fleet_sharing", r.fleet_sharing));
            out.push(scalar("mbs_share", mbs_share(s, &r.config)));
            out.push(scalar("feasible", f64::from(u8::from(r.feasible))));
            for z in 0..s.num_regions() {
                let region = Some(region_label(s, z));
                out.push(MetricRow {
                    region: region.clone(),
                    slot: None,
                    metric: "sbs_density",
                    value: r.config.sbs_density[z],
                });
                for j in 0..s.num_slots_j {
                    for (metric, value) in [
                        ("mbs_density", r.config.mbs_density[z][j]),
                        ("phi", r.config.wps_weight_phi[z][j]),
                        ("util_s", r.per_slot_solutions[z][j].as_ref().map_or(f64::NAN, |d| d.util_s)),
                        ("util_m", r.per_slot_solutions[z][j].as_ref().map_or(f64::NAN, |d| d.util_m)),
                    ] {
                        out.push(MetricRow {
                            region: region.clone(),
                            slot: Some(j),
                            metric,
                            value,
                        });
                    }
                }
            }
        }
        SweepTask::Evaluate => {
            let cfg = require_configuration(&loaded)?;
            for c in evaluate_cells(s, &cfg) {
                for (metric, value) in [
                    ("tau_m", c.tau_m),
                    ("tau_s", c.tau_s),
                    ("util_m", c.util_m),
                    ("util_s", c.util_s),
                    ("violation", c.violation),
                    ("feasible", Some(f64::from(u8::from(c.feasible)))),
                ] {
                    if let Some(value) = value {
                        out.push(MetricRow {
                            region: Some(c.region.clone()),
                            slot: Some(c.slot),
                            metric,
                            value,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

pub fn cmd_sweep(m: &RunManifest, task: SweepTask) -> Result<()> {
    if m.grid.is_empty() || m.grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(usage("empty sweep grid"));
    }
    let Inputs { provenance, .. } = prepare(m)?;
    let text = read_scenario_text(&m.scenario_path)?;
    let points = grid_points(&m.grid);
    let results: Vec<Result<Vec<MetricRow>>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| sweep_point(&text, m, task, i, p))
        .collect();
    let mut w = create(&m.output_dir, "sweep.csv")?;
    writeln!(w, "{}", provenance.csv_comment())?;
    let keys: Vec<String> = m.grid.iter().map(|(k, _)| csv_field(k)).collect();
    writeln!(w, "point,{},{SWEEP_CSV_HEADER_TAIL}", keys.join(","))?;
    let mut failures = 0;
    for (i, (p, r)) in points.iter().zip(results).enumerate() {
        let values: Vec<String> = p.iter().map(|(_, v)| csv_field(v)).collect();
        match r {
            Ok(rows) => {
                for row in rows {
                    writeln!(
                        w,
                        "{i},{},{},{},{},{:e}",
                        values.join(","),
                        row.region.as_deref().map(csv_field).unwrap_or_default(),
                        row.slot.map(|s| s.to_string()).unwrap_or_default(),
                        row.metric,
                        row.value
                    )?;
                }
            }
            Err(e) => {
                failures += 1;
                log::error!("sweep point {i} ({p:?}) failed: {e:#}");
            }
        }
    }
    w.flush()?;
    write_json(
        &m.output_dir,
        "summary.json",
        &json!({
            "provenance": provenance,
            "command": "sweep",
            "points": points.len(),
            "failed_points": failures,
        }),
    )?;
    if failures > 0 {
        anyhow::bail!("{failures} of {} sweep points failed", points.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cross_product() {
        let g = vec![
            ("a".to_string(), vec!["1".to_string(), "2".to_string()]),
            ("b".to_string(), vec!["x".to_string(), "y".to_string(), "z".to_string()]),
        ];
        let p = grid_points(&g);
        assert_eq!(p.len(), 6);
        assert_eq!(p[5], vec![("a".into(), "2".into()), ("b".into(), "z".into())]);
    }
}
