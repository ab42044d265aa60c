//! Population-based box-constrained minimizers: a hippopotamus-style
//! three-phase search and a plain real-coded genetic algorithm.
//!
//! Both work on the unit cube internally. Every generation first draws all
//! candidates from the RNG, then evaluates them in parallel, then applies the
//! greedy replacements in index order, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::OptimizerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaheuristicSettings {
    pub population: usize,
    pub stall_window: usize,
    /// Stop once the best fitness improved by less than
    /// `stall_tol * max(1, |best|)` per iteration, averaged over the window.
    pub stall_tol: f64,
    pub max_iters: usize,
    pub rng_seed: u64,
}

impl Default for MetaheuristicSettings {
    fn default() -> Self {
        Self {
            population: 70,
            stall_window: 30,
            stall_tol: 1e-8,
            max_iters: 200,
            rng_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Hippopotamus,
    Genetic,
}

/// Axis-aligned search box; `lo[i] == hi[i]` pins a coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, OptimizerError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(OptimizerError::DegenerateBounds(format!(
                "{} lower and {} upper bounds",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(OptimizerError::DegenerateBounds(format!(
                    "coordinate {i}: [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    fn to_real(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (l, h))| {
                // the box corners map back exactly
                if h <= l || *u <= 0.0 {
                    *l
                } else if *u >= 1.0 {
                    *h
                } else {
                    (l + u * (h - l)).clamp(*l, *h)
                }
            })
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| if h > l { ((x - l) / (h - l)).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }
}

/// Objective value plus whether the point satisfies every constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub best_fitness: f64,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Vec<f64>,
    pub fitness: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

pub trait Metaheuristic {
    /// Minimizes `f` over `bounds`; `seeds` (real coordinates) join the
    /// initial population.
    fn minimize(
        &self,
        f: &(dyn Fn(&[f64]) -> Scored + Sync),
        bounds: &Bounds,
        settings: &MetaheuristicSettings,
        seeds: &[Vec<f64>],
    ) -> Result<SearchOutcome, OptimizerError>;
}

pub fn algorithm(kind: Algorithm) -> Box<dyn Metaheuristic + Sync> {
    match kind {
        Algorithm::Hippopotamus => Box::new(Hippopotamus),
        Algorithm::Genetic => Box::new(Genetic::default()),
    }
}

/// Minimizes an unconstrained objective with the hippopotamus search.
pub fn metaheuristic_minimize<F: Fn(&[f64]) -> f64 + Sync>(
    f: F,
    bounds: &Bounds,
    settings: &MetaheuristicSettings,
) -> Result<(Vec<f64>, f64), OptimizerError> {
    let g = |x: &[f64]| Scored {
        value: f(x),
        feasible: true,
    };
    let out = Hippopotamus.minimize(&g, bounds, settings, &[])?;
    Ok((out.best, out.fitness))
}

fn check_settings(s: &MetaheuristicSettings) -> Result<(), OptimizerError> {
    if s.population < 4 || s.stall_window == 0 || s.max_iters == 0 || !(s.stall_tol > 0.0) {
        return Err(OptimizerError::Settings(format!(
            "metaheuristic needs population >= 4 and positive stall window, tolerance and iterations, got {s:?}"
        )));
    }
    Ok(())
}

struct Population {
    units: Vec<Vec<f64>>,
    // the evaluated points; equal to the mapped units except for seeds,
    // which are kept verbatim
    reals: Vec<Vec<f64>>,
    scores: Vec<Scored>,
}

impl Population {
    fn best(&self) -> usize {
        (0..self.scores.len())
            .min_by(|&a, &b| self.scores[a].value.total_cmp(&self.scores[b].value))
            .expect("non-empty population")
    }

    fn replace(&mut self, i: usize, unit: &[f64], score: Scored, bounds: &Bounds) {
        self.units[i] = unit.to_vec();
        self.reals[i] = bounds.to_real(unit);
        self.scores[i] = score;
    }

    fn feasible_count(&self) -> usize {
        self.scores.iter().filter(|s| s.feasible).count()
    }
}

struct Runner<'a> {
    f: &'a (dyn Fn(&[f64]) -> Scored + Sync),
    bounds: &'a Bounds,
    evaluations: usize,
}

impl Runner<'_> {
    fn eval(&mut self, units: &[Vec<f64>]) -> Vec<Scored> {
        let reals: Vec<Vec<f64>> = units.iter().map(|u| self.bounds.to_real(u)).collect();
        self.eval_real(&reals)
    }

    fn eval_real(&mut self, reals: &[Vec<f64>]) -> Vec<Scored> {
        self.evaluations += reals.len();
        let f = self.f;
        reals
            .par_iter()
            .map(|x| {
                let s = f(x);
                Scored {
                    value: if s.value.is_nan() { f64::MAX } else { s.value },
                    feasible: s.feasible,
                }
            })
            .collect()
    }

    fn init(&mut self, settings: &MetaheuristicSettings, seeds: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Population {
        let d = self.bounds.dim();
        let b = self.bounds;
        let mut reals: Vec<Vec<f64>> = seeds
            .iter()
            .take(settings.population)
            .map(|s| {
                s.iter()
                    .zip(b.lo.iter().zip(&b.hi))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect()
            })
            .collect();
        let mut units: Vec<Vec<f64>> = reals.iter().map(|s| b.to_unit(s)).collect();
        while units.len() < settings.population {
            let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            reals.push(b.to_real(&u));
            units.push(u);
        }
        let scores = self.eval_real(&reals);
        Population {
            units,
            reals,
            scores,
        }
    }
}

/// Tracks the best-fitness history and the stall rule.
struct Progress {
    trace: Vec<TraceRow>,
}

impl Progress {
    fn record(&mut self, iteration: usize, pop: &Population) {
        self.trace.push(TraceRow {
            iteration,
            best_fitness: pop.scores[pop.best()].value,
            feasible_count: pop.feasible_count(),
        });
    }

    fn stalled(&self, s: &MetaheuristicSettings) -> bool {
        let n = self.trace.len();
        if n <= s.stall_window {
            return false;
        }
        let now = self.trace[n - 1].best_fitness;
        let then = self.trace[n - 1 - s.stall_window].best_fitness;
        (then - now) / s.stall_window as f64 <= s.stall_tol * now.abs().max(1.0)
    }
}

fn finish(runner: &Runner, pop: &Population, progress: Progress, iterations: usize) -> SearchOutcome {
    let b = pop.best();
    SearchOutcome {
        best: pop.reals[b].clone(),
        fitness: pop.scores[b].value,
        feasible: pop.scores[b].feasible,
        iterations,
        evaluations: runner.evaluations,
        trace: progress.trace,
    }
}

fn clamp_unit(v: &mut [f64]) {
    for x in v {
        *x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.5 };
    }
}

/// Iterations over which the exploration schedule `exp(-t / H)` decays; a
/// fixed horizon keeps runs with different budgets identical on their common
/// prefix.
const SCHEDULE_HORIZON: f64 = 100.0;

/// Three-phase hippopotamus search: movement toward the dominant agent and
/// group means, defense against random predators with Lévy steps, and a
/// shrinking local escape step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hippopotamus;

fn levy_sigma(beta: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let num = gamma(1.0 + beta) * (std::f64::consts::PI * beta / 2.0).sin();
    let den = gamma((1.0 + beta) / 2.0) * beta * 2f64.powf((beta - 1.0) / 2.0);
    (num / den).powf(1.0 / beta)
}

fn levy(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let w: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    let v: f64 = rng.sample(StandardNormal);
    0.05 * w / v.abs().max(1e-300).powf(1.0 / 1.5)
}

fn h_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    match rng.gen_range(0..5) {
        0 | 3 => {
            let i = rng.gen_range(1..=2) as f64;
            let q = rng.gen_range(0..=1) as f64;
            (0..d).map(|_| i * rng.gen::<f64>() + (1.0 - q)).collect()
        }
        1 => (0..d).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect(),
        2 => (0..d).map(|_| rng.gen::<f64>()).collect(),
        _ => vec![rng.gen::<f64>(); d],
    }
}

impl Metaheuristic for Hippopotamus {
    fn minimize(
        &self,
        f: &(dyn Fn(&[f64]) -> Scored + Sync),
        bounds: &Bounds,
        settings: &MetaheuristicSettings,
        seeds: &[Vec<f64>],
    ) -> Result<SearchOutcome, OptimizerError> {
        check_settings(settings)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
        let mut runner = Runner {
            f,
            bounds,
            evaluations: 0,
        };
        let n = settings.population;
        let d = bounds.dim();
        let sigma = levy_sigma(1.5);
        let mut pop = runner.init(settings, seeds, &mut rng);
        let mut progress = Progress { trace: Vec::new() };
        let mut iterations = 0;
        for t in 1..=settings.max_iters {
            iterations = t;
            let tf = t as f64;
            let half = n / 2;

            // Phase 1: position update in the group.
            let dom = pop.units[pop.best()].clone();
            let schedule = (-tf / SCHEDULE_HORIZON).exp();
            let mut cands = Vec::with_capacity(2 * half);
            for i in 0..half {
                let x = &pop.units[i];
                let group = rng.gen_range(1..=n);
                let mut mg = vec![0.0; d];
                for _ in 0..group {
                    let k = rng.gen_range(0..n);
                    for (m, v) in mg.iter_mut().zip(&pop.units[k]) {
                        *m += v / group as f64;
                    }
                }
                let i1 = rng.gen_range(1..=2) as f64;
                let i2 = rng.gen_range(1..=2) as f64;
                let y1: f64 = rng.gen();
                let mut male: Vec<f64> = (0..d).map(|j| x[j] + y1 * (dom[j] - i1 * x[j])).collect();
                let mut female: Vec<f64> = if schedule > 0.6 {
                    let h = h_vector(&mut rng, d);
                    (0..d).map(|j| x[j] + h[j] * (dom[j] - i2 * mg[j])).collect()
                } else if rng.gen::<f64>() > 0.5 {
                    let h = h_vector(&mut rng, d);
                    (0..d).map(|j| x[j] + h[j] * (mg[j] - dom[j])).collect()
                } else {
                    (0..d).map(|_| rng.gen::<f64>()).collect()
                };
                clamp_unit(&mut male);
                clamp_unit(&mut female);
                cands.push(male);
                cands.push(female);
            }
            let scores = runner.eval(&cands);
            for i in 0..half {
                for k in 0..2 {
                    let s = scores[2 * i + k];
                    if s.value < pop.scores[i].value {
                        pop.replace(i, &cands[2 * i + k], s, bounds);
                    }
                }
            }

            // Phase 2: defense against predators.
            let mut predators = Vec::with_capacity(n - half);
            for _ in half..n {
                predators.push((0..d).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>());
            }
            let pred_scores = runner.eval(&predators);
            let mut cands = Vec::with_capacity(n - half);
            for (k, i) in (half..n).enumerate() {
                let pr = &predators[k];
                let x = &pop.units[i];
                let b = rng.gen_range(2.0..4.0);
                let c = rng.gen_range(1.0..1.5);
                let dd = rng.gen_range(2.0..3.0);
                let g = rng.gen_range(-1.0..1.0);
                let coef = b / (c - dd * (2.0 * std::f64::consts::PI * g).cos());
                let closer = pred_scores[k].value < pop.scores[i].value;
                let r9: f64 = rng.gen();
                let mut cand: Vec<f64> = (0..d)
                    .map(|j| {
                        let dist = (pr[j] - x[j]).abs().max(1e-12);
                        let rl = levy(&mut rng, sigma);
                        let step = if closer { 1.0 / dist } else { 1.0 / (2.0 * dist + r9) };
                        rl * pr[j] + coef * step
                    })
                    .collect();
                clamp_unit(&mut cand);
                cands.push(cand);
            }
            let scores = runner.eval(&cands);
            for (k, i) in (half..n).enumerate() {
                if scores[k].value < pop.scores[i].value {
                    pop.replace(i, &cands[k], scores[k], bounds);
                }
            }

            // Phase 3: escape toward a shrinking neighbourhood, never wider
            // than the population spread along each coordinate.
            let radius: Vec<f64> = (0..d)
                .map(|j| {
                    let m = pop.units.iter().map(|u| u[j]).sum::<f64>() / n as f64;
                    let sd = (pop.units.iter().map(|u| (u[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                    (0.5 / tf).min(sd)
                })
                .collect();
            let mut cands = Vec::with_capacity(n);
            for i in 0..n {
                let x = &pop.units[i];
                let r10: f64 = rng.gen();
                let mode = rng.gen_range(0..3);
                let scalar: f64 = match mode {
                    1 => rng.sample(StandardNormal),
                    _ => rng.gen(),
                };
                let mut cand: Vec<f64> = (0..d)
                    .map(|j| {
                        let s = if mode == 0 { rng.gen::<f64>() } else { scalar };
                        x[j] + r10 * radius[j] * (2.0 * s - 1.0)
                    })
                    .collect();
                clamp_unit(&mut cand);
                cands.push(cand);
            }
            let scores = runner.eval(&cands);
            for i in 0..n {
                if scores[i].value < pop.scores[i].value {
                    pop.replace(i, &cands[i], scores[i], bounds);
                }
            }

            progress.record(t, &pop);
            if progress.stalled(settings) {
                break;
            }
        }
        Ok(finish(&runner, &pop, progress, iterations))
    }
}

/// Real-coded GA: tournament selection, blend crossover, Gaussian mutation,
/// and (μ + λ) survival.
#[derive(Debug, Clone, Copy)]
pub struct Genetic {
    pub tournament: usize,
    pub crossover_prob: f64,
    pub blend_alpha: f64,
    pub mutation_sigma: f64,
}

impl Default for Genetic {
    fn default() -> Self {
        Self {
            tournament: 3,
            crossover_prob: 0.9,
            blend_alpha: 0.5,
            mutation_sigma: 0.1,
        }
    }
}

impl Metaheuristic for Genetic {
    fn minimize(
        &self,
        f: &(dyn Fn(&[f64]) -> Scored + Sync),
        bounds: &Bounds,
        settings: &MetaheuristicSettings,
        seeds: &[Vec<f64>],
    ) -> Result<SearchOutcome, OptimizerError> {
        check_settings(settings)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
        let mut runner = Runner {
            f,
            bounds,
            evaluations: 0,
        };
        let n = settings.population;
        let d = bounds.dim();
        let mut pop = runner.init(settings, seeds, &mut rng);
        let mut progress = Progress { trace: Vec::new() };
        let mut iterations = 0;
        let pick = |rng: &mut ChaCha8Rng, pop: &Population| {
            (0..self.tournament)
                .map(|_| rng.gen_range(0..n))
                .min_by(|&a, &b| pop.scores[a].value.total_cmp(&pop.scores[b].value))
                .expect("tournament size >= 1")
        };
        for t in 1..=settings.max_iters {
            iterations = t;
            let sigma = self.mutation_sigma / (1.0 + t as f64 / 50.0);
            let mut kids = Vec::with_capacity(n);
            while kids.len() < n {
                let a = &pop.units[pick(&mut rng, &pop)];
                let b = &pop.units[pick(&mut rng, &pop)];
                let cross = rng.gen::<f64>() < self.crossover_prob;
                let mut kid: Vec<f64> = (0..d)
                    .map(|j| {
                        if cross {
                            let (l, h) = (a[j].min(b[j]), a[j].max(b[j]));
                            let span = h - l;
                            rng.gen_range(0.0..=1.0) * (span * (1.0 + 2.0 * self.blend_alpha))
                                + l
                                - self.blend_alpha * span
                        } else {
                            a[j]
                        }
                    })
                    .collect();
                for v in kid.iter_mut() {
                    if rng.gen::<f64>() < 1.0 / d as f64 {
                        *v += sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                clamp_unit(&mut kid);
                kids.push(kid);
            }
            let scores = runner.eval(&kids);
            let kid_reals: Vec<Vec<f64>> = kids.iter().map(|u| bounds.to_real(u)).collect();
            let mut all: Vec<(Vec<f64>, Vec<f64>, Scored)> = pop
                .units
                .drain(..)
                .zip(pop.reals.drain(..))
                .zip(pop.scores.drain(..))
                .map(|((u, r), s)| (u, r, s))
                .chain(kids.into_iter().zip(kid_reals).zip(scores).map(|((u, r), s)| (u, r, s)))
                .collect();
            // stable sort keeps parents ahead of equally fit children
            all.sort_by(|x, y| x.2.value.total_cmp(&y.2.value));
            all.truncate(n);
            for (u, r, s) in all {
                pop.units.push(u);
                pop.reals.push(r);
                pop.scores.push(s);
            }
            progress.record(t, &pop);
            if progress.stalled(settings) {
                break;
            }
        }
        Ok(finish(&runner, &pop, progress, iterations))
    }
}
