//! Cuckoo Search with Lévy flights, GA and PSO baselines sharing one
//! contract, and the hybrid least-squares + metaheuristic identification
//! pipeline.
//!
//! All random draws happen on the calling thread before a generation's
//! objective evaluations are dispatched, and results are reduced in index
//! order, so a run is bit-identical with or without parallel evaluation.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::estimate::{error_index_percent, ls_preidentify, EstimateError, PreIdentification};
use crate::params::{ParamError, ParamVector};
use crate::plants::{simulate_subsystem, subsystem_view, ModelKind, PlantError, SubsystemId};
use crate::signals::TimeSeries;

/// Objective value assigned to candidates the model cannot simulate.
pub const PENALTY: f64 = 1.0e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("Lévy exponent {0} outside (1, 3]")]
    BadLambda(f64),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("search space: {0}")]
    InvalidSpace(String),
    #[error("objective failed in generation {generation}: {message}")]
    ObjectivePanic {
        generation: usize,
        message: String,
        /// Best-so-far fitness per completed generation.
        partial_history: Vec<f64>,
    },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// Box of free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimError> {
        if names.is_empty() {
            return Err(OptimError::InvalidSpace("no free parameters".into()));
        }
        if names.len() != lower.len() || names.len() != upper.len() {
            return Err(OptimError::InvalidSpace("length mismatch".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(OptimError::InvalidSpace(format!(
                    "{name}: bounds [{}, {}] are empty",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self {
            names,
            lower,
            upper,
        })
    }

    /// Uniform box `[lo, hi]^dim`, mostly for benchmarks.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self, OptimError> {
        Self::new(
            (0..dim).map(|i| format!("x{i}")).collect(),
            vec![lo; dim],
            vec![hi; dim],
        )
    }

    /// Bounds of the named entries of a parameter table.
    pub fn from_params(table: &ParamVector, names: &[&str]) -> Result<Self, OptimError> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for n in names {
            let p = table.get(n).ok_or_else(|| ParamError::Unknown(n.to_string()))?;
            lower.push(p.min);
            upper.push(p.max);
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn range(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = if v.is_nan() {
                self.lower[i]
            } else {
                v.clamp(self.lower[i], self.upper[i])
            };
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lower[i] + rng.random::<f64>() * self.range(i))
            .collect()
    }
}

/// Objective to minimize. `Err` aborts the run.
pub trait Objective: Sync {
    fn evaluate(&self, x: &[f64]) -> Result<f64, String>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&self, x: &[f64]) -> Result<f64, String> {
        Ok(self(x))
    }
}

/// Settings shared by the three optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub population: usize,
    pub max_generations: usize,
    /// The run stops once the best fitness drops below this value.
    pub stop_threshold: f64,
    pub seed: u64,
    /// Evaluate a generation's candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            population: 25,
            max_generations: 100,
            stop_threshold: (-2.0f64).exp(),
            seed: 0,
            parallel: true,
        }
    }
}

impl RunSettings {
    fn validate(&self) -> Result<(), OptimError> {
        if self.population < 2 {
            return Err(OptimError::InvalidConfig("population must be at least 2".into()));
        }
        if self.stop_threshold.is_nan() {
            return Err(OptimError::InvalidConfig("stop threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsConfig {
    #[serde(flatten)]
    pub run: RunSettings,
    /// Fraction of worst nests abandoned per generation.
    pub p_a: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Lévy steps are scaled by `alpha * step_scale * L` where `L` is set
    /// by `step_mode`.
    pub step_scale: f64,
    pub step_mode: StepMode,
}

/// Per-dimension length that multiplies each Lévy draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `upper - lower`
    Range,
    /// `x - best`, shrinking as the nests converge.
    #[default]
    BestRelative,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            run: RunSettings::default(),
            p_a: 0.25,
            alpha: 1.0,
            lambda: 1.5,
            step_scale: 0.01,
            step_mode: StepMode::BestRelative,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        self.run.validate()?;
        if !(self.p_a > 0.0 && self.p_a < 1.0) {
            return Err(OptimError::InvalidConfig(format!("p_a = {} outside (0, 1)", self.p_a)));
        }
        if !(self.lambda > 1.0 && self.lambda <= 3.0) {
            return Err(OptimError::BadLambda(self.lambda));
        }
        if !(self.alpha >= 0.0 && self.step_scale >= 0.0) {
            return Err(OptimError::InvalidConfig("step size must be non-negative".into()));
        }
        Ok(())
    }

    /// Nests abandoned per generation.
    pub fn abandon_count(&self) -> usize {
        let n = self.run.population;
        ((self.p_a * n as f64).round() as usize).min(n - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    #[serde(flatten)]
    pub run: RunSettings,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// BLX-α extension of the parents' interval.
    pub blend_alpha: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each range.
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            run: RunSettings::default(),
            tournament: 3,
            crossover_rate: 0.9,
            blend_alpha: 0.5,
            mutation_rate: 0.1,
            mutation_sigma: 0.05,
            elitism: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        self.run.validate()?;
        if self.tournament == 0 {
            return Err(OptimError::InvalidConfig("tournament size must be positive".into()));
        }
        for (name, v) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(OptimError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.elitism >= self.run.population {
            return Err(OptimError::InvalidConfig("elitism must leave room for offspring".into()));
        }
        if !(self.mutation_sigma >= 0.0 && self.blend_alpha >= 0.0) {
            return Err(OptimError::InvalidConfig("negative spread".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoConfig {
    #[serde(flatten)]
    pub run: RunSettings,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of each range.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            run: RunSettings::default(),
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            velocity_clamp: 0.2,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        self.run.validate()?;
        if !(self.velocity_clamp > 0.0) {
            return Err(OptimError::InvalidConfig("velocity clamp must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best-so-far fitness after generation 0 (initial population), 1, ...
    pub history: Vec<f64>,
    /// Final population and fitness, usable as the next round's seed.
    pub population: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub evaluations: usize,
    pub reached_threshold: bool,
}

impl RunResult {
    pub fn generations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Any of the three optimizers, behind one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Cs(CsConfig),
    Ga(GaConfig),
    Pso(PsoConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Cs(CsConfig::default())
    }
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Cs(_) => "cs",
            OptimizerConfig::Ga(_) => "ga",
            OptimizerConfig::Pso(_) => "pso",
        }
    }

    pub fn settings(&self) -> &RunSettings {
        match self {
            OptimizerConfig::Cs(c) => &c.run,
            OptimizerConfig::Ga(c) => &c.run,
            OptimizerConfig::Pso(c) => &c.run,
        }
    }

    pub fn settings_mut(&mut self) -> &mut RunSettings {
        match self {
            OptimizerConfig::Cs(c) => &mut c.run,
            OptimizerConfig::Ga(c) => &mut c.run,
            OptimizerConfig::Pso(c) => &mut c.run,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match self {
            OptimizerConfig::Cs(c) => c.validate(),
            OptimizerConfig::Ga(c) => c.validate(),
            OptimizerConfig::Pso(c) => c.validate(),
        }
    }

    /// Runs the optimizer; `initial` positions (clamped) fill the start of
    /// the population and the rest is drawn uniformly.
    pub fn run(
        &self,
        objective: &dyn Objective,
        space: &SearchSpace,
        initial: &[Vec<f64>],
    ) -> Result<RunResult, OptimError> {
        match self {
            OptimizerConfig::Cs(c) => cs_run(objective, space, c, initial),
            OptimizerConfig::Ga(c) => ga_run(objective, space, c, initial),
            OptimizerConfig::Pso(c) => pso_run(objective, space, c, initial),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared machinery.

fn evaluate_all(
    objective: &dyn Objective,
    xs: &[Vec<f64>],
    parallel: bool,
    generation: usize,
    history: &[f64],
) -> Result<Vec<f64>, OptimError> {
    let eval = |x: &Vec<f64>| -> Result<f64, String> {
        match catch_unwind(AssertUnwindSafe(|| objective.evaluate(x))) {
            Ok(Ok(v)) if v.is_finite() => Ok(v),
            Ok(Ok(_)) => Ok(PENALTY),
            Ok(Err(e)) => Err(e),
            Err(p) => Err(p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "objective panicked".into())),
        }
    };
    let results: Vec<Result<f64, String>> = if parallel {
        xs.par_iter().map(eval).collect()
    } else {
        xs.iter().map(eval).collect()
    };
    results
        .into_iter()
        .collect::<Result<Vec<f64>, String>>()
        .map_err(|message| OptimError::ObjectivePanic {
            generation,
            message,
            partial_history: history.to_vec(),
        })
}

/// Index of the smallest value, ties to the lower index.
fn argmin(f: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in f.iter().enumerate() {
        if *v < f[best] {
            best = i;
        }
    }
    best
}

fn initial_population<R: Rng>(
    space: &SearchSpace,
    n: usize,
    initial: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, OptimError> {
    let mut pop = Vec::with_capacity(n);
    for x in initial.iter().take(n) {
        if x.len() != space.dim() {
            return Err(OptimError::InvalidSpace(format!(
                "seed has {} entries, space has {}",
                x.len(),
                space.dim()
            )));
        }
        let mut x = x.clone();
        space.clamp(&mut x);
        pop.push(x);
    }
    while pop.len() < n {
        pop.push(space.sample(rng));
    }
    Ok(pop)
}

fn finish(pop: Vec<Vec<f64>>, fit: Vec<f64>, history: Vec<f64>, evaluations: usize, threshold: f64) -> RunResult {
    let b = argmin(&fit);
    RunResult {
        best: pop[b].clone(),
        best_fitness: fit[b],
        reached_threshold: fit[b] < threshold,
        history,
        population: pop,
        fitness: fit,
        evaluations,
    }
}

// ---------------------------------------------------------------------------
// Lévy flights.

/// Mantegna sampler for a symmetric Lévy-stable step of index `beta`.
#[derive(Debug, Clone, Copy)]
pub struct LevySampler {
    beta: f64,
    sigma_u: f64,
}

impl LevySampler {
    /// Sampler for Lévy exponent `lambda`, stable index `beta = lambda - 1`.
    pub fn new(lambda: f64) -> Result<Self, OptimError> {
        if !(lambda > 1.0 && lambda <= 3.0) {
            return Err(OptimError::BadLambda(lambda));
        }
        let beta = lambda - 1.0;
        let sigma_u = if beta < 2.0 {
            let num = gamma(1.0 + beta) * (std::f64::consts::PI * beta / 2.0).sin();
            let den = gamma((1.0 + beta) / 2.0) * beta * 2f64.powf((beta - 1.0) / 2.0);
            (num / den).powf(1.0 / beta)
        } else {
            // Gaussian limit of the stable family
            std::f64::consts::SQRT_2
        };
        Ok(Self { beta, sigma_u })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_u;
        if self.beta >= 2.0 {
            return u;
        }
        let v: f64 = rng.sample(StandardNormal);
        u / v.abs().powf(1.0 / self.beta)
    }
}

/// One Lévy flight from `x`: `x + alpha * scale ⊙ L`, clamped to the box.
pub fn levy_step<R: Rng>(
    x: &[f64],
    alpha: f64,
    lambda: f64,
    scale: &[f64],
    space: &SearchSpace,
    rng: &mut R,
) -> Result<Vec<f64>, OptimError> {
    let sampler = LevySampler::new(lambda)?;
    Ok(levy_step_with(&sampler, x, alpha, scale, space, rng))
}

fn levy_step_with<R: Rng>(
    sampler: &LevySampler,
    x: &[f64],
    alpha: f64,
    scale: &[f64],
    space: &SearchSpace,
    rng: &mut R,
) -> Vec<f64> {
    let mut y: Vec<f64> = x
        .iter()
        .zip(scale)
        .map(|(xi, s)| {
            let l = sampler.sample(rng);
            // alpha = 0 must leave the position untouched even for huge draws
            if alpha == 0.0 || *s == 0.0 {
                *xi
            } else {
                xi + alpha * s * l
            }
        })
        .collect();
    space.clamp(&mut y);
    y
}

// ---------------------------------------------------------------------------
// Cuckoo Search.

/// Cuckoo Search. Per generation: every nest lays a cuckoo by a Lévy
/// flight, each cuckoo replaces a randomly chosen nest if it is better, then
/// the `round(p_a n)` worst nests (never the best) are rebuilt as
/// `best + r (x_p - x_q)` with random nests `p`, `q` and `r ~ U(0, 1)`.
pub fn cs_run(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &CsConfig,
    initial: &[Vec<f64>],
) -> Result<RunResult, OptimError> {
    cfg.validate()?;
    let n = cfg.run.population;
    let sampler = LevySampler::new(cfg.lambda)?;
    let scale: Vec<f64> = (0..space.dim()).map(|i| cfg.step_scale * space.range(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut nests = initial_population(space, n, initial, &mut rng)?;
    let mut history = Vec::with_capacity(cfg.run.max_generations + 1);
    let mut fit = evaluate_all(objective, &nests, cfg.run.parallel, 0, &history)?;
    let mut evaluations = n;
    history.push(fit[argmin(&fit)]);
    let n_abandon = cfg.abandon_count();

    for generation in 1..=cfg.run.max_generations {
        if history[history.len() - 1] < cfg.run.stop_threshold {
            break;
        }
        let b = argmin(&fit);
        let cuckoos: Vec<Vec<f64>> = match cfg.step_mode {
            StepMode::Range => nests
                .iter()
                .map(|x| levy_step_with(&sampler, x, cfg.alpha, &scale, space, &mut rng))
                .collect(),
            StepMode::BestRelative => {
                let best = nests[b].clone();
                nests
                    .iter()
                    .map(|x| {
                        let rel: Vec<f64> = x
                            .iter()
                            .zip(&best)
                            .map(|(xi, bi)| cfg.step_scale * (xi - bi))
                            .collect();
                        levy_step_with(&sampler, x, cfg.alpha, &rel, space, &mut rng)
                    })
                    .collect()
            }
        };
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let cf = evaluate_all(objective, &cuckoos, cfg.run.parallel, generation, &history)?;
        evaluations += n;
        for i in 0..n {
            let j = targets[i];
            if cf[i] < fit[j] {
                nests[j] = cuckoos[i].clone();
                fit[j] = cf[i];
            }
        }

        // abandoned nests are rebuilt around the current best
        let leader = argmin(&fit);
        let worst = abandon_order(&fit, n_abandon);
        let rebuilt: Vec<Vec<f64>> = worst
            .iter()
            .map(|_| {
                let p = rng.random_range(0..n);
                let q = rng.random_range(0..n);
                let r: f64 = rng.random();
                let mut x: Vec<f64> = nests[leader]
                    .iter()
                    .zip(nests[p].iter().zip(&nests[q]))
                    .map(|(xl, (xp, xq))| xl + r * (xp - xq))
                    .collect();
                space.clamp(&mut x);
                x
            })
            .collect();
        let rf = evaluate_all(objective, &rebuilt, cfg.run.parallel, generation, &history)?;
        evaluations += rebuilt.len();
        for ((k, x), f) in worst.into_iter().zip(rebuilt).zip(rf) {
            nests[k] = x;
            fit[k] = f;
        }
        history.push(fit[argmin(&fit)]);
    }
    Ok(finish(nests, fit, history, evaluations, cfg.run.stop_threshold))
}

/// Indices of the `count` worst nests, excluding the best one. Ties are
/// broken towards the lower index in both rankings.
pub fn abandon_order(fit: &[f64], count: usize) -> Vec<usize> {
    let best = argmin(fit);
    let mut idx: Vec<usize> = (0..fit.len()).filter(|&i| i != best).collect();
    idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

// ---------------------------------------------------------------------------
// Genetic algorithm.

/// Real-coded GA: tournament selection, BLX-α crossover, Gaussian mutation,
/// elitism.
pub fn ga_run(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &GaConfig,
    initial: &[Vec<f64>],
) -> Result<RunResult, OptimError> {
    cfg.validate()?;
    let n = cfg.run.population;
    let dim = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut pop = initial_population(space, n, initial, &mut rng)?;
    let mut history = Vec::with_capacity(cfg.run.max_generations + 1);
    let mut fit = evaluate_all(objective, &pop, cfg.run.parallel, 0, &history)?;
    let mut evaluations = n;
    history.push(fit[argmin(&fit)]);
    let sigma: Vec<f64> = (0..dim).map(|i| cfg.mutation_sigma * space.range(i)).collect();

    for generation in 1..=cfg.run.max_generations {
        if history[history.len() - 1] < cfg.run.stop_threshold {
            break;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let elites: Vec<usize> = order[..cfg.elitism].to_vec();

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let mut best = rng.random_range(0..n);
            for _ in 1..cfg.tournament {
                let c = rng.random_range(0..n);
                if fit[c] < fit[best] || (fit[c] == fit[best] && c < best) {
                    best = c;
                }
            }
            best
        };
        let mut children = Vec::with_capacity(n - cfg.elitism);
        while children.len() < n - cfg.elitism {
            let a = tournament(&mut rng);
            let b = tournament(&mut rng);
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                (0..dim)
                    .map(|d| {
                        let lo = pop[a][d].min(pop[b][d]);
                        let hi = pop[a][d].max(pop[b][d]);
                        let ext = cfg.blend_alpha * (hi - lo);
                        lo - ext + rng.random::<f64>() * (hi - lo + 2.0 * ext)
                    })
                    .collect()
            } else {
                pop[a].clone()
            };
            for d in 0..dim {
                if rng.random::<f64>() < cfg.mutation_rate && sigma[d] > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    child[d] += sigma[d] * z;
                }
            }
            space.clamp(&mut child);
            children.push(child);
        }
        let cf = evaluate_all(objective, &children, cfg.run.parallel, generation, &history)?;
        evaluations += children.len();
        let mut next_pop: Vec<Vec<f64>> = elites.iter().map(|&e| pop[e].clone()).collect();
        let mut next_fit: Vec<f64> = elites.iter().map(|&e| fit[e]).collect();
        next_pop.extend(children);
        next_fit.extend(cf);
        pop = next_pop;
        fit = next_fit;
        history.push(fit[argmin(&fit)]);
    }
    Ok(finish(pop, fit, history, evaluations, cfg.run.stop_threshold))
}

// ---------------------------------------------------------------------------
// Particle swarm.

/// Global-best PSO with inertia weight and velocity clamping. Velocities
/// start at zero.
pub fn pso_run(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &PsoConfig,
    initial: &[Vec<f64>],
) -> Result<RunResult, OptimError> {
    cfg.validate()?;
    let n = cfg.run.population;
    let dim = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut x = initial_population(space, n, initial, &mut rng)?;
    let mut v = vec![vec![0.0; dim]; n];
    let vmax: Vec<f64> = (0..dim).map(|i| cfg.velocity_clamp * space.range(i)).collect();
    let mut history = Vec::with_capacity(cfg.run.max_generations + 1);
    let f = evaluate_all(objective, &x, cfg.run.parallel, 0, &history)?;
    let mut evaluations = n;
    let mut pbest = x.clone();
    let mut pfit = f;
    let mut g = argmin(&pfit);
    history.push(pfit[g]);

    for generation in 1..=cfg.run.max_generations {
        if history[history.len() - 1] < cfg.run.stop_threshold {
            break;
        }
        for i in 0..n {
            for d in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let vel = cfg.inertia * v[i][d]
                    + cfg.cognitive * r1 * (pbest[i][d] - x[i][d])
                    + cfg.social * r2 * (pbest[g][d] - x[i][d]);
                v[i][d] = vel.clamp(-vmax[d], vmax[d]);
                x[i][d] += v[i][d];
            }
            space.clamp(&mut x[i]);
        }
        let f = evaluate_all(objective, &x, cfg.run.parallel, generation, &history)?;
        evaluations += n;
        for i in 0..n {
            if f[i] < pfit[i] {
                pfit[i] = f[i];
                pbest[i] = x[i].clone();
            }
        }
        g = argmin(&pfit);
        history.push(pfit[g]);
    }
    Ok(finish(pbest, pfit, history, evaluations, cfg.run.stop_threshold))
}

// ---------------------------------------------------------------------------
// Hybrid identification.

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyConfig {
    /// Full parameter table of the plant (values, bounds, free flags).
    pub table: ParamVector,
    pub optimizer: OptimizerConfig,
    /// Seed one member of the initial population with the LS estimate.
    pub ls_seed: bool,
    /// Optimizer rounds, each re-seeded from the previous final population.
    pub max_rounds: usize,
    /// Try parameters whose bounds include zero at exactly zero after the
    /// search, keeping the change if the fit does not degrade.
    pub zero_snap: bool,
}

impl IdentifyConfig {
    pub fn new(table: ParamVector, optimizer: OptimizerConfig) -> Self {
        Self {
            table,
            optimizer,
            ls_seed: true,
            max_rounds: 3,
            zero_snap: true,
        }
    }
}

/// Result of identifying one subsystem.
#[derive(Debug, Clone)]
pub struct IdentifyResult {
    pub subsystem: SubsystemId,
    /// Full table with the fitted values written in.
    pub params: ParamVector,
    /// Free parameters of the subsystem, in search order.
    pub names: Vec<String>,
    pub rounds: Vec<RunResult>,
    pub ls: Option<PreIdentification>,
    /// Why the LS stage was skipped or failed, if it was.
    pub ls_error: Option<String>,
    /// Training error index (percent) of the returned parameters.
    pub error_index: f64,
    pub reached_threshold: bool,
}

impl IdentifyResult {
    /// Best-so-far fitness across all rounds, generation by generation.
    pub fn history(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rounds {
            for &h in &r.history {
                let prev = out.last().copied().unwrap_or(f64::INFINITY);
                out.push(h.min(prev));
            }
        }
        out
    }

    /// Generations (counted over all rounds) until the threshold was first
    /// reached, or `None` if it never was.
    pub fn generations_to_threshold(&self, threshold: f64) -> Option<usize> {
        let mut offset = 0;
        for r in &self.rounds {
            if let Some(g) = r.history.iter().position(|h| *h < threshold) {
                return Some(offset + g);
            }
            offset += r.generations();
        }
        None
    }
}

/// Error index of the subsystem outputs at the given table: `100 ·` mean
/// over outputs of the MSE between recorded and simulated signals.
pub fn subsystem_error_index(
    id: SubsystemId,
    table: &ParamVector,
    data: &TimeSeries,
) -> Result<f64, OptimError> {
    let view = subsystem_view(id.model_kind(), id)?;
    let sim = simulate_subsystem(id, table, data)?;
    let mut total = 0.0;
    for (name, yhat) in view.outputs.iter().zip(&sim) {
        let y = data
            .channel(name)
            .ok_or_else(|| PlantError::MissingChannel(name.to_string()))?;
        total += error_index_percent(y, yhat)?;
    }
    Ok(total / view.outputs.len() as f64)
}

struct SubsystemObjective<'a> {
    id: SubsystemId,
    base: &'a ParamVector,
    names: Vec<&'a str>,
    data: &'a TimeSeries,
}

impl SubsystemObjective<'_> {
    fn table_at(&self, x: &[f64]) -> Option<ParamVector> {
        let mut t = self.base.clone();
        t.assign(&self.names, x).ok()?;
        Some(t)
    }
}

impl Objective for SubsystemObjective<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<f64, String> {
        let Some(t) = self.table_at(x) else {
            return Ok(PENALTY);
        };
        Ok(match subsystem_error_index(self.id, &t, self.data) {
            Ok(v) if v.is_finite() => v,
            _ => PENALTY,
        })
    }
}

/// LS pre-identification, then up to `max_rounds` optimizer rounds with the
/// objective = error index of the subsystem outputs.
pub fn hybrid_identify(
    kind: ModelKind,
    id: SubsystemId,
    data: &TimeSeries,
    cfg: &IdentifyConfig,
) -> Result<IdentifyResult, OptimError> {
    let view = subsystem_view(kind, id)?;
    for name in view.inputs.iter().chain(&view.outputs) {
        data.require(name).map_err(PlantError::from)?;
    }
    cfg.optimizer.validate()?;
    if cfg.max_rounds == 0 {
        return Err(OptimError::InvalidConfig("max_rounds must be at least 1".into()));
    }
    let names: Vec<&str> = view.free_params(&cfg.table);
    let space = SearchSpace::from_params(&cfg.table, &names)?;

    let (ls, ls_error) = if cfg.ls_seed {
        match ls_preidentify(id, data, &cfg.table) {
            Ok(pre) => (Some(pre), None),
            Err(e) => {
                log::warn!("{}: least-squares stage failed ({e}); using random initial population", id.label());
                (None, Some(e.to_string()))
            }
        }
    } else {
        (None, Some("disabled".into()))
    };
    let mut seeds: Vec<Vec<f64>> = match &ls {
        Some(pre) => vec![pre.params.values_of(&names)?],
        None => Vec::new(),
    };

    let objective = SubsystemObjective {
        id,
        base: &cfg.table,
        names: names.clone(),
        data,
    };
    let threshold = cfg.optimizer.settings().stop_threshold;
    let mut rounds: Vec<RunResult> = Vec::new();
    for round in 0..cfg.max_rounds {
        let mut opt = cfg.optimizer.clone();
        let s = opt.settings_mut();
        s.seed = s.seed.wrapping_add(round as u64);
        let result = opt.run(&objective, &space, &seeds)?;
        log::info!(
            "{} round {}: best index {:.6e} after {} generations",
            id.label(),
            round + 1,
            result.best_fitness,
            result.generations()
        );
        let done = result.reached_threshold;
        seeds = result.population.clone();
        // the incumbent best leads the next population
        let b = argmin(&result.fitness);
        seeds.swap(0, b);
        rounds.push(result);
        if done {
            break;
        }
    }
    let best_round = rounds
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_fitness.total_cmp(&b.1.best_fitness).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one round");
    let mut best = rounds[best_round].best.clone();
    let mut best_fit = rounds[best_round].best_fitness;

    if cfg.zero_snap {
        (best, best_fit) = zero_snap(&objective, &space, best, best_fit)?;
    }
    let mut params = cfg.table.clone();
    params.assign(&names, &best)?;
    Ok(IdentifyResult {
        subsystem: id,
        params,
        names: names.iter().map(|s| s.to_string()).collect(),
        rounds,
        ls,
        ls_error,
        error_index: best_fit,
        reached_threshold: best_fit < threshold,
    })
}

/// Relative slack allowed when snapping a parameter to zero.
const SNAP_TOLERANCE: f64 = 1e-3;

fn zero_snap(
    objective: &SubsystemObjective<'_>,
    space: &SearchSpace,
    mut best: Vec<f64>,
    mut best_fit: f64,
) -> Result<(Vec<f64>, f64), OptimError> {
    let names = &objective.names;
    let pos = |n: &str| names.iter().position(|m| *m == n);
    for i in 0..best.len() {
        if best[i] == 0.0 || space.lower()[i] > 0.0 || space.upper()[i] < 0.0 {
            continue;
        }
        let mut trial = best.clone();
        trial[i] = 0.0;
        // a filtered derivative with no gain is the bypassed path
        if names[i] == "K_dgov" {
            if let Some(j) = pos("T_dgov") {
                trial[j] = 0.0;
            }
        }
        let f = objective.evaluate(&trial).unwrap_or(PENALTY);
        if f <= best_fit * (1.0 + SNAP_TOLERANCE) + 1e-12 {
            best = trial;
            best_fit = f;
        }
    }
    // canonical form when the derivative gain ended at zero
    if let (Some(k), Some(t)) = (pos("K_dgov"), pos("T_dgov")) {
        if best[k] == 0.0 && best[t] != 0.0 {
            let mut trial = best.clone();
            trial[t] = 0.0;
            best_fit = objective.evaluate(&trial).unwrap_or(PENALTY);
            best = trial;
        }
    }
    Ok((best, best_fit))
}

/// Draws `n` standard normal samples, used by tests and calibration.
pub fn normal_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn space5() -> SearchSpace {
        SearchSpace::uniform(5, -5.0, 5.0).unwrap()
    }

    fn no_stop(seed: u64) -> RunSettings {
        RunSettings {
            stop_threshold: 0.0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_alpha_leaves_position() {
        let s = space5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![0.1, -0.2, 0.3, 4.9, -4.9];
        let y = levy_step(&x, 0.0, 1.5, &[0.1; 5], &s, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn bad_lambda() {
        let s = space5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            levy_step(&[0.0; 5], 1.0, 1.0, &[0.1; 5], &s, &mut rng).unwrap_err(),
            OptimError::BadLambda(1.0)
        );
        assert!(LevySampler::new(3.0).is_ok());
    }

    #[test]
    fn levy_steps_stay_in_box() {
        let s = space5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = vec![0.0; 5];
        for _ in 0..10_000 {
            x = levy_step(&x, 1.0, 1.5, &[1.0; 5], &s, &mut rng).unwrap();
            assert!(s.contains(&x));
            assert!(x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn abandonment_excludes_best() {
        let fit = [3.0, 1.0, 5.0, 5.0, 0.5, 2.0];
        assert_eq!(abandon_order(&fit, 2), vec![2, 3]);
        assert_eq!(abandon_order(&fit, 5), vec![2, 3, 0, 5, 1]);
        let cfg = CsConfig::default();
        assert_eq!(cfg.abandon_count(), 6);
    }

    #[test]
    fn stops_at_generation_zero_when_already_good() {
        let cfg = CsConfig {
            run: RunSettings {
                stop_threshold: 1e9,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = cs_run(&sphere, &space5(), &cfg, &[]).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.reached_threshold);
        assert_eq!(r.evaluations, 25);
    }

    #[test]
    fn histories_are_monotone() {
        for seed in 0..3 {
            let cs = cs_run(&sphere, &space5(), &CsConfig { run: no_stop(seed), ..Default::default() }, &[]).unwrap();
            let ga = ga_run(&sphere, &space5(), &GaConfig { run: no_stop(seed), ..Default::default() }, &[]).unwrap();
            let pso = pso_run(&sphere, &space5(), &PsoConfig { run: no_stop(seed), ..Default::default() }, &[]).unwrap();
            for r in [cs, ga, pso] {
                assert_eq!(r.history.len(), 101);
                assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
                assert_eq!(*r.history.last().unwrap(), r.best_fitness);
            }
        }
    }

    #[test]
    fn ga_without_variation_is_flat() {
        let cfg = GaConfig {
            run: no_stop(3),
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..Default::default()
        };
        let r = ga_run(&sphere, &space5(), &cfg, &[]).unwrap();
        assert!(r.history.iter().all(|h| *h == r.history[0]));
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut cfg = CsConfig { run: no_stop(11), ..Default::default() };
        let a = cs_run(&sphere, &space5(), &cfg, &[]).unwrap();
        cfg.run.parallel = false;
        let b = cs_run(&sphere, &space5(), &cfg, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_failure_aborts_with_history() {
        struct Failing;
        impl Objective for Failing {
            fn evaluate(&self, x: &[f64]) -> Result<f64, String> {
                if x[0] > 4.0 {
                    Err("diverged".into())
                } else {
                    Ok(sphere(x))
                }
            }
        }
        let cfg = CsConfig { run: no_stop(0), ..Default::default() };
        match cs_run(&Failing, &space5(), &cfg, &[]) {
            Err(OptimError::ObjectivePanic { message, .. }) => assert_eq!(message, "diverged"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_values_become_penalty() {
        let cfg = PsoConfig { run: no_stop(0), ..Default::default() };
        let r = pso_run(&|_: &[f64]| f64::NAN, &space5(), &cfg, &[]).unwrap();
        assert_eq!(r.best_fitness, PENALTY);
    }

    #[test]
    fn seeds_are_clamped_into_box() {
        let cfg = CsConfig {
            run: RunSettings {
                stop_threshold: 1e9,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = cs_run(&sphere, &space5(), &cfg, &[vec![9.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(r.population[0], vec![5.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
