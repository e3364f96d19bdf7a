//! Evolutionary baselines that use the diffusion sampler as a refiner, and the
//! EA-then-IMG hybrid.
//!
//! Every run starts by diversifying a reference point: `P` copies are noised
//! to `tau` and denoised, which costs `P` evaluations and counts as the first
//! generation. Each later generation also costs exactly `P` evaluations, so a
//! run of `G` generations consumes `P * G`.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{denoise, forward_noise, GmmModel, NoiseSchedule, PointBatch};
use crate::error::{param, Result};
use crate::img::{img_generate, ImgConfig, ImgOutput};
use crate::metrics::{dominates, front_size, hypervolume_origin};
use crate::objectives::{evaluate_normalized, EvalCounter, ObjectiveSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub points: Array2<f64>,
    /// Normalized objectives, row-aligned with `points`.
    pub objectives: Array2<f64>,
    pub generation: usize,
}

impl Population {
    pub fn size(&self) -> usize {
        self.points.nrows()
    }
}

/// SPEA2 strength-based fitness; lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct Spea2 {
    pub strength: Vec<usize>,
    pub raw: Vec<f64>,
    pub density: Vec<f64>,
    pub fitness: Vec<f64>,
}

pub fn spea2_fitness(y: &Array2<f64>) -> Result<Spea2> {
    let p = y.nrows();
    if p < 2 {
        return param("SPEA2 fitness needs at least two members");
    }
    let rows: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut dom = vec![vec![false; p]; p];
    let mut strength = vec![0usize; p];
    for i in 0..p {
        for j in 0..p {
            if i != j && dominates(&rows[i], &rows[j]) {
                dom[i][j] = true;
                strength[i] += 1;
            }
        }
    }
    let raw: Vec<f64> = (0..p)
        .map(|j| {
            (0..p)
                .filter(|&i| dom[i][j])
                .map(|i| strength[i] as f64)
                .sum()
        })
        .collect();
    let k = ((p as f64).sqrt().floor() as usize).clamp(1, p - 1);
    let density: Vec<f64> = (0..p)
        .map(|i| {
            let mut d: Vec<f64> = (0..p)
                .filter(|&j| j != i)
                .map(|j| {
                    rows[i]
                        .iter()
                        .zip(&rows[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).expect("finite objectives"));
            1.0 / (d[k - 1] + 2.0)
        })
        .collect();
    let fitness = raw.iter().zip(&density).map(|(r, d)| r + d).collect();
    Ok(Spea2 {
        strength,
        raw,
        density,
        fitness,
    })
}

/// Indices sorted by `(fitness, density, index)`.
fn spea2_order(s: &Spea2) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.fitness.len()).collect();
    idx.sort_by(|&a, &b| {
        s.fitness[a]
            .partial_cmp(&s.fitness[b])
            .unwrap_or(Ordering::Equal)
            .then(
                s.density[a]
                    .partial_cmp(&s.density[b])
                    .unwrap_or(Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    idx
}

/// Mean of each row; lower is better.
pub fn mean_fitness(y: &Array2<f64>) -> Vec<f64> {
    y.mean_axis(Axis(1))
        .map(|m| m.to_vec())
        .unwrap_or_else(|| vec![0.0; y.nrows()])
}

fn mean_order(y: &Array2<f64>) -> Vec<usize> {
    let f = mean_fitness(y);
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| {
        f[a].partial_cmp(&f[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Spea2,
}

impl Aggregation {
    /// Population indices from best to worst.
    pub fn order(self, y: &Array2<f64>) -> Result<Vec<usize>> {
        match self {
            Aggregation::Mean => Ok(mean_order(y)),
            Aggregation::Spea2 => Ok(spea2_order(&spea2_fitness(y)?)),
        }
    }

    /// Best (smallest) aggregate fitness in the population.
    pub fn best(self, y: &Array2<f64>) -> Result<f64> {
        let f = match self {
            Aggregation::Mean => mean_fitness(y),
            Aggregation::Spea2 => spea2_fitness(y)?.fitness,
        };
        Ok(f.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// Noises `x` (clean) to `tau`, denoises back to 0.
fn refine<R: Rng + ?Sized>(
    model: &GmmModel,
    schedule: &NoiseSchedule,
    x: Array2<f64>,
    tau: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let noised = forward_noise(&PointBatch::clean(x)?, tau, schedule, rng)?;
    Ok(denoise(model, &noised, schedule, rng)?.points)
}

fn take_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Diversifies `reference` (one row) into a population of `size` members.
/// Costs `size` evaluations.
#[allow(clippy::too_many_arguments)]
pub fn init_population<R: Rng + ?Sized>(
    model: &GmmModel,
    spec: &ObjectiveSpec,
    schedule: &NoiseSchedule,
    reference: &Array2<f64>,
    size: usize,
    tau: usize,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<Population> {
    if reference.nrows() != 1 || reference.ncols() != model.dim() {
        return param(format!("reference must be 1x{}", model.dim()));
    }
    if size == 0 {
        return param("population size must be at least 1");
    }
    let copies = take_rows(reference, &vec![0; size]);
    let points = refine(model, schedule, copies, tau, rng)?;
    let objectives = evaluate_normalized(spec, &points, counter)?;
    Ok(Population {
        points,
        objectives,
        generation: 1,
    })
}

/// One generational step: the best `parents` members (by the aggregate)
/// are each noised to `tau` and denoised into `P / parents` children (the
/// remainder goes to the best parents first), and the children replace the
/// whole population. With `parents = P` every member has one child.
#[allow(clippy::too_many_arguments)]
pub fn diffsbdd_ea_step<R: Rng + ?Sized>(
    pop: &Population,
    model: &GmmModel,
    spec: &ObjectiveSpec,
    schedule: &NoiseSchedule,
    tau: usize,
    aggregation: Aggregation,
    parents: usize,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<Population> {
    let p = pop.size();
    if parents == 0 || parents > p {
        return param(format!("parent count must lie in 1..={p}"));
    }
    let order = aggregation.order(&pop.objectives)?;
    let chosen: Vec<usize> = (0..p).map(|j| order[j % parents]).collect();
    let points = refine(model, schedule, take_rows(&pop.points, &chosen), tau, rng)?;
    let objectives = evaluate_normalized(spec, &points, counter)?;
    Ok(Population {
        points,
        objectives,
        generation: pop.generation + 1,
    })
}

/// Uniform crossover: each coordinate is swapped between the two children
/// with probability 1/2.
pub fn uniform_crossover<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = a.to_vec();
    let mut c2 = b.to_vec();
    for i in 0..a.len() {
        if rng.random::<bool>() {
            std::mem::swap(&mut c1[i], &mut c2[i]);
        }
    }
    (c1, c2)
}

/// One EGD generation: noise, random pairing with uniform crossover,
/// denoise, then elitist SPEA2 survival from parents plus offspring.
pub fn egd_step<R: Rng + ?Sized>(
    pop: &Population,
    model: &GmmModel,
    spec: &ObjectiveSpec,
    schedule: &NoiseSchedule,
    tau: usize,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<Population> {
    let (p, d) = pop.points.dim();
    if p % 2 != 0 || p < 2 {
        return param(format!("EGD needs an even population size, got {p}"));
    }
    let noised = forward_noise(&PointBatch::clean(pop.points.clone())?, tau, schedule, rng)?;
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let mut children = Array2::zeros((p, d));
    for pair in 0..p / 2 {
        let (i, j) = (perm[2 * pair], perm[2 * pair + 1]);
        let a = noised.points.row(i).to_vec();
        let b = noised.points.row(j).to_vec();
        let (c1, c2) = uniform_crossover(&a, &b, rng);
        children
            .row_mut(2 * pair)
            .assign(&ndarray::ArrayView1::from(&c1));
        children
            .row_mut(2 * pair + 1)
            .assign(&ndarray::ArrayView1::from(&c2));
    }
    let offspring = denoise(model, &PointBatch::new(children, tau)?, schedule, rng)?.points;
    let off_y = evaluate_normalized(spec, &offspring, counter)?;

    let pool_x =
        ndarray::concatenate(Axis(0), &[pop.points.view(), offspring.view()]).expect("same width");
    let pool_y =
        ndarray::concatenate(Axis(0), &[pop.objectives.view(), off_y.view()]).expect("same width");
    let order = spea2_order(&spea2_fitness(&pool_y)?);
    let mut keep: Vec<usize> = order[..p].to_vec();
    keep.sort_unstable();
    Ok(Population {
        points: take_rows(&pool_x, &keep),
        objectives: take_rows(&pool_y, &keep),
        generation: pop.generation + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EaKind {
    Egd,
    DiffsbddMean,
    DiffsbddSpea2,
}

impl EaKind {
    pub fn aggregation(self) -> Aggregation {
        match self {
            EaKind::DiffsbddMean => Aggregation::Mean,
            EaKind::Egd | EaKind::DiffsbddSpea2 => Aggregation::Spea2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EaConfig {
    #[serde(rename = "P", default = "default_population")]
    pub population: usize,
    pub generations: usize,
    pub tau: usize,
    /// Parents kept per DiffSBDD-EA generation; defaults to `ceil(P / 10)`.
    #[serde(default)]
    pub parents: Option<usize>,
}

fn default_population() -> usize {
    64
}

impl EaConfig {
    pub fn budget(&self) -> u64 {
        (self.population * self.generations) as u64
    }

    pub fn parent_count(&self) -> usize {
        self.parents.unwrap_or(self.population.div_ceil(10)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub evaluations: u64,
    pub hypervolume: f64,
    pub front_size: usize,
    pub best_fitness: f64,
}

#[derive(Debug, Clone)]
pub struct EaRun {
    pub population: Population,
    pub log: Vec<GenerationLog>,
}

fn log_entry(pop: &Population, agg: Aggregation, counter: &EvalCounter) -> Result<GenerationLog> {
    let best_fitness = if pop.size() >= 2 || agg == Aggregation::Mean {
        agg.best(&pop.objectives)?
    } else {
        f64::NAN
    };
    Ok(GenerationLog {
        generation: pop.generation,
        evaluations: counter.get(),
        hypervolume: hypervolume_origin(&pop.objectives)?,
        front_size: front_size(&pop.objectives),
        best_fitness,
    })
}

/// Runs `generations` generations of the chosen baseline from `reference`.
#[allow(clippy::too_many_arguments)]
pub fn run_ea<R: Rng + ?Sized>(
    kind: EaKind,
    model: &GmmModel,
    spec: &ObjectiveSpec,
    schedule: &NoiseSchedule,
    config: &EaConfig,
    reference: &Array2<f64>,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<EaRun> {
    if config.generations == 0 {
        return param("need at least one generation");
    }
    if config.tau > schedule.steps() {
        return param(format!("tau must lie in 0..={}", schedule.steps()));
    }
    if kind == EaKind::Egd && !config.population.is_multiple_of(2) {
        return param("EGD needs an even population size");
    }
    let agg = kind.aggregation();
    let mut pop = init_population(
        model,
        spec,
        schedule,
        reference,
        config.population,
        config.tau,
        counter,
        rng,
    )?;
    let mut log = vec![log_entry(&pop, agg, counter)?];
    for _ in 1..config.generations {
        pop = match kind {
            EaKind::Egd => egd_step(&pop, model, spec, schedule, config.tau, counter, rng)?,
            EaKind::DiffsbddMean | EaKind::DiffsbddSpea2 => diffsbdd_ea_step(
                &pop,
                model,
                spec,
                schedule,
                config.tau,
                agg,
                config.parent_count(),
                counter,
                rng,
            )?,
        };
        log.push(log_entry(&pop, agg, counter)?);
    }
    Ok(EaRun {
        population: pop,
        log,
    })
}

pub struct HybridOutput {
    pub img: ImgOutput,
    pub ea_log: Vec<GenerationLog>,
}

/// Runs `ea_steps` EGD generations, then IMG with the final population as
/// per-instance references (member `i mod P` for instance `i`). With
/// `ea_steps = 0` this is IMG from `reference`.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_egd_img<R: Rng + ?Sized>(
    spec: &ObjectiveSpec,
    model: &GmmModel,
    schedule: &NoiseSchedule,
    ea_config: &EaConfig,
    ea_steps: usize,
    img_config: &ImgConfig,
    reference: &Array2<f64>,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<HybridOutput> {
    if ea_steps == 0 {
        let img = img_generate(
            model,
            spec,
            img_config,
            schedule,
            Some(reference),
            counter,
            rng,
        )?;
        return Ok(HybridOutput {
            img,
            ea_log: Vec::new(),
        });
    }
    let cfg = EaConfig {
        generations: ea_steps,
        ..ea_config.clone()
    };
    let run = run_ea(
        EaKind::Egd,
        model,
        spec,
        schedule,
        &cfg,
        reference,
        counter,
        rng,
    )?;
    let p = run.population.size();
    let idx: Vec<usize> = (0..img_config.batch).map(|i| i % p).collect();
    let starts = take_rows(&run.population.points, &idx);
    let img = img_generate(
        model,
        spec,
        img_config,
        schedule,
        Some(&starts),
        counter,
        rng,
    )?;
    Ok(HybridOutput {
        img,
        ea_log: run.log,
    })
}

pub fn write_generation_csv(path: &Path, log: &[GenerationLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for entry in log {
        w.serialize(entry)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_multiwell, Bounds};
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn spea2_two_points() {
        let s = spea2_fitness(&array![[-1.0, -1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(s.strength, vec![1, 0]);
        assert_eq!(s.raw, vec![0.0, 1.0]);
        assert!(s.fitness[0] < 1.0);
        assert!(spea2_fitness(&array![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn spea2_mutually_non_dominated() {
        let y = array![[-1.0, 0.0], [-0.6, -0.4], [-0.5, -0.5], [0.0, -1.0]];
        let s = spea2_fitness(&y).unwrap();
        assert!(s.raw.iter().all(|r| *r == 0.0));
        assert_eq!(s.fitness, s.density);
        // k = 2 nearest neighbour: the crowded middle points are denser.
        assert!(s.density[1] > s.density[0] && s.density[2] > s.density[3]);
    }

    #[test]
    fn crossover_identical_parents() {
        let a = vec![0.1, -0.3, 2.0];
        let (c1, c2) = uniform_crossover(&a, &a, &mut seeded(1));
        assert_eq!((c1, c2), (a.clone(), a));
    }

    fn problem() -> (GmmModel, ObjectiveSpec, NoiseSchedule) {
        let model = GmmModel::standard_normal(2).unwrap();
        let spec = make_multiwell(
            2,
            2,
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            Bounds::uniform(2, 0.0, 6.0).unwrap(),
        )
        .unwrap();
        (model, spec, NoiseSchedule::linear(20, 1e-4, 0.05).unwrap())
    }

    #[test]
    fn ea_budgets() {
        let (model, spec, schedule) = problem();
        let reference = array![[0.5, 0.5]];
        for kind in [EaKind::Egd, EaKind::DiffsbddMean, EaKind::DiffsbddSpea2] {
            let cfg = EaConfig {
                population: 8,
                generations: 5,
                tau: 10,
                parents: None,
            };
            let counter = EvalCounter::new();
            let run = run_ea(
                kind,
                &model,
                &spec,
                &schedule,
                &cfg,
                &reference,
                &counter,
                &mut seeded(3),
            )
            .unwrap();
            assert_eq!(counter.get(), 40);
            assert_eq!(run.log.len(), 5);
            assert_eq!(run.log.last().unwrap().evaluations, 40);
            assert_eq!(run.population.generation, 5);
        }
    }

    #[test]
    fn egd_rejects_odd_population() {
        let (model, spec, schedule) = problem();
        let counter = EvalCounter::new();
        let pop = init_population(
            &model,
            &spec,
            &schedule,
            &array![[0.0, 0.0]],
            3,
            5,
            &counter,
            &mut seeded(1),
        )
        .unwrap();
        assert!(egd_step(&pop, &model, &spec, &schedule, 5, &counter, &mut seeded(1)).is_err());
    }

    #[test]
    fn hybrid_budget() {
        let (model, spec, schedule) = problem();
        let ea = EaConfig {
            population: 6,
            generations: 99,
            tau: 5,
            parents: None,
        };
        let img = ImgConfig::new(4, 2, 5);
        let counter = EvalCounter::new();
        let out = hybrid_egd_img(
            &spec,
            &model,
            &schedule,
            &ea,
            3,
            &img,
            &array![[0.0, 0.0]],
            &counter,
            &mut seeded(2),
        )
        .unwrap();
        assert_eq!(counter.get(), 3 * 6 + 4 * 2 * 5);
        assert_eq!(out.ea_log.len(), 3);
    }
}
