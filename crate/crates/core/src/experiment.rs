//! Config-driven experiment runs, per-seed artifacts and cross-run summaries.
//!
//! Layout of an output root:
//!
//! ```text
//! <out>/<algorithm>/seed_<s>/records.csv     evaluations, hypervolume, front_size, seed, algorithm, phase
//! <out>/<algorithm>/seed_<s>/timing.csv      wall-clock seconds (kept apart so records are reproducible)
//! <out>/<algorithm>/seed_<s>/final_points.csv
//! <out>/<algorithm>/seed_<s>/front.csv
//! <out>/<algorithm>/seed_<s>/trajectory.csv  IMG selections (img, hybrid)
//! <out>/<algorithm>/seed_<s>/generations.csv EA generations (egd, diffsbdd_*, hybrid)
//! <out>/<algorithm>/seed_<s>/summary.json
//! <out>/<algorithm>/summary.json             mean and std across seeds at each checkpoint
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionConfig, GmmModel, NoiseSchedule, SigmaMode};
use crate::ea::{hybrid_egd_img, run_ea, write_generation_csv, EaConfig, EaKind, GenerationLog};
use crate::error::{param, Error, Result};
use crate::img::{img_generate, write_trajectory_csv, ImgConfig, ImgOutput};
use crate::metrics::{
    combined_front_contributions, front_entries, front_size, hypervolume_origin, write_front_csv,
    Contributions, LabeledSet,
};
use crate::objectives::{EvalCounter, ObjectiveSpec, ProblemConfig};
use crate::rng::seeded;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "IMGOPT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Img,
    Egd,
    DiffsbddMean,
    DiffsbddSpea2,
    Hybrid,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Img => "img",
            Algorithm::Egd => "egd",
            Algorithm::DiffsbddMean => "diffsbdd_mean",
            Algorithm::DiffsbddSpea2 => "diffsbdd_spea2",
            Algorithm::Hybrid => "hybrid",
        }
    }

    fn ea_kind(self) -> Option<EaKind> {
        match self {
            Algorithm::Egd => Some(EaKind::Egd),
            Algorithm::DiffsbddMean => Some(EaKind::DiffsbddMean),
            Algorithm::DiffsbddSpea2 => Some(EaKind::DiffsbddSpea2),
            Algorithm::Img | Algorithm::Hybrid => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub algorithm: Algorithm,
    /// Directory name under the output root; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Expected total evaluations per seed; checked against the algorithm
    /// parameters when given.
    #[serde(default)]
    pub budget: Option<u64>,
    /// Evaluation counts at which the summary reports hypervolume. Defaults
    /// to `budget / 8, budget / 4, budget / 2, budget`.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSection {
    /// EGD generations before the IMG phase.
    pub ea_steps: usize,
}

/// Complete description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in problem and model; explicit sections override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<DiffusionConfig>,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub img: Option<ImgConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ea: Option<EaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridSection>,
}

/// Three-objective multiwell benchmark in eight dimensions.
///
/// The anchors sit close together near the origin while the data mixture has
/// its two modes at `+-2` along an axis orthogonal to all anchors, so samples
/// of the base model are far from the Pareto set and progress comes from
/// steering the sampler into the low-density region between the modes.
pub fn multiwell3() -> (ProblemConfig, DiffusionConfig) {
    let d = 8;
    let anchors = (0..3)
        .map(|k| {
            let mut a = vec![0.0; d];
            a[k] = 0.5;
            a
        })
        .collect();
    let mut mode = vec![0.0; d];
    mode[3] = 2.0;
    let problem = ProblemConfig {
        name: "multiwell3".into(),
        kind: "multiwell".into(),
        n: 3,
        d,
        anchors,
        lower: vec![0.0; 3],
        upper: vec![6.0; 3],
        reference: Some(mode.clone()),
    };
    let model = DiffusionConfig {
        weights: vec![0.5, 0.5],
        means: vec![mode.clone(), mode.iter().map(|v| -v).collect()],
        covariances: vec![vec![0.1; d]; 2],
        steps: 100,
        beta_min: 1e-4,
        beta_max: 0.02,
        sigma_mode: SigmaMode::Ancestral,
    };
    (problem, model)
}

pub fn preset(name: &str) -> Result<(ProblemConfig, DiffusionConfig)> {
    match name {
        "multiwell3" => Ok(multiwell3()),
        other => Err(Error::Unsupported(format!("unknown preset {other:?}"))),
    }
}

/// Everything needed to execute one seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub spec: ObjectiveSpec,
    pub model: GmmModel,
    pub schedule: NoiseSchedule,
    pub reference: Array2<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, path)
    }

    /// Evaluations each seed consumes.
    pub fn derived_budget(&self) -> Result<u64> {
        let img = || {
            self.img
                .as_ref()
                .ok_or_else(|| Error::Parameter("missing [img] section".into()))
        };
        let ea = || {
            self.ea
                .as_ref()
                .ok_or_else(|| Error::Parameter("missing [ea] section".into()))
        };
        Ok(match self.run.algorithm {
            Algorithm::Img => img()?.budget(),
            Algorithm::Egd | Algorithm::DiffsbddMean | Algorithm::DiffsbddSpea2 => ea()?.budget(),
            Algorithm::Hybrid => {
                let steps = self
                    .hybrid
                    .as_ref()
                    .ok_or_else(|| Error::Parameter("missing [hybrid] section".into()))?
                    .ea_steps;
                let pop = if steps > 0 {
                    ea()?.population as u64
                } else {
                    0
                };
                steps as u64 * pop + img()?.budget()
            }
        })
    }

    pub fn checkpoints(&self) -> Result<Vec<u64>> {
        let budget = self.derived_budget()?;
        let mut cps = match &self.run.checkpoints {
            Some(c) => c.clone(),
            None => (0..4).map(|k| budget >> k).filter(|c| *c > 0).collect(),
        };
        cps.sort_unstable();
        cps.dedup();
        Ok(cps)
    }

    pub fn build(&self) -> Result<Experiment> {
        let (mut problem, mut model) = match &self.preset {
            Some(name) => {
                let (p, m) = preset(name)?;
                (Some(p), Some(m))
            }
            None => (None, None),
        };
        if let Some(p) = &self.problem {
            problem = Some(p.clone());
        }
        if let Some(m) = &self.model {
            model = Some(m.clone());
        }
        let problem = problem
            .ok_or_else(|| Error::Parameter("missing [problem] section or preset".into()))?;
        let model_cfg =
            model.ok_or_else(|| Error::Parameter("missing [model] section or preset".into()))?;
        let spec = problem.build()?;
        let (model, schedule) = model_cfg.build()?;
        if model.dim() != spec.dim() {
            return param(format!(
                "model dimension {} vs problem dimension {}",
                model.dim(),
                spec.dim()
            ));
        }
        let reference = problem
            .reference
            .clone()
            .ok_or_else(|| Error::Parameter("problem needs a reference point".into()))?;
        if reference.len() != spec.dim() {
            return param("reference point has the wrong dimension");
        }
        let derived = self.derived_budget()?;
        if let Some(b) = self.run.budget {
            if b != derived {
                return param(format!(
                    "budget {b} does not match the {derived} evaluations implied by the algorithm parameters"
                ));
            }
        }
        if self.run.seeds.is_empty() {
            return param("need at least one seed");
        }
        match self.run.algorithm {
            Algorithm::Img => self.img.as_ref().expect("checked").validate(&schedule)?,
            Algorithm::Hybrid => {
                self.img.as_ref().expect("checked").validate(&schedule)?;
                let ea = self
                    .ea
                    .as_ref()
                    .ok_or_else(|| Error::Parameter("hybrid needs an [ea] section".into()))?;
                check_ea(ea, &schedule, true)?;
            }
            a => check_ea(
                self.ea.as_ref().expect("checked"),
                &schedule,
                a == Algorithm::Egd,
            )?,
        }
        Ok(Experiment {
            config: self.clone(),
            spec,
            model,
            schedule,
            reference: Array2::from_shape_vec((1, reference.len()), reference).expect("one row"),
        })
    }
}

fn check_ea(ea: &EaConfig, schedule: &NoiseSchedule, even: bool) -> Result<()> {
    if ea.population < 2 {
        return param("population must have at least two members");
    }
    if even && !ea.population.is_multiple_of(2) {
        return param("EGD needs an even population size");
    }
    if ea.tau > schedule.steps() {
        return param(format!("ea tau must lie in 0..={}", schedule.steps()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Intermediate,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub evaluations: u64,
    pub hypervolume: f64,
    pub front_size: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub phase: Phase,
}

/// In-memory result of one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub records: Vec<RunRecord>,
    pub points: Array2<f64>,
    pub objectives: Array2<f64>,
    pub evaluations: u64,
    pub img: Option<ImgOutput>,
    pub generations: Vec<GenerationLog>,
    pub wall_seconds: f64,
}

impl SeedResult {
    pub fn final_hypervolume(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.hypervolume)
    }
}

fn record(
    y: &Array2<f64>,
    evaluations: u64,
    seed: u64,
    algorithm: Algorithm,
    phase: Phase,
) -> Result<RunRecord> {
    Ok(RunRecord {
        evaluations,
        hypervolume: hypervolume_origin(y)?,
        front_size: front_size(y),
        seed,
        algorithm,
        phase,
    })
}

fn img_records(out: &ImgOutput, seed: u64, algorithm: Algorithm) -> Result<Vec<RunRecord>> {
    out.snapshots
        .iter()
        .map(|s| {
            let phase = if s.t == 0 {
                Phase::Final
            } else {
                Phase::Intermediate
            };
            record(&s.objectives, s.evaluations, seed, algorithm, phase)
        })
        .collect()
}

fn ea_records(log: &[GenerationLog], seed: u64, algorithm: Algorithm) -> Vec<RunRecord> {
    log.iter()
        .map(|g| RunRecord {
            evaluations: g.evaluations,
            hypervolume: g.hypervolume,
            front_size: g.front_size,
            seed,
            algorithm,
            phase: Phase::Final,
        })
        .collect()
}

impl Experiment {
    /// Executes one seed in memory.
    pub fn run_seed(&self, seed: u64) -> Result<SeedResult> {
        let start = Instant::now();
        let cfg = &self.config;
        let algorithm = cfg.run.algorithm;
        let counter = EvalCounter::new();
        let mut rng = seeded(seed);
        let (records, points, objectives, img, generations) = match algorithm {
            Algorithm::Img => {
                let img_cfg = cfg.img.as_ref().expect("validated");
                let out = img_generate(
                    &self.model,
                    &self.spec,
                    img_cfg,
                    &self.schedule,
                    Some(&self.reference),
                    &counter,
                    &mut rng,
                )?;
                let recs = img_records(&out, seed, algorithm)?;
                (
                    recs,
                    out.points.clone(),
                    out.objectives.clone(),
                    Some(out),
                    Vec::new(),
                )
            }
            Algorithm::Hybrid => {
                let out = hybrid_egd_img(
                    &self.spec,
                    &self.model,
                    &self.schedule,
                    cfg.ea.as_ref().expect("validated"),
                    cfg.hybrid.as_ref().expect("validated").ea_steps,
                    cfg.img.as_ref().expect("validated"),
                    &self.reference,
                    &counter,
                    &mut rng,
                )?;
                let mut recs = ea_records(&out.ea_log, seed, algorithm);
                recs.extend(img_records(&out.img, seed, algorithm)?);
                (
                    recs,
                    out.img.points.clone(),
                    out.img.objectives.clone(),
                    Some(out.img),
                    out.ea_log,
                )
            }
            a => {
                let kind = a.ea_kind().expect("EA algorithm");
                let run = run_ea(
                    kind,
                    &self.model,
                    &self.spec,
                    &self.schedule,
                    cfg.ea.as_ref().expect("validated"),
                    &self.reference,
                    &counter,
                    &mut rng,
                )?;
                let recs = ea_records(&run.log, seed, algorithm);
                (
                    recs,
                    run.population.points,
                    run.population.objectives,
                    None,
                    run.log,
                )
            }
        };
        Ok(SeedResult {
            seed,
            algorithm,
            records,
            points,
            objectives,
            evaluations: counter.get(),
            img,
            generations,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Hypervolume of the last record at or before `checkpoint`.
pub fn value_at(records: &[RunRecord], checkpoint: u64) -> Option<f64> {
    records
        .iter()
        .take_while(|r| r.evaluations <= checkpoint)
        .last()
        .map(|r| r.hypervolume)
}

/// Mean and sample standard deviation (`0` for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub evaluations: u64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub problem: String,
    pub label: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub evaluations: u64,
    pub final_hypervolume: f64,
    pub front_size: usize,
    /// `(checkpoint, hypervolume)` pairs.
    pub checkpoints: Vec<(u64, f64)>,
    /// Random shift of the QMC preference lattice, when one was drawn.
    #[serde(default)]
    pub qmc_shift: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub problem: String,
    pub label: String,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<CheckpointStat>,
}

impl RunConfig {
    /// Directory name of this run under the output root.
    pub fn label(&self) -> &str {
        self.run
            .label
            .as_deref()
            .unwrap_or(self.run.algorithm.name())
    }
}

fn seed_dir(root: &Path, label: &str, seed: u64) -> PathBuf {
    root.join(label).join(format!("seed_{seed}"))
}

/// Output root: explicit override, then the config, then [`OUT_ENV`], then `runs`.
pub fn resolve_out(cli: Option<&Path>, config: &RunConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| config.run.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_matrix_csv(path: &Path, points: &Array2<f64>, objectives: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=points.ncols()).map(|k| format!("x_{k}")).collect();
    header.extend((1..=objectives.ncols()).map(|k| format!("y_{k}")));
    w.write_record(&header)?;
    for (x, y) in points.rows().into_iter().zip(objectives.rows()) {
        w.write_record(x.iter().chain(y.iter()).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `final_points.csv` back as `(points, objectives)`.
pub fn read_final_points(path: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let d = header.iter().filter(|h| h.starts_with("x_")).count();
    let n = header.iter().filter(|h| h.starts_with("y_")).count();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        xs.extend_from_slice(&vals[..d]);
        ys.extend_from_slice(&vals[d..d + n]);
        rows += 1;
    }
    Ok((
        Array2::from_shape_vec((rows, d), xs).expect("row widths"),
        Array2::from_shape_vec((rows, n), ys).expect("row widths"),
    ))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

impl Experiment {
    /// Writes the artifacts of one seed into its directory.
    pub fn write_seed(&self, root: &Path, result: &SeedResult) -> Result<PathBuf> {
        let dir = seed_dir(root, self.config.label(), result.seed);
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
        for r in &result.records {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut t = csv::Writer::from_path(dir.join("timing.csv"))?;
        t.write_record(["seed", "wall_seconds"])?;
        t.write_record([
            result.seed.to_string(),
            format!("{:.3}", result.wall_seconds),
        ])?;
        t.flush()?;
        write_matrix_csv(
            &dir.join("final_points.csv"),
            &result.points,
            &result.objectives,
        )?;
        write_front_csv(
            &dir.join("front.csv"),
            &front_entries(self.config.label(), &result.objectives, &result.points),
        )?;
        if let Some(img) = &result.img {
            write_trajectory_csv(&dir.join("trajectory.csv"), &img.trajectory)?;
        }
        if !result.generations.is_empty() {
            write_generation_csv(&dir.join("generations.csv"), &result.generations)?;
        }
        let checkpoints = self
            .config
            .checkpoints()?
            .into_iter()
            .filter_map(|c| value_at(&result.records, c).map(|v| (c, v)))
            .collect();
        let summary = SeedSummary {
            problem: self.spec.name.clone(),
            label: self.config.label().to_string(),
            algorithm: result.algorithm,
            seed: result.seed,
            evaluations: result.evaluations,
            final_hypervolume: result.final_hypervolume(),
            front_size: result.records.last().map_or(0, |r| r.front_size),
            checkpoints,
            qmc_shift: result.img.as_ref().and_then(|i| i.shift.clone()),
        };
        // Written last: its presence marks the seed as complete.
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(dir)
    }

    /// Runs every configured seed not already completed under `root`, in
    /// parallel, and writes the per-algorithm summary.
    pub fn run_all(&self, root: &Path, only_seed: Option<u64>) -> Result<AlgorithmSummary> {
        let seeds: Vec<u64> = match only_seed {
            Some(s) => vec![s],
            None => self.config.run.seeds.clone(),
        };
        let label = self.config.label();
        let pending: Vec<u64> = seeds
            .iter()
            .copied()
            .filter(|s| !seed_dir(root, label, *s).join("summary.json").exists())
            .collect();
        pending
            .par_iter()
            .map(|&s| {
                let result = self.run_seed(s)?;
                self.write_seed(root, &result).map(|_| ())
            })
            .collect::<Result<Vec<()>>>()?;
        let summary =
            summarize_algorithm_dir(&root.join(label), Some(&self.config.checkpoints()?))?;
        fs::write(
            root.join(label).join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(summary)
    }
}

/// Loaded artifacts of one completed seed directory.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub dir: PathBuf,
    pub summary: SeedSummary,
    pub records: Vec<RunRecord>,
}

fn load_seed_dir(dir: &Path) -> Result<SeedArtifacts> {
    let summary: SeedSummary =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let records = read_records(&dir.join("records.csv"))?;
    Ok(SeedArtifacts {
        dir: dir.to_path_buf(),
        summary,
        records,
    })
}

/// Finds completed seed directories below `dir`: the directory itself, its
/// `seed_*` children, or `<algorithm>/seed_*` grandchildren.
pub fn discover(dir: &Path) -> Result<Vec<SeedArtifacts>> {
    if dir.join("summary.json").exists() && dir.join("records.csv").exists() {
        return Ok(vec![load_seed_dir(dir)?]);
    }
    let mut out = Vec::new();
    let mut children: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        if child.join("records.csv").exists() && child.join("summary.json").exists() {
            out.push(load_seed_dir(&child)?);
        } else if child.is_dir() {
            let mut grand: Vec<PathBuf> = fs::read_dir(&child)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("records.csv").exists() && p.join("summary.json").exists())
                .collect();
            grand.sort();
            for g in grand {
                out.push(load_seed_dir(&g)?);
            }
        }
    }
    Ok(out)
}

/// Mean and std across runs at each checkpoint.
pub fn checkpoint_stats(runs: &[&[RunRecord]], checkpoints: &[u64]) -> Vec<CheckpointStat> {
    checkpoints
        .iter()
        .filter_map(|&c| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| value_at(r, c)).collect();
            if vals.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&vals);
            Some(CheckpointStat {
                evaluations: c,
                mean,
                std,
                runs: vals.len(),
            })
        })
        .collect()
}

fn default_checkpoints(runs: &[SeedArtifacts]) -> Vec<u64> {
    let budget = runs
        .iter()
        .filter_map(|r| r.records.last().map(|x| x.evaluations))
        .min()
        .unwrap_or(0);
    let mut cps: Vec<u64> = (0..4).map(|k| budget >> k).filter(|c| *c > 0).collect();
    cps.sort_unstable();
    cps.dedup();
    cps
}

fn summarize_algorithm_dir(dir: &Path, checkpoints: Option<&[u64]>) -> Result<AlgorithmSummary> {
    let runs = discover(dir)?;
    let table = summarize_runs(&runs, checkpoints)?;
    table
        .into_iter()
        .next()
        .ok_or_else(|| Error::State(format!("no completed runs under {}", dir.display())))
}

/// One summary per run label. Refuses to mix problems.
pub fn summarize_runs(
    runs: &[SeedArtifacts],
    checkpoints: Option<&[u64]>,
) -> Result<Vec<AlgorithmSummary>> {
    if runs.is_empty() {
        return Err(Error::State("no completed runs".into()));
    }
    let problems: BTreeSet<&str> = runs.iter().map(|r| r.summary.problem.as_str()).collect();
    if problems.len() > 1 {
        return Err(Error::State(format!(
            "runs mix problems {problems:?}; refusing to aggregate"
        )));
    }
    let problem = runs[0].summary.problem.clone();
    let mut by_label: BTreeMap<&str, Vec<&SeedArtifacts>> = BTreeMap::new();
    for r in runs {
        by_label
            .entry(r.summary.label.as_str())
            .or_default()
            .push(r);
    }
    let cps = checkpoints
        .map(<[u64]>::to_vec)
        .unwrap_or_else(|| default_checkpoints(runs));
    Ok(by_label
        .into_iter()
        .map(|(label, rs)| {
            let recs: Vec<&[RunRecord]> = rs.iter().map(|r| r.records.as_slice()).collect();
            AlgorithmSummary {
                problem: problem.clone(),
                label: label.to_string(),
                algorithm: rs[0].summary.algorithm,
                seeds: rs.iter().map(|r| r.summary.seed).collect(),
                checkpoints: checkpoint_stats(&recs, &cps),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub evaluations: u64,
    pub phase: Phase,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Mean curve over seeds, aligned on the recorded evaluation counts.
pub fn curve(runs: &[&SeedArtifacts]) -> Vec<CurvePoint> {
    let mut grid: BTreeMap<u64, Phase> = BTreeMap::new();
    for r in runs {
        for rec in &r.records {
            grid.insert(rec.evaluations, rec.phase);
        }
    }
    grid.into_iter()
        .filter_map(|(e, phase)| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| value_at(&r.records, e))
                .collect();
            if vals.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&vals);
            Some(CurvePoint {
                evaluations: e,
                phase,
                mean,
                std,
                runs: vals.len(),
            })
        })
        .collect()
}

/// Writes the comparison table to `out` (CSV: label, evaluations, mean, std,
/// runs) and one curve CSV per run label next to it.
pub fn summarize(
    dirs: &[PathBuf],
    out: &Path,
    checkpoints: Option<&[u64]>,
) -> Result<Vec<AlgorithmSummary>> {
    let mut runs = Vec::new();
    for d in dirs {
        runs.extend(discover(d)?);
    }
    let table = summarize_runs(&runs, checkpoints)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["label", "evaluations", "mean", "std", "runs"])?;
    for s in &table {
        for c in &s.checkpoints {
            w.write_record([
                s.label.clone(),
                c.evaluations.to_string(),
                format!("{:.6}", c.mean),
                format!("{:.6}", c.std),
                c.runs.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let stem = out
        .file_stem()
        .map_or("summary".into(), |s| s.to_string_lossy().into_owned());
    let base = out.parent().unwrap_or(Path::new("."));
    for s in &table {
        let rs: Vec<&SeedArtifacts> = runs.iter().filter(|r| r.summary.label == s.label).collect();
        let mut cw = csv::Writer::from_path(base.join(format!("{stem}_curve_{}.csv", s.label)))?;
        for p in curve(&rs) {
            cw.serialize(p)?;
        }
        cw.flush()?;
    }
    Ok(table)
}

/// Plain-text rendering of a summary table.
pub fn format_table(table: &[AlgorithmSummary]) -> String {
    let mut s = format!(
        "{:<16} {:>12} {:>10} {:>10} {:>5}\n",
        "run", "evaluations", "mean", "std", "runs"
    );
    for a in table {
        for c in &a.checkpoints {
            s.push_str(&format!(
                "{:<16} {:>12} {:>10.4} {:>10.4} {:>5}\n",
                a.label, c.evaluations, c.mean, c.std, c.runs
            ));
        }
    }
    s
}

/// Per-seed combined-front report across the runs found under `dir`. Only
/// seeds completed by every run are pooled.
pub fn combined_fronts(dir: &Path) -> Result<Vec<(u64, Contributions)>> {
    let runs = discover(dir)?;
    if runs.is_empty() {
        return Err(Error::State(format!(
            "no completed runs under {}",
            dir.display()
        )));
    }
    let labels: BTreeSet<&str> = runs.iter().map(|r| r.summary.label.as_str()).collect();
    let seeds: BTreeSet<u64> = runs.iter().map(|r| r.summary.seed).collect();
    let mut out = Vec::new();
    for seed in seeds {
        let group: Vec<&SeedArtifacts> = runs.iter().filter(|r| r.summary.seed == seed).collect();
        if group.len() != labels.len() {
            continue;
        }
        let sets = group
            .iter()
            .map(|r| {
                let (points, objectives) = read_final_points(&r.dir.join("final_points.csv"))?;
                Ok(LabeledSet {
                    label: r.summary.label.clone(),
                    objectives,
                    points,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((seed, combined_front_contributions(&sets)?));
    }
    Ok(out)
}
