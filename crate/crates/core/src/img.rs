//! Inference-time multi-target generation.
//!
//! At every reverse step each of the `N` instances proposes `M` candidates
//! from the base sampler. All `B = N * M` candidates go into one shared buffer
//! and are evaluated once. Instance `i` then takes one candidate from the
//! buffer according to the weight
//!
//! ```text
//! W(y; lambda) = sum_k exp(-(y_k - c_k) / lambda_k)
//! ```
//!
//! either greedily (largest weight) or by categorical sampling, and the chosen
//! candidate is removed from the buffer before the next instance chooses.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    forward_noise, log_sum_exp, sample_candidates, GmmModel, NoiseSchedule, PointBatch,
};
use crate::error::{param, Error, Result};
use crate::objectives::{evaluate_normalized, EvalCounter, ObjectiveSpec};
use crate::preference::{self, PreferenceSource, DEFAULT_CLAMP};

/// `log W(y; lambda)` with `W = sum_k exp(-(y_k - c_k) / lambda_k)`.
pub fn log_weight(y: &[f64], lambda: &[f64], c: &[f64]) -> Result<f64> {
    if y.len() != lambda.len() || y.len() != c.len() {
        return param("y, lambda and c must have equal length");
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!(
            "non-finite objective vector {y:?}"
        )));
    }
    // Written to reject NaN as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return param("preference components must be positive");
    }
    let exps: Vec<f64> = y
        .iter()
        .zip(lambda)
        .zip(c)
        .map(|((yk, lk), ck)| -(yk - ck) / lk)
        .collect();
    Ok(log_sum_exp(&exps))
}

/// `L(y) = -log sum_k exp(-(y_k - c_k) / lambda_k)`.
pub fn nll(y: &[f64], lambda: &[f64], c: &[f64]) -> Result<f64> {
    Ok(-log_weight(y, lambda, c)?)
}

/// `log p_base(x) - f_k(x) / lambda_k`: log of the unnormalized
/// exponentially tilted density of a single objective.
pub fn tilted_density_unnorm<X: ?Sized>(
    base_logpdf: impl Fn(&X) -> f64,
    f_k: impl Fn(&X) -> f64,
    lambda_k: f64,
    x: &X,
) -> f64 {
    base_logpdf(x) - f_k(x) / lambda_k
}

/// Candidates of one reverse step, pooled across instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBuffer {
    pub x: Array2<f64>,
    /// Normalized objectives, row-aligned with `x`.
    pub y: Array2<f64>,
    alive: Vec<bool>,
    n_alive: usize,
}

impl CandidateBuffer {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return param(format!(
                "{} points but {} objective rows",
                x.nrows(),
                y.nrows()
            ));
        }
        let b = x.nrows();
        Ok(Self {
            x,
            y,
            alive: vec![true; b],
            n_alive: b,
        })
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn n_alive(&self) -> usize {
        self.n_alive
    }

    pub fn is_alive(&self, b: usize) -> bool {
        self.alive[b]
    }

    fn take(&mut self, b: usize) {
        debug_assert!(self.alive[b]);
        self.alive[b] = false;
        self.n_alive -= 1;
    }

    /// Log weights of every candidate; dead entries are `-inf`.
    pub fn log_weights(&self, lambda: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.y
            .rows()
            .into_iter()
            .zip(&self.alive)
            .map(|(row, alive)| {
                if *alive {
                    log_weight(row.as_slice().expect("standard layout"), lambda, c)
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            })
            .collect()
    }
}

/// How the coefficient vector `c` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// Worst objective value observed so far, per objective.
    #[default]
    RunningMax,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTracker {
    pub c: Vec<f64>,
    pub mode: CoefficientMode,
}

impl CoefficientTracker {
    pub fn running_max(n: usize) -> Self {
        Self {
            c: vec![f64::NEG_INFINITY; n],
            mode: CoefficientMode::RunningMax,
        }
    }

    pub fn fixed(c: Vec<f64>) -> Self {
        Self {
            c,
            mode: CoefficientMode::Fixed,
        }
    }
}

/// Raises `c` to the per-objective maximum of `y` in running-max mode.
pub fn update_coefficients(tracker: &mut CoefficientTracker, y: &Array2<f64>) -> Result<()> {
    if y.nrows() == 0 {
        return param("empty objective batch");
    }
    if y.ncols() != tracker.c.len() {
        return param("objective count does not match coefficient vector");
    }
    if tracker.mode == CoefficientMode::RunningMax {
        for (ck, col) in tracker.c.iter_mut().zip(y.columns()) {
            *ck = col.iter().copied().fold(*ck, f64::max);
        }
    }
    Ok(())
}

fn no_alive() -> Error {
    Error::State("candidate buffer has no alive entries".into())
}

/// Categorical draw over alive candidates with probability proportional to
/// `W`. Leaves the buffer untouched.
pub fn draw_probabilistic<R: Rng + ?Sized>(
    buffer: &CandidateBuffer,
    lambda: &[f64],
    c: &[f64],
    rng: &mut R,
) -> Result<usize> {
    if buffer.n_alive() == 0 {
        return Err(no_alive());
    }
    let lw = buffer.log_weights(lambda, c)?;
    let lse = log_sum_exp(&lw);
    if !lse.is_finite() {
        // An infinite log weight (c = +inf or -inf): take the largest.
        return argmax_alive(buffer, &lw);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (b, l) in lw.iter().enumerate() {
        if !buffer.is_alive(b) {
            continue;
        }
        acc += (l - lse).exp();
        last = Some(b);
        if u < acc {
            return Ok(b);
        }
    }
    // Rounding left acc slightly below 1.
    last.ok_or_else(no_alive)
}

/// Probabilistic selection that removes the chosen candidate.
pub fn resample_probabilistic<R: Rng + ?Sized>(
    buffer: &mut CandidateBuffer,
    lambda: &[f64],
    c: &[f64],
    rng: &mut R,
) -> Result<usize> {
    let b = draw_probabilistic(buffer, lambda, c, rng)?;
    buffer.take(b);
    Ok(b)
}

fn argmax_alive(buffer: &CandidateBuffer, lw: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (b, l) in lw.iter().enumerate() {
        if buffer.is_alive(b) && best.is_none_or(|i| *l > lw[i]) {
            best = Some(b);
        }
    }
    best.ok_or_else(no_alive)
}

/// Alive candidate with the largest weight (lowest index on ties); removes it.
pub fn resample_greedy(buffer: &mut CandidateBuffer, lambda: &[f64], c: &[f64]) -> Result<usize> {
    if buffer.n_alive() == 0 {
        return Err(no_alive());
    }
    let lw = buffer.log_weights(lambda, c)?;
    let b = argmax_alive(buffer, &lw)?;
    buffer.take(b);
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Greedy,
    Probabilistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImgConfig {
    /// Batch size: number of generated instances.
    #[serde(rename = "N")]
    pub batch: usize,
    /// Candidates per instance per step.
    #[serde(rename = "M")]
    pub resample: usize,
    pub tau: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub preference: PreferenceSource,
    #[serde(default)]
    pub c_mode: CoefficientMode,
    /// Coefficient vector for `c_mode = "fixed"`; a single value is broadcast.
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP
}

impl ImgConfig {
    pub fn new(batch: usize, resample: usize, tau: usize) -> Self {
        Self {
            batch,
            resample,
            tau,
            selection: Selection::default(),
            preference: PreferenceSource::default(),
            c_mode: CoefficientMode::default(),
            c: None,
            clamp: DEFAULT_CLAMP,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.batch == 0 || self.resample == 0 {
            return param("N and M must be at least 1");
        }
        if self.tau == 0 || self.tau > schedule.steps() {
            return param(format!("tau must lie in 1..={}", schedule.steps()));
        }
        if self.c_mode == CoefficientMode::Fixed && self.c.is_none() {
            return param("fixed coefficient mode needs c");
        }
        Ok(())
    }

    /// Evaluations consumed by one run: `N * M * tau`.
    pub fn budget(&self) -> u64 {
        (self.batch * self.resample * self.tau) as u64
    }

    fn tracker(&self, n: usize) -> Result<CoefficientTracker> {
        match self.c_mode {
            CoefficientMode::RunningMax => Ok(CoefficientTracker::running_max(n)),
            CoefficientMode::Fixed => {
                let c = self.c.clone().unwrap_or_default();
                match c.len() {
                    1 => Ok(CoefficientTracker::fixed(vec![c[0]; n])),
                    l if l == n => Ok(CoefficientTracker::fixed(c)),
                    l => param(format!("fixed c has {l} entries for {n} objectives")),
                }
            }
        }
    }
}

/// Preference vectors for `N` instances (`N x n`). Returns the QMC shift
/// when one was drawn.
pub fn make_preferences<R: Rng + ?Sized>(
    source: &PreferenceSource,
    count: usize,
    n: usize,
    clamp: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, Option<Vec<f64>>)> {
    if n == 1 {
        return Ok((Array2::ones((count, 1)), None));
    }
    match source {
        PreferenceSource::Qmc => {
            let shift = preference::random_shift(n, rng);
            Ok((
                preference::qmc_preferences(count, n, &shift, clamp)?,
                Some(shift),
            ))
        }
        PreferenceSource::Mc => {
            let mut lam = preference::mc_sphere(count, n, rng)?;
            preference::clamp_rows(&mut lam, clamp)?;
            Ok((lam, None))
        }
        PreferenceSource::User(path) => {
            let lam = preference::read_csv(path, clamp)?;
            if lam.ncols() != n || lam.nrows() != count {
                return param(format!(
                    "{}: expected {count} vectors of length {n}, got {}x{}",
                    path.display(),
                    lam.nrows(),
                    lam.ncols()
                ));
            }
            Ok((lam, None))
        }
    }
}

/// One selection event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Step index of the selected candidate (`x_{t-1}` is recorded as `t - 1`).
    pub t: usize,
    pub instance: usize,
    pub buffer_index: usize,
    pub y: Vec<f64>,
    pub log_weight: f64,
    pub c: Vec<f64>,
}

/// Selected batch after one reverse step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub t: usize,
    /// Evaluations consumed up to and including this step.
    pub evaluations: u64,
    pub objectives: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ImgOutput {
    pub points: Array2<f64>,
    /// Normalized objectives of `points`, taken from the last buffer.
    pub objectives: Array2<f64>,
    pub preferences: Array2<f64>,
    pub shift: Option<Vec<f64>>,
    pub trajectory: Vec<TrajectoryRecord>,
    pub snapshots: Vec<StepSnapshot>,
    pub c: Vec<f64>,
}

/// Runs the full generation loop from `t = tau` down to 0.
///
/// With `x_ref` (one row, or one row per instance) each instance starts from
/// the reference noised to `tau`. Without it the chain starts from pure noise
/// and `tau` must equal `T`.
pub fn img_generate<R: Rng + ?Sized>(
    model: &GmmModel,
    spec: &ObjectiveSpec,
    config: &ImgConfig,
    schedule: &NoiseSchedule,
    x_ref: Option<&Array2<f64>>,
    counter: &EvalCounter,
    rng: &mut R,
) -> Result<ImgOutput> {
    config.validate(schedule)?;
    let (nb, m, d, n) = (config.batch, config.resample, model.dim(), spec.n());
    if spec.dim() != d {
        return param(format!(
            "model dimension {d} does not match problem dimension {}",
            spec.dim()
        ));
    }
    let (lambda, shift) = make_preferences(&config.preference, nb, n, config.clamp, rng)?;
    let mut tracker = config.tracker(n)?;

    let mut state = match x_ref {
        Some(r) => {
            if r.ncols() != d || !(r.nrows() == 1 || r.nrows() == nb) {
                return param(format!(
                    "reference must be 1x{d} or {nb}x{d}, got {:?}",
                    r.dim()
                ));
            }
            let clean = if r.nrows() == nb {
                r.clone()
            } else {
                Array2::from_shape_fn((nb, d), |(_, j)| r[[0, j]])
            };
            forward_noise(&PointBatch::clean(clean)?, config.tau, schedule, rng)?
        }
        None => {
            if config.tau != schedule.steps() {
                return param("without a reference the chain must start at tau = T");
            }
            let z =
                Array2::from_shape_simple_fn((nb, d), || rng.sample(rand_distr::StandardNormal));
            PointBatch::new(z, config.tau)?
        }
    };

    let mut trajectory = Vec::with_capacity(nb * config.tau);
    let mut snapshots = Vec::with_capacity(config.tau);
    let mut final_y = Array2::zeros((nb, n));
    for t in (1..=config.tau).rev() {
        let mut cand = Array2::zeros((nb * m, d));
        for i in 0..nb {
            let row = state.points.row(i).to_vec();
            let c = sample_candidates(model, &row, t, m, schedule, rng)?;
            cand.slice_mut(ndarray::s![i * m..(i + 1) * m, ..])
                .assign(&c);
        }
        let y = evaluate_normalized(spec, &cand, counter)?;
        update_coefficients(&mut tracker, &y)?;
        let mut buffer = CandidateBuffer::new(cand, y)?;
        let mut next = Array2::zeros((nb, d));
        let mut next_y = Array2::zeros((nb, n));
        for i in 0..nb {
            let lam = lambda.row(i);
            let lam = lam.as_slice().expect("standard layout");
            let b = match config.selection {
                Selection::Greedy => resample_greedy(&mut buffer, lam, &tracker.c)?,
                Selection::Probabilistic => {
                    resample_probabilistic(&mut buffer, lam, &tracker.c, rng)?
                }
            };
            let yb = buffer.y.row(b).to_vec();
            next.row_mut(i).assign(&buffer.x.row(b));
            next_y.row_mut(i).assign(&ArrayView1::from(&yb));
            trajectory.push(TrajectoryRecord {
                t: t - 1,
                instance: i,
                buffer_index: b,
                log_weight: log_weight(&yb, lam, &tracker.c)?,
                y: yb,
                c: tracker.c.clone(),
            });
        }
        snapshots.push(StepSnapshot {
            t: t - 1,
            evaluations: counter.get(),
            objectives: next_y.clone(),
        });
        state = PointBatch::new(next, t - 1)?;
        final_y = next_y;
    }

    Ok(ImgOutput {
        points: state.points,
        objectives: final_y,
        preferences: lambda,
        shift,
        trajectory,
        snapshots,
        c: tracker.c,
    })
}

/// Writes the selection log with columns `t, instance, buffer_index, y_*,
/// log_weight, c_*`.
pub fn write_trajectory_csv(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = records.first().map_or(0, |r| r.y.len());
    let mut header = vec!["t".to_string(), "instance".into(), "buffer_index".into()];
    header.extend((1..=n).map(|k| format!("y_{k}")));
    header.push("log_weight".into());
    header.extend((1..=n).map(|k| format!("c_{k}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.t.to_string(),
            r.instance.to_string(),
            r.buffer_index.to_string(),
        ];
        row.extend(r.y.iter().map(|v| v.to_string()));
        row.push(r.log_weight.to_string());
        row.extend(r.c.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Bounds, Multiwell};
    use crate::rng::seeded;
    use ndarray::array;
    use std::sync::Arc;

    #[test]
    fn log_weight_at_coefficients() {
        let lw = log_weight(&[0.3, -0.2, 1.0], &[0.5, 0.5, 0.7], &[0.3, -0.2, 1.0]).unwrap();
        assert!((lw - 3f64.ln()).abs() < 1e-15);
        assert!((nll(&[0.0, 0.0], &[0.6, 0.8], &[0.0, 0.0]).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(log_weight(&[f64::NAN, 0.0], &[0.6, 0.8], &[0.0, 0.0]).is_err());
        let far = log_weight(&[1e6, 1e6], &[0.6, 0.8], &[0.0, 0.0]).unwrap();
        assert!(far.exp() == 0.0);
    }

    #[test]
    fn coefficient_updates() {
        let mut t = CoefficientTracker::running_max(2);
        update_coefficients(&mut t, &array![[-0.5, -0.2]]).unwrap();
        assert_eq!(t.c, vec![-0.5, -0.2]);
        let mut t = CoefficientTracker::running_max(2);
        t.c = vec![-1.0, -1.0];
        update_coefficients(&mut t, &array![[-0.5, -2.0]]).unwrap();
        assert_eq!(t.c, vec![-0.5, -1.0]);
        let mut f = CoefficientTracker::fixed(vec![0.0, 0.0]);
        update_coefficients(&mut f, &array![[0.5, 0.5]]).unwrap();
        assert_eq!(f.c, vec![0.0, 0.0]);
        assert!(update_coefficients(&mut f, &Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn greedy_ties_and_removal() {
        let y = array![[-0.2, -0.1], [-0.9, -0.9], [-0.9, -0.9], [0.0, 0.0]];
        let mut buf = CandidateBuffer::new(Array2::zeros((4, 1)), y).unwrap();
        let lam = [0.6, 0.8];
        let c = [0.0, 0.0];
        assert_eq!(resample_greedy(&mut buf, &lam, &c).unwrap(), 1);
        assert_eq!(resample_greedy(&mut buf, &lam, &c).unwrap(), 2);
        assert_eq!(buf.n_alive(), 2);
        assert_eq!(resample_greedy(&mut buf, &lam, &c).unwrap(), 0);
        assert_eq!(resample_greedy(&mut buf, &lam, &c).unwrap(), 3);
        assert!(matches!(
            resample_greedy(&mut buf, &lam, &c),
            Err(Error::State(_))
        ));
        assert!(matches!(
            resample_probabilistic(&mut buf, &lam, &c, &mut seeded(0)),
            Err(Error::State(_))
        ));
    }

    fn toy_problem(d: usize) -> ObjectiveSpec {
        let mut a = vec![vec![0.0; d]; 2];
        a[0][0] = 1.0;
        a[1][0] = -1.0;
        ObjectiveSpec::new(
            "toy",
            Arc::new(Multiwell::new(a).unwrap()),
            Bounds::uniform(2, 0.0, 8.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn generate_counts_and_distinct_picks() {
        let model = GmmModel::standard_normal(3).unwrap();
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let spec = toy_problem(3);
        let cfg = ImgConfig::new(5, 3, 20);
        let counter = EvalCounter::new();
        let out = img_generate(
            &model,
            &spec,
            &cfg,
            &schedule,
            None,
            &counter,
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(counter.get(), 5 * 3 * 20);
        assert_eq!(out.points.dim(), (5, 3));
        assert_eq!(out.snapshots.len(), 20);
        assert_eq!(out.trajectory.len(), 100);
        for step in out.trajectory.chunks(5) {
            let mut idx: Vec<usize> = step.iter().map(|r| r.buffer_index).collect();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 5);
        }
        let again = img_generate(
            &model,
            &spec,
            &cfg,
            &schedule,
            None,
            &EvalCounter::new(),
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(out.points, again.points);
    }

    #[test]
    fn reference_start_and_validation() {
        let model = GmmModel::standard_normal(3).unwrap();
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let spec = toy_problem(3);
        let cfg = ImgConfig::new(4, 2, 5);
        let counter = EvalCounter::new();
        let r = array![[0.1, 0.2, 0.3]];
        img_generate(
            &model,
            &spec,
            &cfg,
            &schedule,
            Some(&r),
            &counter,
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(counter.get(), 40);
        assert!(img_generate(
            &model,
            &spec,
            &cfg,
            &schedule,
            None,
            &counter,
            &mut seeded(1)
        )
        .is_err());
        let mut bad = cfg.clone();
        bad.tau = 21;
        assert!(img_generate(
            &model,
            &spec,
            &bad,
            &schedule,
            Some(&r),
            &counter,
            &mut seeded(1)
        )
        .is_err());
        let wrong_dim = GmmModel::standard_normal(2).unwrap();
        assert!(img_generate(
            &wrong_dim,
            &spec,
            &cfg,
            &schedule,
            Some(&r),
            &counter,
            &mut seeded(1)
        )
        .is_err());
    }

    #[test]
    fn config_toml_names() {
        let cfg: ImgConfig =
            toml::from_str("N = 32\nM = 8\ntau = 100\nc_mode = \"fixed\"\nc = [0.5]\n").unwrap();
        assert_eq!((cfg.batch, cfg.resample, cfg.tau), (32, 8, 100));
        assert_eq!(cfg.budget(), 25_600);
        assert_eq!(cfg.tracker(3).unwrap().c, vec![0.5; 3]);
        let user: ImgConfig = toml::from_str(
            "N = 4\nM = 2\ntau = 3\npreference = { kind = \"user\", path = \"p.csv\" }\n",
        )
        .unwrap();
        assert!(matches!(user.preference, PreferenceSource::User(_)));
    }
}
