//! Forward noising, the analytic Gaussian-mixture noise predictor and the
//! reverse transition used as the base sampler.
//!
//! The data distribution is a diagonal Gaussian mixture, so every noised
//! marginal `p_t` is again a Gaussian mixture with components
//! `N(sqrt(ab_t) mu_j, ab_t Sigma_j + (1 - ab_t) I)` and the score is exact.
//!
//! The reverse step has the generalized form
//!
//! ```text
//! x_{t-1} = sqrt(ab_{t-1}) x0_hat + sqrt(1 - ab_{t-1} - sigma_t^2) eps_hat + sigma_t z
//! ```
//!
//! where the middle term vanishes for [`SigmaMode::Renoise`]
//! (`sigma_t^2 = 1 - ab_{t-1}`), leaving only the clean-estimate term plus
//! fresh noise.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Choice of reverse-step noise scale `sigma_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// DDPM posterior variance `beta_t (1 - ab_{t-1}) / (1 - ab_t)`.
    #[default]
    Ancestral,
    /// `sigma_t = sqrt(1 - ab_{t-1})`: denoise to the clean estimate and
    /// re-noise it to level `t-1`. Contracts the variance of the sampled
    /// distribution, see the diffusion sanity tests.
    Renoise,
    /// `sigma_t = 0` (deterministic DDIM).
    Deterministic,
}

/// Per-step diffusion coefficients for steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    mode: SigmaMode,
}

impl NoiseSchedule {
    /// Linear beta schedule from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return param("schedule needs at least one step");
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return param(format!(
                "beta bounds must satisfy 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            ));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, SigmaMode::default())
    }

    pub fn from_betas(betas: Vec<f64>, mode: SigmaMode) -> Result<Self> {
        if betas.is_empty() {
            return param("schedule needs at least one step");
        }
        if betas
            .iter()
            .any(|b| !(b.is_finite() && *b > 0.0 && *b < 1.0))
        {
            return param("every beta must lie in (0, 1)");
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        let mut schedule = Self {
            betas,
            alpha_bar,
            sigma: Vec::new(),
            mode,
        };
        schedule.sigma = schedule.sigmas_for(mode);
        Ok(schedule)
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.sigma = self.sigmas_for(mode);
        self.mode = mode;
        self
    }

    /// Overrides the reverse noise scales. `sigma[t-1]` is used at step `t`.
    pub fn with_sigmas(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.steps() {
            return param(format!(
                "expected {} sigmas, got {}",
                self.steps(),
                sigma.len()
            ));
        }
        for (i, s) in sigma.iter().enumerate() {
            let bound = (1.0 - self.alpha_bar[i]).sqrt();
            if !(s.is_finite() && *s >= 0.0 && *s <= bound + 1e-15) {
                return param(format!("sigma at step {} must lie in [0, {bound}]", i + 1));
            }
        }
        self.sigma = sigma;
        self.sigma[0] = 0.0;
        Ok(self)
    }

    fn sigmas_for(&self, mode: SigmaMode) -> Vec<f64> {
        (1..=self.steps())
            .map(|t| {
                if t == 1 {
                    return 0.0;
                }
                let ab_prev = self.alpha_bar[t - 1];
                let ab = self.alpha_bar[t];
                match mode {
                    SigmaMode::Ancestral => {
                        ((1.0 - ab_prev) / (1.0 - ab) * self.betas[t - 1]).sqrt()
                    }
                    SigmaMode::Renoise => (1.0 - ab_prev).sqrt(),
                    SigmaMode::Deterministic => 0.0,
                }
            })
            .collect()
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn mode(&self) -> SigmaMode {
        self.mode
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ab_t` for `t` in `0..=T`; `ab_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Reverse noise scale at step `t` in `1..=T`; always 0 at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return param(format!("step {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }
}

/// A diagonal-covariance Gaussian mixture standing in for a trained denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Array2<f64>,
    variances: Array2<f64>,
    log_weights: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return param("mixture needs at least one component");
        }
        if means.nrows() != k || variances.nrows() != k {
            return param("weights, means and covariances must have one row per component");
        }
        if means.ncols() == 0 || means.ncols() != variances.ncols() {
            return param("means and covariances must share a positive dimension");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return param("mixture weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return param(format!("mixture weights sum to {total}, expected 1"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return param("covariance entries must be positive");
        }
        if means.iter().any(|m| !m.is_finite()) {
            return param("means must be finite");
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            means,
            variances,
            log_weights,
        })
    }

    /// Single standard-normal component in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(vec![1.0], Array2::zeros((1, dim)), Array2::ones((1, dim)))
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    /// Per-component log densities `log w_j + log N(x; m_j, v_j)` of the
    /// marginal at noise level `ab`.
    fn component_log_densities(&self, x: ArrayView1<f64>, ab: f64, out: &mut [f64]) {
        let scale = ab.sqrt();
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((xi, mu), var) in x.iter().zip(self.means.row(j)).zip(self.variances.row(j)) {
                let v = ab * var + (1.0 - ab);
                let diff = xi - scale * mu;
                acc += diff * diff / v + (2.0 * std::f64::consts::PI * v).ln();
            }
            *slot = self.log_weights[j] - 0.5 * acc;
        }
    }

    /// `log p_t(x)` where `ab = ab_t`.
    pub fn log_density(&self, x: &[f64], ab: f64) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        self.component_log_densities(ArrayView1::from(x), ab, &mut buf);
        log_sum_exp(&buf)
    }

    /// Posterior component responsibilities of `x` under `p_t`.
    pub fn responsibilities(&self, x: &[f64], ab: f64) -> Vec<f64> {
        let mut buf = vec![0.0; self.n_components()];
        self.component_log_densities(ArrayView1::from(x), ab, &mut buf);
        softmax_in_place(&mut buf);
        buf
    }

    /// `grad_x log p_t(x)`.
    pub fn score(&self, x: &[f64], ab: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut buf = vec![0.0; self.n_components()];
        self.score_into(ArrayView1::from(x), ab, &mut buf, &mut out);
        out
    }

    fn score_into(&self, x: ArrayView1<f64>, ab: f64, buf: &mut [f64], out: &mut [f64]) {
        self.component_log_densities(x, ab, buf);
        softmax_in_place(buf);
        out.iter_mut().for_each(|o| *o = 0.0);
        let scale = ab.sqrt();
        for (j, r) in buf.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                let v = ab * self.variances[[j, i]] + (1.0 - ab);
                *o -= r * (x[i] - scale * self.means[[j, i]]) / v;
            }
        }
    }

    /// Exact draws from the clean data distribution.
    pub fn sample_data<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        let mut out = Array2::zeros((count, self.dim()));
        for mut row in out.rows_mut() {
            let j = self.pick_component(rng);
            for (i, x) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *x = self.means[[j, i]] + self.variances[[j, i]].sqrt() * z;
            }
        }
        out
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.len() - 1
    }
}

/// A batch of points at diffusion step `t` (0 = clean data).
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    pub points: Array2<f64>,
    pub t: usize,
}

impl PointBatch {
    pub fn new(points: Array2<f64>, t: usize) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return param("point batch contains non-finite entries");
        }
        Ok(Self { points, t })
    }

    /// Clean batch (`t = 0`).
    pub fn clean(points: Array2<f64>) -> Result<Self> {
        Self::new(points, 0)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// `x_tau = sqrt(ab_tau) x0 + sqrt(1 - ab_tau) z`.
pub fn forward_noise<R: Rng + ?Sized>(
    x0: &PointBatch,
    tau: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<PointBatch> {
    if x0.t != 0 {
        return param(format!(
            "forward noising expects a clean batch, got t = {}",
            x0.t
        ));
    }
    if tau > schedule.steps() {
        return param(format!("tau {tau} exceeds T = {}", schedule.steps()));
    }
    if tau == 0 {
        return Ok(x0.clone());
    }
    let ab = schedule.alpha_bar(tau);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let points = x0.points.mapv(|v| {
        let z: f64 = rng.sample(StandardNormal);
        a * v + s * z
    });
    Ok(PointBatch { points, t: tau })
}

/// `eps(x, t) = -sqrt(1 - ab_t) grad log p_t(x)` for every row of `x`.
pub fn predict_noise(
    model: &GmmModel,
    x: &PointBatch,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    check_dim(model, x)?;
    let ab = schedule.alpha_bar(t);
    let scale = -(1.0 - ab).sqrt();
    let mut out = Array2::zeros(x.points.raw_dim());
    let mut buf = vec![0.0; model.n_components()];
    let mut score = vec![0.0; model.dim()];
    for (row, mut dst) in x.points.rows().into_iter().zip(out.rows_mut()) {
        model.score_into(row, ab, &mut buf, &mut score);
        for (d, s) in dst.iter_mut().zip(&score) {
            *d = scale * s;
        }
    }
    Ok(out)
}

/// Clean-data estimate `(x - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
pub fn posterior_x0(
    x: &PointBatch,
    t: usize,
    eps: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    if eps.dim() != x.points.dim() {
        return param(format!(
            "noise shape {:?} does not match batch shape {:?}",
            eps.dim(),
            x.points.dim()
        ));
    }
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok((&x.points - &(eps * s)) / a)
}

/// Deterministic part of the reverse transition at step `t` for a single
/// point: returns the mean of `x_{t-1}` given `x_t`.
fn reverse_mean(
    model: &GmmModel,
    x: ArrayView1<f64>,
    t: usize,
    schedule: &NoiseSchedule,
    buf: &mut [f64],
    score: &mut [f64],
) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let sigma = schedule.sigma(t);
    model.score_into(x, ab, buf, score);
    let noise_scale = (1.0 - ab).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    x.iter()
        .zip(score.iter())
        .map(|(xi, s)| {
            let eps = -noise_scale * s;
            let x0 = (xi - noise_scale * eps) / ab.sqrt();
            ab_prev.sqrt() * x0 + dir * eps
        })
        .collect()
}

/// One reverse transition `x_t -> x_{t-1}` for every row of the batch.
pub fn reverse_step<R: Rng + ?Sized>(
    model: &GmmModel,
    x: &PointBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<PointBatch> {
    let t = x.t;
    schedule.check_step(t)?;
    check_dim(model, x)?;
    let sigma = schedule.sigma(t);
    let mut out = Array2::zeros(x.points.raw_dim());
    let mut buf = vec![0.0; model.n_components()];
    let mut score = vec![0.0; model.dim()];
    for (row, mut dst) in x.points.rows().into_iter().zip(out.rows_mut()) {
        let mean = reverse_mean(model, row, t, schedule, &mut buf, &mut score);
        for (d, m) in dst.iter_mut().zip(mean) {
            *d = if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                m + sigma * z
            } else {
                m
            };
        }
    }
    Ok(PointBatch {
        points: out,
        t: t - 1,
    })
}

/// Runs the reverse chain from `x.t` down to 0.
pub fn denoise<R: Rng + ?Sized>(
    model: &GmmModel,
    x: &PointBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<PointBatch> {
    let mut cur = x.clone();
    while cur.t > 0 {
        cur = reverse_step(model, &cur, schedule, rng)?;
    }
    Ok(cur)
}

/// `M` independent reverse transitions from the same point `x` at step `t`.
pub fn sample_candidates<R: Rng + ?Sized>(
    model: &GmmModel,
    x: &[f64],
    t: usize,
    count: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if count == 0 {
        return param("candidate count must be at least 1");
    }
    schedule.check_step(t)?;
    if x.len() != model.dim() {
        return param(format!(
            "point has dimension {}, model {}",
            x.len(),
            model.dim()
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return param("point contains non-finite entries");
    }
    let mut buf = vec![0.0; model.n_components()];
    let mut score = vec![0.0; model.dim()];
    let mean = reverse_mean(
        model,
        ArrayView1::from(x),
        t,
        schedule,
        &mut buf,
        &mut score,
    );
    let sigma = schedule.sigma(t);
    let mut out = Array2::zeros((count, x.len()));
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (d, m) in row.iter_mut().zip(&mean) {
            *d = if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                m + sigma * z
            } else {
                *m
            };
        }
    }
    Ok(out)
}

fn check_dim(model: &GmmModel, x: &PointBatch) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(Error::Parameter(format!(
            "batch dimension {} does not match model dimension {}",
            x.dim(),
            model.dim()
        )));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(values: &mut [f64]) {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
}

/// Serializable description of a mixture model and its noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariance entries, one row per component.
    pub covariances: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
}

impl DiffusionConfig {
    pub fn build(&self) -> Result<(GmmModel, NoiseSchedule)> {
        let means = rows_to_array(&self.means, "means")?;
        let variances = rows_to_array(&self.covariances, "covariances")?;
        let model = GmmModel::new(self.weights.clone(), means, variances)?;
        let schedule = NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)?
            .with_sigma_mode(self.sigma_mode);
        Ok((model, schedule))
    }

    pub fn from_model(
        model: &GmmModel,
        steps: usize,
        beta_min: f64,
        beta_max: f64,
        sigma_mode: SigmaMode,
    ) -> Self {
        Self {
            weights: model.weights.clone(),
            means: model.means.rows().into_iter().map(|r| r.to_vec()).collect(),
            covariances: model
                .variances
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            steps,
            beta_min,
            beta_max,
            sigma_mode,
        }
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return param(format!("{what}: rows have unequal lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::Parameter(format!("{what}: {e}")))
}
