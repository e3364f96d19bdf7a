//! Black-box objectives, normalization to `[-1, 0]` and evaluation counting.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// A deterministic vector-valued objective (minimization).
pub trait Objective: Send + Sync {
    fn n_objectives(&self) -> usize;
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
}

/// Squared distances to a set of anchors: `f_k(x) = |x - a_k|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiwell {
    anchors: Vec<Vec<f64>>,
}

impl Multiwell {
    /// Accepts a single anchor as well; [`make_multiwell`] requires two.
    pub fn new(anchors: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = anchors.first() else {
            return param("multiwell needs at least one anchor");
        };
        let d = first.len();
        if d == 0 || anchors.iter().any(|a| a.len() != d) {
            return param("anchors must share a positive dimension");
        }
        if anchors.iter().flatten().any(|v| !v.is_finite()) {
            return param("anchors must be finite");
        }
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                if anchors[i] == anchors[j] {
                    return param(format!("anchors {i} and {j} coincide"));
                }
            }
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }
}

impl Objective for Multiwell {
    fn n_objectives(&self) -> usize {
        self.anchors.len()
    }

    fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.anchors
            .iter()
            .map(|a| a.iter().zip(x).map(|(ai, xi)| (xi - ai) * (xi - ai)).sum())
            .collect()
    }
}

/// Per-objective normalization range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return param("lower and upper bounds must be non-empty and equally long");
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return param(format!(
                    "objective {k}: need finite lower < upper, got ({l}, {u})"
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// A named problem: objective function plus normalization bounds.
#[derive(Clone)]
pub struct ObjectiveSpec {
    pub name: String,
    objective: Arc<dyn Objective>,
    bounds: Bounds,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("dim", &self.dim())
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ObjectiveSpec {
    pub fn new(
        name: impl Into<String>,
        objective: Arc<dyn Objective>,
        bounds: Bounds,
    ) -> Result<Self> {
        let n = objective.n_objectives();
        if n == 0 {
            return param("objective count must be at least 1");
        }
        if bounds.len() != n {
            return param(format!("{} bounds for {n} objectives", bounds.len()));
        }
        Ok(Self {
            name: name.into(),
            objective,
            bounds,
        })
    }

    pub fn n(&self) -> usize {
        self.objective.n_objectives()
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }
}

/// Number of full `n`-objective evaluations. Shared across threads.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn add(&self, k: u64) {
        self.0.fetch_add(k, Ordering::SeqCst);
    }
}

/// Raw objective vector of `x`; counts one evaluation.
pub fn evaluate(spec: &ObjectiveSpec, x: &[f64], counter: &EvalCounter) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::Evaluation(format!(
            "point has dimension {}, problem {}",
            x.len(),
            spec.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite input".into()));
    }
    let y = spec.objective.eval(x);
    if y.len() != spec.n() || y.iter().any(|v| v.is_nan()) {
        return Err(Error::Evaluation(format!("objective returned {y:?}")));
    }
    counter.add(1);
    Ok(y)
}

/// `y'_k = -max((upper_k - y_k) / (upper_k - lower_k), 0)`.
pub fn normalize(y: &[f64], bounds: &Bounds) -> Vec<f64> {
    y.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(v, (l, u))| -((u - v) / (u - l)).max(0.0))
        .collect()
}

/// Evaluates every row and returns the normalized `K x n` matrix. Counts `K`
/// evaluations.
pub fn evaluate_normalized(
    spec: &ObjectiveSpec,
    x: &Array2<f64>,
    counter: &EvalCounter,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), spec.n()));
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let y = evaluate(spec, &row.to_vec(), counter)?;
        dst.assign(&ArrayView1::from(&normalize(&y, &spec.bounds)));
    }
    Ok(out)
}

/// Multiwell problem with `n >= 2` anchors in `d` dimensions.
pub fn make_multiwell(
    n: usize,
    d: usize,
    anchors: Vec<Vec<f64>>,
    bounds: Bounds,
) -> Result<ObjectiveSpec> {
    if n < 2 {
        return param("multiwell needs at least two objectives");
    }
    if anchors.len() != n {
        return param(format!("expected {n} anchors, got {}", anchors.len()));
    }
    if anchors.iter().any(|a| a.len() != d) {
        return param(format!("anchors must have dimension {d}"));
    }
    ObjectiveSpec::new(
        format!("multiwell{n}"),
        Arc::new(Multiwell::new(anchors)?),
        bounds,
    )
}

/// Problem definition as stored in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    /// Objective family; only `"multiwell"` is built in.
    #[serde(default = "default_kind")]
    pub kind: String,
    pub n: usize,
    pub d: usize,
    pub anchors: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Clean starting point for diversified starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

fn default_kind() -> String {
    "multiwell".into()
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ObjectiveSpec> {
        if self.kind != "multiwell" {
            return Err(Error::Unsupported(format!("problem kind {:?}", self.kind)));
        }
        let bounds = Bounds::new(self.lower.clone(), self.upper.clone())?;
        let mut spec = make_multiwell(self.n, self.d, self.anchors.clone(), bounds)?;
        spec.name = self.name.clone();
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn two_anchor() -> ObjectiveSpec {
        make_multiwell(
            2,
            2,
            vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            Bounds::uniform(2, 0.0, 4.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn multiwell_values() {
        let spec = two_anchor();
        let c = EvalCounter::new();
        assert_eq!(evaluate(&spec, &[0.0, 0.0], &c).unwrap(), vec![1.0, 1.0]);
        assert_eq!(evaluate(&spec, &[-1.0, 0.0], &c).unwrap(), vec![0.0, 4.0]);
        assert_eq!(evaluate(&spec, &[-1.0, 0.0], &c).unwrap(), vec![0.0, 4.0]);
        assert_eq!(c.get(), 3);
    }

    #[test]
    fn counter_counts_points() {
        let spec = two_anchor();
        let c = EvalCounter::new();
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64 * 0.1);
        let y = evaluate_normalized(&spec, &x, &c).unwrap();
        assert_eq!(y.dim(), (5, 2));
        assert_eq!(c.get(), 5);
    }

    #[test]
    fn bad_inputs() {
        let spec = two_anchor();
        let c = EvalCounter::new();
        assert!(matches!(
            evaluate(&spec, &[f64::NAN, 0.0], &c),
            Err(Error::Evaluation(_))
        ));
        assert!(evaluate(&spec, &[0.0], &c).is_err());
        assert_eq!(c.get(), 0);
        assert!(Multiwell::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(
            make_multiwell(1, 1, vec![vec![0.0]], Bounds::uniform(1, 0.0, 1.0).unwrap()).is_err()
        );
    }

    #[test]
    fn normalization_boundaries() {
        let b = Bounds::new(vec![2.0, -1.0], vec![6.0, 3.0]).unwrap();
        assert_eq!(normalize(&[6.0, 3.0], &b), vec![-0.0, -0.0]);
        assert_eq!(normalize(&[2.0, -1.0], &b), vec![-1.0, -1.0]);
        assert_eq!(normalize(&[4.0, 1.0], &b), vec![-0.5, -0.5]);
        assert_eq!(normalize(&[10.0, 0.0], &b)[0], 0.0);
        assert!(normalize(&[0.0, 0.0], &b)[0] < -1.0);
    }

    #[test]
    fn segment_is_pareto_optimal() {
        let spec = two_anchor();
        let c = EvalCounter::new();
        let mut rng = seeded(2);
        let others: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                evaluate(&spec, &x, &c).unwrap()
            })
            .collect();
        for s in 0..=10 {
            let x = [-1.0 + 0.2 * s as f64, 0.0];
            let y = evaluate(&spec, &x, &c).unwrap();
            let dominated = others
                .iter()
                .any(|o| o[0] <= y[0] && o[1] <= y[1] && (o[0] < y[0] || o[1] < y[1]));
            assert!(!dominated, "segment point {x:?} dominated");
        }
    }

    #[test]
    fn problem_config_roundtrip() {
        let cfg = ProblemConfig {
            name: "toy".into(),
            kind: "multiwell".into(),
            n: 2,
            d: 2,
            anchors: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            lower: vec![0.0, 0.0],
            upper: vec![4.0, 4.0],
            reference: None,
        };
        let back: ProblemConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let spec = back.build().unwrap();
        assert_eq!(spec.name, "toy");
        assert_eq!((spec.n(), spec.dim()), (2, 2));
    }
}
