//! Pareto dominance, hypervolume and front bookkeeping (minimization).

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

fn row(y: &Array2<f64>, i: usize) -> Vec<f64> {
    y.row(i).to_vec()
}

/// Indices of non-dominated rows. Of several identical rows only the first
/// is kept.
pub fn pareto_front(y: &Array2<f64>) -> Vec<usize> {
    let rows: Vec<Vec<f64>> = (0..y.nrows()).map(|i| row(y, i)).collect();
    (0..rows.len())
        .filter(|&i| {
            !rows
                .iter()
                .enumerate()
                .any(|(j, other)| dominates(other, &rows[i]) || (j < i && *other == rows[i]))
        })
        .collect()
}

/// Rows strictly below `reference` in every coordinate, deduplicated.
fn contributing(y: &Array2<f64>, reference: &[f64]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = y
        .rows()
        .into_iter()
        .filter(|r| r.iter().zip(reference).all(|(v, rf)| v < rf))
        .map(|r| r.to_vec())
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite objectives"));
    pts.dedup();
    pts
}

fn hv2(points: &mut [[f64; 2]], reference: [f64; 2]) -> f64 {
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite objectives"));
    let mut area = 0.0;
    let mut level = reference[1];
    for p in points.iter() {
        if p[1] < level {
            area += (reference[0] - p[0]) * (level - p[1]);
            level = p[1];
        }
    }
    area
}

/// Exact hypervolume dominated by `y` and bounded by `reference`, `n <= 3`.
/// Rows not strictly below the reference in every coordinate are ignored.
pub fn hypervolume_exact(y: &Array2<f64>, reference: &[f64]) -> Result<f64> {
    let n = y.ncols();
    if reference.len() != n {
        return param(format!(
            "reference has length {}, objectives {n}",
            reference.len()
        ));
    }
    if y.iter().any(|v| !v.is_finite()) || reference.iter().any(|v| !v.is_finite()) {
        return param("hypervolume needs finite inputs");
    }
    let pts = contributing(y, reference);
    if pts.is_empty() {
        return Ok(0.0);
    }
    match n {
        1 => Ok(reference[0] - pts[0][0]),
        2 => {
            let mut p: Vec<[f64; 2]> = pts.iter().map(|v| [v[0], v[1]]).collect();
            Ok(hv2(&mut p, [reference[0], reference[1]]))
        }
        3 => {
            // Sweep along the third objective; each slab is a 2-D problem.
            let mut p = pts;
            p.sort_by(|a, b| a[2].partial_cmp(&b[2]).expect("finite objectives"));
            let mut vol = 0.0;
            let mut slab: Vec<[f64; 2]> = Vec::with_capacity(p.len());
            for i in 0..p.len() {
                slab.push([p[i][0], p[i][1]]);
                let top = if i + 1 < p.len() {
                    p[i + 1][2]
                } else {
                    reference[2]
                };
                let depth = top - p[i][2];
                if depth > 0.0 {
                    vol += depth * hv2(&mut slab, [reference[0], reference[1]]);
                }
            }
            Ok(vol)
        }
        _ => Err(Error::Unsupported(format!(
            "exact hypervolume for {n} objectives; use hypervolume_mc"
        ))),
    }
}

/// Monte Carlo hypervolume estimate and its binomial standard error.
pub fn hypervolume_mc<R: Rng + ?Sized>(
    y: &Array2<f64>,
    reference: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = y.ncols();
    if reference.len() != n {
        return param(format!(
            "reference has length {}, objectives {n}",
            reference.len()
        ));
    }
    if samples == 0 {
        return param("need at least one sample");
    }
    let pts = contributing(y, reference);
    if pts.is_empty() {
        return Ok((0.0, 0.0));
    }
    let lo: Vec<f64> = (0..n)
        .map(|k| pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let volume: f64 = lo.iter().zip(reference).map(|(l, r)| r - l).product();
    let mut u = vec![0.0; n];
    let mut hits = 0usize;
    for _ in 0..samples {
        for k in 0..n {
            u[k] = lo[k] + rng.random::<f64>() * (reference[k] - lo[k]);
        }
        if pts
            .iter()
            .any(|p| p.iter().zip(&u).all(|(pk, uk)| pk <= uk))
        {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    let se = volume * (frac * (1.0 - frac) / samples as f64).sqrt();
    Ok((volume * frac, se))
}

/// Number of non-dominated rows strictly inside the origin-referenced box.
pub fn front_size(y: &Array2<f64>) -> usize {
    pareto_front(y)
        .into_iter()
        .filter(|&i| y.row(i).iter().all(|v| *v < 0.0))
        .count()
}

/// Hypervolume against the origin, using the exact routine when available.
pub fn hypervolume_origin(y: &Array2<f64>) -> Result<f64> {
    hypervolume_exact(y, &vec![0.0; y.ncols()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub point: Vec<f64>,
    pub y: Vec<f64>,
    pub source: String,
}

/// Mutually non-dominated entries with provenance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
    pub reference: Vec<f64>,
}

impl ParetoArchive {
    pub fn new(n: usize) -> Self {
        Self {
            entries: Vec::new(),
            reference: vec![0.0; n],
        }
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    /// Adds `entry` unless an existing entry dominates or equals it; removes
    /// entries it dominates. Returns whether it was added.
    pub fn insert(&mut self, entry: ArchiveEntry) -> bool {
        if self
            .entries
            .iter()
            .any(|e| dominates(&e.y, &entry.y) || e.y == entry.y)
        {
            return false;
        }
        self.entries.retain(|e| !dominates(&entry.y, &e.y));
        self.entries.push(entry);
        true
    }

    pub fn objectives(&self) -> Array2<f64> {
        let n = self.reference.len();
        let flat: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|e| e.y.iter().copied())
            .collect();
        Array2::from_shape_vec((self.entries.len(), n), flat).expect("entries share n")
    }

    pub fn hypervolume(&self) -> Result<f64> {
        hypervolume_exact(&self.objectives(), &self.reference)
    }
}

/// A labelled solution set for front pooling.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub label: String,
    pub objectives: Array2<f64>,
    pub points: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributions {
    /// `(label, number of combined-front points from that source)`, in input order.
    pub counts: Vec<(String, usize)>,
    pub front_size: usize,
    pub hypervolume: f64,
    pub front: Vec<ArchiveEntry>,
}

/// Pools every set, extracts the combined front and credits each surviving
/// point to its source. Identical vectors are credited to the earliest set.
pub fn combined_front_contributions(sets: &[LabeledSet]) -> Result<Contributions> {
    let Some(first) = sets.first() else {
        return param("need at least one labelled set");
    };
    let n = first.objectives.ncols();
    let mut pooled: Vec<ArchiveEntry> = Vec::new();
    for s in sets {
        if s.objectives.ncols() != n || s.objectives.nrows() != s.points.nrows() {
            return param(format!("set {:?} has inconsistent shape", s.label));
        }
        for (y, x) in s.objectives.rows().into_iter().zip(s.points.rows()) {
            pooled.push(ArchiveEntry {
                point: x.to_vec(),
                y: y.to_vec(),
                source: s.label.clone(),
            });
        }
    }
    let flat: Vec<f64> = pooled.iter().flat_map(|e| e.y.iter().copied()).collect();
    let ys = Array2::from_shape_vec((pooled.len(), n), flat).expect("rows share n");
    let idx = pareto_front(&ys);
    let counts = sets
        .iter()
        .map(|s| {
            let k = idx.iter().filter(|&&i| pooled[i].source == s.label).count();
            (s.label.clone(), k)
        })
        .collect();
    let front: Vec<ArchiveEntry> = idx.iter().map(|&i| pooled[i].clone()).collect();
    let hypervolume = hypervolume_exact(&ys, &vec![0.0; n])?;
    Ok(Contributions {
        counts,
        front_size: front.len(),
        hypervolume,
        front,
    })
}

/// Writes `source, y_1..y_n, x_1..x_d` rows.
pub fn write_front_csv(path: &Path, entries: &[ArchiveEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let (n, d) = entries
        .first()
        .map_or((0, 0), |e| (e.y.len(), e.point.len()));
    let mut header = vec!["source".to_string()];
    header.extend((1..=n).map(|k| format!("y_{k}")));
    header.extend((1..=d).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for e in entries {
        let mut rec = vec![e.source.clone()];
        rec.extend(e.y.iter().chain(&e.point).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Front of a single labelled set as archive entries.
pub fn front_entries(
    label: &str,
    objectives: &Array2<f64>,
    points: &Array2<f64>,
) -> Vec<ArchiveEntry> {
    pareto_front(objectives)
        .into_iter()
        .map(|i| ArchiveEntry {
            point: points.row(i).to_vec(),
            y: objectives.row(i).to_vec(),
            source: label.to_string(),
        })
        .collect()
}
