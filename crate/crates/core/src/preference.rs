//! Preference vectors on the positive orthant of the unit sphere.
//!
//! The quasi-Monte Carlo construction draws `N` rank-1 lattice points in
//! `[0, 1)^{n-1}`, splits the coordinates into angles `Theta` and radial
//! variables `X`, and maps them to the sphere with the classical
//! equal-area recursion restricted to the first orthant. Sets of vectors are
//! stored one vector per row (`N x n`).

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Smallest admissible preference component after clamping.
pub const DEFAULT_CLAMP: f64 = 1e-3;

pub fn is_prime(m: u64) -> bool {
    if m < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= m {
        if m.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Smallest prime `>= lo`.
pub fn next_prime(lo: u64) -> u64 {
    let mut m = lo.max(2);
    while !is_prime(m) {
        m += 1;
    }
    m
}

fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    // x - floor(x) can round up to exactly 1 for tiny negative x.
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Lattice parameters for `N` points and `n` objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub count: usize,
    pub n: usize,
    /// Smallest prime `>= 2(n-1)+1`.
    pub m: u64,
    /// Generating vector of length `n-1`, `z[0] = 1`.
    pub z: Vec<i64>,
    pub shift: Vec<f64>,
}

impl LatticeConfig {
    pub fn new(count: usize, n: usize, shift: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return param("preference vectors need at least two objectives");
        }
        if count == 0 {
            return param("need at least one preference vector");
        }
        if shift.len() != n - 1 {
            return param(format!("shift must have length {}", n - 1));
        }
        if shift.iter().any(|s| !(0.0..1.0).contains(s)) {
            return param("shift entries must lie in [0, 1)");
        }
        let m = next_prime(2 * (n as u64 - 1) + 1);
        let mut z = vec![1i64];
        for j in 1..=n as i64 - 2 {
            let c = 2.0 * (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos();
            z.push((count as f64 * frac(c)).round() as i64);
        }
        Ok(Self {
            count,
            n,
            m,
            z,
            shift,
        })
    }
}

/// Uniform shift in `[0, 1)^{n-1}`.
pub fn random_shift<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n.saturating_sub(1))
        .map(|_| rng.random::<f64>())
        .collect()
}

/// Shifted lattice points, one per row (`N x (n-1)`).
pub fn lattice_points(count: usize, n: usize, shift: &[f64]) -> Result<Array2<f64>> {
    let cfg = LatticeConfig::new(count, n, shift.to_vec())?;
    Ok(lattice_from_config(&cfg))
}

pub fn lattice_from_config(cfg: &LatticeConfig) -> Array2<f64> {
    let n_count = cfg.count as f64;
    Array2::from_shape_fn((cfg.count, cfg.n - 1), |(row, col)| {
        let j = (row + 1) as i64;
        // j * z_col mod N keeps the product exact before dividing.
        let num = (j * cfg.z[col]).rem_euclid(cfg.count as i64) as f64;
        frac(num / n_count + cfg.shift[col])
    })
}

/// Maps lattice points (`N x (n-1)`, entries in `[0, 1)`) to unit vectors with
/// nonnegative entries (`N x n`).
pub fn sphere_map(omega: &Array2<f64>, n: usize) -> Result<Array2<f64>> {
    if n < 2 || omega.ncols() != n - 1 {
        return param(format!(
            "expected {} lattice columns for {n} objectives, got {}",
            n.saturating_sub(1),
            omega.ncols()
        ));
    }
    if omega.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return param("lattice entries must lie in [0, 1]");
    }
    let r = n / 2; // ceil((n-1)/2)
    let k = n / 2;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Array2::zeros((omega.nrows(), n));
    for (row, mut lam) in omega.rows().into_iter().zip(out.rows_mut()) {
        let theta: Vec<f64> = row.iter().take(r).map(|v| v * half_pi).collect();
        let x: Vec<f64> = row.iter().skip(r).copied().collect();
        if n.is_multiple_of(2) {
            // y[0] = 0, y[k] = 1, y[i] = y[i+1] * x_i^(1/i)
            let mut y = vec![0.0; k + 1];
            y[k] = 1.0;
            for i in (1..k).rev() {
                y[i] = y[i + 1] * x[i - 1].powf(1.0 / i as f64);
            }
            for i in 1..=k {
                let rad = (y[i] - y[i - 1]).max(0.0).sqrt();
                lam[2 * i - 2] = rad * theta[i - 1].cos();
                lam[2 * i - 1] = rad * theta[i - 1].sin();
            }
        } else {
            // y[k+1] = 1, y[i] = y[i+1] * x_i^(2/(2i-1))
            let mut y = vec![0.0; k + 2];
            y[k + 1] = 1.0;
            for i in (1..=k).rev() {
                y[i] = y[i + 1] * x[i - 1].powf(2.0 / (2 * i - 1) as f64);
            }
            lam[0] = y[1].sqrt();
            for i in 1..=k {
                let rad = (y[i + 1] - y[i]).max(0.0).sqrt();
                lam[2 * i - 1] = rad * theta[i - 1].cos();
                lam[2 * i] = rad * theta[i - 1].sin();
            }
        }
        // cos(pi/2) is 6e-17, not 0; keep entries nonnegative.
        lam.mapv_inplace(|v| v.max(0.0));
        let norm = lam.dot(&lam).sqrt();
        lam.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// `N` QMC preference vectors, clamped to `eps`.
pub fn qmc_preferences(count: usize, n: usize, shift: &[f64], eps: f64) -> Result<Array2<f64>> {
    let omega = lattice_points(count, n, shift)?;
    let mut lam = sphere_map(&omega, n)?;
    clamp_rows(&mut lam, eps)?;
    Ok(lam)
}

/// Uniform draws on the positive orthant: `|z| / |z|_2` with `z ~ N(0, I)`.
pub fn mc_sphere<R: Rng + ?Sized>(count: usize, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    if count == 0 || n == 0 {
        return param("need a positive count and dimension");
    }
    let mut out = Array2::zeros((count, n));
    for mut row in out.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal).abs();
            }
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    Ok(out)
}

/// Raises every component to at least `eps` and rescales the remaining
/// components so the vector keeps unit norm.
pub fn clamp_vector(lam: &mut [f64], eps: f64) -> Result<()> {
    let n = lam.len();
    if !(eps > 0.0 && (n as f64) * eps * eps <= 1.0) {
        return param(format!("clamp {eps} infeasible for {n} components"));
    }
    if lam.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || lam.iter().all(|v| *v == 0.0) {
        return param("preference vector must be nonnegative and nonzero");
    }
    let mut fixed = vec![false; n];
    loop {
        let pinned = fixed.iter().filter(|f| **f).count();
        let free_sq: f64 = lam
            .iter()
            .zip(&fixed)
            .filter(|(_, f)| !**f)
            .map(|(v, _)| v * v)
            .sum();
        let target = 1.0 - pinned as f64 * eps * eps;
        let scale = if free_sq > 0.0 {
            (target / free_sq).sqrt()
        } else {
            0.0
        };
        let mut changed = false;
        for (v, f) in lam.iter_mut().zip(fixed.iter_mut()) {
            if *f {
                *v = eps;
            } else if *v * scale < eps {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (v, f) in lam.iter_mut().zip(&fixed) {
                if !*f {
                    *v *= scale;
                }
            }
            return Ok(());
        }
    }
}

pub fn clamp_rows(lam: &mut Array2<f64>, eps: f64) -> Result<()> {
    for mut row in lam.rows_mut() {
        let mut v = row.to_vec();
        clamp_vector(&mut v, eps)?;
        row.assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(())
}

/// Smallest angle between any two rows.
pub fn min_pairwise_geodesic(lam: &Array2<f64>) -> Result<f64> {
    if lam.nrows() < 2 {
        return param("need at least two vectors");
    }
    let mut best = f64::INFINITY;
    for i in 0..lam.nrows() {
        let a = lam.row(i);
        for j in i + 1..lam.nrows() {
            let dot = a.dot(&lam.row(j)).clamp(-1.0, 1.0);
            best = best.min(dot.acos());
        }
    }
    Ok(best)
}

/// Where the per-instance preference vectors come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum PreferenceSource {
    #[default]
    Qmc,
    Mc,
    /// CSV file with one vector per row.
    User(std::path::PathBuf),
}

pub fn write_csv(path: &Path, lam: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=lam.ncols()).map(|k| format!("lambda_{k}")))?;
    for row in lam.rows() {
        w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a preference set written by [`write_csv`] (or any CSV with a header
/// row and one vector per line). Rows are normalized and clamped to `eps`.
pub fn read_csv(path: &Path, eps: f64) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", rows.len() + 2),
            })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config {
            path: path.to_path_buf(),
            msg: "no preference vectors".into(),
        });
    }
    let mut lam = crate::diffusion::rows_to_array(&rows, "preference vectors")?;
    for mut row in lam.rows_mut() {
        let norm = row.dot(&row).sqrt();
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(norm > 0.0) || row.iter().any(|v| *v < 0.0) {
            return param("user preference vectors must be nonnegative and nonzero");
        }
        row.mapv_inplace(|v| v / norm);
    }
    clamp_rows(&mut lam, eps)?;
    Ok(lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn primes() {
        assert_eq!(next_prime(3), 3);
        assert_eq!(next_prime(5), 5);
        assert_eq!(next_prime(8), 11);
        assert_eq!(next_prime(14), 17);
        assert!(!is_prime(1) && !is_prime(9) && is_prime(13));
    }

    #[test]
    fn lattice_parameters() {
        let c3 = LatticeConfig::new(100, 3, vec![0.0, 0.0]).unwrap();
        assert_eq!(c3.m, 5);
        // 2cos(2pi/5) = 0.618...; round(100 * 0.618) = 62
        assert_eq!(c3.z, vec![1, 62]);
        let c2 = LatticeConfig::new(10, 2, vec![0.0]).unwrap();
        assert_eq!((c2.m, c2.z.clone()), (3, vec![1]));
        assert!(LatticeConfig::new(10, 1, vec![]).is_err());
    }

    #[test]
    fn two_objective_lattice_is_equispaced() {
        let om = lattice_points(8, 2, &[0.0]).unwrap();
        for j in 0..8 {
            assert!((om[[j, 0]] - ((j + 1) % 8) as f64 / 8.0).abs() < 1e-15);
        }
        let lam = sphere_map(&om, 2).unwrap();
        for j in 0..8 {
            let th = std::f64::consts::FRAC_PI_2 * om[[j, 0]];
            assert!((lam[[j, 0]] - th.cos()).abs() < 1e-15);
            assert!((lam[[j, 1]] - th.sin().max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn three_objective_map_closed_form() {
        let om = array![[0.2, 0.6], [0.9, 0.1]];
        let lam = sphere_map(&om, 3).unwrap();
        for (row, l) in om.rows().into_iter().zip(lam.rows()) {
            let (th, x) = (row[0] * std::f64::consts::FRAC_PI_2, row[1]);
            let rad = (1.0 - x * x).sqrt();
            let expect = [x, rad * th.cos(), rad * th.sin()];
            for k in 0..3 {
                assert!((l[k] - expect[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_norm_for_small_orders() {
        let mut rng = seeded(3);
        for n in 2..=7 {
            for count in [1usize, 2, 7, 33] {
                let shift = random_shift(n, &mut rng);
                let lam = qmc_preferences(count, n, &shift, DEFAULT_CLAMP).unwrap();
                assert_eq!(lam.dim(), (count, n));
                for row in lam.rows() {
                    assert!((row.dot(&row) - 1.0).abs() < 1e-9, "n={n}");
                    assert!(row.iter().all(|v| *v >= DEFAULT_CLAMP - 1e-15));
                }
            }
        }
    }

    #[test]
    fn clamp_keeps_norm_and_floor() {
        let mut v = vec![1.0, 0.0, 0.0];
        clamp_vector(&mut v, 1e-3).unwrap();
        assert!(v.iter().all(|x| *x >= 1e-3));
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(clamp_vector(&mut [0.0, 0.0], 1e-3).is_err());
        assert!(clamp_vector(&mut [1.0, 1.0], 0.9).is_err());
    }

    #[test]
    fn geodesic_basics() {
        assert_eq!(
            min_pairwise_geodesic(&array![[0.6, 0.8], [0.6, 0.8]]).unwrap(),
            0.0
        );
        let d = min_pairwise_geodesic(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((d - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(min_pairwise_geodesic(&array![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lam.csv");
        let lam = qmc_preferences(16, 3, &[0.3, 0.7], DEFAULT_CLAMP).unwrap();
        write_csv(&path, &lam).unwrap();
        let back = read_csv(&path, DEFAULT_CLAMP).unwrap();
        for (a, b) in lam.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mc_is_reproducible() {
        let a = mc_sphere(10, 3, &mut seeded(4)).unwrap();
        let b = mc_sphere(10, 3, &mut seeded(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v >= 0.0));
    }
}
