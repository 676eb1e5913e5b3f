use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianParams, NUM_PARAMS};
use crate::tensor::{cp_decompose_with, AlsOptions, CpFactors, DenseTensor3};

/// A colored point of the initial cloud; `color` is linear RGB in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

pub const FALLBACK_SCALE: f64 = 0.01;
pub const INITIAL_OPACITY: f64 = 0.1;
const NEIGHBORS: usize = 3;
const MIN_DISTANCE: f64 = 1e-7;

/// Mean distance from each point to its three nearest neighbours, using a
/// uniform hash grid searched in growing shells.
pub fn knn_mean_distance(points: &[[f64; 3]]) -> Vec<f64> {
    let n = points.len();
    if n <= NEIGHBORS {
        return vec![FALLBACK_SCALE; n];
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent == 0.0 {
        return vec![MIN_DISTANCE; n];
    }
    let cell = (extent / (n as f64).cbrt()).max(extent * 1e-6);
    let key = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_shell = (extent / cell).ceil() as i64 + 1;

    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            let mut best = [f64::INFINITY; NEIGHBORS];
            let mut shell = 0i64;
            loop {
                for dx in -shell..=shell {
                    for dy in -shell..=shell {
                        for dz in -shell..=shell {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                                continue;
                            }
                            let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                            for &j in bucket {
                                if j == i {
                                    continue;
                                }
                                let q = &points[j];
                                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                                if d < best[NEIGHBORS - 1] {
                                    best[NEIGHBORS - 1] = d;
                                    best.sort_by(f64::total_cmp);
                                }
                            }
                        }
                    }
                }
                // Every point outside the searched shells is at least `shell · cell` away.
                if best[NEIGHBORS - 1] <= shell as f64 * cell || shell > max_shell {
                    break;
                }
                shell += 1;
            }
            (best.iter().sum::<f64>() / NEIGHBORS as f64).max(MIN_DISTANCE)
        })
        .collect()
}

/// Raw Gaussian rows for a point cloud: isotropic kNN scale, identity rotation,
/// low opacity and view-independent color.
pub fn initial_rows(points: &[Point]) -> Vec<GaussianParams> {
    let pos: Vec<[f64; 3]> = points.iter().map(|p| p.position).collect();
    let dist = knn_mean_distance(&pos);
    points
        .iter()
        .zip(dist)
        .map(|(p, d)| GaussianParams::new(p.position, [d; 3], [1.0, 0.0, 0.0, 0.0], INITIAL_OPACITY, p.color))
        .collect()
}

/// Factorizes the `1 × N × M` stack of rows and duplicates the single
/// mode-1 row so both slices start identical.
pub fn factorize_rows(rows: &[GaussianParams], rank: usize, opts: &AlsOptions) -> Result<CpFactors> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot initialize from an empty point set"));
    }
    let mut data = Vec::with_capacity(rows.len() * NUM_PARAMS);
    for r in rows {
        data.extend_from_slice(&r.0);
    }
    let tensor = DenseTensor3::new((1, rows.len(), NUM_PARAMS), data)?;
    let (f, _) = cp_decompose_with(&tensor, rank, opts)?;
    let (u1, u2, u3) = f.into_parts();
    let medium = DMatrix::from_fn(2, rank, |_, r| u1[(0, r)]);
    CpFactors::new(medium, u2, u3)
}

