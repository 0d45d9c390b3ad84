//! Local Fisher discriminant analysis.
//!
//! Pairs of same-class samples are weighted by a local-scaling affinity
//! `exp(-|xᵢ - xⱼ|² / (σᵢσⱼ))`, with `σᵢ` the distance from `xᵢ` to its
//! k-th nearest same-class neighbor. The projection keeps the leading
//! generalized eigenvectors of (local between-class, local within-class)
//! scatter.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 7;

/// Added to the within-class scatter when it is numerically singular.
const RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Lfda {
    /// Row-major `dim × rank` projection.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub rank: usize,
    /// Neighbor count of the local scaling; `None` means unit affinity
    /// (plain Fisher discriminant).
    pub neighbors: Option<usize>,
    pub classes: Vec<usize>,
    /// Generalized eigenvalues of the kept directions, largest first.
    pub eigenvalues: Vec<f64>,
    /// Whether the ridge had to be added to the within-class scatter.
    pub regularized: bool,
}

impl Lfda {
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(format!("projection expects {} dimensions, got {}", self.dim, x.len())));
        }
        let mut out = vec![0.0; self.rank];
        for (i, xi) in x.iter().enumerate() {
            let row = &self.matrix[i * self.rank..(i + 1) * self.rank];
            for (o, m) in out.iter_mut().zip(row) {
                *o += xi * m;
            }
        }
        Ok(out)
    }
}

fn affinity(x: &DMatrix<f64>, labels: &[usize], k: Option<usize>) -> DMatrix<f64> {
    let n = x.nrows();
    let dist2 = DMatrix::from_fn(n, n, |i, j| (x.row(i) - x.row(j)).norm_squared());
    let Some(k) = k else {
        return DMatrix::from_element(n, n, 1.0);
    };
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).map(|j| dist2[(i, j)].sqrt()).collect();
            if d.is_empty() {
                return 0.0;
            }
            d.sort_by(f64::total_cmp);
            d[(k.max(1) - 1).min(d.len() - 1)]
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let s = sigma[i] * sigma[j];
        if s > 0.0 {
            (-dist2[(i, j)] / s).exp()
        } else if dist2[(i, j)] == 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// `Xᵀ (D − W) X`, which equals `½ Σᵢⱼ Wᵢⱼ (xᵢ − xⱼ)(xᵢ − xⱼ)ᵀ`.
fn scatter(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut lap = -w.clone();
    for i in 0..w.nrows() {
        lap[(i, i)] += w.row(i).sum();
    }
    let s = x.transpose() * lap * x;
    (&s + s.transpose()) * 0.5
}

/// Fits a rank-`r` projection with local scaling over `neighbors`
/// same-class neighbors, or unit affinity when `neighbors` is `None`.
pub fn lfda_fit(features: &[Vec<f64>], labels: &[usize], r: usize, neighbors: Option<usize>) -> Result<Lfda> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::InvalidArgument(format!("{n} features for {} labels", labels.len())));
    }
    let d = features.first().map_or(0, Vec::len);
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::ShapeMismatch("features must share one positive dimension".into()));
    }
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!("projection rank {r} must lie in 1..={d}")));
    }
    if n <= r {
        return Err(Error::InvalidArgument(format!("need more than {r} samples, got {n}")));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features must be finite".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("LFDA needs at least two classes".into()));
    }

    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let a = affinity(&x, labels, neighbors);
    let count = |c: usize| labels.iter().filter(|&&l| l == c).count() as f64;
    let nf = n as f64;
    let ww = DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { a[(i, j)] / count(labels[i]) } else { 0.0 });
    let wb = DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { a[(i, j)] * (1.0 / nf - 1.0 / count(labels[i])) } else { 1.0 / nf });
    let mut sw = scatter(&x, &ww);
    let sb = scatter(&x, &wb);

    let ev = SymmetricEigen::new(sw.clone()).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let regularized = !(lo > 1e-10 * hi.max(f64::MIN_POSITIVE));
    if regularized {
        for i in 0..d {
            sw[(i, i)] += RIDGE;
        }
    }
    let chol = sw.cholesky().ok_or_else(|| Error::InvalidArgument("within-class scatter is not positive definite".into()))?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::InvalidArgument("within-class scatter is singular".into()))?;
    let c = &linv * sb * linv.transpose();
    let eig = SymmetricEigen::new((&c + c.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let back = linv.transpose();
    let mut matrix = vec![0.0; d * r];
    for (col, &k) in order.iter().take(r).enumerate() {
        let mut v = &back * eig.eigenvectors.column(k);
        let norm = v.norm();
        v /= norm;
        // Fix the sign so the largest entry is positive.
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v = -v;
        }
        for i in 0..d {
            matrix[i * r + col] = v[i];
        }
    }
    Ok(Lfda {
        matrix,
        dim: d,
        rank: r,
        neighbors,
        classes,
        eigenvalues: order.iter().take(r).map(|&k| eig.eigenvalues[k]).collect(),
        regularized,
    })
}
