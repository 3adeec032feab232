//! Distance functions and the distance-to-probability map.
//!
//! Low-rank and personalized distances are computed by projecting both
//! items into style space and differencing there, through the same
//! [`Projection::embed_into`] routine that [`embed`] uses. That makes
//! `‖embed(x_i) − embed(x_j)‖²` and [`dist_lowrank`] bit-identical, and makes
//! every distance bit-exactly symmetric.

use crate::error::{check_dim, Error, Result};

/// An F×K linear map from feature space into style space, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

impl Projection {
    pub fn new(dim: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || rank == 0 {
            return Err(Error::invalid("projection dimensions must be positive"));
        }
        check_dim(dim * rank, data.len())?;
        Ok(Self { dim, rank, data })
    }

    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            data: vec![0.0; dim * rank],
        }
    }

    /// F×F identity (K = F).
    pub fn identity(dim: usize) -> Self {
        let mut p = Self::zeros(dim, dim);
        for f in 0..dim {
            p.data[f * dim + f] = 1.0;
        }
        p
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Style dimension K.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, f: usize, k: usize) -> f64 {
        self.data[f * self.rank + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Writes `x Y` into `out`. Callers guarantee `x.len() == F` and
    /// `out.len() == K`.
    #[inline]
    pub fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.rank);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (xf, row) in x.iter().zip(self.data.chunks_exact(self.rank)) {
            for (o, y) in out.iter_mut().zip(row) {
                *o += xf * y;
            }
        }
    }

    /// Y Yᵀ as a dense F×F matrix. Only meant for small reference checks.
    pub fn gram(&self) -> Vec<f64> {
        let f = self.dim;
        let mut m = vec![0.0; f * f];
        for a in 0..f {
            for b in 0..f {
                m[a * f + b] = (0..self.rank).map(|k| self.get(a, k) * self.get(b, k)).sum();
            }
        }
        m
    }
}

/// A point in style space.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector(pub Vec<f64>);

/// Nonnegative per-dimension weights of one user over style space.
#[derive(Debug, Clone, PartialEq)]
pub struct UserWeights(Vec<f64>);

impl UserWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("user weight {w} is not a finite nonnegative number")));
        }
        Ok(Self(weights))
    }

    pub fn ones(rank: usize) -> Self {
        Self(vec![1.0; rank])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `‖s_i − s_j‖²`, or `‖(s_i − s_j) ∘ x_u‖²` when weights are given.
#[inline]
pub(crate) fn style_sq_dist(si: &[f64], sj: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => si.iter().zip(sj).map(|(a, b)| (a - b) * (a - b)).sum(),
        Some(w) => si
            .iter()
            .zip(sj)
            .zip(w)
            .map(|((a, b), u)| {
                let t = (a - b) * u;
                t * t
            })
            .sum(),
    }
}

/// `‖w ∘ (x_i − x_j)‖²`, unchecked.
#[inline]
pub(crate) fn weighted_sq_dist(w: &[f64], xi: &[f64], xj: &[f64]) -> f64 {
    w.iter()
        .zip(xi.iter().zip(xj))
        .map(|(w, (a, b))| {
            let t = w * (a - b);
            t * t
        })
        .sum()
}

/// Weighted nearest-neighbor distance `‖w ∘ (x_i − x_j)‖²`.
pub fn dist_weighted(w: &[f64], xi: &[f64], xj: &[f64]) -> Result<f64> {
    check_dim(w.len(), xi.len())?;
    check_dim(w.len(), xj.len())?;
    Ok(weighted_sq_dist(w, xi, xj))
}

/// Low-rank Mahalanobis distance `‖(x_i − x_j) Y‖²` in O(FK).
pub fn dist_lowrank(y: &Projection, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let (si, sj) = (embed(y, xi)?, embed(y, xj)?);
    Ok(style_sq_dist(&si.0, &sj.0, None))
}

/// Full Mahalanobis form `(x_i − x_j) M (x_i − x_j)ᵀ` for a dense F×F `m`.
/// Quadratic in F; used as a reference for the low-rank path.
pub fn dist_full(m: &[f64], xi: &[f64], xj: &[f64]) -> Result<f64> {
    let f = xi.len();
    check_dim(f, xj.len())?;
    check_dim(f * f, m.len())?;
    let delta: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for a in 0..f {
        let row = &m[a * f..(a + 1) * f];
        let inner: f64 = row.iter().zip(&delta).map(|(m, d)| m * d).sum();
        total += delta[a] * inner;
    }
    Ok(total)
}

/// Personalized distance `‖(s_i − s_j) ∘ x_u‖²` with `s = x Y`.
pub fn dist_personalized(y: &Projection, user: &UserWeights, xi: &[f64], xj: &[f64]) -> Result<f64> {
    check_dim(y.rank(), user.0.len())?;
    let (si, sj) = (embed(y, xi)?, embed(y, xj)?);
    Ok(style_sq_dist(&si.0, &sj.0, Some(&user.0)))
}

/// Style-space embedding `s = x Y`.
pub fn embed(y: &Projection, x: &[f64]) -> Result<StyleVector> {
    check_dim(y.dim(), x.len())?;
    let mut s = vec![0.0; y.rank()];
    y.embed_into(x, &mut s);
    Ok(StyleVector(s))
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` = `−log(1 + e^{−z})`, stable for large |z|.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// `log(1 + e^x)`.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that two items at distance `d` are related under threshold
/// `c`: `1 / (1 + e^{d − c})`.
#[inline]
pub fn link_probability(d: f64, c: f64) -> f64 {
    sigmoid(c - d)
}

/// `log P(related)` at distance `d`.
#[inline]
pub fn log_link_probability(d: f64, c: f64) -> f64 {
    log_sigmoid(c - d)
}

/// `log P(unrelated)` at distance `d`.
#[inline]
pub fn log_unlink_probability(d: f64, c: f64) -> f64 {
    log_sigmoid(d - c)
}
