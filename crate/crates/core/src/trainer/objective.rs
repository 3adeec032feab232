//! Pairwise logistic log-likelihood and its analytic gradient.
//!
//! With z = c − d, a related pair contributes log σ(z) and an unrelated pair
//! log σ(−z). Hence ∂L/∂z is σ(−z) for related pairs and −σ(z) for unrelated
//! ones, ∂L/∂c = Σ ∂L/∂z and ∂L/∂θ = −Σ ∂L/∂z · ∂d/∂θ, where
//!
//! ```text
//! weighted NN   d = Σ_f w_f² Δ_f²          ∂d/∂w_f    = 2 w_f Δ_f²
//! low rank      d = Σ_k (δs_k u_k)²        ∂d/∂Y[f,k] = 2 Δ_f δs_k u_k²
//!                                          ∂d/∂u_k    = 2 δs_k² u_k
//! ```
//!
//! with Δ = x_i − x_j, δs = Δ Y and u the user's weights (all ones for the
//! global model).

use rayon::prelude::*;

use crate::catalog::FeatureMatrix;
use crate::metric::{log_sigmoid, sigmoid, style_sq_dist, weighted_sq_dist, Projection};
use crate::reduce::tree_map_reduce;
use crate::sampler::LabeledPair;

/// Pairs per reduction block.
pub(crate) const BLOCK: usize = 512;

#[derive(Debug, Clone)]
pub(crate) enum Layout {
    /// θ = [w (F), c]
    Diagonal,
    /// θ = [Y (F×K), c]
    Projection { rank: usize },
    /// θ = [Y (F×K), c, X (U×K)] when `trainable`, else [Y, c] with `x` fixed.
    /// `user_rows` maps a pair's user index to its row of X.
    Personalized {
        rank: usize,
        user_rows: Vec<usize>,
        x: Vec<f64>,
        trainable: bool,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub log_likelihood: f64,
    /// Pairs classified correctly by d < c.
    pub correct: usize,
    /// ∂L/∂θ in the layout of θ.
    pub gradient: Vec<f64>,
}

impl Evaluation {
    fn zero(len: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            correct: 0,
            gradient: vec![0.0; len],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.log_likelihood += other.log_likelihood;
        self.correct += other.correct;
        self.gradient
            .iter_mut()
            .zip(&other.gradient)
            .for_each(|(a, b)| *a += b);
        self
    }
}

/// Training data bound to a parameter layout. Items are indexed into an
/// already normalized feature matrix.
pub(crate) struct Problem<'a> {
    pub features: &'a FeatureMatrix,
    pub pairs: &'a [LabeledPair],
    pub layout: Layout,
    pub regularization: f64,
    pub deterministic: bool,
}

struct Params<'p> {
    transform: &'p [f64],
    threshold: f64,
    x: Option<&'p [f64]>,
}

impl Problem<'_> {
    fn transform_len(&self) -> usize {
        let f = self.features.dim();
        match &self.layout {
            Layout::Diagonal => f,
            Layout::Projection { rank } | Layout::Personalized { rank, .. } => f * rank,
        }
    }

    /// Offset of X within θ, when X is trainable.
    pub fn user_offset(&self) -> Option<usize> {
        match &self.layout {
            Layout::Personalized { trainable: true, .. } => Some(self.transform_len() + 1),
            _ => None,
        }
    }

    fn split<'p>(&'p self, theta: &'p [f64]) -> Params<'p> {
        let t = self.transform_len();
        let x = match &self.layout {
            Layout::Personalized { trainable: true, .. } => Some(&theta[t + 1..]),
            Layout::Personalized { x, .. } => Some(x.as_slice()),
            _ => None,
        };
        Params {
            transform: &theta[..t],
            threshold: theta[t],
            x,
        }
    }

    /// Style vectors of every item, N×K.
    fn styles(&self, y: &Projection) -> Vec<f64> {
        let k = y.rank();
        let mut s = vec![0.0; self.features.len() * k];
        s.par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, out)| y.embed_into(self.features.row(i), out));
        s
    }

    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let params = self.split(theta);
        let len = theta.len();
        let styles = match &self.layout {
            Layout::Diagonal => None,
            Layout::Projection { rank } | Layout::Personalized { rank, .. } => {
                let y = Projection::new(self.features.dim(), *rank, params.transform.to_vec())
                    .expect("layout matches parameter length");
                Some((self.styles(&y), *rank))
            }
        };
        let styles = styles.as_ref().map(|(s, k)| (s.as_slice(), *k));
        let accumulate = |acc: &mut Evaluation, pairs: &[LabeledPair]| {
            for p in pairs {
                self.accumulate_pair(acc, &params, styles, p);
            }
        };

        let n_blocks = self.pairs.len().div_ceil(BLOCK);
        let mut total = if self.deterministic {
            tree_map_reduce(
                n_blocks,
                &|b| {
                    let mut acc = Evaluation::zero(len);
                    let end = ((b + 1) * BLOCK).min(self.pairs.len());
                    accumulate(&mut acc, &self.pairs[b * BLOCK..end]);
                    acc
                },
                &Evaluation::merge,
            )
            .unwrap_or_else(|| Evaluation::zero(len))
        } else {
            self.pairs
                .par_chunks(BLOCK)
                .fold(
                    || Evaluation::zero(len),
                    |mut acc, chunk| {
                        accumulate(&mut acc, chunk);
                        acc
                    },
                )
                .reduce(|| Evaluation::zero(len), Evaluation::merge)
        };

        if self.regularization > 0.0 {
            let lambda = self.regularization;
            let penalty: f64 = params.transform.iter().map(|v| v * v).sum();
            total.log_likelihood -= lambda * penalty;
            for (g, v) in total.gradient.iter_mut().zip(params.transform) {
                *g -= 2.0 * lambda * v;
            }
        }
        total
    }

    #[inline]
    fn accumulate_pair(
        &self,
        acc: &mut Evaluation,
        params: &Params<'_>,
        styles: Option<(&[f64], usize)>,
        p: &LabeledPair,
    ) {
        let (i, j) = (p.i as usize, p.j as usize);
        let xi = self.features.row(i);
        let xj = self.features.row(j);
        let c = params.threshold;
        let t_len = params.transform.len();

        let user_row = match &self.layout {
            Layout::Personalized { user_rows, .. } => p.user.map(|u| user_rows[u as usize]),
            _ => None,
        };
        let d = match styles {
            None => weighted_sq_dist(params.transform, xi, xj),
            Some((s, k)) => {
                let weights = user_row.map(|r| &params.x.unwrap()[r * k..(r + 1) * k]);
                style_sq_dist(&s[i * k..(i + 1) * k], &s[j * k..(j + 1) * k], weights)
            }
        };
        let z = c - d;
        let dz = if p.related {
            acc.log_likelihood += log_sigmoid(z);
            sigmoid(-z)
        } else {
            acc.log_likelihood += log_sigmoid(-z);
            -sigmoid(z)
        };
        if (d < c) == p.related {
            acc.correct += 1;
        }
        acc.gradient[t_len] += dz;
        if dz == 0.0 {
            return;
        }

        let grad = &mut acc.gradient;
        match styles {
            None => {
                for (f, w) in params.transform.iter().enumerate() {
                    let delta = xi[f] - xj[f];
                    grad[f] -= dz * 2.0 * w * delta * delta;
                }
            }
            Some((s, k)) => {
                let (si, sj) = (&s[i * k..(i + 1) * k], &s[j * k..(j + 1) * k]);
                let weights = user_row.map(|r| &params.x.unwrap()[r * k..(r + 1) * k]);
                let mut coef = [0.0f64; 64];
                let mut heap;
                let coef: &mut [f64] = if k <= coef.len() {
                    &mut coef[..k]
                } else {
                    heap = vec![0.0; k];
                    &mut heap
                };
                for kk in 0..k {
                    let ds = si[kk] - sj[kk];
                    let u = weights.map_or(1.0, |w| w[kk]);
                    coef[kk] = -dz * 2.0 * ds * u * u;
                }
                for (f, row) in grad[..t_len].chunks_exact_mut(k).enumerate() {
                    let delta = xi[f] - xj[f];
                    if delta == 0.0 {
                        continue;
                    }
                    for (g, cf) in row.iter_mut().zip(coef.iter()) {
                        *g += delta * cf;
                    }
                }
                if let (Some(offset), Some(r)) = (self.user_offset(), user_row) {
                    let w = weights.unwrap();
                    let row = &mut grad[offset + r * k..offset + (r + 1) * k];
                    for kk in 0..k {
                        let ds = si[kk] - sj[kk];
                        row[kk] -= dz * 2.0 * ds * ds * w[kk];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, f: usize, pairs: usize) -> (FeatureMatrix, Vec<LabeledPair>) {
        let ids = (0..n).map(|i| format!("i{i}")).collect();
        let values = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fm = FeatureMatrix::new(ids, f, values).unwrap();
        let mut out = Vec::new();
        while out.len() < pairs {
            let i = rng.random_range(0..n as u32);
            let j = rng.random_range(0..n as u32);
            if i != j {
                out.push(LabeledPair {
                    i,
                    j,
                    related: out.len() % 2 == 0,
                    user: Some(rng.random_range(0..3)),
                });
            }
        }
        (fm, out)
    }

    #[test]
    fn fast_reduction_agrees_with_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (fm, pairs) = random_problem(&mut rng, 300, 8, 20_000);
        let theta: Vec<f64> = (0..8 * 3 + 1).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut problem = Problem {
            features: &fm,
            pairs: &pairs,
            layout: Layout::Projection { rank: 3 },
            regularization: 0.0,
            deterministic: true,
        };
        let det = problem.evaluate(&theta);
        problem.deterministic = false;
        let fast = problem.evaluate(&theta);
        let rel = (det.log_likelihood - fast.log_likelihood).abs() / det.log_likelihood.abs();
        assert!(rel <= 1e-8, "{rel}");
        assert_eq!(det.correct, fast.correct);
    }

    #[test]
    fn deterministic_mode_ignores_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (fm, pairs) = random_problem(&mut rng, 200, 6, 5000);
        let x: Vec<f64> = (0..3 * 2).map(|_| rng.random_range(0.0..2.0)).collect();
        let theta: Vec<f64> = (0..6 * 2 + 1).map(|_| rng.random_range(-0.5..0.5)).chain(x).collect();
        let problem = Problem {
            features: &fm,
            pairs: &pairs,
            layout: Layout::Personalized {
                rank: 2,
                user_rows: vec![0, 1, 2],
                x: vec![0.0; 6],
                trainable: true,
            },
            regularization: 0.1,
            deterministic: true,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| problem.evaluate(&theta))
        };
        let a = run(1);
        for threads in [2, 5] {
            let b = run(threads);
            assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
            assert!(a.gradient.iter().zip(&b.gradient).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
