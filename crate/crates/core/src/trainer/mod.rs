//! Maximum-likelihood fitting of metric models to labeled pairs.

mod config;
mod objective;
pub mod optimizer;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

pub use config::TrainConfig;
pub use optimizer::{Method, Termination};

use crate::catalog::FeatureMatrix;
use crate::error::{check_dim, Error, Result};
use crate::metric::Projection;
use crate::model::{MetricKind, MetricModel, ModelMeta, Transform, UserTable};
use crate::rng;
use crate::sampler::{LabeledPair, LabeledPairSet, Partition};
use objective::{Layout, Problem};
use optimizer::Objective;

/// Pairs drawn to estimate the initial threshold.
const THRESHOLD_SAMPLE: usize = 1000;

/// One line of training progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub train_accuracy: f64,
}

impl fmt::Display for Progress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.iteration, self.log_likelihood, self.train_accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Log-likelihood (minus any penalty) at the start point and after each
    /// accepted step.
    pub trace: Vec<f64>,
    pub train_accuracy: f64,
    pub wall_time: Duration,
    pub iterations: usize,
    pub termination: Termination,
}

/// ∂L/∂(parameters) at a model point.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// ∂L/∂w (length F) or ∂L/∂Y (F×K, row-major).
    pub transform: Vec<f64>,
    pub threshold: f64,
    /// ∂L/∂X (U×K, rows in the model's user-table order).
    pub users: Option<Vec<f64>>,
}

fn check_items(features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<()> {
    let n = features.len();
    match pairs.pairs().iter().find(|p| p.i as usize >= n || p.j as usize >= n) {
        Some(p) => Err(Error::UnknownItem(format!("item index {} outside {n} items", p.i.max(p.j)))),
        None => Ok(()),
    }
}

/// For each user of `pairs`, the matching row of `table`.
fn user_rows(table: &UserTable, pairs: &LabeledPairSet) -> Result<Vec<usize>> {
    pairs
        .users()
        .iter()
        .map(|id| table.index_of(id).ok_or_else(|| Error::UnknownUser(id.clone())))
        .collect()
}

/// Builds the objective layout and parameter vector for `model`.
fn bind(model: &MetricModel, pairs: &LabeledPairSet, train_users: bool) -> Result<(Layout, Vec<f64>)> {
    let mut theta = match model.transform() {
        Transform::Diagonal(w) => w.clone(),
        Transform::LowRank(y) => y.data().to_vec(),
    };
    theta.push(model.threshold());
    let layout = match (model.kind(), model.users()) {
        (MetricKind::WeightedNn, _) => Layout::Diagonal,
        (MetricKind::LowRank, _) => Layout::Projection { rank: model.rank() },
        (MetricKind::Personalized, Some(table)) => {
            if let Some(p) = pairs.pairs().iter().find(|p| p.user.is_none()) {
                return Err(Error::invalid(format!(
                    "personalized model needs user ids, pair ({}, {}) has none",
                    p.i, p.j
                )));
            }
            if train_users {
                theta.extend_from_slice(table.weights());
            }
            Layout::Personalized {
                rank: model.rank(),
                user_rows: user_rows(table, pairs)?,
                x: table.weights().to_vec(),
                trainable: train_users,
            }
        }
        (MetricKind::Personalized, None) => return Err(Error::Model("personalized model without users".into())),
    };
    Ok((layout, theta))
}

fn problem<'a>(
    features: &'a FeatureMatrix,
    pairs: &'a LabeledPairSet,
    layout: Layout,
    regularization: f64,
    deterministic: bool,
) -> Problem<'a> {
    Problem {
        features,
        pairs: pairs.pairs(),
        layout,
        regularization,
        deterministic,
    }
}

/// Log-likelihood of `pairs` under `model`; always ≤ 0.
pub fn log_likelihood(model: &MetricModel, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<f64> {
    let features = model.prepare(features)?;
    check_items(&features, pairs)?;
    let (layout, theta) = bind(model, pairs, false)?;
    Ok(problem(&features, pairs, layout, 0.0, true).evaluate(&theta).log_likelihood)
}

/// Analytic gradient of the log-likelihood at `model`.
pub fn gradient(model: &MetricModel, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<Gradient> {
    let features = model.prepare(features)?;
    check_items(&features, pairs)?;
    let (layout, theta) = bind(model, pairs, true)?;
    let problem = problem(&features, pairs, layout, 0.0, true);
    let offset = problem.user_offset();
    let mut g = problem.evaluate(&theta).gradient;
    let users = offset.map(|o| g.split_off(o));
    let threshold = g.pop().expect("threshold slot");
    Ok(Gradient {
        transform: g,
        threshold,
        users,
    })
}

/// Random starting model: Y entries i.i.d. N(0, σ₀²), or w = σ₀ for weighted
/// nearest neighbor, and c₀ the mean distance over a sample of `pairs`.
pub fn init_model(config: &TrainConfig, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<MetricModel> {
    config.validate()?;
    let features_n = config.normalization.apply(features);
    let f = features_n.dim();
    let scale = config.init_scale.unwrap_or(1.0 / (f as f64).sqrt());
    let mut rng = rng::stream(config.seed, rng::TRAIN_INIT);
    let provisional = 0.0;
    let mut model = match config.kind {
        MetricKind::WeightedNn => MetricModel::weighted_nn(vec![scale; f], provisional)?,
        kind => {
            let k = config.rank;
            let data: Vec<f64> = (0..f * k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            if data.iter().any(|v: &f64| !v.is_finite()) {
                return Err(Error::NonFinite { iteration: 0 });
            }
            let y = Projection::new(f, k, data)?;
            if kind == MetricKind::Personalized {
                check_items(&features_n, pairs)?;
                let table = UserTable::ones(pairs.users().to_vec(), k)?;
                MetricModel::personalized(y, provisional, table)?
            } else {
                MetricModel::low_rank(y, provisional)?
            }
        }
    };
    model.meta = ModelMeta {
        seed: config.seed,
        config_digest: config.digest(),
        normalization: config.normalization,
    };

    let c0 = match config.initial_threshold {
        Some(c) => c,
        None => {
            check_items(&features_n, pairs)?;
            let all = pairs.pairs();
            let picked: Vec<&LabeledPair> = if all.len() <= THRESHOLD_SAMPLE {
                all.iter().collect()
            } else {
                let mut idx = index::sample(&mut rng, all.len(), THRESHOLD_SAMPLE).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| &all[i]).collect()
            };
            if picked.is_empty() {
                0.0
            } else {
                let scorer = model.scorer(features)?;
                let sum: f64 = picked
                    .iter()
                    .map(|p| scorer.distance(p.i as usize, p.j as usize, None))
                    .sum();
                sum / picked.len() as f64
            }
        }
    };
    if !c0.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    model.set_threshold(c0);
    Ok(model)
}

fn check_training_pairs(pairs: &LabeledPairSet) -> Result<()> {
    match pairs.partition() {
        Partition::Train | Partition::All => {}
        other => return Err(Error::invalid(format!("refusing to train on the {other} partition"))),
    }
    if !pairs.is_balanced() {
        let (pos, neg) = pairs.counts();
        return Err(Error::invalid(format!(
            "training pairs must be balanced, got {pos} related and {neg} unrelated"
        )));
    }
    Ok(())
}

struct Tracked<'a> {
    problem: Problem<'a>,
    n_pairs: usize,
    last_accuracy: AtomicU64,
}

impl Tracked<'_> {
    fn accuracy(&self) -> f64 {
        f64::from_bits(self.last_accuracy.load(Ordering::Relaxed))
    }
}

impl Objective for Tracked<'_> {
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.problem.evaluate(x);
        for (g, v) in grad.iter_mut().zip(&e.gradient) {
            *g = -v;
        }
        let acc = if self.n_pairs == 0 {
            0.0
        } else {
            e.correct as f64 / self.n_pairs as f64
        };
        self.last_accuracy.store(acc.to_bits(), Ordering::Relaxed);
        -e.log_likelihood
    }

    fn project(&self, x: &mut [f64]) {
        if let Some(o) = self.problem.user_offset() {
            x[o..].iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the optimizer from `init` and writes the optimum back into a copy of it.
fn optimize(
    config: &TrainConfig,
    features: &FeatureMatrix,
    pairs: &LabeledPairSet,
    init: MetricModel,
    train_users: bool,
    progress: &mut (dyn FnMut(&Progress) + Send),
) -> Result<(MetricModel, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    let prepared = init.prepare(features)?;
    check_items(&prepared, pairs)?;
    let (layout, theta0) = bind(&init, pairs, train_users)?;
    let tracked = Tracked {
        problem: problem(&prepared, pairs, layout, config.regularization, config.deterministic),
        n_pairs: pairs.len(),
        last_accuracy: AtomicU64::new(0),
    };
    let opt = config.optimizer_config();
    let minimum = with_threads(config.threads, || {
        optimizer::minimize(&tracked, theta0, &opt, &mut |iteration, value| {
            progress(&Progress {
                iteration,
                log_likelihood: -value,
                train_accuracy: tracked.accuracy(),
            })
        })
    })??;

    let mut model = init;
    let t = match model.transform_mut() {
        Transform::Diagonal(w) => {
            let n = w.len();
            w.copy_from_slice(&minimum.x[..n]);
            n
        }
        Transform::LowRank(y) => {
            let n = y.data().len();
            y.data_mut().copy_from_slice(&minimum.x[..n]);
            n
        }
    };
    model.set_threshold(minimum.x[t]);
    if let Some(o) = tracked.problem.user_offset() {
        let table = model.users_mut().expect("personalized model has users");
        table.weights_mut().copy_from_slice(&minimum.x[o..]);
    }
    model.meta.config_digest = config.digest();

    let report = TrainReport {
        trace: minimum.trace.iter().map(|v| -v).collect(),
        train_accuracy: tracked.accuracy(),
        wall_time: start.elapsed(),
        iterations: minimum.iterations,
        termination: minimum.termination,
    };
    Ok((model, report))
}

/// Fits a fresh model of `config.kind` to `pairs`.
pub fn train(config: &TrainConfig, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<(MetricModel, TrainReport)> {
    train_with_progress(config, features, pairs, &mut |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    features: &FeatureMatrix,
    pairs: &LabeledPairSet,
    progress: &mut (dyn FnMut(&Progress) + Send),
) -> Result<(MetricModel, TrainReport)> {
    check_training_pairs(pairs)?;
    let init = init_model(config, features, pairs)?;
    let train_users = !config.freeze_user_weights;
    optimize(config, features, pairs, init, train_users, progress)
}

/// Continues optimizing `init` (of any kind) on `pairs`. User weights of a
/// personalized model are trained unless `config.freeze_user_weights`.
pub fn train_from(
    config: &TrainConfig,
    features: &FeatureMatrix,
    pairs: &LabeledPairSet,
    init: MetricModel,
    progress: &mut (dyn FnMut(&Progress) + Send),
) -> Result<(MetricModel, TrainReport)> {
    check_training_pairs(pairs)?;
    check_dim(init.dim(), features.dim())?;
    optimize(config, features, pairs, init, !config.freeze_user_weights, progress)
}

/// Fits Y, c and per-user weights X jointly, starting from the projection
/// and threshold of `warm_start` with every user's weights set to one. The
/// warm start's feature normalization is kept; `config.kind` and
/// `config.rank` are ignored.
pub fn train_personalized(
    config: &TrainConfig,
    features: &FeatureMatrix,
    pairs: &LabeledPairSet,
    warm_start: &MetricModel,
    progress: &mut (dyn FnMut(&Progress) + Send),
) -> Result<(MetricModel, TrainReport)> {
    check_training_pairs(pairs)?;
    check_dim(warm_start.dim(), features.dim())?;
    let y = warm_start
        .projection()
        .ok_or_else(|| Error::Model("warm start must have a projection".into()))?;
    if !pairs.has_users() {
        return Err(Error::invalid("personalized training needs user ids on every pair"));
    }
    let table = UserTable::ones(pairs.users().to_vec(), y.rank())?;
    let mut init = MetricModel::personalized(y.clone(), warm_start.threshold(), table)?;
    init.meta = warm_start.meta.clone();
    optimize(config, features, pairs, init, !config.freeze_user_weights, progress)
}

#[cfg(test)]
mod tests;
