//! Link-prediction accuracy and the baselines compared against.

mod ct;

use std::fmt;

use rayon::prelude::*;

pub use ct::{fit_ct, CtPredictor, LinkRule};

use crate::catalog::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{MetricKind, MetricModel};
use crate::sampler::{LabeledPairSet, Partition};
use crate::trainer::{self, TrainConfig, TrainReport};

/// Confusion counts of a binary link predictor over one pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub pairs: usize,
    /// Model digest, or the name of a non-model predictor.
    pub model: String,
    pub partition: Partition,
}

impl EvalReport {
    /// Tallies `(predicted, actual)` outcomes.
    pub fn from_outcomes(
        outcomes: impl IntoIterator<Item = (bool, bool)>,
        model: impl Into<String>,
        partition: Partition,
    ) -> Self {
        let mut counts = [0usize; 4];
        for (predicted, actual) in outcomes {
            counts[(predicted as usize) << 1 | actual as usize] += 1;
        }
        let [true_neg, false_neg, false_pos, true_pos] = counts;
        let pairs = counts.iter().sum();
        let accuracy = if pairs == 0 {
            0.0
        } else {
            (true_pos + true_neg) as f64 / pairs as f64
        };
        Self {
            accuracy,
            true_pos,
            true_neg,
            false_pos,
            false_neg,
            pairs,
            model: model.into(),
            partition,
        }
    }

    pub const TSV_HEADER: &'static str = "partition\tmodel\tpairs\taccuracy\ttp\ttn\tfp\tfn";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}",
            self.partition,
            self.model,
            self.pairs,
            self.accuracy,
            self.true_pos,
            self.true_neg,
            self.false_pos,
            self.false_neg
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "partition: {}", self.partition)?;
        writeln!(f, "model:     {}", self.model)?;
        writeln!(f, "pairs:     {}", self.pairs)?;
        writeln!(f, "accuracy:  {:.4}", self.accuracy)?;
        writeln!(f, "           predicted related  predicted unrelated")?;
        writeln!(f, "related    {:>17}  {:>19}", self.true_pos, self.false_neg)?;
        write!(f, "unrelated  {:>17}  {:>19}", self.false_pos, self.true_neg)
    }
}

/// Scores `pairs` with `model`: a pair is predicted related iff d < c. Users
/// on the pairs personalize the distance when the model has a user table.
pub fn evaluate(model: &MetricModel, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<EvalReport> {
    let scorer = model.scorer(features)?;
    let n = features.len();
    let user_rows: Vec<usize> = match model.users() {
        Some(table) if model.kind() == MetricKind::Personalized => pairs
            .users()
            .iter()
            .map(|id| table.index_of(id).ok_or_else(|| Error::UnknownUser(id.clone())))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    if let Some(p) = pairs.pairs().iter().find(|p| p.i as usize >= n || p.j as usize >= n) {
        return Err(Error::UnknownItem(format!("item index {} outside {n} items", p.i.max(p.j))));
    }
    let c = model.threshold();
    let outcomes: Vec<(bool, bool)> = pairs
        .pairs()
        .par_iter()
        .map(|p| {
            let user = p.user.and_then(|u| user_rows.get(u as usize).copied());
            let d = scorer.distance(p.i as usize, p.j as usize, user);
            (d < c, p.related)
        })
        .collect();
    Ok(EvalReport::from_outcomes(outcomes, model.digest(), pairs.partition()))
}

/// Weighted nearest-neighbor baseline, trained by the same machinery as the
/// low-rank model.
pub fn fit_wnn(config: &TrainConfig, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<(MetricModel, TrainReport)> {
    let config = TrainConfig {
        kind: MetricKind::WeightedNn,
        ..config.clone()
    };
    trainer::train(&config, features, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{dist_lowrank, Projection};
    use crate::sampler::LabeledPair;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(seed: u64) -> (MetricModel, FeatureMatrix, LabeledPairSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, f, k) = (40, 5, 2);
        let values = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fm = FeatureMatrix::new((0..n).map(|i| format!("i{i}")).collect(), f, values).unwrap();
        let y = Projection::new(f, k, (0..f * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let model = MetricModel::low_rank(y, rng.random_range(0.2..1.5)).unwrap();
        let mut pairs = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while pairs.len() < 200 {
            let (i, j) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
            if i != j && seen.insert((i.min(j), i.max(j))) {
                pairs.push(LabeledPair::new(i, j, rng.random_bool(0.5)));
            }
        }
        (model, fm, LabeledPairSet::new(Partition::Test, pairs, vec![]).unwrap())
    }

    #[test]
    fn negative_threshold_predicts_nothing() {
        let (model, fm, _) = random_setup(1);
        let model = MetricModel::low_rank(model.projection().unwrap().clone(), -1.0).unwrap();
        let pairs = LabeledPairSet::from_pairs(&[(0, 1), (2, 3)], &[(4, 5), (6, 7)]).unwrap();
        let r = evaluate(&model, &fm, &pairs).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!((r.true_pos, r.false_pos), (0, 0));
    }

    #[test]
    fn matches_brute_force_rule() {
        for seed in 0..5 {
            let (model, fm, pairs) = random_setup(seed);
            let y = model.projection().unwrap();
            let correct = pairs
                .pairs()
                .iter()
                .filter(|p| {
                    let d = dist_lowrank(y, fm.row(p.i as usize), fm.row(p.j as usize)).unwrap();
                    (d < model.threshold()) == p.related
                })
                .count();
            let r = evaluate(&model, &fm, &pairs).unwrap();
            assert_eq!(r.accuracy, correct as f64 / pairs.len() as f64);
            assert_eq!(r.true_pos + r.true_neg + r.false_pos + r.false_neg, r.pairs);
            assert_eq!(r.partition, Partition::Test);
        }
    }

    #[test]
    fn tie_predicts_unrelated() {
        let fm = FeatureMatrix::new(vec!["a".into(), "b".into()], 1, vec![0.0, 1.0]).unwrap();
        let model = MetricModel::low_rank(Projection::identity(1), 1.0).unwrap();
        let pairs = LabeledPairSet::from_pairs(&[(0, 1)], &[]).unwrap();
        assert_eq!(evaluate(&model, &fm, &pairs).unwrap().false_neg, 1);
    }

    #[test]
    fn zero_weights_decide_by_threshold() {
        let (_, fm, pairs) = random_setup(2);
        let below = MetricModel::weighted_nn(vec![0.0; 5], 0.0).unwrap();
        assert_eq!(evaluate(&below, &fm, &pairs).unwrap().true_pos + evaluate(&below, &fm, &pairs).unwrap().false_pos, 0);
        let above = MetricModel::weighted_nn(vec![0.0; 5], 0.1).unwrap();
        let r = evaluate(&above, &fm, &pairs).unwrap();
        assert_eq!(r.true_neg + r.false_neg, 0);
    }

    #[test]
    fn tsv_has_every_header_field() {
        let (model, fm, pairs) = random_setup(3);
        let r = evaluate(&model, &fm, &pairs).unwrap();
        assert_eq!(r.to_tsv().split('\t').count(), EvalReport::TSV_HEADER.split('\t').count());
        assert!(r.to_string().contains("accuracy"));
    }

    #[test]
    fn unknown_user_rejected() {
        use crate::model::UserTable;
        let (model, fm, _) = random_setup(4);
        let y = model.projection().unwrap().clone();
        let table = UserTable::ones(vec!["alice".into()], 2).unwrap();
        let model = MetricModel::personalized(y, 1.0, table).unwrap();
        let pair = LabeledPair { user: Some(0), ..LabeledPair::new(0, 1, true) };
        let pairs = LabeledPairSet::new(Partition::Test, vec![pair], vec!["bob".into()]).unwrap();
        assert!(matches!(evaluate(&model, &fm, &pairs), Err(Error::UnknownUser(_))));
    }

    proptest! {
        #[test]
        fn relabeling_complements_accuracy(seed in 0u64..500) {
            let (model, fm, pairs) = random_setup(seed);
            let a = evaluate(&model, &fm, &pairs).unwrap().accuracy;
            let b = evaluate(&model, &fm, &pairs.relabeled()).unwrap().accuracy;
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
