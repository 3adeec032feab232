use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::metric::{
    dist_lowrank, dist_personalized, dist_weighted, log_link_probability, log_unlink_probability, sigmoid,
    UserWeights,
};

fn features(rows: &[&[f64]]) -> FeatureMatrix {
    let f = rows[0].len();
    let ids = (0..rows.len()).map(|i| format!("item{i}")).collect();
    FeatureMatrix::new(ids, f, rows.concat()).unwrap()
}

/// Direct sum of per-pair log-probabilities through the public metric API.
fn oracle_ll(model: &MetricModel, fm: &FeatureMatrix, pairs: &LabeledPairSet) -> f64 {
    pairs
        .pairs()
        .iter()
        .map(|p| {
            let (xi, xj) = (fm.row(p.i as usize), fm.row(p.j as usize));
            let d = match model.transform() {
                Transform::Diagonal(w) => dist_weighted(w, xi, xj).unwrap(),
                Transform::LowRank(y) => match (model.users(), p.user) {
                    (Some(t), Some(u)) => {
                        let row = t.index_of(&pairs.users()[u as usize]).unwrap();
                        dist_personalized(y, &UserWeights::new(t.row(row).to_vec()).unwrap(), xi, xj).unwrap()
                    }
                    _ => dist_lowrank(y, xi, xj).unwrap(),
                },
            };
            if p.related {
                log_link_probability(d, model.threshold())
            } else {
                log_unlink_probability(d, model.threshold())
            }
        })
        .sum()
}

fn random_instance(seed: u64, kind: MetricKind) -> (MetricModel, FeatureMatrix, LabeledPairSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(1..=12);
    let k = rng.random_range(1..=4);
    let n = 12;
    let values: Vec<f64> = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fm = FeatureMatrix::new((0..n).map(|i| format!("i{i}")).collect(), f, values).unwrap();
    let users: Vec<String> = vec!["u0".into(), "u1".into(), "u2".into()];
    let n_pairs = rng.random_range(1..=50);
    let mut pairs = Vec::new();
    while pairs.len() < n_pairs {
        let (i, j) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
        if i == j {
            continue;
        }
        let user = Some(rng.random_range(0..3));
        let p = LabeledPair { i, j, related: rng.random_bool(0.5), user };
        if pairs.iter().any(|q: &LabeledPair| q.i.min(q.j) == i.min(j) && q.i.max(q.j) == i.max(j) && q.user == user) {
            continue;
        }
        pairs.push(p);
    }
    let set = LabeledPairSet::new(Partition::Train, pairs, users.clone()).unwrap();
    let c = rng.random_range(0.0..2.0);
    let model = match kind {
        MetricKind::WeightedNn => {
            MetricModel::weighted_nn((0..f).map(|_| rng.random_range(-1.0..1.0)).collect(), c).unwrap()
        }
        _ => {
            let y = Projection::new(f, k, (0..f * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            if kind == MetricKind::LowRank {
                MetricModel::low_rank(y, c).unwrap()
            } else {
                let x = (0..3 * k).map(|_| rng.random_range(0.1..2.0)).collect();
                MetricModel::personalized(y, c, UserTable::new(users, k, x).unwrap()).unwrap()
            }
        }
    };
    (model, fm, set)
}

fn perturbed(model: &MetricModel, slot: usize, delta: f64) -> MetricModel {
    let mut m = model.clone();
    let t = match m.transform_mut() {
        Transform::Diagonal(w) => {
            if slot < w.len() {
                w[slot] += delta;
                return m;
            }
            w.len()
        }
        Transform::LowRank(y) => {
            let n = y.data().len();
            if slot < n {
                y.data_mut()[slot] += delta;
                return m;
            }
            n
        }
    };
    if slot == t {
        let c = m.threshold();
        m.set_threshold(c + delta);
    } else {
        m.users_mut().unwrap().weights_mut()[slot - t - 1] += delta;
    }
    m
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for kind in [MetricKind::WeightedNn, MetricKind::LowRank, MetricKind::Personalized] {
        for seed in 0..30 {
            let (model, fm, pairs) = random_instance(seed, kind);
            let g = gradient(&model, &fm, &pairs).unwrap();
            let mut analytic = g.transform.clone();
            analytic.push(g.threshold);
            analytic.extend(g.users.unwrap_or_default());
            for (slot, a) in analytic.iter().enumerate() {
                let up = oracle_ll(&perturbed(&model, slot, h), &fm, &pairs);
                let down = oracle_ll(&perturbed(&model, slot, -h), &fm, &pairs);
                let fd = (up - down) / (2.0 * h);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn likelihood_matches_oracle() {
    for kind in [MetricKind::WeightedNn, MetricKind::LowRank, MetricKind::Personalized] {
        for seed in 0..20 {
            let (model, fm, pairs) = random_instance(seed, kind);
            let ll = log_likelihood(&model, &fm, &pairs).unwrap();
            let expected = oracle_ll(&model, &fm, &pairs);
            assert!((ll - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            assert!(ll <= 0.0);
        }
    }
}

#[test]
fn likelihood_at_threshold() {
    let fm = features(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
    let y = Projection::identity(2);
    // d(0, 1) = 1
    let model = MetricModel::low_rank(y, 1.0).unwrap();
    let one = LabeledPairSet::from_pairs(&[(0, 1)], &[]).unwrap();
    assert!((log_likelihood(&model, &fm, &one).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    let two = LabeledPairSet::from_pairs(&[(0, 1)], &[(0, 2)]).unwrap();
    assert!((log_likelihood(&model, &fm, &two).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);

    let zero = MetricModel::low_rank(Projection::zeros(2, 2), 0.0).unwrap();
    assert!((log_likelihood(&zero, &fm, &two).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn gradient_edge_cases() {
    let fm = features(&[&[0.3, -0.2], &[0.3, -0.2], &[1.0, 1.0]]);
    let y = Projection::new(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let model = MetricModel::low_rank(y, 0.7).unwrap();

    let empty = LabeledPairSet::new(Partition::Train, vec![], vec![]).unwrap();
    let g = gradient(&model, &fm, &empty).unwrap();
    assert!(g.transform.iter().all(|v| *v == 0.0) && g.threshold == 0.0);

    let same = LabeledPairSet::from_pairs(&[(0, 1)], &[]).unwrap();
    let g = gradient(&model, &fm, &same).unwrap();
    assert!(g.transform.iter().all(|v| *v == 0.0));
    assert!((g.threshold - (1.0 - sigmoid(0.7))).abs() < 1e-15);
}

#[test]
fn personalized_requires_known_users() {
    let (model, fm, pairs) = random_instance(3, MetricKind::Personalized);
    let renamed = LabeledPairSet::new(
        Partition::Train,
        pairs.pairs().to_vec(),
        vec!["u0".into(), "u1".into(), "stranger".into()],
    )
    .unwrap();
    assert!(matches!(gradient(&model, &fm, &renamed), Err(Error::UnknownUser(u)) if u == "stranger"));

    let anonymous = LabeledPairSet::from_pairs(&[(0, 1)], &[(2, 3)]).unwrap();
    assert!(log_likelihood(&model, &fm, &anonymous).is_err());
}

fn clustered(seed: u64) -> (FeatureMatrix, LabeledPairSet) {
    // two tight groups far apart; related pairs stay within a group
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for g in 0..2 {
        for _ in 0..10 {
            let base = if g == 0 { -2.0 } else { 2.0 };
            rows.extend([base + rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }
    }
    let fm = FeatureMatrix::new((0..20).map(|i| format!("i{i}")).collect(), 3, rows).unwrap();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for a in 0..10u32 {
        pos.push((a, (a + 1) % 10));
        pos.push((10 + a, 10 + (a + 1) % 10));
        neg.push((a, 10 + a));
        neg.push((a, 10 + (a + 3) % 10));
    }
    (fm, LabeledPairSet::from_pairs(&pos, &neg).unwrap())
}

#[test]
fn zero_iterations_returns_initial_model() {
    let (fm, pairs) = clustered(1);
    let config = TrainConfig { rank: 2, max_iterations: 0, seed: 9, ..Default::default() };
    let init = init_model(&config, &fm, &pairs).unwrap();
    let (model, report) = train(&config, &fm, &pairs).unwrap();
    assert_eq!(model.transform(), init.transform());
    assert_eq!(model.threshold(), init.threshold());
    assert_eq!(report.trace.len(), 1);
    assert_eq!(report.iterations, 0);
}

#[test]
fn separable_instance_fits_exactly() {
    let fm = features(&[&[0.0, 0.0], &[0.1, 0.0], &[5.0, 5.0], &[5.1, 5.0]]);
    let pairs = LabeledPairSet::from_pairs(&[(0, 1), (2, 3)], &[(0, 2), (1, 3)]).unwrap();
    // brute force: some threshold separates the pairs under the identity metric
    let id = Projection::identity(2);
    let dist = |p: &LabeledPair| dist_lowrank(&id, fm.row(p.i as usize), fm.row(p.j as usize)).unwrap();
    let separable = (0..1000).map(|t| t as f64 * 0.1).any(|c| {
        pairs.pairs().iter().all(|p| (dist(p) < c) == p.related)
    });
    assert!(separable);

    let config = TrainConfig { rank: 2, seed: 5, ..Default::default() };
    let (model, report) = train(&config, &fm, &pairs).unwrap();
    assert_eq!(report.train_accuracy, 1.0);
    let scorer = model.scorer(&fm).unwrap();
    for p in pairs.pairs() {
        assert_eq!(scorer.distance(p.i as usize, p.j as usize, None) < model.threshold(), p.related);
    }
}

#[test]
fn traces_are_monotone_for_every_kind_and_method() {
    let (fm, pairs) = clustered(2);
    for kind in [MetricKind::WeightedNn, MetricKind::LowRank] {
        for optimizer in [Method::QuasiNewton, Method::GradientAscent] {
            let config = TrainConfig { kind, rank: 2, optimizer, max_iterations: 50, ..Default::default() };
            let mut seen = Vec::new();
            let (_, report) = train_with_progress(&config, &fm, &pairs, &mut |p| seen.push(*p)).unwrap();
            assert!(report.trace.iter().all(|v| v.is_finite()));
            assert!(report.trace.windows(2).all(|w| w[1] >= w[0]), "{kind} {optimizer:?}");
            assert_eq!(seen.len(), report.trace.len());
            assert!(seen.iter().zip(&report.trace).all(|(p, t)| p.log_likelihood == *t));
            assert!((0.0..=1.0).contains(&report.train_accuracy));
        }
    }
}

#[test]
fn frozen_user_weights_reproduce_global_training() {
    let (fm, base) = clustered(3);
    let pairs = LabeledPairSet::new(
        Partition::Train,
        base.pairs().iter().enumerate().map(|(n, p)| LabeledPair { user: Some(n as u32 % 2), ..*p }).collect(),
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let config = TrainConfig { rank: 2, max_iterations: 30, seed: 4, ..Default::default() };
    let init = init_model(&config, &fm, &pairs).unwrap();
    let (global, g_report) = train_from(&config, &fm, &pairs, init.clone(), &mut |_| {}).unwrap();
    let frozen = TrainConfig { freeze_user_weights: true, ..config.clone() };
    let (personal, p_report) = train_personalized(&frozen, &fm, &pairs, &init, &mut |_| {}).unwrap();
    assert_eq!(global.projection(), personal.projection());
    assert_eq!(global.threshold().to_bits(), personal.threshold().to_bits());
    let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&g_report.trace), bits(&p_report.trace));
    assert!(personal.users().unwrap().weights().iter().all(|w| *w == 1.0));

    let (trained, _) = train_personalized(&config, &fm, &pairs, &init, &mut |_| {}).unwrap();
    assert!(trained.users().unwrap().weights().iter().all(|w| *w >= 0.0));
}

#[test]
fn bad_init_scale_is_reported() {
    let (fm, pairs) = clustered(4);
    let config = TrainConfig { rank: 2, init_scale: Some(1e200), ..Default::default() };
    assert!(matches!(train(&config, &fm, &pairs), Err(Error::NonFinite { iteration: 0 })));
}

#[test]
fn refuses_held_out_and_unbalanced_pairs() {
    let (fm, pairs) = clustered(5);
    let config = TrainConfig { rank: 2, ..Default::default() };
    let test = LabeledPairSet::new(Partition::Test, pairs.pairs().to_vec(), vec![]).unwrap();
    assert!(train(&config, &fm, &test).is_err());
    let lopsided = LabeledPairSet::from_pairs(&[(0, 1), (1, 2)], &[(0, 15)]).unwrap();
    assert!(train(&config, &fm, &lopsided).is_err());
}

#[test]
fn thread_count_does_not_change_result() {
    let (fm, pairs) = clustered(6);
    let run = |threads| {
        let config = TrainConfig { rank: 2, threads, max_iterations: 40, ..Default::default() };
        train(&config, &fm, &pairs).unwrap().0
    };
    assert_eq!(run(1).to_bytes(), run(3).to_bytes());
}
