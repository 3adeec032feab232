//! Balanced labeled pair sets: negative sampling, 80/10/10 splitting and the
//! per-user co-purchase dataset.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::catalog::{FeatureMatrix, RelationGraph, UserTripleSet};
use crate::error::{Error, Result};
use crate::rng;

/// Upper bound on training positives (negatives are capped to match).
pub const MAX_TRAIN_POSITIVES: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    /// Not yet split.
    All,
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::All => "all",
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Partition::All),
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub i: u32,
    pub j: u32,
    pub related: bool,
    /// Index into the owning set's user table.
    pub user: Option<u32>,
}

impl LabeledPair {
    pub fn new(i: u32, j: u32, related: bool) -> Self {
        Self {
            i,
            j,
            related,
            user: None,
        }
    }

    fn key(&self) -> (u32, u32, Option<u32>) {
        (self.i.min(self.j), self.i.max(self.j), self.user)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairSet {
    partition: Partition,
    pairs: Vec<LabeledPair>,
    users: Vec<String>,
}

impl LabeledPairSet {
    /// Validates that no pair carries both labels and that user indices
    /// resolve.
    pub fn new(partition: Partition, pairs: Vec<LabeledPair>, users: Vec<String>) -> Result<Self> {
        let mut seen: HashMap<(u32, u32, Option<u32>), bool> = HashMap::with_capacity(pairs.len());
        for p in &pairs {
            if p.i == p.j {
                return Err(Error::invalid(format!("pair relates item {} to itself", p.i)));
            }
            if let Some(u) = p.user {
                if u as usize >= users.len() {
                    return Err(Error::invalid(format!("user index {u} out of range")));
                }
            }
            if let Some(prev) = seen.insert(p.key(), p.related) {
                if prev != p.related {
                    return Err(Error::invalid(format!(
                        "pair ({}, {}) appears with both labels",
                        p.i, p.j
                    )));
                }
            }
        }
        Ok(Self {
            partition,
            pairs,
            users,
        })
    }

    /// Unsplit set: every positive labeled related, every negative unrelated.
    pub fn from_pairs(positives: &[(u32, u32)], negatives: &[(u32, u32)]) -> Result<Self> {
        let pairs = positives
            .iter()
            .map(|&(i, j)| LabeledPair::new(i, j, true))
            .chain(negatives.iter().map(|&(i, j)| LabeledPair::new(i, j, false)))
            .collect();
        Self::new(Partition::All, pairs, Vec::new())
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| p.related)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| !p.related)
    }

    /// (related, unrelated) counts.
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.positives().count();
        (pos, self.pairs.len() - pos)
    }

    pub fn is_balanced(&self) -> bool {
        let (p, n) = self.counts();
        p == n
    }

    pub fn has_users(&self) -> bool {
        !self.pairs.is_empty() && self.pairs.iter().all(|p| p.user.is_some())
    }

    /// Copy with every label flipped.
    pub fn relabeled(&self) -> Self {
        Self {
            partition: self.partition,
            pairs: self
                .pairs
                .iter()
                .map(|p| LabeledPair {
                    related: !p.related,
                    ..*p
                })
                .collect(),
            users: self.users.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "empty file, expected `#partition <name>`")),
        };
        let partition = header
            .strip_prefix("#partition ")
            .ok_or_else(|| Error::parse(path, 1, "expected `#partition <name>` header"))?
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(path, 1, e.to_string()))?;

        let mut users = Vec::new();
        let mut user_index: HashMap<String, u32> = HashMap::new();
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::parse(path, lineno, "expected `<i>\\t<j>\\t<label>[\\t<user>]`"));
            }
            let item = |id: &str| {
                features
                    .index_of(id)
                    .map(|i| i as u32)
                    .ok_or_else(|| Error::parse(path, lineno, format!("unknown item `{id}`")))
            };
            let related = match fields[2] {
                "related" => true,
                "unrelated" => false,
                other => return Err(Error::parse(path, lineno, format!("unknown label `{other}`"))),
            };
            let user = fields.get(3).map(|u| {
                *user_index.entry(u.to_string()).or_insert_with(|| {
                    users.push(u.to_string());
                    (users.len() - 1) as u32
                })
            });
            pairs.push(LabeledPair {
                i: item(fields[0])?,
                j: item(fields[1])?,
                related,
                user,
            });
        }
        Self::new(partition, pairs, users).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w, features).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write<W: Write>(&self, w: &mut W, features: &FeatureMatrix) -> std::io::Result<()> {
        writeln!(w, "#partition {}", self.partition)?;
        for p in &self.pairs {
            let label = if p.related { "related" } else { "unrelated" };
            write!(w, "{}\t{}\t{label}", features.id(p.i as usize), features.id(p.j as usize))?;
            if let Some(u) = p.user {
                write!(w, "\t{}", self.users[u as usize])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn canonical(i: u32, j: u32) -> (u32, u32) {
    (i.min(j), i.max(j))
}

/// Draws exactly `|R|` distinct unordered non-edges uniformly by rejection.
/// Requires the graph to cover fewer than half of all unordered pairs.
pub fn sample_negatives(graph: &RelationGraph, n_items: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    let positives = graph.pairs();
    if positives.is_empty() {
        return Err(Error::invalid("cannot sample negatives for an empty graph"));
    }
    if n_items < 2 {
        return Err(Error::invalid("need at least two items to sample negatives"));
    }
    if let Some(&(_, b)) = positives.iter().max_by_key(|p| p.1) {
        if b as usize >= n_items {
            return Err(Error::invalid(format!("edge endpoint {b} outside {n_items} items")));
        }
    }
    let universe = n_items as u128 * (n_items as u128 - 1) / 2;
    if 2 * positives.len() as u128 >= universe {
        return Err(Error::invalid(format!(
            "graph density {}/{universe} is not below 50%; cannot draw as many negatives as positives",
            positives.len()
        )));
    }
    let taken: HashSet<(u32, u32)> = positives.iter().copied().collect();
    let mut chosen = HashSet::with_capacity(positives.len());
    let mut out = Vec::with_capacity(positives.len());
    let mut rng = rng::stream(seed, rng::NEGATIVES);
    while out.len() < positives.len() {
        let i = rng.random_range(0..n_items as u32);
        let j = rng.random_range(0..n_items as u32);
        if i == j {
            continue;
        }
        let pair = canonical(i, j);
        if taken.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

/// Train / validation / test partitions of one balanced set.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledPairSet,
    pub validation: LabeledPairSet,
    pub test: LabeledPairSet,
}

/// Shuffles positives and negatives separately, then assigns
/// `floor(n/10)` of each to validation, the next `floor(n/10)` to test and
/// the remainder (capped at [`MAX_TRAIN_POSITIVES`]) to train.
pub fn split(set: &LabeledPairSet, seed: u64) -> Result<Split> {
    split_with_cap(set, seed, MAX_TRAIN_POSITIVES)
}

pub fn split_with_cap(set: &LabeledPairSet, seed: u64, train_cap: usize) -> Result<Split> {
    let mut pos: Vec<LabeledPair> = set.positives().copied().collect();
    let mut neg: Vec<LabeledPair> = set.negatives().copied().collect();
    if pos.len() != neg.len() {
        return Err(Error::invalid(format!(
            "unbalanced input: {} related vs {} unrelated",
            pos.len(),
            neg.len()
        )));
    }
    if pos.len() < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 related pairs to split, found {}",
            pos.len()
        )));
    }
    pos.shuffle(&mut rng::stream(seed, rng::SPLIT_POSITIVES));
    neg.shuffle(&mut rng::stream(seed, rng::SPLIT_NEGATIVES));

    let n = pos.len();
    let tenth = n / 10;
    let train_len = (n - 2 * tenth).min(train_cap);
    let part = |range: std::ops::Range<usize>, partition: Partition| {
        let pairs = pos[range.clone()].iter().chain(&neg[range]).copied().collect();
        LabeledPairSet {
            partition,
            pairs,
            users: set.users.clone(),
        }
    };
    Ok(Split {
        validation: part(0..tenth, Partition::Validation),
        test: part(tenth..2 * tenth, Partition::Test),
        train: part(2 * tenth..2 * tenth + train_len, Partition::Train),
    })
}

/// Per-user co-purchase sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserSampling {
    /// Users with fewer distinct purchased items are skipped.
    pub min_items: usize,
    /// Maximum co-purchase pairs drawn per user.
    pub pairs_per_user: usize,
}

impl Default for UserSampling {
    fn default() -> Self {
        Self {
            min_items: 20,
            pairs_per_user: 50,
        }
    }
}

/// Builds a user-annotated balanced set: for every user with enough
/// purchases, up to `pairs_per_user` of their co-purchases plus as many
/// random pairs from the whole catalog that nobody co-purchased.
pub fn build_user_dataset(
    triples: &UserTripleSet,
    n_items: usize,
    seed: u64,
    params: UserSampling,
) -> Result<LabeledPairSet> {
    let copurchased: HashSet<(u32, u32)> = triples
        .triples()
        .iter()
        .map(|t| canonical(t.i, t.j))
        .collect();
    let mut by_user: Vec<BTreeSet<(u32, u32)>> = vec![BTreeSet::new(); triples.users().len()];
    for t in triples.triples() {
        if t.i as usize >= n_items || t.j as usize >= n_items {
            return Err(Error::invalid(format!("triple item outside {n_items} items")));
        }
        by_user[t.user as usize].insert(canonical(t.i, t.j));
    }
    let universe = n_items as u128 * (n_items.saturating_sub(1)) as u128 / 2;

    let per_user: Vec<Result<Vec<LabeledPair>>> = by_user
        .par_iter()
        .enumerate()
        .map(|(u, user_pairs)| {
            let items: BTreeSet<u32> = user_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            if items.len() < params.min_items {
                return Ok(Vec::new());
            }
            let mut rng = rng::stream(seed, rng::USER_BASE + u as u64);
            let candidates: Vec<(u32, u32)> = user_pairs.iter().copied().collect();
            let count = params.pairs_per_user.min(candidates.len());
            if (copurchased.len() + count) as u128 > universe {
                return Err(Error::invalid(format!(
                    "catalog too small to draw {count} non-co-purchases for user {u}"
                )));
            }
            let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), count).into_vec();
            picked.sort_unstable();
            let user = Some(u as u32);
            let mut out: Vec<LabeledPair> = picked
                .into_iter()
                .map(|k| LabeledPair {
                    i: candidates[k].0,
                    j: candidates[k].1,
                    related: true,
                    user,
                })
                .collect();
            let mut chosen = HashSet::with_capacity(count);
            while chosen.len() < count {
                let a = rng.random_range(0..n_items as u32);
                let b = rng.random_range(0..n_items as u32);
                if a == b {
                    continue;
                }
                let pair = canonical(a, b);
                if copurchased.contains(&pair) || !chosen.insert(pair) {
                    continue;
                }
                out.push(LabeledPair {
                    i: pair.0,
                    j: pair.1,
                    related: false,
                    user,
                });
            }
            Ok(out)
        })
        .collect();

    let mut pairs = Vec::new();
    for chunk in per_user {
        pairs.extend(chunk?);
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "no user has at least {} purchased items",
            params.min_items
        )));
    }
    LabeledPairSet::new(Partition::All, pairs, triples.users().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Edge, RelationClass, Triple};
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(u32, u32)]) -> RelationGraph {
        let ids = (0..n).map(|i| format!("i{i}")).collect();
        RelationGraph::new(
            ids,
            edges.iter().map(|&(a, b)| Edge::observed(a, b, RelationClass::AlsoBought)),
        )
        .unwrap()
    }

    #[test]
    fn negatives_match_positive_count() {
        let g = graph(100, &[(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]);
        let neg = sample_negatives(&g, 100, 1).unwrap();
        assert_eq!(neg.len(), 5);
        let pos: HashSet<_> = g.pairs().into_iter().collect();
        assert!(neg.iter().all(|p| !pos.contains(p) && p.0 < p.1));
        assert_eq!(neg.iter().collect::<HashSet<_>>().len(), 5);
        assert_eq!(sample_negatives(&g, 100, 1).unwrap(), neg);
    }

    #[test]
    fn dense_graph_rejected() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(sample_negatives(&g, 3, 0).is_err());
        assert!(sample_negatives(&graph(3, &[]), 3, 0).is_err());
    }

    fn balanced(n: usize) -> LabeledPairSet {
        let pos: Vec<(u32, u32)> = (0..n as u32).map(|k| (2 * k, 2 * k + 1)).collect();
        let neg: Vec<(u32, u32)> = (0..n as u32).map(|k| (2 * k, 2 * k + 3)).collect();
        LabeledPairSet::from_pairs(&pos, &neg).unwrap()
    }

    #[test]
    fn split_hundred() {
        let s = split(&balanced(100), 3).unwrap();
        assert_eq!(s.train.counts(), (80, 80));
        assert_eq!(s.validation.counts(), (10, 10));
        assert_eq!(s.test.counts(), (10, 10));
    }

    #[test]
    fn split_floor_rule_at_ten() {
        let s = split(&balanced(10), 3).unwrap();
        assert_eq!(s.train.counts(), (8, 8));
        assert_eq!(s.validation.counts(), (1, 1));
        assert_eq!(s.test.counts(), (1, 1));
        assert!(split(&balanced(9), 3).is_err());
    }

    #[test]
    fn split_caps_training_positives() {
        let s = split_with_cap(&balanced(1000), 3, 500).unwrap();
        assert_eq!(s.train.counts(), (500, 500));
        assert_eq!(s.test.counts(), (100, 100));
    }

    #[test]
    fn split_caps_at_two_million() {
        let n = 3_000_000u32;
        let pairs: Vec<LabeledPair> = (0..n)
            .map(|k| LabeledPair::new(k, k + n, true))
            .chain((0..n).map(|k| LabeledPair::new(k, k + 2 * n, false)))
            .collect();
        let set = LabeledPairSet {
            partition: Partition::All,
            pairs,
            users: Vec::new(),
        };
        let s = split(&set, 9).unwrap();
        assert_eq!(s.train.counts(), (MAX_TRAIN_POSITIVES, MAX_TRAIN_POSITIVES));
        assert_eq!(s.validation.counts(), (300_000, 300_000));
    }

    #[test]
    fn conflicting_labels_rejected() {
        assert!(LabeledPairSet::from_pairs(&[(1, 2)], &[(2, 1)]).is_err());
    }

    fn user_triples(items_per_user: &[u32]) -> UserTripleSet {
        // user u purchases items [base, base + count) and co-purchases all of them
        let mut triples = Vec::new();
        let mut base = 0;
        for (u, &count) in items_per_user.iter().enumerate() {
            for a in base..base + count {
                for b in a + 1..base + count {
                    triples.push(Triple { i: a, j: b, user: u as u32 });
                }
            }
            base += count;
        }
        let users = (0..items_per_user.len()).map(|u| format!("u{u}")).collect();
        UserTripleSet::new(users, triples).unwrap()
    }

    #[test]
    fn user_threshold_and_cap() {
        let t = user_triples(&[19, 200]);
        let set = build_user_dataset(&t, 1000, 4, UserSampling::default()).unwrap();
        assert!(set.pairs().iter().all(|p| p.user == Some(1)));
        assert_eq!(set.counts(), (50, 50));
        assert!(build_user_dataset(&user_triples(&[19]), 1000, 4, UserSampling::default()).is_err());
    }

    #[test]
    fn twenty_item_user_with_few_observed_pairs() {
        // 20 items covered by a chain of 19 co-purchases: 19 of 190 possible
        // pairs observed, so all 19 are used and matched 1:1
        let triples = (0..19).map(|k| Triple { i: k, j: k + 1, user: 0 }).collect();
        let t = UserTripleSet::new(vec!["u".into()], triples).unwrap();
        let set = build_user_dataset(&t, 500, 1, UserSampling::default()).unwrap();
        assert_eq!(set.counts(), (19, 19));

        // the complete 20-item user has 190 observed pairs, capped at 50
        let set = build_user_dataset(&user_triples(&[20]), 500, 1, UserSampling::default()).unwrap();
        assert_eq!(set.counts(), (50, 50));
    }

    #[test]
    fn user_negatives_avoid_all_copurchases() {
        let t = user_triples(&[25, 30, 22]);
        let set = build_user_dataset(&t, 120, 8, UserSampling::default()).unwrap();
        let copurchased: HashSet<_> = t.triples().iter().map(|t| canonical(t.i, t.j)).collect();
        assert!(set.negatives().all(|p| !copurchased.contains(&canonical(p.i, p.j))));
        assert!(set.is_balanced());
        let again = build_user_dataset(&t, 120, 8, UserSampling::default()).unwrap();
        assert_eq!(set, again);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pipeline_invariants(n_edges in 10usize..60, seed in any::<u64>()) {
            let edges: Vec<(u32, u32)> = (0..n_edges as u32).map(|k| (k, (k * 7 + 3) % 97 + 100)).collect();
            let g = graph(200, &edges);
            let pos = g.pairs();
            let neg = sample_negatives(&g, 200, seed).unwrap();
            let set = LabeledPairSet::from_pairs(&pos, &neg).unwrap();
            let s = split(&set, seed).unwrap();
            let positive_set: HashSet<_> = pos.iter().copied().collect();
            let mut seen = HashSet::new();
            for part in [&s.train, &s.validation, &s.test] {
                prop_assert!(part.is_balanced());
                for p in part.pairs() {
                    prop_assert!(seen.insert(canonical(p.i, p.j)));
                    if !p.related {
                        prop_assert!(!positive_set.contains(&canonical(p.i, p.j)));
                    }
                }
            }
            prop_assert_eq!(seen.len(), 2 * pos.len());
        }
    }
}
