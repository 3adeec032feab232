//! Category co-occurrence baseline: two items are related if their
//! categories are commonly linked in the training graph.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use super::EvalReport;
use crate::catalog::{CategoryMap, FeatureMatrix};
use crate::error::{Error, Result};
use crate::sampler::{LabeledPairSet, Partition};

/// How many partner categories a category links to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkRule {
    /// The most frequent half of the distinct partner categories, rounded up.
    #[default]
    CategoryCount,
    /// The most frequent partners until they cover half of the edge count.
    CountMass,
}

impl FromStr for LinkRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category_count" => Ok(LinkRule::CategoryCount),
            "count_mass" => Ok(LinkRule::CountMass),
            other => Err(Error::invalid(format!("unknown link rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtPredictor {
    categories: CategoryMap,
    linked: BTreeMap<String, BTreeSet<String>>,
}

/// Builds the predictor from the related pairs of `train`.
/// Held-out partitions are refused.
pub fn fit_ct(categories: &CategoryMap, features: &FeatureMatrix, train: &LabeledPairSet, rule: LinkRule) -> Result<CtPredictor> {
    match train.partition() {
        Partition::Train | Partition::All => {}
        other => return Err(Error::invalid(format!("category baseline must not see {other} pairs"))),
    }
    let edges = train
        .positives()
        .map(|p| (features.id(p.i as usize), features.id(p.j as usize)));
    CtPredictor::from_edges(categories, edges, rule)
}

impl CtPredictor {
    pub fn from_edges<'a>(
        categories: &CategoryMap,
        edges: impl IntoIterator<Item = (&'a str, &'a str)>,
        rule: LinkRule,
    ) -> Result<Self> {
        let mut counts: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
        for (a, b) in edges {
            let (ca, cb) = (categories.category(a)?, categories.category(b)?);
            *counts.entry(ca).or_default().entry(cb).or_default() += 1;
            if ca != cb {
                *counts.entry(cb).or_default().entry(ca).or_default() += 1;
            }
        }
        let linked = counts
            .into_iter()
            .map(|(cat, partners)| {
                let mut ranked: Vec<(&str, u64)> = partners.into_iter().collect();
                // most frequent first, ties by category id
                ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
                let take = match rule {
                    LinkRule::CategoryCount => ranked.len().div_ceil(2),
                    LinkRule::CountMass => {
                        let total: u64 = ranked.iter().map(|r| r.1).sum();
                        let mut covered = 0;
                        ranked
                            .iter()
                            .position(|r| {
                                covered += r.1;
                                2 * covered >= total
                            })
                            .map_or(0, |p| p + 1)
                    }
                };
                let set = ranked[..take].iter().map(|r| r.0.to_string()).collect();
                (cat.to_string(), set)
            })
            .collect();
        Ok(Self {
            categories: categories.clone(),
            linked,
        })
    }

    /// Categories `category` links to.
    pub fn linked(&self, category: &str) -> impl Iterator<Item = &str> {
        self.linked.get(category).into_iter().flatten().map(String::as_str)
    }

    fn links(&self, from: &str, to: &str) -> bool {
        self.linked.get(from).is_some_and(|s| s.contains(to))
    }

    /// Related iff either item's category links to the other's.
    pub fn predict(&self, a: &str, b: &str) -> Result<bool> {
        let (ca, cb) = (self.categories.category(a)?, self.categories.category(b)?);
        Ok(self.links(ca, cb) || self.links(cb, ca))
    }

    pub fn evaluate(&self, features: &FeatureMatrix, pairs: &LabeledPairSet) -> Result<EvalReport> {
        let outcomes = pairs
            .pairs()
            .iter()
            .map(|p| {
                let predicted = self.predict(features.id(p.i as usize), features.id(p.j as usize))?;
                Ok((predicted, p.related))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport::from_outcomes(outcomes, "category_tree", pairs.partition()))
    }
}
