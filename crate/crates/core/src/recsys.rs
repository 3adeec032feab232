//! Recommendation and outfit scoring with a learned distance.

use std::io::Write;

use rayon::prelude::*;

use crate::catalog::FeatureMatrix;
use crate::error::{Error, Result};
use crate::metric::{link_probability, log_link_probability};
use crate::model::{MetricModel, Scorer};

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub item: String,
    pub distance: f64,
    pub probability: f64,
}

/// Writes `item\tdistance\tprobability` rows under a header.
pub fn write_recommendations<W: Write + ?Sized>(w: &mut W, recs: &[Recommendation]) -> std::io::Result<()> {
    writeln!(w, "item\tdistance\tprobability")?;
    for r in recs {
        writeln!(w, "{}\t{}\t{}", r.item, r.distance, r.probability)?;
    }
    Ok(())
}

fn ranked(scorer: &Scorer<'_>, query: usize, candidates: &[usize]) -> Vec<(f64, usize)> {
    let mut scored: Vec<(f64, usize)> = candidates
        .par_iter()
        .filter(|&&j| j != query)
        .map(|&j| (scorer.distance(query, j, None), j))
        .collect();
    let ids = scorer.features().ids();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
    scored
}

fn resolve(features: &FeatureMatrix, items: &[String]) -> Result<Vec<usize>> {
    items
        .iter()
        .map(|id| features.index_of(id).ok_or_else(|| Error::UnknownItem(id.clone())))
        .collect()
}

/// The `n` candidates closest to `query`, nearest first, ties by id. The
/// query itself is never recommended.
pub fn recommend(
    model: &MetricModel,
    features: &FeatureMatrix,
    query: &str,
    candidates: &[String],
    n: usize,
) -> Result<Vec<Recommendation>> {
    let scorer = model.scorer(features)?;
    let q = features.require(query)?;
    let pool = resolve(features, candidates)?;
    let scored = ranked(&scorer, q, &pool);
    if scored.is_empty() {
        return Err(Error::invalid("no candidates besides the query"));
    }
    let c = model.threshold();
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(d, j)| Recommendation {
            item: features.id(j).to_string(),
            distance: d,
            probability: link_probability(d, c),
        })
        .collect())
}

/// The most probable partner of `query` from each category, chosen
/// independently of the other picks.
pub fn build_outfit(
    model: &MetricModel,
    features: &FeatureMatrix,
    query: &str,
    categories: &[(String, Vec<String>)],
) -> Result<Vec<(String, Recommendation)>> {
    categories
        .iter()
        .map(|(name, items)| {
            if items.is_empty() {
                return Err(Error::invalid(format!("category `{name}` is empty")));
            }
            if items.iter().any(|i| i == query) {
                return Err(Error::invalid(format!("category `{name}` contains the query item")));
            }
            let best = recommend(model, features, query, items, 1)?.remove(0);
            Ok((name.clone(), best))
        })
        .collect()
}

/// How pair log-likelihoods are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// Divide by the number of pairs n(n−1)/2.
    #[default]
    Pairs,
    /// Divide by the number of components n.
    Components,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutfitScore {
    /// The outfit's items in id order.
    pub items: Vec<String>,
    /// Sum of log σ(c − d) over unordered pairs, divided per the normalizer.
    pub mean_pair_loglik: f64,
    pub pairs: usize,
}

pub fn outfit_coherence(
    model: &MetricModel,
    features: &FeatureMatrix,
    items: &[String],
    normalizer: Normalizer,
) -> Result<OutfitScore> {
    if items.len() < 2 {
        return Err(Error::invalid("an outfit needs at least two items"));
    }
    let mut sorted = items.to_vec();
    sorted.sort();
    let idx = resolve(features, &sorted)?;
    let scorer = model.scorer(features)?;
    let c = model.threshold();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            total += log_link_probability(scorer.distance(idx[a], idx[b], None), c);
            pairs += 1;
        }
    }
    let divisor = match normalizer {
        Normalizer::Pairs => pairs,
        Normalizer::Components => idx.len(),
    };
    Ok(OutfitScore {
        items: sorted,
        mean_pair_loglik: total / divisor as f64,
        pairs,
    })
}

/// Coherence gained by replacing `before` with `after`.
pub fn makeover_delta(
    model: &MetricModel,
    features: &FeatureMatrix,
    before: &[String],
    after: &[String],
    normalizer: Normalizer,
) -> Result<f64> {
    let b = outfit_coherence(model, features, before, normalizer)?;
    let a = outfit_coherence(model, features, after, normalizer)?;
    Ok(a.mean_pair_loglik - b.mean_pair_loglik)
}
