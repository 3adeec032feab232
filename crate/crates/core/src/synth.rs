//! Synthetic catalogs with a planted style metric.
//!
//! Features are i.i.d. standard normal. A planted projection Y* and
//! threshold c* define the rule "related iff ‖x_iY* − x_jY*‖² < c*", and the
//! graph lists E pairs drawn from that rule. With noise rate ρ each emitted
//! edge is, independently with probability ρ, replaced by a pair the rule
//! calls unrelated.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::catalog::{Edge, FeatureMatrix, RelationClass, RelationGraph, Triple, UserTripleSet};
use crate::error::{Error, Result};
use crate::metric::{style_sq_dist, Projection};
use crate::model::{MetricModel, UserTable};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynthMode {
    /// Y* picks K* feature coordinates; a diagonal metric can express it.
    AxisAligned,
    /// Column k of Y* is (e_2k + e_2k+1)/√2: each style dimension mixes a
    /// pair of coordinates, which no per-coordinate weighting reproduces.
    #[default]
    CrossFeature,
    /// Axis-aligned Y*, plus users from two populations that each attend to
    /// one half of the style dimensions.
    TwoPopulationUsers,
}

impl SynthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthMode::AxisAligned => "axis_aligned",
            SynthMode::CrossFeature => "cross_feature",
            SynthMode::TwoPopulationUsers => "two_population_users",
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axis_aligned" => Ok(SynthMode::AxisAligned),
            "cross_feature" => Ok(SynthMode::CrossFeature),
            "two_population_users" => Ok(SynthMode::TwoPopulationUsers),
            other => Err(Error::invalid(format!("unknown synth mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub dim: usize,
    pub rank: usize,
    /// Related pairs to emit. Ignored in the user mode, whose graph is the
    /// union of all users' co-purchases.
    pub edges: usize,
    pub noise: f64,
    pub mode: SynthMode,
    pub seed: u64,
    /// Planted threshold. `None` places it between the E-th and (E+1)-th
    /// smallest planted distances so exactly E pairs are rule-related.
    pub threshold: Option<f64>,
    pub users: usize,
    pub items_per_user: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            dim: 32,
            rank: 4,
            edges: 20_000,
            noise: 0.0,
            mode: SynthMode::CrossFeature,
            seed: 0,
            threshold: None,
            users: 50,
            items_per_user: 30,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let universe = self.n_items as u128 * self.n_items.saturating_sub(1) as u128 / 2;
        if self.n_items < 2 {
            return Err(Error::invalid("need at least two items"));
        }
        if self.rank == 0 || self.rank > self.dim {
            return Err(Error::invalid(format!("rank {} must be in 1..={}", self.rank, self.dim)));
        }
        if self.mode == SynthMode::CrossFeature && 2 * self.rank > self.dim {
            return Err(Error::invalid(format!(
                "cross_feature needs F ≥ 2K*, got F = {}, K* = {}",
                self.dim, self.rank
            )));
        }
        if self.edges == 0 || self.edges as u128 >= universe {
            return Err(Error::invalid(format!("edge count {} must be in 1..{universe}", self.edges)));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::invalid("noise rate must lie in [0, 0.5)"));
        }
        if let Some(c) = self.threshold {
            if !c.is_finite() {
                return Err(Error::invalid("threshold must be finite"));
            }
        }
        if self.mode == SynthMode::TwoPopulationUsers {
            if self.rank < 2 {
                return Err(Error::invalid("two_population_users needs K* ≥ 2"));
            }
            if self.users == 0 || self.items_per_user < 2 || self.items_per_user > self.n_items {
                return Err(Error::invalid("bad user count or items per user"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub features: FeatureMatrix,
    pub graph: RelationGraph,
    /// The planted metric; personalized with 0/1 masks in the user mode.
    pub ground_truth: MetricModel,
    pub triples: Option<UserTripleSet>,
    /// Edges that were replaced by rule-unrelated pairs.
    pub flipped: usize,
    /// Requested threshold that could not yield E related pairs and was
    /// moved.
    pub adjusted_from: Option<f64>,
}

impl SynthData {
    /// Writes `features.tsv`, `graph.tsv`, `ground_truth.model` and, in the
    /// user mode, `triples.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = vec![dir.join("features.tsv"), dir.join("graph.tsv"), dir.join("ground_truth.model")];
        self.features.save_text(&written[0])?;
        self.graph.save(&written[1])?;
        self.ground_truth.save(&written[2])?;
        if let Some(t) = &self.triples {
            let path = dir.join("triples.tsv");
            t.save(&path, &self.features)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn planted_projection(config: &SynthConfig) -> Projection {
    let (f, k) = (config.dim, config.rank);
    let mut y = Projection::zeros(f, k);
    let data = y.data_mut();
    for c in 0..k {
        match config.mode {
            SynthMode::CrossFeature => {
                let v = std::f64::consts::FRAC_1_SQRT_2;
                data[(2 * c) * k + c] = v;
                data[(2 * c + 1) * k + c] = v;
            }
            _ => data[c * k + c] = 1.0,
        }
    }
    y
}

/// Index of the unordered pair (i, j), i < j, in row-major upper-triangle
/// order, and its inverse.
fn pair_at(n: usize, mut idx: usize) -> (u32, u32) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if idx < row {
            return (i as u32, (i + 1 + idx) as u32);
        }
        idx -= row;
        i += 1;
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, rng::SYNTH);
    let (n, f, k) = (config.n_items, config.dim, config.rank);
    let values: Vec<f64> = (0..n * f).map(|_| StandardNormal.sample(&mut rng)).collect();
    let width = (n - 1).to_string().len();
    let ids = (0..n).map(|i| format!("item{i:0width$}")).collect();
    let features = FeatureMatrix::new(ids, f, values)?;
    let y = planted_projection(config);
    let mut styles = vec![0.0; n * k];
    for (i, out) in styles.chunks_exact_mut(k).enumerate() {
        y.embed_into(features.row(i), out);
    }
    let style = |i: usize| &styles[i * k..(i + 1) * k];

    if config.mode == SynthMode::TwoPopulationUsers {
        return users_mode(config, features, y, &styles, &mut rng);
    }

    let dist = |i: u32, j: u32| style_sq_dist(style(i as usize), style(j as usize), None);
    let e = config.edges;
    let placed = |all: &mut Vec<f64>| -> Result<f64> {
        // E-th and (E+1)-th smallest distances
        let (below, upper, _) = all.select_nth_unstable_by(e, |a, b| a.total_cmp(b));
        let upper = *upper;
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lower == upper {
            return Err(Error::invalid("planted distances tie at the edge-count boundary"));
        }
        Ok(lower + (upper - lower) / 2.0)
    };
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            all.push(dist(i, j));
        }
    }
    let (threshold, adjusted_from) = match config.threshold {
        None => (placed(&mut all)?, None),
        Some(c) => {
            let related = all.iter().filter(|d| **d < c).count();
            if related < e {
                (placed(&mut all)?, Some(c))
            } else {
                (c, None)
            }
        }
    };
    drop(all);

    let mut positives = Vec::new();
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            if dist(i, j) < threshold {
                positives.push((i, j));
            }
        }
    }
    if positives.len() > e {
        let mut keep = index::sample(&mut rng, positives.len(), e).into_vec();
        keep.sort_unstable();
        positives = keep.into_iter().map(|p| positives[p]).collect();
    }
    positives.shuffle(&mut rng);

    let universe = n * (n - 1) / 2;
    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(e);
    let mut edges = Vec::with_capacity(e);
    let mut flipped = 0;
    let mut next_positive = positives.into_iter();
    for _ in 0..e {
        if config.noise > 0.0 && rng.random_bool(config.noise) {
            loop {
                let pair = pair_at(n, rng.random_range(0..universe));
                if dist(pair.0, pair.1) >= threshold && chosen.insert(pair) {
                    edges.push(pair);
                    break;
                }
            }
            flipped += 1;
        } else {
            let pair = next_positive.next().expect("exactly E rule-related pairs");
            chosen.insert(pair);
            edges.push(pair);
        }
    }
    edges.sort_unstable();
    let graph = RelationGraph::new(
        features.ids().to_vec(),
        edges.into_iter().map(|(a, b)| Edge::observed(a, b, RelationClass::AlsoBought)),
    )?;
    let mut ground_truth = MetricModel::low_rank(y, threshold)?;
    ground_truth.meta.seed = config.seed;
    Ok(SynthData {
        features,
        graph,
        ground_truth,
        triples: None,
        flipped,
        adjusted_from,
    })
}

fn users_mode(
    config: &SynthConfig,
    features: FeatureMatrix,
    y: Projection,
    styles: &[f64],
    rng: &mut impl Rng,
) -> Result<SynthData> {
    let (n, k, m) = (config.n_items, config.rank, config.items_per_user);
    let half = k / 2;
    let mask = |population: usize| -> Vec<f64> {
        (0..k)
            .map(|d| if (d < half) == (population == 0) { 1.0 } else { 0.0 })
            .collect()
    };
    let style = |i: usize| &styles[i * k..(i + 1) * k];

    let users: Vec<String> = (0..config.users).map(|u| format!("user{u:03}")).collect();
    let mut weights = Vec::with_capacity(config.users * k);
    let mut triples = Vec::new();
    let mut radius: f64 = 0.0;
    for u in 0..config.users {
        let w = mask(u % 2);
        let anchor = rng.random_range(0..n);
        let mut near: Vec<(f64, usize)> = (0..n)
            .map(|j| (style_sq_dist(style(anchor), style(j), Some(&w)), j))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut items: Vec<usize> = near.iter().take(m).map(|x| x.1).collect();
        items.sort_unstable();
        for a in 0..items.len() {
            for b in a + 1..items.len() {
                let (i, j) = (items[a], items[b]);
                radius = radius.max(style_sq_dist(style(i), style(j), Some(&w)));
                triples.push(Triple {
                    i: i as u32,
                    j: j as u32,
                    user: u as u32,
                });
            }
        }
        weights.extend(w);
    }
    let graph = RelationGraph::new(
        features.ids().to_vec(),
        triples.iter().map(|t| Edge::observed(t.i, t.j, RelationClass::AlsoBought)),
    )?;
    let table = UserTable::new(users.clone(), k, weights)?;
    // every co-purchase falls strictly inside the planted threshold
    let mut ground_truth = MetricModel::personalized(y, radius.next_up(), table)?;
    ground_truth.meta.seed = config.seed;
    Ok(SynthData {
        features,
        graph,
        ground_truth,
        triples: Some(UserTripleSet::new(users, triples)?),
        flipped: 0,
        adjusted_from: None,
    })
}
