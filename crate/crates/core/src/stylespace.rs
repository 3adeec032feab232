//! Analysis of items in style space: batch embedding, k-means clusters and
//! their representatives, and cheap paths between items.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::catalog::FeatureMatrix;
use crate::error::{Error, Result};
use crate::metric::style_sq_dist;
use crate::model::MetricModel;
use crate::rng;

/// Style vectors of a batch of items, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding {
    ids: Vec<String>,
    rank: usize,
    values: Vec<f64>,
}

impl StyleEmbedding {
    pub fn new(ids: Vec<String>, rank: usize, values: Vec<f64>) -> Result<Self> {
        if rank == 0 || values.len() != ids.len() * rank {
            return Err(Error::Dimension {
                expected: ids.len() * rank.max(1),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("style vectors must be finite"));
        }
        Ok(Self { ids, rank, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.rank..(i + 1) * self.rank]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        style_sq_dist(self.row(i), self.row(j), None)
    }

    /// `#style N K` header, then `<item_id>\t<s1>\t...\t<sK>` per item.
    pub fn write<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "#style {} {}", self.len(), self.rank)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(i) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_with(path.as_ref(), |w| self.write(w))
    }
}

pub(crate) fn save_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Projects every item of `features` through the model's Y.
pub fn embed_all(model: &MetricModel, features: &FeatureMatrix) -> Result<StyleEmbedding> {
    if model.projection().is_none() {
        return Err(Error::Model(format!("a {} model has no style space", model.kind())));
    }
    let scorer = model.scorer(features)?;
    let k = model.rank();
    let mut values = Vec::with_capacity(features.len() * k);
    for i in 0..features.len() {
        values.extend_from_slice(scorer.style(i).expect("projection present"));
    }
    StyleEmbedding::new(features.ids().to_vec(), k, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seeding {
    /// Each further center drawn with probability ∝ squared distance to the
    /// nearest chosen one.
    #[default]
    PlusPlus,
    /// k distinct items uniformly at random.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    /// k×K, row-major.
    pub centroids: Vec<f64>,
    /// Cluster of each item.
    pub assignment: Vec<usize>,
    /// Sum of squared distances of items to their centroids.
    pub objective: f64,
    /// Objective after every update step.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn centroid(&self, c: usize) -> &[f64] {
        let k = self.centroids.len() / self.k;
        &self.centroids[c * k..(c + 1) * k]
    }

    /// `<item_id>\t<cluster>` lines, then `#centroids k K` and one
    /// `<cluster>\t<c1>..<cK>` line per cluster.
    pub fn write<W: Write + ?Sized>(&self, w: &mut W, emb: &StyleEmbedding) -> std::io::Result<()> {
        for (id, c) in emb.ids().iter().zip(&self.assignment) {
            writeln!(w, "{id}\t{c}")?;
        }
        writeln!(w, "#centroids {} {}", self.k, emb.rank())?;
        for c in 0..self.k {
            write!(w, "{c}")?;
            for v in self.centroid(c) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn objective(emb: &StyleEmbedding, centroids: &[f64], assignment: &[usize]) -> f64 {
    let k = emb.rank();
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| style_sq_dist(emb.row(i), &centroids[c * k..(c + 1) * k], None))
        .sum()
}

/// Nearest centroid of every item, lowest index on ties.
fn assign(emb: &StyleEmbedding, centroids: &[f64], n_clusters: usize) -> Vec<usize> {
    let k = emb.rank();
    (0..emb.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for c in 0..n_clusters {
                let d = style_sq_dist(emb.row(i), &centroids[c * k..(c + 1) * k], None);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

/// Moves into every empty cluster the item farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(emb: &StyleEmbedding, centroids: &mut [f64], assignment: &mut [usize], n_clusters: usize) {
    let k = emb.rank();
    let mut sizes = vec![0usize; n_clusters];
    assignment.iter().for_each(|&c| sizes[c] += 1);
    for empty in 0..n_clusters {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &c) in assignment.iter().enumerate() {
            if sizes[c] < 2 {
                continue;
            }
            let d = style_sq_dist(emb.row(i), &centroids[c * k..(c + 1) * k], None);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        sizes[assignment[i]] -= 1;
        sizes[empty] = 1;
        assignment[i] = empty;
        centroids[empty * k..(empty + 1) * k].copy_from_slice(emb.row(i));
    }
}

/// Member means, summed in item order.
fn update(emb: &StyleEmbedding, centroids: &mut [f64], assignment: &[usize], n_clusters: usize) {
    let k = emb.rank();
    let mut sums = vec![0.0; n_clusters * k];
    let mut sizes = vec![0usize; n_clusters];
    for (i, &c) in assignment.iter().enumerate() {
        sizes[c] += 1;
        for (s, v) in sums[c * k..(c + 1) * k].iter_mut().zip(emb.row(i)) {
            *s += v;
        }
    }
    for c in 0..n_clusters {
        if sizes[c] > 0 {
            for (out, s) in centroids[c * k..(c + 1) * k].iter_mut().zip(&sums[c * k..(c + 1) * k]) {
                *out = s / sizes[c] as f64;
            }
        }
    }
}

fn seed_centers(emb: &StyleEmbedding, n_clusters: usize, seed: u64, seeding: Seeding) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::KMEANS);
    let n = emb.len();
    let chosen: Vec<usize> = match seeding {
        Seeding::Random => index::sample(&mut rng, n, n_clusters).into_vec(),
        Seeding::PlusPlus => {
            let mut chosen = vec![rng.random_range(0..n)];
            let mut nearest: Vec<f64> = (0..n).map(|i| emb.sq_dist(i, chosen[0])).collect();
            while chosen.len() < n_clusters {
                let total: f64 = nearest.iter().sum();
                let next = if total > 0.0 {
                    let mut target = rng.random_range(0.0..total);
                    let mut pick = None;
                    for (i, d) in nearest.iter().enumerate() {
                        if *d > 0.0 {
                            pick = Some(i);
                            if target < *d {
                                break;
                            }
                            target -= d;
                        }
                    }
                    pick.expect("positive mass")
                } else {
                    // every remaining item duplicates a center
                    let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                    free[rng.random_range(0..free.len())]
                };
                chosen.push(next);
                for (i, d) in nearest.iter_mut().enumerate() {
                    *d = d.min(emb.sq_dist(i, next));
                }
            }
            chosen
        }
    };
    chosen.iter().flat_map(|&i| emb.row(i).to_vec()).collect()
}

/// Lloyd's algorithm until the assignment stops changing or `max_iter`
/// updates were made.
pub fn kmeans(emb: &StyleEmbedding, k: usize, seed: u64, max_iter: usize, seeding: Seeding) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > emb.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} items", emb.len())));
    }
    let mut centroids = seed_centers(emb, k, seed, seeding);
    let mut assignment = assign(emb, &centroids, k);
    repair_empty(emb, &mut centroids, &mut assignment, k);
    update(emb, &mut centroids, &assignment, k);
    let mut trace = vec![objective(emb, &centroids, &assignment)];
    let mut iterations = 0;
    while iterations < max_iter {
        let mut next = assign(emb, &centroids, k);
        repair_empty(emb, &mut centroids, &mut next, k);
        if next == assignment {
            // undo any centroid a repair moved
            update(emb, &mut centroids, &assignment, k);
            break;
        }
        assignment = next;
        update(emb, &mut centroids, &assignment, k);
        trace.push(objective(emb, &centroids, &assignment));
        iterations += 1;
    }
    Ok(Clustering {
        k,
        objective: *trace.last().unwrap(),
        centroids,
        assignment,
        trace,
        iterations,
    })
}

/// For every cluster, up to `m` member ids nearest its centroid, closest
/// first and ties by id.
pub fn representatives(clustering: &Clustering, emb: &StyleEmbedding, m: usize) -> Vec<Vec<String>> {
    let mut members: Vec<Vec<(f64, &str)>> = vec![Vec::new(); clustering.k];
    for (i, &c) in clustering.assignment.iter().enumerate() {
        let d = style_sq_dist(emb.row(i), clustering.centroid(c), None);
        members[c].push((d, &emb.ids()[i]));
    }
    members
        .into_iter()
        .map(|mut list| {
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            list.into_iter().take(m).map(|(_, id)| id.to_string()).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylePath {
    pub items: Vec<String>,
    /// Squared style distance of each hop; one shorter than `items`.
    pub hop_costs: Vec<f64>,
    pub cost: f64,
}

impl StylePath {
    /// `step\titem\thop_cost\tcumulative` rows.
    pub fn write<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "step\titem\thop_cost\tcumulative")?;
        let mut total = 0.0;
        for (n, id) in self.items.iter().enumerate() {
            let hop = if n == 0 { 0.0 } else { self.hop_costs[n - 1] };
            total += hop;
            writeln!(w, "{n}\t{id}\t{hop}\t{total}")?;
        }
        Ok(())
    }
}

/// Adjacency of the symmetric k-nearest-neighbor graph over `nodes`
/// (indices into `emb`): i–j is an edge if either is among the other's
/// `knn` nearest, ties broken by index. Neighbor lists are sorted.
pub fn knn_graph(emb: &StyleEmbedding, nodes: &[usize], knn: usize) -> Vec<Vec<(usize, f64)>> {
    let n = nodes.len();
    let nearest: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&b| b != a)
                .map(|b| (emb.sq_dist(nodes[a], nodes[b]), b))
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            others.into_iter().take(knn).map(|(_, b)| b).collect()
        })
        .collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, list) in nearest.iter().enumerate() {
        for &b in list {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    adj.into_iter()
        .enumerate()
        .map(|(a, mut list)| {
            list.sort_unstable();
            list.dedup();
            list.into_iter().map(|b| (b, emb.sq_dist(nodes[a], nodes[b]))).collect()
        })
        .collect()
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Least-cost path from `source` to `target` over the symmetric kNN graph,
/// with edges weighted by squared style distance. `allowed` restricts the
/// graph to a subset of items; both endpoints must be in it.
pub fn navigate(
    emb: &StyleEmbedding,
    source: &str,
    target: &str,
    knn: usize,
    allowed: Option<&dyn Fn(&str) -> bool>,
) -> Result<StylePath> {
    if knn == 0 {
        return Err(Error::invalid("knn must be at least 1"));
    }
    if source == target {
        return Err(Error::invalid("source and target are the same item"));
    }
    let (s, t) = (emb.index_of(source)?, emb.index_of(target)?);
    let nodes: Vec<usize> = (0..emb.len())
        .filter(|&i| allowed.is_none_or(|keep| keep(&emb.ids()[i])))
        .collect();
    let local = |i: usize| {
        nodes
            .binary_search(&i)
            .map_err(|_| Error::invalid(format!("item `{}` excluded by the filter", emb.ids()[i])))
    };
    let (ls, lt) = (local(s)?, local(t)?);
    let adj = knn_graph(emb, &nodes, knn);

    let mut dist = vec![f64::INFINITY; nodes.len()];
    let mut prev = vec![usize::MAX; nodes.len()];
    let mut heap = BinaryHeap::new();
    dist[ls] = 0.0;
    heap.push(Reverse(Frontier(0.0, ls)));
    while let Some(Reverse(Frontier(d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == lt {
            break;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Reverse(Frontier(nd, v)));
            }
        }
    }
    if !dist[lt].is_finite() {
        return Err(Error::NoPath {
            source_id: source.to_string(),
            target: target.to_string(),
            knn,
        });
    }
    let mut order = vec![lt];
    while *order.last().unwrap() != ls {
        order.push(prev[*order.last().unwrap()]);
    }
    order.reverse();
    let hop_costs: Vec<f64> = order
        .windows(2)
        .map(|w| emb.sq_dist(nodes[w[0]], nodes[w[1]]))
        .collect();
    Ok(StylePath {
        items: order.iter().map(|&l| emb.ids()[nodes[l]].clone()).collect(),
        hop_costs,
        cost: dist[lt],
    })
}
