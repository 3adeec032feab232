//! Typed relationship edges between items.
//!
//! Edges are kept as unordered pairs `(a, b)` with `a < b`. The direction in
//! which an edge was observed is recorded in [`Edge::directions`] but never
//! affects identity: every distance in this crate is symmetric.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::catalog::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationClass {
    AlsoViewed,
    BuyAfterViewing,
    AlsoBought,
    BoughtTogether,
}

impl RelationClass {
    pub const ALL: [RelationClass; 4] = [
        RelationClass::AlsoViewed,
        RelationClass::BuyAfterViewing,
        RelationClass::AlsoBought,
        RelationClass::BoughtTogether,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationClass::AlsoViewed => "also_viewed",
            RelationClass::BuyAfterViewing => "buy_after_viewing",
            RelationClass::AlsoBought => "also_bought",
            RelationClass::BoughtTogether => "bought_together",
        }
    }

    /// Substitute relations (viewing-based) as opposed to complements.
    pub fn is_substitute(self) -> bool {
        matches!(self, RelationClass::AlsoViewed | RelationClass::BuyAfterViewing)
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown relation class `{s}`")))
    }
}

/// Edge was observed as `a -> b`.
pub const FORWARD: u8 = 1;
/// Edge was observed as `b -> a`.
pub const BACKWARD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub class: RelationClass,
    /// Bitmask of [`FORWARD`] / [`BACKWARD`].
    pub directions: u8,
}

impl Edge {
    pub fn observed(src: u32, dst: u32, class: RelationClass) -> Self {
        Edge {
            a: src,
            b: dst,
            class,
            directions: FORWARD,
        }
    }
}

/// Result of [`canonicalize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    pub edges: Vec<Edge>,
    pub dropped_self_edges: usize,
}

/// Orders each edge so `a < b`, merges duplicates of the same unordered pair
/// and class (OR-ing their direction bits), drops self-edges and sorts.
pub fn canonicalize(edges: impl IntoIterator<Item = Edge>) -> Canonical {
    let mut dropped_self_edges = 0;
    let mut merged: HashMap<(u32, u32, RelationClass), u8> = HashMap::new();
    for e in edges {
        if e.a == e.b {
            dropped_self_edges += 1;
            continue;
        }
        let (a, b, dirs) = if e.a < e.b {
            (e.a, e.b, e.directions)
        } else {
            let flipped = ((e.directions & FORWARD) << 1) | ((e.directions & BACKWARD) >> 1);
            (e.b, e.a, flipped)
        };
        *merged.entry((a, b, e.class)).or_insert(0) |= dirs;
    }
    let mut edges: Vec<Edge> = merged
        .into_iter()
        .map(|((a, b, class), directions)| Edge {
            a,
            b,
            class,
            directions,
        })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b, e.class));
    Canonical {
        edges,
        dropped_self_edges,
    }
}

/// Canonical set of typed edges over an item table.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    ids: Vec<String>,
    edges: Vec<Edge>,
    dropped_self_edges: usize,
}

impl RelationGraph {
    /// Builds a graph over `ids`; endpoints index into `ids`.
    pub fn new(ids: Vec<String>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let canon = canonicalize(edges);
        if let Some(e) = canon.edges.iter().find(|e| e.b as usize >= ids.len()) {
            return Err(Error::invalid(format!("edge endpoint {} out of range", e.b)));
        }
        Ok(Self {
            ids,
            edges: canon.edges,
            dropped_self_edges: canon.dropped_self_edges,
        })
    }

    /// Reads an edge file, keeping only edges whose class is in `classes`
    /// (all classes when empty). With `features`, endpoints are validated
    /// against and indexed by the feature matrix; otherwise items are
    /// numbered in first-seen order.
    pub fn load(
        path: impl AsRef<Path>,
        classes: &[RelationClass],
        features: Option<&FeatureMatrix>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ids: Vec<String> = features.map(|f| f.ids().to_vec()).unwrap_or_default();
        let mut local: HashMap<String, u32> = HashMap::new();
        let mut raw = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected `<src>\\t<dst>\\t<class>`, found {} fields", fields.len()),
                ));
            }
            let class: RelationClass = fields[2]
                .trim()
                .parse()
                .map_err(|e: Error| Error::parse(path, lineno, e.to_string()))?;
            if !classes.is_empty() && !classes.contains(&class) {
                continue;
            }
            let mut resolve = |id: &str| -> Result<u32> {
                match features {
                    Some(f) => f.index_of(id).map(|i| i as u32).ok_or_else(|| {
                        Error::parse(path, lineno, format!("endpoint `{id}` has no features"))
                    }),
                    None => Ok(*local.entry(id.to_string()).or_insert_with(|| {
                        ids.push(id.to_string());
                        (ids.len() - 1) as u32
                    })),
                }
            };
            let src = resolve(fields[0])?;
            let dst = resolve(fields[1])?;
            raw.push(Edge::observed(src, dst, class));
        }
        Self::new(ids, raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for e in &self.edges {
                let (src, dst) = if e.directions == BACKWARD {
                    (e.b, e.a)
                } else {
                    (e.a, e.b)
                };
                writeln!(w, "{}\t{}\t{}", self.ids[src as usize], self.ids[dst as usize], e.class)?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_items(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn dropped_self_edges(&self) -> usize {
        self.dropped_self_edges
    }

    /// Keeps only edges of the given classes.
    pub fn filter(&self, classes: &[RelationClass]) -> Self {
        Self {
            ids: self.ids.clone(),
            edges: self
                .edges
                .iter()
                .filter(|e| classes.contains(&e.class))
                .copied()
                .collect(),
            dropped_self_edges: self.dropped_self_edges,
        }
    }

    /// Distinct unordered pairs regardless of class, sorted.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = self.edges.iter().map(|e| (e.a, e.b)).collect();
        pairs.dedup();
        pairs
    }
}
