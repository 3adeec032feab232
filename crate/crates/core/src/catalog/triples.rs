use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::catalog::FeatureMatrix;
use crate::error::{Error, Result};

/// A co-purchase `(i, j)` by user `u`, all as dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub i: u32,
    pub j: u32,
    pub user: u32,
}

/// Co-purchase triples over a feature matrix's items. Users are numbered in
/// first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTripleSet {
    users: Vec<String>,
    triples: Vec<Triple>,
}

impl UserTripleSet {
    pub fn new(users: Vec<String>, triples: Vec<Triple>) -> Result<Self> {
        for t in &triples {
            if t.i == t.j {
                return Err(Error::invalid(format!("triple with identical items {}", t.i)));
            }
            if t.user as usize >= users.len() {
                return Err(Error::invalid(format!("user index {} out of range", t.user)));
            }
        }
        Ok(Self { users, triples })
    }

    pub fn load(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut users = Vec::new();
        let mut user_index: HashMap<String, u32> = HashMap::new();
        let mut triples = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno, "expected `<item_i>\\t<item_j>\\t<user>`"));
            }
            let item = |id: &str| {
                features
                    .index_of(id)
                    .map(|i| i as u32)
                    .ok_or_else(|| Error::parse(path, lineno, format!("item `{id}` has no features")))
            };
            let (i, j) = (item(fields[0])?, item(fields[1])?);
            if i == j {
                return Err(Error::parse(path, lineno, "triple relates an item to itself"));
            }
            let user = *user_index.entry(fields[2].to_string()).or_insert_with(|| {
                users.push(fields[2].to_string());
                (users.len() - 1) as u32
            });
            triples.push(Triple { i, j, user });
        }
        Ok(Self { users, triples })
    }

    pub fn save(&self, path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for t in &self.triples {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    features.id(t.i as usize),
                    features.id(t.j as usize),
                    self.users[t.user as usize]
                )?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}
