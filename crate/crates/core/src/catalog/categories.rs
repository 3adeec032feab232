use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Item id to category id. Lookups of unmapped items fail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    map: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self {
            map: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((item, cat)) = line.split_once('\t') else {
                return Err(Error::parse(path, lineno + 1, "expected `<item_id>\\t<category_id>`"));
            };
            if map.insert(item.to_string(), cat.trim().to_string()).is_some() {
                return Err(Error::parse(path, lineno + 1, format!("item `{item}` categorized twice")));
            }
        }
        Ok(Self { map })
    }

    pub fn category(&self, item: &str) -> Result<&str> {
        self.map
            .get(item)
            .map(String::as_str)
            .ok_or_else(|| Error::Uncategorized(item.to_string()))
    }

    /// Items of `category`, in id order.
    pub fn members<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.map
            .iter()
            .filter(move |(_, c)| c.as_str() == category)
            .map(|(i, _)| i.as_str())
    }

    /// Distinct categories in id order.
    pub fn categories(&self) -> Vec<&str> {
        let mut cats: Vec<&str> = self.map.values().map(String::as_str).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
