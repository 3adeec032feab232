//! Loading, validating and persisting items, edges, user triples and
//! categories. Ids are opaque strings mapped to dense indices at load time.

mod categories;
mod features;
mod graph;
mod triples;

pub use categories::CategoryMap;
pub use features::FeatureMatrix;
pub use graph::{canonicalize, Canonical, Edge, RelationClass, RelationGraph, BACKWARD, FORWARD};
pub use triples::{Triple, UserTripleSet};
