//! Trained metric models and the model file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "SMM1" | u32 version | u8 kind | u8 normalization
//! u64 F | u64 K | f64 c | u64 seed | u32 len + UTF-8 config digest
//! u64 rows | u64 cols | rows*cols f64        (w as 1×F, or Y as F×K)
//! u8 has_users [ u64 U | U × (u32 len + UTF-8 id) | U*K f64 ]
//! ```

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::catalog::FeatureMatrix;
use crate::error::{check_dim, Error, Result};
use crate::metric::{style_sq_dist, weighted_sq_dist, Projection, UserWeights};

const MAGIC: &[u8; 4] = b"SMM1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    WeightedNn,
    LowRank,
    Personalized,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::WeightedNn => "weighted_nn",
            MetricKind::LowRank => "low_rank",
            MetricKind::Personalized => "personalized",
        }
    }

    fn code(self) -> u8 {
        match self {
            MetricKind::WeightedNn => 0,
            MetricKind::LowRank => 1,
            MetricKind::Personalized => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MetricKind::WeightedNn),
            1 => Ok(MetricKind::LowRank),
            2 => Ok(MetricKind::Personalized),
            other => Err(Error::Model(format!("unknown metric kind code {other}"))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted_nn" | "wnn" => Ok(MetricKind::WeightedNn),
            "low_rank" => Ok(MetricKind::LowRank),
            "personalized" => Ok(MetricKind::Personalized),
            other => Err(Error::invalid(format!("unknown metric kind `{other}`"))),
        }
    }
}

/// Feature preprocessing applied before any distance is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    L2Unit,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::L2Unit => "l2_unit",
        }
    }

    pub fn apply<'a>(self, features: &'a FeatureMatrix) -> Cow<'a, FeatureMatrix> {
        match self {
            Normalization::None => Cow::Borrowed(features),
            Normalization::L2Unit => Cow::Owned(features.l2_normalized()),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "l2_unit" => Ok(Normalization::L2Unit),
            other => Err(Error::invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Per-user nonnegative style weights, one row of length K per user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    rank: usize,
    weights: Vec<f64>,
}

impl UserTable {
    pub fn new(ids: Vec<String>, rank: usize, weights: Vec<f64>) -> Result<Self> {
        check_dim(ids.len() * rank, weights.len())?;
        UserWeights::new(weights.clone())?;
        let mut index = HashMap::with_capacity(ids.len());
        for (u, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), u).is_some() {
                return Err(Error::invalid(format!("duplicate user id `{id}`")));
            }
        }
        Ok(Self {
            ids,
            index,
            rank,
            weights,
        })
    }

    /// Every user weighted by all-ones (the unpersonalized metric).
    pub fn ones(ids: Vec<String>, rank: usize) -> Result<Self> {
        let n = ids.len();
        Self::new(ids, rank, vec![1.0; n * rank])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.weights[u * self.rank..(u + 1) * self.rank]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

/// The learned parameters of a distance.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// Per-feature weights `w` (length F).
    Diagonal(Vec<f64>),
    /// F×K projection `Y`.
    LowRank(Projection),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    pub seed: u64,
    pub config_digest: String,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    kind: MetricKind,
    transform: Transform,
    threshold: f64,
    users: Option<UserTable>,
    pub meta: ModelMeta,
}

impl MetricModel {
    pub fn weighted_nn(w: Vec<f64>, threshold: f64) -> Result<Self> {
        Self::build(MetricKind::WeightedNn, Transform::Diagonal(w), threshold, None)
    }

    pub fn low_rank(y: Projection, threshold: f64) -> Result<Self> {
        Self::build(MetricKind::LowRank, Transform::LowRank(y), threshold, None)
    }

    pub fn personalized(y: Projection, threshold: f64, users: UserTable) -> Result<Self> {
        Self::build(MetricKind::Personalized, Transform::LowRank(y), threshold, Some(users))
    }

    fn build(kind: MetricKind, transform: Transform, threshold: f64, users: Option<UserTable>) -> Result<Self> {
        let model = Self {
            kind,
            transform,
            threshold,
            users,
            meta: ModelMeta::default(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::Model("threshold is not finite".into()));
        }
        let params = match &self.transform {
            Transform::Diagonal(w) => w.as_slice(),
            Transform::LowRank(y) => y.data(),
        };
        if params.is_empty() {
            return Err(Error::Model("empty transform".into()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("transform has non-finite entries".into()));
        }
        match (self.kind, &self.transform, &self.users) {
            (MetricKind::WeightedNn, Transform::Diagonal(_), None) => Ok(()),
            (MetricKind::LowRank, Transform::LowRank(_), None) => Ok(()),
            (MetricKind::Personalized, Transform::LowRank(y), Some(users)) => {
                if users.rank != y.rank() {
                    return Err(Error::Dimension {
                        expected: y.rank(),
                        got: users.rank,
                    });
                }
                Ok(())
            }
            (kind, _, _) => Err(Error::Model(format!("parameters inconsistent with kind {kind}"))),
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        match &self.transform {
            Transform::Diagonal(w) => w.len(),
            Transform::LowRank(y) => y.dim(),
        }
    }

    /// Style dimension K (F for weighted nearest neighbor).
    pub fn rank(&self) -> usize {
        match &self.transform {
            Transform::Diagonal(w) => w.len(),
            Transform::LowRank(y) => y.rank(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub(crate) fn set_threshold(&mut self, c: f64) {
        self.threshold = c;
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub(crate) fn transform_mut(&mut self) -> &mut Transform {
        &mut self.transform
    }

    pub fn projection(&self) -> Option<&Projection> {
        match &self.transform {
            Transform::LowRank(y) => Some(y),
            Transform::Diagonal(_) => None,
        }
    }

    pub fn users(&self) -> Option<&UserTable> {
        self.users.as_ref()
    }

    pub(crate) fn users_mut(&mut self) -> Option<&mut UserTable> {
        self.users.as_mut()
    }

    /// Applies the model's feature normalization and checks F.
    pub fn prepare<'a>(&self, features: &'a FeatureMatrix) -> Result<Cow<'a, FeatureMatrix>> {
        check_dim(self.dim(), features.dim())?;
        Ok(self.meta.normalization.apply(features))
    }

    /// Precomputes whatever is needed to score pairs of `features`.
    pub fn scorer<'a>(&'a self, features: &'a FeatureMatrix) -> Result<Scorer<'a>> {
        let features = self.prepare(features)?;
        let styles = self.projection().map(|y| {
            let k = y.rank();
            let mut s = vec![0.0; features.len() * k];
            for (i, out) in s.chunks_exact_mut(k).enumerate() {
                y.embed_into(features.row(i), out);
            }
            s
        });
        Ok(Scorer {
            model: self,
            features,
            styles,
        })
    }

    /// Hex SHA-256 of the serialized model, truncated to 16 characters.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_bytes());
        hex::encode(&hash[..8])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(match self.meta.normalization {
            Normalization::None => 0,
            Normalization::L2Unit => 1,
        });
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.rank() as u64).to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_str(&mut out, &self.meta.config_digest);
        let (rows, cols, params) = match &self.transform {
            Transform::Diagonal(w) => (1, w.len(), w.as_slice()),
            Transform::LowRank(y) => (y.dim(), y.rank(), y.data()),
        };
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        params.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        match &self.users {
            None => out.push(0),
            Some(users) => {
                out.push(1);
                out.extend_from_slice(&(users.len() as u64).to_le_bytes());
                users.ids.iter().for_each(|id| put_str(&mut out, id));
                users.weights.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(Error::Model("missing SMM1 magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let kind = MetricKind::from_code(r.u8()?)?;
        let normalization = match r.u8()? {
            0 => Normalization::None,
            1 => Normalization::L2Unit,
            other => return Err(Error::Model(format!("unknown normalization code {other}"))),
        };
        let dim = r.u64()? as usize;
        let rank = r.u64()? as usize;
        let threshold = r.f64()?;
        let seed = r.u64()?;
        let config_digest = r.string()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let (want_rows, want_cols) = match kind {
            MetricKind::WeightedNn => (1, dim),
            _ => (dim, rank),
        };
        if rows != want_rows || cols != want_cols {
            return Err(Error::Model(format!(
                "parameter block is {rows}×{cols} but header declares {want_rows}×{want_cols}"
            )));
        }
        if kind == MetricKind::WeightedNn && rank != dim {
            return Err(Error::Model(format!("weighted_nn model with K={rank} != F={dim}")));
        }
        let params = r.f64s(rows.checked_mul(cols).ok_or_else(|| Error::Model("size overflow".into()))?)?;
        let transform = match kind {
            MetricKind::WeightedNn => Transform::Diagonal(params),
            _ => Transform::LowRank(Projection::new(dim, rank, params)?),
        };
        let users = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u64()? as usize;
                let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
                let weights = r.f64s(n * rank)?;
                Some(UserTable::new(ids, rank, weights)?)
            }
            other => return Err(Error::Model(format!("bad user-table flag {other}"))),
        };
        if !r.buf.is_empty() {
            return Err(Error::Model(format!("{} trailing bytes", r.buf.len())));
        }
        let mut model = Self::build(kind, transform, threshold, users)?;
        model.meta = ModelMeta {
            seed,
            config_digest,
            normalization,
        };
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Pair distances of one model over one feature matrix. Style vectors are
/// computed once up front.
pub struct Scorer<'a> {
    model: &'a MetricModel,
    features: Cow<'a, FeatureMatrix>,
    styles: Option<Vec<f64>>,
}

impl Scorer<'_> {
    pub fn model(&self) -> &MetricModel {
        self.model
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// Style vector of item `i`, for models with a projection.
    pub fn style(&self, i: usize) -> Option<&[f64]> {
        let k = self.model.rank();
        self.styles.as_ref().map(|s| &s[i * k..(i + 1) * k])
    }

    /// Distance between items `i` and `j`, personalized by user index `user`
    /// when the model has a user table. Without a user, personalized models
    /// fall back to the global style distance.
    pub fn distance(&self, i: usize, j: usize, user: Option<usize>) -> f64 {
        match &self.model.transform {
            Transform::Diagonal(w) => weighted_sq_dist(w, self.features.row(i), self.features.row(j)),
            Transform::LowRank(_) => {
                let weights = match (user, &self.model.users) {
                    (Some(u), Some(table)) => Some(table.row(u)),
                    _ => None,
                };
                style_sq_dist(self.style(i).unwrap(), self.style(j).unwrap(), weights)
            }
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Model("truncated file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Model("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Model("invalid UTF-8".into()))
    }
}
