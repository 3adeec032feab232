use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::optimizer::{Method, OptimizerConfig};
use crate::error::{Error, Result};
use crate::model::{MetricKind, Normalization};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: MetricKind,
    /// Style dimension K. Ignored for weighted nearest neighbor.
    pub rank: usize,
    pub max_iterations: usize,
    /// Relative log-likelihood change below which training stops.
    pub tolerance: f64,
    pub optimizer: Method,
    /// Initial step of every gradient-ascent line search.
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of the initial Y entries; `None` means 1/√F.
    pub init_scale: Option<f64>,
    pub normalization: Normalization,
    /// Initial threshold; `None` means the mean initial distance over up to
    /// 1000 training pairs.
    pub initial_threshold: Option<f64>,
    /// Worker threads, 0 for rayon's default.
    pub threads: usize,
    /// Fixed-order reduction. Turning it off trades bit reproducibility for
    /// a slightly faster unordered reduction.
    pub deterministic: bool,
    /// Coefficient λ of the penalty −λ‖Y‖² (or −λ‖w‖²).
    pub regularization: f64,
    /// Keep user weights fixed during personalized training.
    pub freeze_user_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: MetricKind::LowRank,
            rank: 10,
            max_iterations: 1000,
            tolerance: 1e-8,
            optimizer: Method::QuasiNewton,
            learning_rate: 1.0,
            seed: 0,
            init_scale: None,
            normalization: Normalization::None,
            initial_threshold: None,
            threads: 0,
            deterministic: true,
            regularization: 0.0,
            freeze_user_weights: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("bad value `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0) {
                return Err(Error::invalid("init scale must be positive"));
            }
        }
        if let Some(c) = self.initial_threshold {
            if !c.is_finite() {
                return Err(Error::invalid("initial threshold must be finite"));
            }
        }
        if !(self.regularization >= 0.0) {
            return Err(Error::invalid("regularization must be nonnegative"));
        }
        Ok(())
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kind" => self.kind = value.parse()?,
            "rank" => self.rank = parse_num(key, value)?,
            "max_iterations" => self.max_iterations = parse_num(key, value)?,
            "tolerance" => self.tolerance = parse_num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "init_scale" => self.init_scale = Some(parse_num(key, value)?),
            "normalization" => self.normalization = value.parse()?,
            "initial_threshold" => self.initial_threshold = Some(parse_num(key, value)?),
            "threads" => self.threads = parse_num(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "regularization" => self.regularization = parse_num(key, value)?,
            "freeze_user_weights" => self.freeze_user_weights = parse_bool(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, n + 1, "expected `key = value`"))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text, path)?;
        Ok(config)
    }

    /// Canonical `key = value` rendering; `load` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", self.kind);
        let _ = writeln!(s, "rank = {}", self.rank);
        let _ = writeln!(s, "max_iterations = {}", self.max_iterations);
        let _ = writeln!(s, "tolerance = {:e}", self.tolerance);
        let _ = writeln!(s, "optimizer = {}", self.optimizer.as_str());
        let _ = writeln!(s, "learning_rate = {:e}", self.learning_rate);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(v) = self.init_scale {
            let _ = writeln!(s, "init_scale = {v:e}");
        }
        let _ = writeln!(s, "normalization = {}", self.normalization.as_str());
        if let Some(v) = self.initial_threshold {
            let _ = writeln!(s, "initial_threshold = {v:e}");
        }
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        let _ = writeln!(s, "regularization = {:e}", self.regularization);
        let _ = writeln!(s, "freeze_user_weights = {}", self.freeze_user_weights);
        s
    }

    /// Hex SHA-256 of the canonical rendering minus `threads`, which does not
    /// affect results in deterministic mode. 16 characters.
    pub fn digest(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("threads "))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    pub(crate) fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            method: self.optimizer,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            learning_rate: self.learning_rate,
            ..OptimizerConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let config = TrainConfig {
            kind: MetricKind::Personalized,
            rank: 4,
            tolerance: 1e-6,
            init_scale: Some(0.25),
            initial_threshold: Some(-1.5),
            optimizer: Method::GradientAscent,
            normalization: Normalization::L2Unit,
            deterministic: false,
            freeze_user_weights: true,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        back.apply_text(&config.to_text(), Path::new("cfg")).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.digest(), config.digest());
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = TrainConfig::default();
        let err = c.apply_text("# ok\nrank = 3\nbogus = 1\n", Path::new("cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(c.apply_text("rank 3", Path::new("cfg")).is_err());
        assert_eq!(c.rank, 3);
    }

    #[test]
    fn validation() {
        let bad = [
            TrainConfig { rank: 0, ..Default::default() },
            TrainConfig { tolerance: 0.0, ..Default::default() },
            TrainConfig { init_scale: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn digest_ignores_threads() {
        let a = TrainConfig::default();
        let b = TrainConfig { threads: 7, ..Default::default() };
        let c = TrainConfig { seed: 1, ..Default::default() };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
