//! Ensembles of isolation trees and anomaly scoring.
//!
//! Scores follow the usual isolation-forest normalisation
//! `s(x) = 2^(-E[h(x)] / c(psi))`. Path lengths are measured in bits: an edge
//! out of a node with `b` children contributes `log2(b)`, so a binary edge
//! counts 1 and trees of different arity stay comparable.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{subsample, DataMatrix, MinMaxScaler};
use crate::error::{Error, Result};
use crate::lsh_tree::{build_lsh_tree, LshParams};
use crate::opt_tree::{build_optimal_tree, MAX_LEARNED_BRANCHING};
use crate::theory::{BranchingDistribution, E};
use crate::tree::TreeNode;

pub const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Cut threshold used for small inputs (`psi * m <= 1e5`): `round(e^4)`.
pub const SMALL_DATA_EPSILON: usize = 55;
/// Cut threshold used for large inputs: `round(e^6)`.
pub const LARGE_DATA_EPSILON: usize = 403;
const SMALL_DATA_LIMIT: usize = 100_000;

/// Cut-threshold setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Epsilon {
    /// 55 for small inputs, 403 for large ones.
    #[default]
    Auto,
    /// The effective sample size: no learning.
    Psi,
    Value(usize),
}

impl Epsilon {
    /// Concrete threshold for a tree over `psi` rows of `m` features,
    /// clamped to `psi`.
    pub fn resolve(self, psi: usize, m: usize) -> usize {
        let raw = match self {
            Epsilon::Auto => {
                if psi.saturating_mul(m) <= SMALL_DATA_LIMIT {
                    SMALL_DATA_EPSILON
                } else {
                    LARGE_DATA_EPSILON
                }
            }
            Epsilon::Psi => psi,
            Epsilon::Value(k) => k,
        };
        raw.clamp(1, psi.max(1))
    }

    /// `round(e^k)`.
    pub fn power_of_e(k: u32) -> usize {
        E.powi(k as i32).round() as usize
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Auto => f.write_str("auto"),
            Epsilon::Psi => f.write_str("psi"),
            Epsilon::Value(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    /// Accepts `auto`, `psi`, a positive integer, or `e2` through `e8`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let value = match s.as_str() {
            "auto" => return Ok(Epsilon::Auto),
            "psi" => return Ok(Epsilon::Psi),
            token if token.starts_with('e') => match token[1..].parse::<u32>() {
                Ok(k) if (2..=8).contains(&k) => Epsilon::power_of_e(k),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "cut threshold token '{token}' must be e2..e8"
                    )))
                }
            },
            number => number.parse::<usize>().map_err(|_| {
                Error::InvalidConfig(format!("cut threshold '{number}' is not an integer, 'auto', 'psi' or e2..e8"))
            })?,
        };
        if value == 0 {
            return Err(Error::InvalidConfig("cut threshold must be >= 1, got 0".into()));
        }
        Ok(Epsilon::Value(value))
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// LSH trees refined by learned merging above the cut.
    #[default]
    #[serde(rename = "opt-iforest")]
    OptIForest,
    /// Plain LSH trees (equivalent to a cut at the sample size).
    LshOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::OptIForest => f.write_str("opt-iforest"),
            Mode::LshOnly => f.write_str("lsh-only"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opt-iforest" | "optiforest" | "opt" => Ok(Mode::OptIForest),
            "lsh-only" | "lsh" => Ok(Mode::LshOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected opt-iforest or lsh-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub sample_size: usize,
    pub epsilon: Epsilon,
    pub distribution: BranchingDistribution,
    pub seed: u64,
    pub mode: Mode,
    pub lsh: LshParams,
    /// Min-max scale features before building trees.
    pub minmax: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            sample_size: 512,
            epsilon: Epsilon::Auto,
            distribution: BranchingDistribution::Finite23,
            seed: 42,
            mode: Mode::OptIForest,
            lsh: LshParams::default(),
            minmax: false,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees < 1 {
            return Err(Error::InvalidConfig("tree count must be >= 1".into()));
        }
        if self.sample_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "sample size must be >= 2, got {}",
                self.sample_size
            )));
        }
        if let Epsilon::Value(k) = self.epsilon {
            if k < 1 || k > self.sample_size {
                return Err(Error::InvalidConfig(format!(
                    "cut threshold must lie in [1, {}], got {k}",
                    self.sample_size
                )));
            }
        }
        if self.mode == Mode::OptIForest {
            match self.distribution {
                BranchingDistribution::Finite23 => {}
                BranchingDistribution::Fixed(v) if (2..=MAX_LEARNED_BRANCHING).contains(&v) => {}
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "distribution {other} is not supported for learned merging \
                         (use finite23 or fixed:2..={MAX_LEARNED_BRANCHING})"
                    )))
                }
            }
        }
        if !(self.lsh.width_divisor.is_finite() && self.lsh.width_divisor > 0.0) {
            return Err(Error::InvalidConfig("LSH width divisor must be > 0".into()));
        }
        Ok(())
    }
}

/// `c(k) = 2 H(k-1) - 2 (k-1) / k` with `H(i) ~ ln(i) + gamma`; `c(1) = 0`
/// and `c(2) = 1`.
pub fn average_path_length(k: usize) -> f64 {
    match k {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let k = k as f64;
            2.0 * ((k - 1.0).ln() + EULER_GAMMA) - 2.0 * (k - 1.0) / k
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub config: ForestConfig,
    pub psi_effective: usize,
    pub epsilon_used: usize,
    pub n_features: usize,
    pub c_psi: f64,
    pub scaler: Option<MinMaxScaler>,
}

/// Random stream for tree `index`: the seed selects the key, the tree index
/// the stream, so trees are independent of build order.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl Forest {
    /// Builds `config.trees` trees in parallel on the current rayon pool.
    pub fn fit(data: &DataMatrix, config: &ForestConfig) -> Result<Self> {
        config.validate()?;
        let n = data.n_rows();
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }
        let scaler = config.minmax.then(|| MinMaxScaler::fit(data));
        let scaled;
        let data = match &scaler {
            Some(s) => {
                scaled = s.transform(data)?;
                &scaled
            }
            None => data,
        };

        let psi_effective = config.sample_size.min(n);
        let epsilon_used = config.epsilon.resolve(psi_effective, data.n_cols());
        let trees = (0..config.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(config.seed, t);
                let sub = subsample(data, config.sample_size, &mut rng)?;
                match config.mode {
                    Mode::LshOnly => Ok(build_lsh_tree(data, &sub, &config.lsh, &mut rng)),
                    Mode::OptIForest => build_optimal_tree(
                        data,
                        &sub,
                        epsilon_used,
                        config.distribution,
                        &config.lsh,
                        &mut rng,
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            trees,
            config: config.clone(),
            psi_effective,
            epsilon_used,
            n_features: data.n_cols(),
            c_psi: average_path_length(psi_effective),
            scaler,
        })
    }

    fn prepare<'a>(&self, x: &'a [f64], buf: &'a mut Vec<f64>) -> Result<&'a [f64]> {
        TreeNode::check_dim(self.n_features, x.len())?;
        match &self.scaler {
            Some(s) => {
                buf.clear();
                buf.extend_from_slice(x);
                s.transform_row(buf);
                Ok(buf)
            }
            None => Ok(x),
        }
    }

    /// Mean path length of `x` over all trees.
    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        let mut buf = Vec::new();
        let x = self.prepare(x, &mut buf)?;
        let total = self
            .trees
            .iter()
            .map(|t| path_length(t, x))
            .sum::<Result<f64>>()?;
        Ok(total / self.trees.len() as f64)
    }

    pub fn score_from_path_length(&self, mean_path: f64) -> f64 {
        2f64.powf(-mean_path / self.c_psi)
    }

    /// Anomaly score in `(0, 1)`; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.mean_path_length(x).map(|h| self.score_from_path_length(h))
    }

    pub fn score_all(&self, data: &DataMatrix) -> Result<Vec<f64>> {
        if !data.is_empty() {
            TreeNode::check_dim(self.n_features, data.n_cols())?;
        }
        (0..data.n_rows())
            .into_par_iter()
            .map(|i| self.score(data.row(i)))
            .collect()
    }
}

/// Bits needed to route `x` to where it is isolated in `tree`.
///
/// Each edge out of a `b`-way node adds `log2(b)`. Reaching a leaf of `k`
/// training instances adds `c(k)`. At an LSH node whose hash value for `x`
/// matches no training bucket, traversal stops and adds `c(size)` of that
/// node.
pub fn path_length(tree: &TreeNode, x: &[f64]) -> Result<f64> {
    let mut node = tree;
    let mut length = 0.0;
    loop {
        match node.route(x)? {
            Some(k) => {
                length += (node.children.len() as f64).log2();
                node = &node.children[k];
            }
            None => return Ok(length + average_path_length(node.size)),
        }
    }
}
