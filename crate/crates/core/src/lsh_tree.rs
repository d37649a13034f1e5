//! Multi-fork isolation trees built from Euclidean LSH functions.
//!
//! Each internal node draws `h(x) = floor((a.x + b) / w)` with `a ~ N(0, I)`
//! and `b ~ U[0, w)`, and sends instances with the same hash value to the
//! same child. The bucket width is rescaled at every node from the spread of
//! the projected values so that a draw produces a handful of buckets at any
//! depth.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Subsample};
use crate::error::Result;
use crate::tree::{NodeKind, TreeNode};

/// Smallest bucket width used by the adaptive rule.
pub const MIN_BUCKET_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2LshFunction {
    pub a: Vec<f64>,
    pub b: f64,
    pub w: f64,
}

impl E2LshFunction {
    pub fn new(a: Vec<f64>, b: f64, w: f64) -> Self {
        Self { a, b, w }
    }

    pub fn project(&self, x: &[f64]) -> Result<f64> {
        TreeNode::check_dim(self.a.len(), x.len())?;
        Ok(dot(&self.a, x))
    }

    pub fn hash(&self, x: &[f64]) -> Result<i64> {
        self.project(x).map(|p| self.hash_projection(p))
    }

    fn hash_projection(&self, p: f64) -> i64 {
        ((p + self.b) / self.w).floor() as i64
    }
}

/// `floor((a.x + b) / w)`.
pub fn lsh_hash(f: &E2LshFunction, x: &[f64]) -> Result<i64> {
    f.hash(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Knobs for [`build_lsh_tree`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshParams {
    /// Bucket width is `(max - min of projections) / width_divisor`. The
    /// default of 2 yields two or three buckets per draw; `v - 1` targets up
    /// to `v` buckets.
    pub width_divisor: f64,
    /// Redraws allowed when every instance lands in one bucket.
    pub max_retries: usize,
    /// Overrides the default height limit of `2 * ceil(log2(psi))`.
    pub depth_cap: Option<usize>,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            width_divisor: 2.0,
            max_retries: 8,
            depth_cap: None,
        }
    }
}

impl LshParams {
    /// Parameters whose draws produce up to `fanout` buckets.
    pub fn with_fanout(fanout: u32) -> Self {
        Self {
            width_divisor: f64::from(fanout.max(2) - 1),
            ..Self::default()
        }
    }
}

pub fn default_depth_cap(psi: usize) -> usize {
    if psi <= 1 {
        0
    } else {
        2 * (usize::BITS - (psi - 1).leading_zeros()) as usize
    }
}

/// Builds an LSH isolation tree over the subsample.
///
/// Recursion stops at single instances, at groups of identical rows, and at
/// the depth cap. If eight redraws all put every instance into one bucket,
/// the node falls back to a binary split at the median projection.
pub fn build_lsh_tree<R: Rng + ?Sized>(
    data: &DataMatrix,
    sub: &Subsample,
    params: &LshParams,
    rng: &mut R,
) -> TreeNode {
    let cap = params
        .depth_cap
        .unwrap_or_else(|| default_depth_cap(sub.size()));
    let builder = Builder {
        data,
        params,
        depth_cap: cap,
    };
    builder.build(sub.indices.clone(), 0, rng)
}

struct Builder<'a> {
    data: &'a DataMatrix,
    params: &'a LshParams,
    depth_cap: usize,
}

impl Builder<'_> {
    fn build<R: Rng + ?Sized>(&self, idx: Vec<usize>, depth: usize, rng: &mut R) -> TreeNode {
        let size = idx.len();
        if size <= 1 || depth >= self.depth_cap || self.all_identical(&idx) {
            return TreeNode::leaf(size, depth);
        }
        let Some((function, groups)) = self.split(&idx, rng) else {
            return TreeNode::leaf(size, depth);
        };
        let mut buckets = Vec::with_capacity(groups.len());
        let mut children = Vec::with_capacity(groups.len());
        for (key, members) in groups {
            buckets.push(key);
            children.push(self.build(members, depth + 1, rng));
        }
        TreeNode {
            kind: NodeKind::Lsh { function, buckets },
            depth,
            size,
            children,
        }
    }

    fn all_identical(&self, idx: &[usize]) -> bool {
        let first = self.data.row(idx[0]);
        idx[1..].iter().all(|&i| self.data.row(i) == first)
    }

    fn split<R: Rng + ?Sized>(
        &self,
        idx: &[usize],
        rng: &mut R,
    ) -> Option<(E2LshFunction, BTreeMap<i64, Vec<usize>>)> {
        let m = self.data.n_cols();
        let mut last = None;
        for _ in 0..=self.params.max_retries {
            let a: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let proj: Vec<f64> = idx.iter().map(|&i| dot(&a, self.data.row(i))).collect();
            let (lo, hi) = min_max(&proj);
            let w = ((hi - lo) / self.params.width_divisor).max(MIN_BUCKET_WIDTH);
            let b = rng.random_range(0.0..w);
            let function = E2LshFunction::new(a, b, w);
            let groups = group_by_hash(&function, idx, &proj);
            if groups.len() >= 2 {
                return Some((function, groups));
            }
            last = Some((function.a, proj));
        }
        let (a, proj) = last?;
        median_split(a, idx, &proj)
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn group_by_hash(f: &E2LshFunction, idx: &[usize], proj: &[f64]) -> BTreeMap<i64, Vec<usize>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (&i, &p) in idx.iter().zip(proj) {
        groups.entry(f.hash_projection(p)).or_default().push(i);
    }
    groups
}

/// Two-bucket hash that separates the projections at the gap nearest their
/// median.
fn median_split(
    a: Vec<f64>,
    idx: &[usize],
    proj: &[f64],
) -> Option<(E2LshFunction, BTreeMap<i64, Vec<usize>>)> {
    let mut sorted = proj.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = sorted.len() / 2;
    let gap = (1..sorted.len())
        .filter(|&k| sorted[k - 1] < sorted[k])
        .min_by_key(|&k| k.abs_diff(half))?;
    let threshold = 0.5 * (sorted[gap - 1] + sorted[gap]);
    let range = sorted[sorted.len() - 1] - sorted[0];
    // Any w wider than the range keeps everything within two adjacent
    // buckets; b places the bucket boundary at the threshold.
    let w = (2.0 * range).max(MIN_BUCKET_WIDTH);
    let b = (w - threshold).rem_euclid(w);
    let function = E2LshFunction::new(a, b, w);
    let groups = group_by_hash(&function, idx, proj);
    (groups.len() >= 2).then_some((function, groups))
}
