//! Optimal isolation trees: an LSH tree is cut at a size threshold and the
//! resulting subtrees are merged bottom-up by greedy minimum-distortion
//! agglomeration, with the arity of each merge drawn from a branching law.
//!
//! Below the cut the tree keeps its LSH routers; above it every node routes
//! by nearest learned centre.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DataMatrix, Subsample};
use crate::error::{Error, Result};
use crate::lsh_tree::{build_lsh_tree, LshParams};
use crate::theory::BranchingDistribution;
use crate::tree::{NodeKind, TreeNode};

/// Largest merge arity accepted by [`build_optimal_tree`]. The exhaustive
/// subset scan costs `C(pool, v)` distortion evaluations per merge.
pub const MAX_LEARNED_BRANCHING: u32 = 8;

/// Subset counts above this are scanned in parallel.
const PARALLEL_SCAN_THRESHOLD: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centre: Vec<f64>,
    pub size: usize,
    pub node: TreeNode,
}

/// Initial clusters taken from the highest LSH nodes holding at most
/// `epsilon` instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSet {
    pub clusters: Vec<Cluster>,
    pub epsilon: usize,
}

fn mean_of(data: &DataMatrix, members: &[usize]) -> Vec<f64> {
    let mut centre = vec![0.0; data.n_cols()];
    for &i in members {
        for (c, x) in centre.iter_mut().zip(data.row(i)) {
            *c += x;
        }
    }
    let n = members.len() as f64;
    centre.iter_mut().for_each(|c| *c /= n);
    centre
}

/// Depth-first cut of `tree` at `epsilon`. Leaves larger than `epsilon`
/// (unsplittable duplicates or depth-capped nodes) are kept as clusters.
pub fn epsilon_cut(tree: TreeNode, data: &DataMatrix, sub: &Subsample, epsilon: usize) -> Result<CutSet> {
    let psi = sub.size();
    if epsilon < 1 || epsilon > psi {
        return Err(Error::InvalidConfig(format!(
            "cut threshold must lie in [1, {psi}], got {epsilon}"
        )));
    }
    if tree.size != psi {
        return Err(Error::InvalidConfig(format!(
            "tree holds {} instances but the subsample has {psi}",
            tree.size
        )));
    }
    let mut clusters = Vec::new();
    cut_node(tree, data, sub.indices.clone(), epsilon, &mut clusters)?;
    Ok(CutSet { clusters, epsilon })
}

fn cut_node(
    mut node: TreeNode,
    data: &DataMatrix,
    members: Vec<usize>,
    epsilon: usize,
    out: &mut Vec<Cluster>,
) -> Result<()> {
    if node.size <= epsilon || node.is_leaf() {
        out.push(Cluster {
            centre: mean_of(data, &members),
            size: node.size,
            node,
        });
        return Ok(());
    }
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); node.children.len()];
    for i in members {
        let k = node.route(data.row(i))?.ok_or_else(|| {
            Error::InvalidConfig(format!("training row {i} does not route to any child"))
        })?;
        parts[k].push(i);
    }
    for (child, part) in std::mem::take(&mut node.children).into_iter().zip(parts) {
        cut_node(child, data, part, epsilon, out)?;
    }
    Ok(())
}

fn check_pool(clusters: &[Cluster]) -> Result<usize> {
    let dim = clusters
        .first()
        .ok_or_else(|| Error::Domain("at least one cluster is required".into()))?
        .centre
        .len();
    for c in clusters {
        TreeNode::check_dim(dim, c.centre.len())?;
    }
    Ok(dim)
}

/// Size-weighted mean of the cluster centres.
pub fn merged_centre(clusters: &[Cluster]) -> Result<Vec<f64>> {
    let dim = check_pool(clusters)?;
    let idx: Vec<usize> = (0..clusters.len()).collect();
    let mut centre = vec![0.0; dim];
    merged_centre_into(clusters, &idx, &mut centre);
    Ok(centre)
}

/// `sum_i ||mu_i - mu|| * n_i` where `mu` is the merged centre.
pub fn distortion(clusters: &[Cluster]) -> Result<f64> {
    let dim = check_pool(clusters)?;
    let idx: Vec<usize> = (0..clusters.len()).collect();
    let mut buf = vec![0.0; dim];
    Ok(subset_distortion(clusters, &idx, &mut buf))
}

fn merged_centre_into(pool: &[Cluster], subset: &[usize], centre: &mut [f64]) {
    centre.iter_mut().for_each(|c| *c = 0.0);
    let mut total = 0usize;
    for &i in subset {
        let n = pool[i].size as f64;
        for (c, x) in centre.iter_mut().zip(&pool[i].centre) {
            *c += x * n;
        }
        total += pool[i].size;
    }
    let total = total as f64;
    centre.iter_mut().for_each(|c| *c /= total);
}

fn subset_distortion(pool: &[Cluster], subset: &[usize], buf: &mut [f64]) -> f64 {
    merged_centre_into(pool, subset, buf);
    subset
        .iter()
        .map(|&i| {
            let sq: f64 = pool[i]
                .centre
                .iter()
                .zip(buf.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq.sqrt() * pool[i].size as f64
        })
        .sum()
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic
/// order. Returns false after the last one.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exhaustive search for the `v` clusters whose merge has least distortion.
///
/// Ties go to the lexicographically smallest index tuple.
pub fn best_merge(pool: &[Cluster], v: usize) -> Result<Vec<usize>> {
    check_pool(pool)?;
    if v < 2 {
        return Err(Error::Domain(format!("merge arity must be >= 2, got {v}")));
    }
    if pool.len() <= v {
        return Err(Error::Domain(format!(
            "pool of {} clusters is too small for a {v}-way selective merge",
            pool.len()
        )));
    }
    let candidates = pool.len() - v + 1;
    let per_first = |first| best_with_first_offset(pool, v, first);
    let best = if binomial(pool.len(), v) > PARALLEL_SCAN_THRESHOLD {
        (0..candidates)
            .into_par_iter()
            .filter_map(per_first)
            .reduce_with(pick_better)
    } else {
        (0..candidates).filter_map(per_first).reduce(pick_better)
    };
    Ok(best.expect("pool larger than v has at least one subset").1)
}

/// Minimum-distortion subset among those whose smallest index is `first`,
/// scanned in lexicographic order.
fn best_with_first_offset(pool: &[Cluster], v: usize, first: usize) -> Option<(f64, Vec<usize>)> {
    let n = pool.len();
    let rest = v - 1;
    let span = n - first - 1;
    if span < rest {
        return None;
    }
    let mut buf = vec![0.0; pool[0].centre.len()];
    let mut tail: Vec<usize> = (0..rest).collect();
    let mut subset = vec![0; v];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        subset[0] = first;
        for (s, t) in subset[1..].iter_mut().zip(&tail) {
            *s = first + 1 + t;
        }
        let d = subset_distortion(pool, &subset, &mut buf);
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, subset.clone()));
        }
        if !next_combination(&mut tail, span) {
            break;
        }
    }
    best
}

/// Reduction that keeps the lower distortion, then the smaller index tuple.
fn pick_better(a: (f64, Vec<usize>), b: (f64, Vec<usize>)) -> (f64, Vec<usize>) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Index of the nearest centre; ties go to the smaller index.
pub fn learned_route(centres: &[Vec<f64>], x: &[f64]) -> Result<usize> {
    let first = centres
        .first()
        .ok_or_else(|| Error::Domain("router has no centres".into()))?;
    TreeNode::check_dim(first.len(), x.len())?;
    let mut best = (0, f64::INFINITY);
    for (k, c) in centres.iter().enumerate() {
        let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

fn merge(parts: Vec<Cluster>) -> Cluster {
    let dim = parts[0].centre.len();
    let idx: Vec<usize> = (0..parts.len()).collect();
    let mut centre = vec![0.0; dim];
    merged_centre_into(&parts, &idx, &mut centre);
    let size = parts.iter().map(|c| c.size).sum();
    let (centres, children) = parts.into_iter().map(|c| (c.centre, c.node)).unzip();
    Cluster {
        centre,
        size,
        node: TreeNode {
            kind: NodeKind::Learned { centres },
            depth: 0,
            size,
            children,
        },
    }
}

/// Pool state before one merge, recorded by [`build_optimal_tree_traced`].
#[derive(Debug, Clone, Serialize)]
pub struct MergeStep {
    pub centres: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub v: u32,
    /// Indices merged, or `None` when the remaining pool was merged into the
    /// root.
    pub chosen: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct OptTreeTrace {
    pub initial_clusters: usize,
    pub steps: Vec<MergeStep>,
    /// Centre of the final (root) cluster.
    pub root_centre: Vec<f64>,
}

fn check_distribution(dist: BranchingDistribution) -> Result<()> {
    match dist {
        BranchingDistribution::Finite23 => Ok(()),
        BranchingDistribution::Fixed(v) if (2..=MAX_LEARNED_BRANCHING).contains(&v) => Ok(()),
        other => Err(Error::InvalidConfig(format!(
            "learned merging supports finite23 or fixed:2..={MAX_LEARNED_BRANCHING}, got {other}"
        ))),
    }
}

/// Builds an optimal isolation tree over the subsample.
pub fn build_optimal_tree<R: Rng + ?Sized>(
    data: &DataMatrix,
    sub: &Subsample,
    epsilon: usize,
    dist: BranchingDistribution,
    lsh: &LshParams,
    rng: &mut R,
) -> Result<TreeNode> {
    build(data, sub, epsilon, dist, lsh, rng, None).map(|(tree, _)| tree)
}

/// As [`build_optimal_tree`], also returning every pool state and merge.
pub fn build_optimal_tree_traced<R: Rng + ?Sized>(
    data: &DataMatrix,
    sub: &Subsample,
    epsilon: usize,
    dist: BranchingDistribution,
    lsh: &LshParams,
    rng: &mut R,
) -> Result<(TreeNode, OptTreeTrace)> {
    let mut steps = Vec::new();
    let (tree, (initial_clusters, root_centre)) =
        build(data, sub, epsilon, dist, lsh, rng, Some(&mut steps))?;
    Ok((
        tree,
        OptTreeTrace {
            initial_clusters,
            steps,
            root_centre,
        },
    ))
}

fn build<R: Rng + ?Sized>(
    data: &DataMatrix,
    sub: &Subsample,
    epsilon: usize,
    dist: BranchingDistribution,
    lsh: &LshParams,
    rng: &mut R,
    mut trace: Option<&mut Vec<MergeStep>>,
) -> Result<(TreeNode, (usize, Vec<f64>))> {
    check_distribution(dist)?;
    if sub.size() == 0 {
        return Err(Error::InvalidConfig("empty subsample".into()));
    }
    let tree = build_lsh_tree(data, sub, lsh, rng);
    let mut pool = epsilon_cut(tree, data, sub, epsilon)?.clusters;
    let initial = pool.len();
    let sampler = dist.sampler();

    while pool.len() > 1 {
        let v = sampler.sample(rng);
        let record = |chosen: Option<Vec<usize>>, pool: &[Cluster]| MergeStep {
            centres: pool.iter().map(|c| c.centre.clone()).collect(),
            sizes: pool.iter().map(|c| c.size).collect(),
            v,
            chosen,
        };
        if pool.len() <= v as usize {
            if let Some(t) = trace.as_deref_mut() {
                t.push(record(None, &pool));
            }
            let root = merge(std::mem::take(&mut pool));
            pool.push(root);
            break;
        }
        let chosen = best_merge(&pool, v as usize)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(record(Some(chosen.clone()), &pool));
        }
        let mut parts: Vec<Cluster> = chosen.iter().rev().map(|&i| pool.remove(i)).collect();
        parts.reverse();
        pool.push(merge(parts));
    }

    let root = pool.pop().expect("pool never empties");
    let mut node = root.node;
    node.restamp_depth(0);
    Ok((node, (initial, root.centre)))
}
