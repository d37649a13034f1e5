//! Ranking metrics, repeated experiments and ablation sweeps.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::forest::{Epsilon, Forest, ForestConfig, Mode};
use crate::lsh_tree::LshParams;
use crate::theory::BranchingDistribution;

pub const DEFAULT_REPEATS: usize = 15;

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Domain(format!("labels must be 0 or 1, got {l}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Probability that a random anomaly outscores a random normal, with ties
/// counted as one half (Mann-Whitney U over mid-ranks).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start + 1 ..= end share their mean.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over distinct score
/// thresholds, highest first.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub runs: usize,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let runs = values.len();
        let mean = values.iter().sum::<f64>() / runs.max(1) as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs.max(1) as f64;
        Self {
            mean,
            std: var.sqrt(),
            runs,
            values,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub auc_roc: MetricSummary,
    pub auc_pr: MetricSummary,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub runtime_s: f64,
    pub epsilon_used: usize,
    pub psi_effective: usize,
    pub config_echo: ForestConfig,
}

impl EvalReport {
    /// True when every metric value matches (runtime excluded).
    pub fn same_metrics(&self, other: &EvalReport) -> bool {
        self.auc_roc == other.auc_roc && self.auc_pr == other.auc_pr && self.seeds == other.seeds
    }
}

/// Fits and scores `repeats` forests with seeds `seed, seed + 1, ...`.
pub fn run_experiment(data: &DataMatrix, config: &ForestConfig, repeats: usize) -> Result<EvalReport> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    if repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    let started = Instant::now();
    let mut rocs = Vec::with_capacity(repeats);
    let mut prs = Vec::with_capacity(repeats);
    let mut seeds = Vec::with_capacity(repeats);
    let mut epsilon_used = 0;
    let mut psi_effective = 0;
    for r in 0..repeats {
        let seed = config.seed.wrapping_add(r as u64);
        let cfg = ForestConfig {
            seed,
            ..config.clone()
        };
        let forest = Forest::fit(data, &cfg)?;
        let scores = forest.score_all(data)?;
        rocs.push(auc_roc(&scores, labels)?);
        prs.push(auc_pr(&scores, labels)?);
        seeds.push(seed);
        epsilon_used = forest.epsilon_used;
        psi_effective = forest.psi_effective;
    }
    Ok(EvalReport {
        auc_roc: MetricSummary::from_values(rocs),
        auc_pr: MetricSummary::from_values(prs),
        runs: repeats,
        seeds,
        runtime_s: started.elapsed().as_secs_f64(),
        epsilon_used,
        psi_effective,
        config_echo: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Branching,
    Epsilon,
    SampleSize,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Branching => "branching",
            AblationAxis::Epsilon => "epsilon",
            AblationAxis::SampleSize => "sample_size",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "branching" => Ok(AblationAxis::Branching),
            "epsilon" => Ok(AblationAxis::Epsilon),
            "sample_size" | "sampling" => Ok(AblationAxis::SampleSize),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation axis '{other}' (expected branching, epsilon or sample_size)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AblationGrid {
    /// Fixed branching factors, evaluated without learning.
    Branching(Vec<u32>),
    Epsilon(Vec<Epsilon>),
    SampleSize(Vec<usize>),
}

impl AblationGrid {
    pub fn axis(&self) -> AblationAxis {
        match self {
            AblationGrid::Branching(_) => AblationAxis::Branching,
            AblationGrid::Epsilon(_) => AblationAxis::Epsilon,
            AblationGrid::SampleSize(_) => AblationAxis::SampleSize,
        }
    }

    pub fn default_for(axis: AblationAxis) -> Self {
        match axis {
            AblationAxis::Branching => AblationGrid::Branching(vec![2, 3, 4, 8]),
            AblationAxis::Epsilon => AblationGrid::Epsilon(default_epsilon_grid()),
            AblationAxis::SampleSize => AblationGrid::SampleSize((6..=11).map(|k| 1usize << k).collect()),
        }
    }

    /// Parses comma-separated grid values for `axis`.
    pub fn parse(axis: AblationAxis, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::InvalidConfig("ablation grid is empty".into()));
        }
        let bad = |s: &str| Error::InvalidConfig(format!("invalid {axis} grid value '{s}'"));
        match axis {
            AblationAxis::Branching => items
                .iter()
                .map(|s| s.parse::<u32>().ok().filter(|&v| v >= 2).ok_or_else(|| bad(s)))
                .collect::<Result<_>>()
                .map(AblationGrid::Branching),
            AblationAxis::Epsilon => items
                .iter()
                .map(|s| match s.parse::<Epsilon>() {
                    Ok(Epsilon::Auto) | Err(_) => Err(bad(s)),
                    Ok(e) => Ok(e),
                })
                .collect::<Result<_>>()
                .map(AblationGrid::Epsilon),
            AblationAxis::SampleSize => items
                .iter()
                .map(|s| s.parse::<usize>().ok().filter(|&v| v >= 2).ok_or_else(|| bad(s)))
                .collect::<Result<_>>()
                .map(AblationGrid::SampleSize),
        }
    }
}

/// `{e^2, ..., e^6}` rounded, plus the no-learning boundary.
pub fn default_epsilon_grid() -> Vec<Epsilon> {
    (2..=6)
        .map(|k| Epsilon::Value(Epsilon::power_of_e(k)))
        .chain(std::iter::once(Epsilon::Psi))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: String,
    pub epsilon: String,
    pub mode: Mode,
    pub distribution: String,
    pub report: EvalReport,
    /// For the sample-size axis: mean AUC-ROC of every cut threshold tried.
    pub candidates: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub repeats: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,epsilon,epsilon_used,mode,distribution,psi,auc_roc_mean,auc_roc_std,auc_pr_mean,auc_pr_std,runs,runtime_s\n",
        );
        for r in &self.rows {
            let rep = &r.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.axis,
                r.value,
                r.epsilon,
                rep.epsilon_used,
                r.mode,
                r.distribution,
                rep.psi_effective,
                rep.auc_roc.mean,
                rep.auc_roc.std,
                rep.auc_pr.mean,
                rep.auc_pr.std,
                rep.runs,
                rep.runtime_s
            ));
        }
        out
    }
}

/// One report per grid point.
///
/// - Branching: no learning (`epsilon = psi`, LSH-only trees) with a
///   `Fixed(v)` law and LSH buckets sized for up to `v` children.
/// - Epsilon: the base config at each threshold; `psi` is always included.
/// - Sample size: for each size every threshold of the default epsilon grid
///   is tried and the best mean AUC-ROC is reported.
pub fn ablate(data: &DataMatrix, base: &ForestConfig, grid: &AblationGrid, repeats: usize) -> Result<AblationTable> {
    if data.labels().is_none() {
        return Err(Error::MissingLabels);
    }
    let axis = grid.axis();
    let mut rows = Vec::new();
    match grid {
        AblationGrid::Branching(values) => {
            for &v in values {
                let cfg = ForestConfig {
                    mode: Mode::LshOnly,
                    epsilon: Epsilon::Psi,
                    distribution: BranchingDistribution::Fixed(v),
                    lsh: LshParams {
                        width_divisor: LshParams::with_fanout(v).width_divisor,
                        ..base.lsh
                    },
                    ..base.clone()
                };
                rows.push(row(axis, v.to_string(), &cfg, run_experiment(data, &cfg, repeats)?, vec![]));
            }
        }
        AblationGrid::Epsilon(values) => {
            let mut values = values.clone();
            if !values.contains(&Epsilon::Psi) {
                values.push(Epsilon::Psi);
            }
            for eps in values {
                let cfg = ForestConfig {
                    epsilon: eps,
                    ..base.clone()
                };
                rows.push(row(axis, eps.to_string(), &cfg, run_experiment(data, &cfg, repeats)?, vec![]));
            }
        }
        AblationGrid::SampleSize(values) => {
            for &psi in values {
                let mut best: Option<(ForestConfig, EvalReport)> = None;
                let mut candidates = Vec::new();
                for eps in default_epsilon_grid() {
                    if let Epsilon::Value(k) = eps {
                        if k > psi {
                            continue;
                        }
                    }
                    let cfg = ForestConfig {
                        sample_size: psi,
                        epsilon: eps,
                        ..base.clone()
                    };
                    let report = run_experiment(data, &cfg, repeats)?;
                    candidates.push((eps.to_string(), report.auc_roc.mean));
                    if best.as_ref().is_none_or(|(_, b)| report.auc_roc.mean > b.auc_roc.mean) {
                        best = Some((cfg, report));
                    }
                }
                let (cfg, report) = best.expect("epsilon grid always contains psi");
                rows.push(row(axis, psi.to_string(), &cfg, report, candidates));
            }
        }
    }
    Ok(AblationTable { axis, repeats, rows })
}

fn row(
    axis: AblationAxis,
    value: String,
    cfg: &ForestConfig,
    report: EvalReport,
    candidates: Vec<(String, f64)>,
) -> AblationRow {
    AblationRow {
        axis,
        value,
        epsilon: cfg.epsilon.to_string(),
        mode: cfg.mode,
        distribution: cfg.distribution.to_string(),
        report,
        candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Counts correctly ordered (anomaly, normal) pairs, ties as one half.
    fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut good = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        good / total
    }

    #[test]
    fn roc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.5; 6], &[1, 0, 1, 0, 0, 0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap(), 0.75);
    }

    #[test]
    fn pr_examples() {
        assert_eq!(auc_pr(&[0.9, 0.8, 0.1, 0.2, 0.05], &[1, 1, 0, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.1, 0.9], &[1, 0]).unwrap(), 0.5);
        // Ranking 1,0,1,0: precision 1 at recall 1/2, 2/3 at recall 1.
        assert_relative_eq!(auc_pr(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap(), 0.5 + 0.5 * 2.0 / 3.0);
        // All tied: one threshold, precision = anomaly rate.
        assert_relative_eq!(auc_pr(&[0.3; 4], &[1, 0, 0, 0]).unwrap(), 0.25);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        assert!(matches!(auc_pr(&[0.1, 0.2], &[0, 0]), Err(Error::SingleClass)));
        assert!(auc_roc(&[0.1], &[1, 0]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[1, 2]).is_err());
    }

    #[test]
    fn random_scores_give_pr_near_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.1)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let rate = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        assert!((auc_pr(&scores, &labels).unwrap() - rate).abs() < 0.01);
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::from_values(vec![0.7]);
        assert_eq!((s.mean, s.std, s.runs), (0.7, 0.0, 1));
        let s = MetricSummary::from_values(vec![1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(
            AblationGrid::parse(AblationAxis::Branching, "2,3, 8").unwrap(),
            AblationGrid::Branching(vec![2, 3, 8])
        );
        assert_eq!(
            AblationGrid::parse(AblationAxis::Epsilon, "e2,55,psi").unwrap(),
            AblationGrid::Epsilon(vec![Epsilon::Value(7), Epsilon::Value(55), Epsilon::Psi])
        );
        assert!(AblationGrid::parse(AblationAxis::Branching, "1").is_err());
        assert!(AblationGrid::parse(AblationAxis::Epsilon, "auto").is_err());
        assert!(AblationGrid::parse(AblationAxis::SampleSize, "").is_err());
        assert!("depth".parse::<AblationAxis>().is_err());
        assert_eq!(
            AblationGrid::default_for(AblationAxis::SampleSize),
            AblationGrid::SampleSize(vec![64, 128, 256, 512, 1024, 2048])
        );
        assert_eq!(default_epsilon_grid().len(), 6);
    }

    proptest! {
        #[test]
        fn roc_matches_pair_counting(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..12),
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, l)| u8::from(l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
        }

        #[test]
        fn roc_is_rank_invariant(
            raw in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 2..40),
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, l)| u8::from(l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = auc_roc(&scores, &labels).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|s| (s / 100.0).tanh() * 7.0 + 1.0).collect();
            let tie_free = {
                let mut s = scores.clone();
                s.sort_by(f64::total_cmp);
                s.windows(2).all(|w| w[0] < w[1])
            };
            prop_assume!(tie_free);
            prop_assert!((auc_roc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auc_roc(&negated, &labels).unwrap() + base - 1.0).abs() < 1e-12);
        }
    }
}
