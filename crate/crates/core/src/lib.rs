//! Optimal isolation forest anomaly detection.
//!
//! Trees are first grown with Euclidean LSH functions, then cut at a size
//! threshold `epsilon`; the subtrees below the cut are merged bottom-up by
//! greedy minimum-distortion clustering, drawing each merge's arity from a
//! branching law whose mean is `e` (the branching factor that maximises
//! isolation capacity per unit of tree area).
//!
//! ```
//! use optiforest::{DataMatrix, Forest, ForestConfig};
//!
//! let mut rows: Vec<Vec<f64>> = (0..60)
//!     .map(|i| vec![(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1])
//!     .collect();
//! rows.push(vec![25.0, -30.0]);
//! let data = DataMatrix::from_rows(&rows, None).unwrap();
//!
//! let forest = Forest::fit(&data, &ForestConfig { trees: 50, ..Default::default() }).unwrap();
//! let scores = forest.score_all(&data).unwrap();
//! let top = scores
//!     .iter()
//!     .enumerate()
//!     .max_by(|a, b| a.1.total_cmp(b.1))
//!     .unwrap()
//!     .0;
//! assert_eq!(top, 60);
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod lsh_tree;
pub mod model;
pub mod opt_tree;
pub mod theory;
pub mod tree;

pub use data::{load_csv, subsample, DataMatrix, MinMaxScaler, Subsample};
pub use error::{Error, Result};
pub use eval::{ablate, auc_pr, auc_roc, run_experiment, AblationAxis, AblationGrid, AblationTable, EvalReport};
pub use forest::{path_length, Epsilon, Forest, ForestConfig, Mode};
pub use lsh_tree::{build_lsh_tree, lsh_hash, E2LshFunction, LshParams};
pub use model::{load_model, save_model};
pub use opt_tree::{best_merge, build_optimal_tree, distortion, epsilon_cut, learned_route, merged_centre, Cluster, CutSet};
pub use theory::BranchingDistribution;
pub use tree::{NodeKind, TreeNode};
