//! Similarity scoring for bilingual phrase pairs with recursive autoencoders
//! and two-sided attention.
//!
//! Source and target phrases are encoded by greedy recursive autoencoders.
//! Every tree node (word, sub-phrase, phrase) becomes a column of a
//! granularity matrix; a bidimensional attention network scores all
//! source/target node pairs, pools the scores into attention weights and
//! mixes the columns into one vector per side. A bilinear head turns the two
//! vectors into a similarity score. Training minimizes a max-margin ranking
//! error plus reconstruction error with L-BFGS.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod attention;
pub mod corpus;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod model_io;
pub mod objective;
pub mod optimizer;
pub mod params;
pub mod pipeline;
pub mod rae;
pub mod similarity;
pub mod toy;

pub use attention::{attend, AttentionParams, AttentionResult};
pub use corpus::{Corpus, EmbeddingTable, PhrasePair, RawPair, Vocabulary};
pub use error::{BattraeError, Result};
pub use grad::{finite_difference_gradient, gradient_check, objective_and_gradient, Evaluator};
pub use model_io::{init_model, load_model, save_model, ModelFile};
pub use objective::{joint_objective, sample_negatives, Hyperparams, TrainingInstance};
pub use optimizer::{minimize, LbfgsConfig, OptimizationTrace};
pub use params::{Dims, ModelParams, ParamGroup};
pub use rae::{build_tree, extract_granularities, GranularityMatrix, PhraseTree, RaeParams};
pub use similarity::{score_pair, ScoredPair, SimilarityParams};
