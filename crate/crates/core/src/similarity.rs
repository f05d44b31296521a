//! Semantic-space projection and the bilinear similarity head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{attend, AttentionResult};
use crate::corpus::{PhrasePair, INIT_STD};
use crate::error::{BattraeError, Result};
use crate::linalg::{self, Matrix};
use crate::params::ModelParams;
use crate::rae::{build_tree, extract_granularities, GranularityMatrix, PhraseTree};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParams {
    /// `d_sem × d_s`
    pub w_source: Matrix,
    /// `d_sem × d_t`
    pub w_target: Matrix,
    /// `d_sem × d_sem`
    pub bilinear: Matrix,
    /// Bias shared by both projections.
    pub bias: Vec<f64>,
}

impl SimilarityParams {
    pub fn zeros(sem_dim: usize, src_dim: usize, tgt_dim: usize) -> Self {
        SimilarityParams {
            w_source: Matrix::zeros(sem_dim, src_dim),
            w_target: Matrix::zeros(sem_dim, tgt_dim),
            bilinear: Matrix::zeros(sem_dim, sem_dim),
            bias: vec![0.0; sem_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(
        sem_dim: usize,
        src_dim: usize,
        tgt_dim: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut p = SimilarityParams::zeros(sem_dim, src_dim, tgt_dim);
        for slot in p.slices_mut() {
            slot.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        p
    }

    pub fn sem_dim(&self) -> usize {
        self.bias.len()
    }

    /// W5, W6, S, bs.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w_source.as_slice(),
            self.w_target.as_slice(),
            self.bilinear.as_slice(),
            &self.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_source.as_mut_slice(),
            self.w_target.as_mut_slice(),
            self.bilinear.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

/// `tanh(W p + b)`.
pub fn project_semantic(phrase: &[f64], w: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    linalg::check_len(bias, w.rows(), "semantic bias")?;
    let mut s = w.matvec(phrase)?;
    linalg::add_assign(&mut s, bias);
    linalg::tanh_in_place(&mut s);
    Ok(s)
}

/// `s_sᵀ S s_t`.
pub fn similarity(source: &[f64], target: &[f64], bilinear: &Matrix) -> Result<f64> {
    if bilinear.rows() != bilinear.cols() {
        return Err(BattraeError::shape("bilinear matrix must be square"));
    }
    let st = bilinear.matvec(target)?;
    linalg::check_len(source, st.len(), "source semantic vector")?;
    Ok(linalg::dot(source, &st))
}

/// All intermediates of one forward pass from two trees to a score.
#[derive(Debug, Clone, PartialEq)]
pub struct PairForward {
    pub attention: AttentionResult,
    pub source_semantic: Vec<f64>,
    pub target_semantic: Vec<f64>,
    pub score: f64,
}

pub fn score_granularities(
    source: &GranularityMatrix,
    target: &GranularityMatrix,
    model: &ModelParams,
) -> Result<PairForward> {
    let attention = attend(source, target, &model.attention)?;
    let sem = &model.semantic;
    let source_semantic = project_semantic(&attention.source_phrase, &sem.w_source, &sem.bias)?;
    let target_semantic = project_semantic(&attention.target_phrase, &sem.w_target, &sem.bias)?;
    let score = similarity(&source_semantic, &target_semantic, &sem.bilinear)?;
    if !score.is_finite() {
        return Err(BattraeError::numeric("similarity score"));
    }
    Ok(PairForward {
        attention,
        source_semantic,
        target_semantic,
        score,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub score: f64,
    pub source_tree: PhraseTree,
    pub target_tree: PhraseTree,
    pub source_granularities: GranularityMatrix,
    pub target_granularities: GranularityMatrix,
    pub forward: PairForward,
}

impl ScoredPair {
    pub fn attention(&self) -> &AttentionResult {
        &self.forward.attention
    }
}

/// Full forward pass: greedy trees on both sides, attention, projection, bilinear score.
pub fn score_pair(pair: &PhrasePair, model: &ModelParams) -> Result<ScoredPair> {
    let source_tree = build_tree(&pair.source, &model.source_embeddings, &model.source_rae)?;
    let target_tree = build_tree(&pair.target, &model.target_embeddings, &model.target_rae)?;
    let source_granularities = extract_granularities(&source_tree);
    let target_granularities = extract_granularities(&target_tree);
    let forward = score_granularities(&source_granularities, &target_granularities, model)?;
    Ok(ScoredPair {
        score: forward.score,
        source_tree,
        target_tree,
        source_granularities,
        target_granularities,
        forward,
    })
}
