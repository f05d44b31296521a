//! Bidimensional attention over the multi-granularity node embeddings of a
//! source and a target phrase.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::INIT_STD;
use crate::error::{BattraeError, Result};
use crate::linalg::{self, Matrix};
use crate::rae::GranularityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `d_a × d_s`
    pub w_source: Matrix,
    /// `d_a × d_t`
    pub w_target: Matrix,
    /// Bias shared by both projections.
    pub bias: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(att_dim: usize, src_dim: usize, tgt_dim: usize) -> Self {
        AttentionParams {
            w_source: Matrix::zeros(att_dim, src_dim),
            w_target: Matrix::zeros(att_dim, tgt_dim),
            bias: vec![0.0; att_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(
        att_dim: usize,
        src_dim: usize,
        tgt_dim: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut p = AttentionParams::zeros(att_dim, src_dim, tgt_dim);
        for slot in p.slices_mut() {
            slot.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        p
    }

    pub fn att_dim(&self) -> usize {
        self.bias.len()
    }

    /// W3, W4, bA.
    pub fn slices(&self) -> [&[f64]; 3] {
        [
            self.w_source.as_slice(),
            self.w_target.as_slice(),
            &self.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_source.as_mut_slice(),
            self.w_target.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// `d_a × n_s` projection of the source granularities.
    pub projected_source: Matrix,
    /// `d_a × n_t`
    pub projected_target: Matrix,
    /// `n_s × n_t` matching scores.
    pub matrix: Matrix,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    pub source_phrase: Vec<f64>,
    pub target_phrase: Vec<f64>,
}

/// `tanh(W M + b)` with `b` broadcast over the columns of `M`.
pub fn project_to_attention(m: &GranularityMatrix, w: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if w.cols() != m.dim() {
        return Err(BattraeError::Dimension {
            expected: w.cols(),
            found: m.dim(),
            context: "attention projection input".into(),
        });
    }
    linalg::check_len(bias, w.rows(), "attention bias")?;
    let mut out = Matrix::zeros(w.rows(), m.n());
    for c in 0..m.n() {
        let mut col = w.matvec(m.columns.column(c))?;
        linalg::add_assign(&mut col, bias);
        linalg::tanh_in_place(&mut col);
        out.column_mut(c).copy_from_slice(&col);
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `B[i, j] = σ(A_s[:, i] · A_t[:, j])`.
pub fn attention_matrix(source: &Matrix, target: &Matrix) -> Result<Matrix> {
    if source.rows() != target.rows() {
        return Err(BattraeError::Dimension {
            expected: source.rows(),
            found: target.rows(),
            context: "attention space dimension".into(),
        });
    }
    let mut b = Matrix::zeros(source.cols(), target.cols());
    for j in 0..target.cols() {
        for i in 0..source.cols() {
            b.set(
                i,
                j,
                sigmoid(linalg::dot(source.column(i), target.column(j))),
            );
        }
    }
    Ok(b)
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row sums and column sums of `B`, each passed through softmax.
pub fn attention_weights(b: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut row_sums = vec![0.0; b.rows()];
    let mut col_sums = vec![0.0; b.cols()];
    for (j, col_sum) in col_sums.iter_mut().enumerate() {
        for (row_sum, &v) in row_sums.iter_mut().zip(b.column(j)) {
            *row_sum += v;
            *col_sum += v;
        }
    }
    (softmax(&row_sums), softmax(&col_sums))
}

/// Attention-weighted sum of the granularity columns.
pub fn compose_phrase(m: &GranularityMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    linalg::check_len(weights, m.n(), "attention weights")?;
    m.columns.matvec(weights)
}

pub fn attend(
    source: &GranularityMatrix,
    target: &GranularityMatrix,
    params: &AttentionParams,
) -> Result<AttentionResult> {
    let projected_source = project_to_attention(source, &params.w_source, &params.bias)?;
    let projected_target = project_to_attention(target, &params.w_target, &params.bias)?;
    let matrix = attention_matrix(&projected_source, &projected_target)?;
    let (source_weights, target_weights) = attention_weights(&matrix);
    let source_phrase = compose_phrase(source, &source_weights)?;
    let target_phrase = compose_phrase(target, &target_weights)?;
    Ok(AttentionResult {
        projected_source,
        projected_target,
        matrix,
        source_weights,
        target_weights,
        source_phrase,
        target_phrase,
    })
}

/// Indices sorted by descending weight; ties keep the lower index first.
pub fn rank_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx
}
