//! The full parameter set and its canonical flat view.
//!
//! Flat order: source embeddings, target embeddings, source RAE (W1, b1, W2,
//! b2), target RAE, attention (W3, W4, bA), semantic head (W5, W6, S, bs).
//! Every matrix is laid out column-major.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::corpus::EmbeddingTable;
use crate::error::{BattraeError, Result};
use crate::rae::RaeParams;
use crate::similarity::SimilarityParams;

/// Identifier of the flat ordering above, stored in model files.
pub const FLAT_ORDER_ID: &str =
    "L_src,L_tgt,rec_src[W1,b1,W2,b2],rec_tgt[W1,b1,W2,b2],att[W3,W4,bA],sem[W5,W6,S,bs];col-major";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub source: usize,
    pub target: usize,
    pub attention: usize,
    pub semantic: usize,
}

/// The four regularization groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embeddings,
    Reconstruction,
    Attention,
    Semantic,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Embeddings,
        ParamGroup::Reconstruction,
        ParamGroup::Attention,
        ParamGroup::Semantic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "theta_L",
            ParamGroup::Reconstruction => "theta_rec",
            ParamGroup::Attention => "theta_att",
            ParamGroup::Semantic => "theta_sem",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub source_embeddings: EmbeddingTable,
    pub target_embeddings: EmbeddingTable,
    pub source_rae: RaeParams,
    pub target_rae: RaeParams,
    pub attention: AttentionParams,
    pub semantic: SimilarityParams,
}

const TENSOR_NAMES: [&str; 13] = [
    "L_src", "L_tgt", "W1_src", "b1_src", "W2_src", "b2_src", "W1_tgt", "b1_tgt", "W2_tgt",
    "b2_tgt", "W3", "W4", "bA",
];
const SEM_NAMES: [&str; 4] = ["W5", "W6", "S", "bs"];

impl ModelParams {
    pub fn zeros(dims: Dims, source_vocab: usize, target_vocab: usize) -> Self {
        ModelParams {
            source_embeddings: EmbeddingTable::zeros(dims.source, source_vocab),
            target_embeddings: EmbeddingTable::zeros(dims.target, target_vocab),
            source_rae: RaeParams::zeros(dims.source),
            target_rae: RaeParams::zeros(dims.target),
            attention: AttentionParams::zeros(dims.attention, dims.source, dims.target),
            semantic: SimilarityParams::zeros(dims.semantic, dims.source, dims.target),
        }
    }

    /// Every scalar drawn i.i.d. from N(0, 0.01²), in flat order.
    pub fn random<R: Rng + ?Sized>(
        dims: Dims,
        source_vocab: usize,
        target_vocab: usize,
        rng: &mut R,
    ) -> Self {
        ModelParams {
            source_embeddings: EmbeddingTable::random(dims.source, source_vocab, rng),
            target_embeddings: EmbeddingTable::random(dims.target, target_vocab, rng),
            source_rae: RaeParams::random(dims.source, rng),
            target_rae: RaeParams::random(dims.target, rng),
            attention: AttentionParams::random(dims.attention, dims.source, dims.target, rng),
            semantic: SimilarityParams::random(dims.semantic, dims.source, dims.target, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(
            self.dims(),
            self.source_embeddings.vocab_size(),
            self.target_embeddings.vocab_size(),
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            source: self.source_embeddings.dim(),
            target: self.target_embeddings.dim(),
            attention: self.attention.att_dim(),
            semantic: self.semantic.sem_dim(),
        }
    }

    /// Scalar blocks in flat order, each tagged with its group and name.
    pub fn blocks(&self) -> Vec<(ParamGroup, &'static str, &[f64])> {
        let mut out = vec![
            (
                ParamGroup::Embeddings,
                TENSOR_NAMES[0],
                self.source_embeddings.matrix().as_slice(),
            ),
            (
                ParamGroup::Embeddings,
                TENSOR_NAMES[1],
                self.target_embeddings.matrix().as_slice(),
            ),
        ];
        for (k, s) in self.source_rae.slices().into_iter().enumerate() {
            out.push((ParamGroup::Reconstruction, TENSOR_NAMES[2 + k], s));
        }
        for (k, s) in self.target_rae.slices().into_iter().enumerate() {
            out.push((ParamGroup::Reconstruction, TENSOR_NAMES[6 + k], s));
        }
        for (k, s) in self.attention.slices().into_iter().enumerate() {
            out.push((ParamGroup::Attention, TENSOR_NAMES[10 + k], s));
        }
        for (k, s) in self.semantic.slices().into_iter().enumerate() {
            out.push((ParamGroup::Semantic, SEM_NAMES[k], s));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.source_embeddings.matrix_mut().as_mut_slice(),
            self.target_embeddings.matrix_mut().as_mut_slice(),
        ];
        out.extend(self.source_rae.slices_mut());
        out.extend(self.target_rae.slices_mut());
        out.extend(self.attention.slices_mut());
        out.extend(self.semantic.slices_mut());
        out
    }

    pub fn flat_len(&self) -> usize {
        self.blocks().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        for (_, _, s) in self.blocks() {
            v.extend_from_slice(s);
        }
        v
    }

    /// Overwrites every scalar from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(BattraeError::Dimension {
                expected: self.flat_len(),
                found: flat.len(),
                context: "flat parameter vector".into(),
            });
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.assign_flat(flat)?;
        Ok(m)
    }

    /// Flat index range of each group; the groups are contiguous and in order.
    pub fn group_ranges(&self) -> Vec<(ParamGroup, Range<usize>)> {
        let mut out: Vec<(ParamGroup, Range<usize>)> = Vec::new();
        let mut offset = 0;
        for (group, _, s) in self.blocks() {
            let end = offset + s.len();
            match out.last_mut() {
                Some((g, r)) if *g == group => r.end = end,
                _ => out.push((group, offset..end)),
            }
            offset = end;
        }
        out
    }

    /// Group, tensor name and offset within that tensor of a flat index.
    pub fn locate(&self, index: usize) -> Option<(ParamGroup, &'static str, usize)> {
        let mut offset = 0;
        for (group, name, s) in self.blocks() {
            if index < offset + s.len() {
                return Some((group, name, index - offset));
            }
            offset += s.len();
        }
        None
    }

    pub fn group_squared_norm(&self, group: ParamGroup) -> f64 {
        self.blocks()
            .into_iter()
            .filter(|(g, _, _)| *g == group)
            .flat_map(|(_, _, s)| s.iter())
            .fold(0.0, |acc, v| acc + v * v)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        for (dst, (_, _, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            crate::linalg::axpy(scale, src, dst);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims {
            source: 3,
            target: 2,
            attention: 4,
            semantic: 5,
        }
    }

    #[test]
    fn flat_length_is_sum_of_parts() {
        let m = ModelParams::zeros(dims(), 7, 6);
        let expected = 3 * 7
            + 2 * 6
            + (3 * 6 + 3 + 6 * 3 + 6)
            + (2 * 4 + 2 + 4 * 2 + 4)
            + (4 * 3 + 4 * 2 + 4)
            + (5 * 3 + 5 * 2 + 25 + 5);
        assert_eq!(m.flat_len(), expected);
        let ranges = m.group_ranges();
        assert_eq!(ranges.len(), 4);
        assert_eq!(ranges[0], (ParamGroup::Embeddings, 0..33));
        assert_eq!(ranges[3].1.end, expected);
        for w in ranges.windows(2) {
            assert_eq!(w[0].1.end, w[1].1.start);
        }
    }

    #[test]
    fn locate_boundaries() {
        let m = ModelParams::zeros(dims(), 7, 6);
        assert_eq!(m.locate(0), Some((ParamGroup::Embeddings, "L_src", 0)));
        assert_eq!(m.locate(21), Some((ParamGroup::Embeddings, "L_tgt", 0)));
        assert_eq!(
            m.locate(33),
            Some((ParamGroup::Reconstruction, "W1_src", 0))
        );
        let last = m.flat_len() - 1;
        assert_eq!(m.locate(last), Some((ParamGroup::Semantic, "bs", 4)));
        assert_eq!(m.locate(last + 1), None);
    }

    #[test]
    fn column_major_embedding_order() {
        let mut m = ModelParams::zeros(dims(), 7, 6);
        m.source_embeddings.vector_mut(1)[2] = 5.0;
        assert_eq!(m.flatten()[3 + 2], 5.0);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(seed in 0u64..1000) {
            let m = ModelParams::random(dims(), 7, 6, &mut ChaCha8Rng::seed_from_u64(seed));
            let flat = m.flatten();
            let back = m.zeros_like().with_flat(&flat).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.flatten(), flat);
        }
    }
}
