//! Greedy recursive autoencoder over a token sequence.
//!
//! A parent is composed from two adjacent children as `tanh(W1 [c1; c2] + b1)`
//! and decoded back as `tanh(W2 y + b2)`. The tree is grown greedily: at every
//! step the adjacent frontier pair whose reconstruction error is smallest is
//! merged, leftmost pair first on ties.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{EmbeddingTable, INIT_STD};
use crate::error::{BattraeError, Result};
use crate::linalg::{self, Matrix};

/// Composition and reconstruction weights for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct RaeParams {
    /// `d × 2d`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `2d × d`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl RaeParams {
    pub fn zeros(dim: usize) -> Self {
        RaeParams {
            w1: Matrix::zeros(dim, 2 * dim),
            b1: vec![0.0; dim],
            w2: Matrix::zeros(2 * dim, dim),
            b2: vec![0.0; 2 * dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut p = RaeParams::zeros(dim);
        for slot in p.slices_mut() {
            slot.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }

    /// Scalar blocks in canonical order: W1, b1, W2, b2.
    pub fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.w1.rows() == d
            && self.w1.cols() == 2 * d
            && self.w2.rows() == 2 * d
            && self.w2.cols() == d
            && self.b2.len() == 2 * d;
        if ok {
            Ok(())
        } else {
            Err(BattraeError::shape("inconsistent RAE parameter shapes"))
        }
    }
}

fn concat(c1: &[f64], c2: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(c1.len() + c2.len());
    x.extend_from_slice(c1);
    x.extend_from_slice(c2);
    x
}

/// Parent embedding `tanh(W1 [c1; c2] + b1)`.
pub fn compose(c1: &[f64], c2: &[f64], params: &RaeParams) -> Result<Vec<f64>> {
    let d = params.dim();
    linalg::check_len(c1, d, "left child")?;
    linalg::check_len(c2, d, "right child")?;
    let mut y = params.w1.matvec(&concat(c1, c2))?;
    linalg::add_assign(&mut y, &params.b1);
    linalg::tanh_in_place(&mut y);
    Ok(y)
}

/// Concatenated reconstruction `[c1'; c2'] = tanh(W2 y + b2)`.
fn reconstruct_concat(y: &[f64], params: &RaeParams) -> Result<Vec<f64>> {
    let mut r = params.w2.matvec(y)?;
    linalg::add_assign(&mut r, &params.b2);
    linalg::tanh_in_place(&mut r);
    Ok(r)
}

pub fn reconstruct(y: &[f64], params: &RaeParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = reconstruct_concat(y, params)?;
    let right = r.split_off(params.dim());
    Ok((r, right))
}

fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

struct Merge {
    parent: Vec<f64>,
    reconstruction: Vec<f64>,
    error: f64,
}

fn merge(c1: &[f64], c2: &[f64], params: &RaeParams) -> Result<Merge> {
    let parent = compose(c1, c2, params)?;
    let reconstruction = reconstruct_concat(&parent, params)?;
    let error = half_sq_dist(&concat(c1, c2), &reconstruction);
    Ok(Merge {
        parent,
        reconstruction,
        error,
    })
}

/// `½‖[c1; c2] − [c1'; c2']‖²` for the parent composed from `c1`, `c2`.
pub fn node_rec_error(c1: &[f64], c2: &[f64], params: &RaeParams) -> Result<f64> {
    Ok(merge(c1, c2, params)?.error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub embedding: Vec<f64>,
    pub children: Option<(usize, usize)>,
    /// Half-open token range `[start, end)` covered by this node.
    pub span: (usize, usize),
    /// Reconstruction `[c1'; c2']`; empty for leaves.
    pub reconstruction: Vec<f64>,
    /// Zero for leaves.
    pub rec_error: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary tree over a phrase. Leaves occupy indices `0..len` in token order;
/// internal nodes follow in merge order, so children always precede parents
/// and the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTree {
    pub tokens: Vec<usize>,
    pub nodes: Vec<TreeNode>,
}

/// The merge topology of a tree with embeddings stripped: for every internal
/// node in creation order, the indices of its two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeShape {
    pub len: usize,
    pub merges: Vec<(usize, usize)>,
}

impl PhraseTree {
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Total reconstruction error: sum over internal nodes in creation order.
    pub fn rec_error(&self) -> f64 {
        self.nodes.iter().map(|n| n.rec_error).sum()
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape {
            len: self.tokens.len(),
            merges: self.nodes.iter().filter_map(|n| n.children).collect(),
        }
    }

    /// Spans of the internal nodes in the order they were merged.
    pub fn merge_spans(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.span)
            .collect()
    }

    /// Node indices in postorder (left subtree, right subtree, parent).
    pub fn postorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root(), false)];
        while let Some((id, expanded)) = stack.pop() {
            match self.nodes[id].children {
                Some((l, r)) if !expanded => {
                    stack.push((id, true));
                    stack.push((r, false));
                    stack.push((l, false));
                }
                _ => order.push(id),
            }
        }
        order
    }

    /// Nested parenthesized rendering, e.g. `(dui, (jingji, xuezhe))`.
    pub fn render<S: AsRef<str>>(&self, words: &[S]) -> String {
        fn go<S: AsRef<str>>(tree: &PhraseTree, id: usize, words: &[S], out: &mut String) {
            match tree.nodes[id].children {
                None => out.push_str(words[tree.nodes[id].span.0].as_ref()),
                Some((l, r)) => {
                    out.push('(');
                    go(tree, l, words, out);
                    out.push_str(", ");
                    go(tree, r, words, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        go(self, self.root(), words, &mut out);
        out
    }

    /// Space-joined words covered by each node, in postorder.
    pub fn postorder_labels<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        self.postorder()
            .into_iter()
            .map(|id| {
                let (s, e) = self.nodes[id].span;
                words[s..e]
                    .iter()
                    .map(|w| w.as_ref())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}

fn leaves(tokens: &[usize], table: &EmbeddingTable) -> Result<Vec<TreeNode>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            if id >= table.vocab_size() {
                return Err(BattraeError::Input(format!(
                    "token id {id} outside vocabulary of size {}",
                    table.vocab_size()
                )));
            }
            Ok(TreeNode {
                embedding: table.vector(id).to_vec(),
                children: None,
                span: (i, i + 1),
                reconstruction: Vec::new(),
                rec_error: 0.0,
            })
        })
        .collect()
}

fn push_merge(nodes: &mut Vec<TreeNode>, l: usize, r: usize, m: Merge) -> usize {
    let span = (nodes[l].span.0, nodes[r].span.1);
    nodes.push(TreeNode {
        embedding: m.parent,
        children: Some((l, r)),
        span,
        reconstruction: m.reconstruction,
        rec_error: m.error,
    });
    nodes.len() - 1
}

/// Greedy bottom-up tree construction.
pub fn build_tree(
    tokens: &[usize],
    table: &EmbeddingTable,
    params: &RaeParams,
) -> Result<PhraseTree> {
    if tokens.is_empty() {
        return Err(BattraeError::Input(
            "cannot build a tree over an empty phrase".into(),
        ));
    }
    if table.dim() != params.dim() {
        return Err(BattraeError::Dimension {
            expected: params.dim(),
            found: table.dim(),
            context: "embedding table vs RAE".into(),
        });
    }
    let mut nodes = leaves(tokens, table)?;
    let mut frontier: Vec<usize> = (0..tokens.len()).collect();
    while frontier.len() > 1 {
        let mut best: Option<(usize, Merge)> = None;
        for k in 0..frontier.len() - 1 {
            let m = merge(
                &nodes[frontier[k]].embedding,
                &nodes[frontier[k + 1]].embedding,
                params,
            )?;
            if best.as_ref().is_none_or(|(_, b)| m.error < b.error) {
                best = Some((k, m));
            }
        }
        let (k, m) = best.expect("frontier has at least one pair");
        let id = push_merge(&mut nodes, frontier[k], frontier[k + 1], m);
        frontier.splice(k..k + 2, [id]);
    }
    Ok(PhraseTree {
        tokens: tokens.to_vec(),
        nodes,
    })
}

/// Recomputes every embedding along a fixed merge topology.
pub fn build_tree_with_shape(
    tokens: &[usize],
    table: &EmbeddingTable,
    params: &RaeParams,
    shape: &TreeShape,
) -> Result<PhraseTree> {
    if shape.len != tokens.len() || shape.merges.len() + 1 != tokens.len().max(1) {
        return Err(BattraeError::shape(
            "tree shape does not match phrase length",
        ));
    }
    let mut nodes = leaves(tokens, table)?;
    for &(l, r) in &shape.merges {
        let m = merge(&nodes[l].embedding, &nodes[r].embedding, params)?;
        push_merge(&mut nodes, l, r, m);
    }
    Ok(PhraseTree {
        tokens: tokens.to_vec(),
        nodes,
    })
}

/// Node embeddings stacked as columns in postorder; the root is the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularityMatrix {
    pub columns: Matrix,
    /// Tree node index of each column.
    pub node_ids: Vec<usize>,
}

impl GranularityMatrix {
    pub fn dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn n(&self) -> usize {
        self.columns.cols()
    }

    pub fn from_matrix(columns: Matrix) -> Self {
        let node_ids = (0..columns.cols()).collect();
        GranularityMatrix { columns, node_ids }
    }
}

pub fn extract_granularities(tree: &PhraseTree) -> GranularityMatrix {
    let node_ids = tree.postorder();
    let d = tree.nodes[0].embedding.len();
    let cols: Vec<Vec<f64>> = node_ids
        .iter()
        .map(|&id| tree.nodes[id].embedding.clone())
        .collect();
    GranularityMatrix {
        columns: Matrix::from_columns(d, &cols).expect("uniform node dimension"),
        node_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_d1(w1: [f64; 2], w2: [f64; 2]) -> RaeParams {
        RaeParams {
            w1: Matrix::from_rows(&[&w1]).unwrap(),
            b1: vec![0.0],
            w2: Matrix::from_rows(&[&[w2[0]], &[w2[1]]]).unwrap(),
            b2: vec![0.0, 0.0],
        }
    }

    #[test]
    fn compose_zero_inputs() {
        let mut p = RaeParams::random(3, &mut ChaCha8Rng::seed_from_u64(3));
        p.b1 = vec![0.0; 3];
        assert_eq!(compose(&[0.0; 3], &[0.0; 3], &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn compose_collapses_to_bias() {
        let mut p = RaeParams::zeros(2);
        p.b1 = vec![0.3, -0.7];
        let y = compose(&[5.0, 1.0], &[-2.0, 4.0], &p).unwrap();
        assert_eq!(y, vec![0.3f64.tanh(), (-0.7f64).tanh()]);
    }

    #[test]
    fn compose_hand_evaluated() {
        let mut p = RaeParams::zeros(2);
        p.w1 = Matrix::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]).unwrap();
        let y = compose(&[0.5, 0.0], &[0.0, 0.5], &p).unwrap();
        // row 0 picks c1[0] = 0.5, row 1 picks c2[1] = 0.5
        let expect = 0.5f64.tanh();
        assert_eq!(y, vec![expect, expect]);
    }

    #[test]
    fn compose_shape_error() {
        let p = RaeParams::zeros(2);
        assert!(compose(&[0.0], &[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn reconstruct_cases() {
        let p = RaeParams::zeros(2);
        assert_eq!(
            reconstruct(&[0.4, 0.1], &p).unwrap(),
            (vec![0.0, 0.0], vec![0.0, 0.0])
        );
        let mut p = RaeParams::zeros(2);
        p.b2 = vec![0.1, 0.2, 0.3, 0.4];
        let (a, b) = reconstruct(&[9.0, -9.0], &p).unwrap();
        assert_eq!(a, vec![0.1f64.tanh(), 0.2f64.tanh()]);
        assert_eq!(b, vec![0.3f64.tanh(), 0.4f64.tanh()]);

        let p = params_d1([0.0, 0.0], [2.0, -2.0]);
        let (a, b) = reconstruct(&[0.3], &p).unwrap();
        assert!((a[0] - 0.6f64.tanh()).abs() < 1e-15);
        assert!((b[0] - (-0.6f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn node_error_cases() {
        let p = params_d1([0.0, 0.0], [0.0, 0.0]);
        assert_eq!(node_rec_error(&[0.0], &[0.0], &p).unwrap(), 0.0);

        let p = RaeParams::random(2, &mut ChaCha8Rng::seed_from_u64(1));
        let mut p0 = p.clone();
        p0.w2 = Matrix::zeros(4, 2);
        p0.b2 = vec![0.0; 4];
        let c1 = [0.3, -0.4];
        let c2 = [0.5, 0.1];
        let e = node_rec_error(&c1, &c2, &p0).unwrap();
        assert!((e - 0.5 * (0.25 + 0.26)).abs() < 1e-15);

        // scalar pipeline: W1 = [1, 0], W2 = [2, -2]
        let p = params_d1([1.0, 0.0], [2.0, -2.0]);
        let (c1, c2) = (0.3f64, 0.5f64);
        let y = c1.tanh();
        let r1 = (2.0 * y).tanh();
        let r2 = (-2.0 * y).tanh();
        let expect = 0.5 * ((c1 - r1).powi(2) + (c2 - r2).powi(2));
        let got = node_rec_error(&[c1], &[c2], &p).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    fn table(dim: usize, vocab: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_col_major(
            dim,
            vocab,
            (0..dim * vocab)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        EmbeddingTable::from_matrix(m)
    }

    #[test]
    fn single_and_pair_trees() {
        let t = table(3, 5, 0);
        let p = RaeParams::random(3, &mut ChaCha8Rng::seed_from_u64(9));
        let one = build_tree(&[2], &t, &p).unwrap();
        assert_eq!(one.nodes.len(), 1);
        assert_eq!(one.rec_error(), 0.0);
        assert_eq!(extract_granularities(&one).columns.column(0), t.vector(2));

        let two = build_tree(&[1, 4], &t, &p).unwrap();
        assert_eq!(two.nodes.len(), 3);
        let e = node_rec_error(t.vector(1), t.vector(4), &p).unwrap();
        assert_eq!(two.rec_error(), e);
        let g = extract_granularities(&two);
        assert_eq!(g.node_ids, vec![0, 1, 2]);

        assert!(build_tree(&[], &t, &p).is_err());
    }

    #[test]
    fn postorder_matches_worked_example() {
        // (dui, (jingji, xuezhe)): jingji+xuezhe merged first.
        let tree = PhraseTree {
            tokens: vec![0, 1, 2],
            nodes: vec![
                leaf(0),
                leaf(1),
                leaf(2),
                internal(1, 2, (1, 3)),
                internal(0, 3, (0, 3)),
            ],
        };
        let words = ["dui", "jingji", "xuezhe"];
        assert_eq!(tree.render(&words), "(dui, (jingji, xuezhe))");
        assert_eq!(
            tree.postorder_labels(&words),
            vec![
                "dui",
                "jingji",
                "xuezhe",
                "jingji xuezhe",
                "dui jingji xuezhe"
            ]
        );
        assert_eq!(extract_granularities(&tree).n(), 5);
    }

    fn leaf(i: usize) -> TreeNode {
        TreeNode {
            embedding: vec![i as f64],
            children: None,
            span: (i, i + 1),
            reconstruction: vec![],
            rec_error: 0.0,
        }
    }

    fn internal(l: usize, r: usize, span: (usize, usize)) -> TreeNode {
        TreeNode {
            embedding: vec![10.0 + l as f64],
            children: Some((l, r)),
            span,
            reconstruction: vec![],
            rec_error: 0.0,
        }
    }

    #[test]
    fn fixed_shape_reproduces_greedy_tree() {
        let t = table(4, 7, 5);
        let p = RaeParams::random(4, &mut ChaCha8Rng::seed_from_u64(5));
        let tree = build_tree(&[3, 1, 6, 2, 2], &t, &p).unwrap();
        let again = build_tree_with_shape(&tree.tokens, &t, &p, &tree.shape()).unwrap();
        assert_eq!(tree, again);
    }
}
