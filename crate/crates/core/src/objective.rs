//! Negative sampling, the max-margin semantic error and the joint objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PhrasePair, Vocabulary};
use crate::error::{BattraeError, Result};
use crate::params::{Dims, ModelParams, ParamGroup};
use crate::rae::{
    build_tree, build_tree_with_shape, extract_granularities, GranularityMatrix, PhraseTree,
    TreeShape,
};
use crate::similarity::{score_granularities, PairForward};

pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_ALPHA: f64 = 0.125;
pub const DEFAULT_LAMBDA_L: f64 = 1e-5;
pub const DEFAULT_LAMBDA_REC: f64 = 1e-4;
pub const DEFAULT_LAMBDA_ATT: f64 = 1e-4;
pub const DEFAULT_LAMBDA_SEM: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the reconstruction error; the semantic error gets `1 − alpha`.
    pub alpha: f64,
    pub lambda_l: f64,
    pub lambda_rec: f64,
    pub lambda_att: f64,
    pub lambda_sem: f64,
    pub dims: Dims,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: DEFAULT_ALPHA,
            lambda_l: DEFAULT_LAMBDA_L,
            lambda_rec: DEFAULT_LAMBDA_REC,
            lambda_att: DEFAULT_LAMBDA_ATT,
            lambda_sem: DEFAULT_LAMBDA_SEM,
            dims: Dims {
                source: DEFAULT_DIM,
                target: DEFAULT_DIM,
                attention: DEFAULT_DIM,
                semantic: DEFAULT_DIM,
            },
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn lambda(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Embeddings => self.lambda_l,
            ParamGroup::Reconstruction => self.lambda_rec,
            ParamGroup::Attention => self.lambda_att,
            ParamGroup::Semantic => self.lambda_sem,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dims = Dims {
            source: dim,
            target: dim,
            attention: dim,
            semantic: dim,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(BattraeError::Input(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        for g in ParamGroup::ALL {
            let l = self.lambda(g);
            if !(l >= 0.0 && l.is_finite()) {
                return Err(BattraeError::Input(format!(
                    "lambda for {g} must be >= 0, got {l}"
                )));
            }
        }
        let d = self.dims;
        if d.source == 0 || d.target == 0 || d.attention == 0 || d.semantic == 0 {
            return Err(BattraeError::Input("all dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// A positive pair with its frozen corrupted source and target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub positive: PhrasePair,
    pub neg_source: Vec<usize>,
    pub neg_target: Vec<usize>,
}

fn corrupt<R: Rng + ?Sized>(
    phrase: &[usize],
    vocab: &Vocabulary,
    side: &str,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let unk = vocab.unk_id();
    let candidates: Vec<usize> = (0..vocab.len()).filter(|&id| id != unk).collect();
    if candidates.len() < 2 {
        return Err(BattraeError::Sampling(format!(
            "{side} vocabulary needs at least two real tokens, has {}",
            candidates.len()
        )));
    }
    let mut out = phrase.to_vec();
    let pos = rng.random_range(0..phrase.len());
    loop {
        let c = candidates[rng.random_range(0..candidates.len())];
        if c != phrase[pos] {
            out[pos] = c;
            return Ok(out);
        }
    }
}

/// Replaces one uniformly chosen token on each side by a different random
/// vocabulary token (`<unk>` is never drawn). Source is corrupted first.
pub fn sample_negatives<R: Rng + ?Sized>(
    pair: &PhrasePair,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    rng: &mut R,
) -> Result<TrainingInstance> {
    let neg_source = corrupt(&pair.source, source_vocab, "source", rng)?;
    let neg_target = corrupt(&pair.target, target_vocab, "target", rng)?;
    Ok(TrainingInstance {
        positive: pair.clone(),
        neg_source,
        neg_target,
    })
}

pub fn sample_all_negatives<R: Rng + ?Sized>(
    pairs: &[PhrasePair],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<TrainingInstance>> {
    pairs
        .iter()
        .map(|p| sample_negatives(p, source_vocab, target_vocab, rng))
        .collect()
}

/// Tree topologies of one instance: positive source, positive target,
/// corrupted source, corrupted target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceShapes(pub [TreeShape; 4]);

/// Forward pass of one instance.
#[derive(Debug, Clone)]
pub(crate) struct InstanceForward {
    /// f, e, f⁻, e⁻
    pub trees: [PhraseTree; 4],
    pub grans: [GranularityMatrix; 4],
    /// (f, e), (f, e⁻), (f⁻, e)
    pub pairs: [PairForward; 3],
}

pub(crate) const F: usize = 0;
pub(crate) const E: usize = 1;
pub(crate) const F_NEG: usize = 2;
pub(crate) const E_NEG: usize = 3;

impl InstanceForward {
    pub fn rec_error(&self) -> f64 {
        self.trees[F].rec_error() + self.trees[E].rec_error()
    }

    /// The two hinge arguments `1 + s(f, e⁻) − s(f, e)` and `1 + s(f⁻, e) − s(f, e)`.
    pub fn margins(&self) -> [f64; 2] {
        let pos = self.pairs[0].score;
        [
            MARGIN + self.pairs[1].score - pos,
            MARGIN + self.pairs[2].score - pos,
        ]
    }

    pub fn semantic_error(&self) -> f64 {
        self.margins().iter().map(|m| m.max(0.0)).sum()
    }

    pub fn value(&self, hp: &Hyperparams) -> f64 {
        hp.alpha * self.rec_error() + hp.beta() * self.semantic_error()
    }

    pub fn shapes(&self) -> InstanceShapes {
        InstanceShapes([
            self.trees[0].shape(),
            self.trees[1].shape(),
            self.trees[2].shape(),
            self.trees[3].shape(),
        ])
    }
}

pub(crate) fn forward_instance(
    inst: &TrainingInstance,
    model: &ModelParams,
    shapes: Option<&InstanceShapes>,
) -> Result<InstanceForward> {
    let phrases = [
        (&inst.positive.source, true),
        (&inst.positive.target, false),
        (&inst.neg_source, true),
        (&inst.neg_target, false),
    ];
    let mut trees = Vec::with_capacity(4);
    for (k, (tokens, is_source)) in phrases.into_iter().enumerate() {
        let (table, rae) = if is_source {
            (&model.source_embeddings, &model.source_rae)
        } else {
            (&model.target_embeddings, &model.target_rae)
        };
        let tree = match shapes {
            Some(s) => build_tree_with_shape(tokens, table, rae, &s.0[k])?,
            None => build_tree(tokens, table, rae)?,
        };
        if tree.rec_error().is_nan() || !tree.rec_error().is_finite() {
            return Err(BattraeError::numeric("recursive autoencoder"));
        }
        trees.push(tree);
    }
    let trees: [PhraseTree; 4] = trees.try_into().expect("four trees");
    let grans = [
        extract_granularities(&trees[F]),
        extract_granularities(&trees[E]),
        extract_granularities(&trees[F_NEG]),
        extract_granularities(&trees[E_NEG]),
    ];
    let pairs = [
        score_granularities(&grans[F], &grans[E], model)?,
        score_granularities(&grans[F], &grans[E_NEG], model)?,
        score_granularities(&grans[F_NEG], &grans[E], model)?,
    ];
    Ok(InstanceForward {
        trees,
        grans,
        pairs,
    })
}

/// Two-hinge ranking error of one instance with freshly built trees.
pub fn semantic_error(inst: &TrainingInstance, model: &ModelParams) -> Result<f64> {
    Ok(forward_instance(inst, model, None)?.semantic_error())
}

/// `Σ_g λ_g / 2 ‖θ_g‖²`.
pub fn regularizer(model: &ModelParams, hp: &Hyperparams) -> f64 {
    ParamGroup::ALL
        .iter()
        .map(|&g| 0.5 * hp.lambda(g) * model.group_squared_norm(g))
        .sum()
}

/// Sum over instances of `α·E_rec + β·E_sem`, plus the regularizer once.
pub fn joint_objective(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(BattraeError::Input(
            "objective needs at least one instance".into(),
        ));
    }
    let mut total = 0.0;
    for inst in instances {
        total += forward_instance(inst, model, None)?.value(hp);
    }
    Ok(total + regularizer(model, hp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::score_pair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| format!("w{i}")))
    }

    #[test]
    fn negatives_differ_in_one_position() {
        let sv = vocab(6);
        let tv = vocab(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let pair = PhrasePair::new(vec![1, 2, 3], vec![4, 4]).unwrap();
            let inst = sample_negatives(&pair, &sv, &tv, &mut rng).unwrap();
            let diff = |a: &[usize], b: &[usize]| a.iter().zip(b).filter(|(x, y)| x != y).count();
            assert_eq!(inst.neg_source.len(), 3);
            assert_eq!(diff(&inst.neg_source, &pair.source), 1);
            assert_eq!(diff(&inst.neg_target, &pair.target), 1);
            assert!(!inst.neg_source.contains(&sv.unk_id()));
        }
    }

    #[test]
    fn negatives_replay_the_generator() {
        let sv = vocab(6);
        let tv = vocab(5);
        let pair = PhrasePair::new(vec![1, 2], vec![3]).unwrap();
        let inst = sample_negatives(&pair, &sv, &tv, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();

        // Replay: position draw, then token draws until one differs.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos = rng.random_range(0..2usize);
        let mut tok;
        loop {
            tok = 1 + rng.random_range(0..6usize);
            if tok != pair.source[pos] {
                break;
            }
        }
        let mut expect = pair.source.clone();
        expect[pos] = tok;
        assert_eq!(inst.neg_source, expect);

        let again = sample_negatives(&pair, &sv, &tv, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn single_word_vocab_is_an_error() {
        let v = Vocabulary::from_tokens(["x"]);
        let pair = PhrasePair::new(vec![1], vec![1]).unwrap();
        let err = sample_negatives(&pair, &v, &v, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, BattraeError::Sampling(_)));
    }

    fn toy(seed: u64) -> (Vec<TrainingInstance>, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims {
            source: 3,
            target: 3,
            attention: 2,
            semantic: 3,
        };
        let mut model = ModelParams::random(dims, 8, 8, &mut rng);
        for block in model.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= 60.0);
        }
        let sv = vocab(7);
        let pairs = [
            PhrasePair::new(vec![1, 2, 3], vec![4, 5]).unwrap(),
            PhrasePair::new(vec![6], vec![1, 2, 7, 3]).unwrap(),
        ];
        let inst = sample_all_negatives(&pairs, &sv, &sv, &mut rng).unwrap();
        (inst, model)
    }

    #[test]
    fn semantic_error_compositional_oracle() {
        let (inst, model) = toy(1);
        for i in &inst {
            let pos = score_pair(&i.positive, &model).unwrap().score;
            let neg_t = PhrasePair::new(i.positive.source.clone(), i.neg_target.clone()).unwrap();
            let neg_s = PhrasePair::new(i.neg_source.clone(), i.positive.target.clone()).unwrap();
            let st = score_pair(&neg_t, &model).unwrap().score;
            let ss = score_pair(&neg_s, &model).unwrap().score;
            let expect = (1.0 + st - pos).max(0.0) + (1.0 + ss - pos).max(0.0);
            assert_eq!(semantic_error(i, &model).unwrap(), expect);
        }
    }

    #[test]
    fn hinge_edge_cases() {
        let (inst, mut model) = toy(2);
        // S = 0 makes all three scores equal (zero): each hinge contributes 1.
        model.semantic.bilinear = crate::linalg::Matrix::zeros(3, 3);
        assert_eq!(semantic_error(&inst[0], &model).unwrap(), 2.0);
    }

    #[test]
    fn regularizer_cases() {
        let (_, model) = toy(3);
        let mut hp = Hyperparams::default();
        hp.lambda_l = 0.0;
        hp.lambda_rec = 0.0;
        hp.lambda_att = 0.0;
        hp.lambda_sem = 0.0;
        assert_eq!(regularizer(&model, &hp), 0.0);

        let mut only_sem = model.zeros_like();
        only_sem.semantic = model.semantic.clone();
        hp.lambda_sem = 2.0;
        hp.lambda_l = 5.0;
        let norm: f64 = model
            .semantic
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum();
        assert!((regularizer(&only_sem, &hp) - norm).abs() < 1e-12);

        // independent grouping over the flat vector
        let hp = Hyperparams::default();
        let flat = model.flatten();
        let d = 3usize;
        let (nl, nrec, natt) = (
            2 * d * 8,
            2 * (2 * d * d + d + 2 * d * d + 2 * d),
            2 * 3 + 2 * 3 + 2,
        );
        let sq = |r: std::ops::Range<usize>| flat[r].iter().map(|v| v * v).sum::<f64>();
        let expect = 0.5 * hp.lambda_l * sq(0..nl)
            + 0.5 * hp.lambda_rec * sq(nl..nl + nrec)
            + 0.5 * hp.lambda_att * sq(nl + nrec..nl + nrec + natt)
            + 0.5 * hp.lambda_sem * sq(nl + nrec + natt..flat.len());
        assert!((regularizer(&model, &hp) - expect).abs() < 1e-15);

        let mut doubled = hp;
        doubled.lambda_l *= 2.0;
        doubled.lambda_rec *= 2.0;
        doubled.lambda_att *= 2.0;
        doubled.lambda_sem *= 2.0;
        assert_eq!(
            regularizer(&model, &doubled),
            2.0 * regularizer(&model, &hp)
        );
    }

    #[test]
    fn joint_objective_cases() {
        let (inst, model) = toy(4);
        let mut hp = Hyperparams {
            alpha: 1.0,
            lambda_l: 0.0,
            lambda_rec: 0.0,
            lambda_att: 0.0,
            lambda_sem: 0.0,
            ..Hyperparams::default()
        };
        let rec: f64 = inst
            .iter()
            .map(|i| {
                let s = score_pair(&i.positive, &model).unwrap();
                s.source_tree.rec_error() + s.target_tree.rec_error()
            })
            .sum();
        assert!((joint_objective(&inst, &model, &hp).unwrap() - rec).abs() < 1e-14);

        hp = Hyperparams::default();
        let manual: f64 = inst
            .iter()
            .map(|i| {
                let s = score_pair(&i.positive, &model).unwrap();
                hp.alpha * (s.source_tree.rec_error() + s.target_tree.rec_error())
                    + hp.beta() * semantic_error(i, &model).unwrap()
            })
            .sum::<f64>()
            + regularizer(&model, &hp);
        assert!((joint_objective(&inst, &model, &hp).unwrap() - manual).abs() < 1e-12);
        assert!(joint_objective(&[], &model, &hp).is_err());
    }

    #[test]
    fn satisfied_margins_give_zero() {
        let (inst, mut model) = toy(5);
        // Make every score equal so margins are 1, then shift the positive
        // score by making the bilinear matrix zero and checking the formula.
        model.semantic.bilinear = crate::linalg::Matrix::zeros(3, 3);
        let f = forward_instance(&inst[0], &model, None).unwrap();
        assert_eq!(f.margins(), [1.0, 1.0]);
        let hp = Hyperparams {
            alpha: 0.0,
            lambda_l: 0.0,
            lambda_rec: 0.0,
            lambda_att: 0.0,
            lambda_sem: 0.0,
            ..Hyperparams::default()
        };
        assert_eq!(joint_objective(&inst, &model, &hp).unwrap(), 4.0);
    }

    #[test]
    fn hyperparam_defaults() {
        let hp = Hyperparams::default();
        assert_eq!(hp.alpha, 0.125);
        assert_eq!(hp.beta(), 0.875);
        assert_eq!(hp.dims.semantic, 50);
        assert!(hp.validate().is_ok());
        assert!(Hyperparams { alpha: 1.5, ..hp }.validate().is_err());
        assert!(Hyperparams {
            lambda_att: -1.0,
            ..hp
        }
        .validate()
        .is_err());
    }
}
