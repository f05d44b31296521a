//! Analytic gradients of the joint objective and a central-difference oracle.
//!
//! Trees are rebuilt greedily from the current parameters at every
//! evaluation and then held fixed while differentiating; the merge choice
//! itself contributes no gradient.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{BattraeError, Result};
use crate::linalg::{self, Matrix};
use crate::objective::{
    forward_instance, regularizer, Hyperparams, InstanceForward, InstanceShapes, TrainingInstance,
    E, E_NEG, F, F_NEG,
};
use crate::params::{ModelParams, ParamGroup};
use crate::rae::{GranularityMatrix, PhraseTree, RaeParams};
use crate::similarity::PairForward;

pub use crate::params::{Dims, FLAT_ORDER_ID};

/// Instances per reduction chunk. Fixed so the summation order does not
/// depend on the number of worker threads.
const CHUNK: usize = 8;

/// Flat gradient in the canonical parameter order.
pub type Gradient = Vec<f64>;

/// Pair index → (source tree, target tree) within an instance.
const PAIR_TREES: [(usize, usize); 3] = [(F, E), (F, E_NEG), (F_NEG, E)];

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Gradient,
    /// Tree topologies used for this evaluation.
    pub shapes: Vec<InstanceShapes>,
}

/// Evaluates the objective and its gradient, optionally on a rayon pool.
pub struct Evaluator<'a> {
    instances: &'a [TrainingInstance],
    hp: Hyperparams,
    pool: Option<ThreadPool>,
}

impl<'a> Evaluator<'a> {
    pub fn new(instances: &'a [TrainingInstance], hp: Hyperparams, threads: usize) -> Result<Self> {
        if instances.is_empty() {
            return Err(BattraeError::Input(
                "objective needs at least one instance".into(),
            ));
        }
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| BattraeError::Input(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Evaluator {
            instances,
            hp,
            pool,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    /// Objective and gradient; trees are rebuilt unless `shapes` pins them.
    pub fn evaluate(
        &self,
        model: &ModelParams,
        shapes: Option<&[InstanceShapes]>,
    ) -> Result<Evaluation> {
        if let Some(s) = shapes {
            if s.len() != self.instances.len() {
                return Err(BattraeError::shape("one shape set per instance required"));
            }
        }
        let hp = &self.hp;
        let work = |(c, chunk): (usize, &[TrainingInstance])| -> Result<ChunkResult> {
            let mut grad = model.zeros_like();
            let mut values = Vec::with_capacity(chunk.len());
            let mut chunk_shapes = Vec::with_capacity(chunk.len());
            for (k, inst) in chunk.iter().enumerate() {
                let pinned = shapes.map(|s| &s[c * CHUNK + k]);
                let fw = forward_instance(inst, model, pinned)?;
                values.push(fw.value(hp));
                backward_instance(&fw, model, hp, &mut grad)?;
                chunk_shapes.push(fw.shapes());
            }
            Ok(ChunkResult {
                values,
                grad,
                shapes: chunk_shapes,
            })
        };
        let chunks: Vec<(usize, &[TrainingInstance])> =
            self.instances.chunks(CHUNK).enumerate().collect();
        let results: Vec<Result<ChunkResult>> = match &self.pool {
            Some(pool) => pool.install(|| chunks.into_par_iter().map(work).collect()),
            None => chunks.into_iter().map(work).collect(),
        };

        let mut value = 0.0;
        let mut grad = model.zeros_like();
        let mut all_shapes = Vec::with_capacity(self.instances.len());
        for r in results {
            let r = r?;
            for v in r.values {
                value += v;
            }
            grad.add_scaled(1.0, &r.grad);
            all_shapes.extend(r.shapes);
        }
        value += regularizer(model, hp);
        add_regularizer_gradient(model, hp, &mut grad);

        let gradient = grad.flatten();
        if !value.is_finite() {
            return Err(BattraeError::numeric("objective value"));
        }
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            let (group, name, _) = model.locate(i).expect("index in range");
            return Err(BattraeError::numeric(format!(
                "gradient of {name} ({group})"
            )));
        }
        Ok(Evaluation {
            value,
            gradient,
            shapes: all_shapes,
        })
    }
}

struct ChunkResult {
    values: Vec<f64>,
    grad: ModelParams,
    shapes: Vec<InstanceShapes>,
}

/// Joint objective value and its analytic gradient, single-threaded.
pub fn objective_and_gradient(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
) -> Result<(f64, Gradient)> {
    let e = Evaluator::new(instances, *hp, 1)?.evaluate(model, None)?;
    Ok((e.value, e.gradient))
}

fn add_regularizer_gradient(model: &ModelParams, hp: &Hyperparams, grad: &mut ModelParams) {
    let lambdas: Vec<f64> = model
        .blocks()
        .iter()
        .map(|(g, _, _)| hp.lambda(*g))
        .collect();
    for ((dst, (_, _, src)), lambda) in grad
        .blocks_mut()
        .into_iter()
        .zip(model.blocks())
        .zip(lambdas)
    {
        linalg::axpy(lambda, src, dst);
    }
}

fn backward_instance(
    fw: &InstanceForward,
    model: &ModelParams,
    hp: &Hyperparams,
    grad: &mut ModelParams,
) -> Result<()> {
    let mut node_grads: Vec<Vec<Vec<f64>>> = fw
        .trees
        .iter()
        .map(|t| vec![vec![0.0; t.nodes[0].embedding.len()]; t.nodes.len()])
        .collect();

    // Hinges: an active hinge k pushes +β onto the negative pair k+1 and −β onto the positive pair.
    let beta = hp.beta();
    let mut upstream = [0.0; 3];
    for (k, m) in fw.margins().iter().enumerate() {
        if *m > 0.0 {
            upstream[0] -= beta;
            upstream[k + 1] += beta;
        }
    }
    for (p, &u) in upstream.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let (si, ti) = PAIR_TREES[p];
        let (gs, gt) = backward_pair(&fw.pairs[p], &fw.grans[si], &fw.grans[ti], u, model, grad)?;
        scatter_columns(&gs, &fw.grans[si], &mut node_grads[si]);
        scatter_columns(&gt, &fw.grans[ti], &mut node_grads[ti]);
    }

    for (k, tree) in fw.trees.iter().enumerate() {
        let rec_scale = if k == F || k == E { hp.alpha } else { 0.0 };
        let is_source = k == F || k == F_NEG;
        let (rae, rae_grad, table_grad) = if is_source {
            (
                &model.source_rae,
                &mut grad.source_rae,
                grad.source_embeddings.matrix_mut(),
            )
        } else {
            (
                &model.target_rae,
                &mut grad.target_rae,
                grad.target_embeddings.matrix_mut(),
            )
        };
        backward_tree(
            tree,
            &mut node_grads[k],
            rae,
            rec_scale,
            rae_grad,
            table_grad,
        )?;
    }
    Ok(())
}

fn scatter_columns(g: &Matrix, gran: &GranularityMatrix, node_grads: &mut [Vec<f64>]) {
    for (c, &id) in gran.node_ids.iter().enumerate() {
        linalg::add_assign(&mut node_grads[id], g.column(c));
    }
}

/// Back-propagates `upstream · ∂score` through the semantic head and the
/// attention network. Returns gradients for the columns of both granularity matrices.
fn backward_pair(
    fw: &PairForward,
    source: &GranularityMatrix,
    target: &GranularityMatrix,
    upstream: f64,
    model: &ModelParams,
    grad: &mut ModelParams,
) -> Result<(Matrix, Matrix)> {
    let sem = &model.semantic;
    let att = &fw.attention;
    let (ss, st) = (&fw.source_semantic, &fw.target_semantic);

    grad.semantic.bilinear.add_outer(upstream, ss, st);
    let mut g_ss = sem.bilinear.matvec(st)?;
    let mut g_st = sem.bilinear.matvec_t(ss)?;
    g_ss.iter_mut().for_each(|v| *v *= upstream);
    g_st.iter_mut().for_each(|v| *v *= upstream);

    let delta_s: Vec<f64> = g_ss
        .iter()
        .zip(ss)
        .map(|(g, s)| g * (1.0 - s * s))
        .collect();
    let delta_t: Vec<f64> = g_st
        .iter()
        .zip(st)
        .map(|(g, s)| g * (1.0 - s * s))
        .collect();
    grad.semantic
        .w_source
        .add_outer(1.0, &delta_s, &att.source_phrase);
    grad.semantic
        .w_target
        .add_outer(1.0, &delta_t, &att.target_phrase);
    linalg::add_assign(&mut grad.semantic.bias, &delta_s);
    linalg::add_assign(&mut grad.semantic.bias, &delta_t);
    let g_ps = sem.w_source.matvec_t(&delta_s)?;
    let g_pt = sem.w_target.matvec_t(&delta_t)?;

    // p = M a
    let mut g_ms = Matrix::zeros(source.dim(), source.n());
    let mut g_mt = Matrix::zeros(target.dim(), target.n());
    for (i, &a) in att.source_weights.iter().enumerate() {
        linalg::axpy(a, &g_ps, g_ms.column_mut(i));
    }
    for (j, &a) in att.target_weights.iter().enumerate() {
        linalg::axpy(a, &g_pt, g_mt.column_mut(j));
    }
    let g_as = source.columns.matvec_t(&g_ps)?;
    let g_at = target.columns.matvec_t(&g_pt)?;

    let g_sum_s = softmax_backward(&att.source_weights, &g_as);
    let g_sum_t = softmax_backward(&att.target_weights, &g_at);

    // B = σ(A_sᵀ A_t), row and column sums
    let b = &att.matrix;
    let mut g_z = Matrix::zeros(b.rows(), b.cols());
    for (j, g_t) in g_sum_t.iter().enumerate() {
        for (i, g_s) in g_sum_s.iter().enumerate() {
            let v = b.get(i, j);
            g_z.set(i, j, (g_s + g_t) * v * (1.0 - v));
        }
    }
    let (a_s, a_t) = (&att.projected_source, &att.projected_target);
    let mut g_a_s = Matrix::zeros(a_s.rows(), a_s.cols());
    let mut g_a_t = Matrix::zeros(a_t.rows(), a_t.cols());
    for j in 0..b.cols() {
        for i in 0..b.rows() {
            let gz = g_z.get(i, j);
            linalg::axpy(gz, a_t.column(j), g_a_s.column_mut(i));
            linalg::axpy(gz, a_s.column(i), g_a_t.column_mut(j));
        }
    }

    projection_backward(
        a_s,
        &g_a_s,
        source,
        &model.attention.w_source,
        &mut grad.attention.w_source,
        &mut grad.attention.bias,
        &mut g_ms,
    )?;
    projection_backward(
        a_t,
        &g_a_t,
        target,
        &model.attention.w_target,
        &mut grad.attention.w_target,
        &mut grad.attention.bias,
        &mut g_mt,
    )?;
    Ok((g_ms, g_mt))
}

fn softmax_backward(a: &[f64], g: &[f64]) -> Vec<f64> {
    let inner = linalg::dot(a, g);
    a.iter().zip(g).map(|(ai, gi)| ai * (gi - inner)).collect()
}

/// Through `A = tanh(W M + b)`.
fn projection_backward(
    projected: &Matrix,
    g_projected: &Matrix,
    input: &GranularityMatrix,
    w: &Matrix,
    g_w: &mut Matrix,
    g_bias: &mut [f64],
    g_input: &mut Matrix,
) -> Result<()> {
    for c in 0..projected.cols() {
        let delta: Vec<f64> = g_projected
            .column(c)
            .iter()
            .zip(projected.column(c))
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        g_w.add_outer(1.0, &delta, input.columns.column(c));
        linalg::add_assign(g_bias, &delta);
        linalg::add_assign(g_input.column_mut(c), &w.matvec_t(&delta)?);
    }
    Ok(())
}

/// Back-propagation through structure, root to leaves. `node_grads` holds the
/// gradient already flowing into each node embedding from attention.
fn backward_tree(
    tree: &PhraseTree,
    node_grads: &mut [Vec<f64>],
    rae: &RaeParams,
    rec_scale: f64,
    rae_grad: &mut RaeParams,
    table_grad: &mut Matrix,
) -> Result<()> {
    let d = rae.dim();
    for id in (tree.len()..tree.nodes.len()).rev() {
        let node = &tree.nodes[id];
        let (l, r) = node.children.expect("internal node");
        let mut x = Vec::with_capacity(2 * d);
        x.extend_from_slice(&tree.nodes[l].embedding);
        x.extend_from_slice(&tree.nodes[r].embedding);
        let y = &node.embedding;
        let mut g_y = std::mem::take(&mut node_grads[id]);
        let mut g_x = vec![0.0; 2 * d];

        if rec_scale != 0.0 {
            // E = ½‖x − r‖², r = tanh(W2 y + b2)
            let diff: Vec<f64> = x
                .iter()
                .zip(&node.reconstruction)
                .map(|(a, b)| rec_scale * (a - b))
                .collect();
            let delta2: Vec<f64> = diff
                .iter()
                .zip(&node.reconstruction)
                .map(|(g, r)| -g * (1.0 - r * r))
                .collect();
            rae_grad.w2.add_outer(1.0, &delta2, y);
            linalg::add_assign(&mut rae_grad.b2, &delta2);
            linalg::add_assign(&mut g_y, &rae.w2.matvec_t(&delta2)?);
            linalg::add_assign(&mut g_x, &diff);
        }

        let delta1: Vec<f64> = g_y.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
        rae_grad.w1.add_outer(1.0, &delta1, &x);
        linalg::add_assign(&mut rae_grad.b1, &delta1);
        linalg::add_assign(&mut g_x, &rae.w1.matvec_t(&delta1)?);

        linalg::add_assign(&mut node_grads[l], &g_x[..d]);
        linalg::add_assign(&mut node_grads[r], &g_x[d..]);
    }
    for (i, &tok) in tree.tokens.iter().enumerate() {
        linalg::add_assign(table_grad.column_mut(tok), &node_grads[i]);
    }
    Ok(())
}

/// Objective decomposed into additive terms on frozen trees, used by the
/// finite-difference oracle. The hinge constant is dropped from the terms
/// (it cancels in any difference where hinge activity is unchanged).
struct FrozenTerms {
    terms: Vec<f64>,
    margins: Vec<f64>,
    value: f64,
}

impl FrozenTerms {
    fn active(&self) -> impl Iterator<Item = bool> + '_ {
        self.margins.iter().map(|m| *m > 0.0)
    }
}

fn frozen_terms(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
    shapes: &[InstanceShapes],
) -> Result<FrozenTerms> {
    let mut terms = Vec::new();
    let mut margins = Vec::new();
    let mut value = 0.0;
    let beta = hp.beta();
    for (inst, s) in instances.iter().zip(shapes) {
        let fw = forward_instance(inst, model, Some(s))?;
        for tree in [&fw.trees[F], &fw.trees[E]] {
            for node in tree.nodes.iter().filter(|n| !n.is_leaf()) {
                terms.push(hp.alpha * node.rec_error);
            }
        }
        let pos = fw.pairs[0].score;
        for (k, m) in fw.margins().into_iter().enumerate() {
            margins.push(m);
            if m > 0.0 {
                terms.push(beta * fw.pairs[k + 1].score);
                terms.push(-beta * pos);
            }
        }
        value += fw.value(hp);
    }
    for (group, _, block) in model.blocks() {
        let lambda = hp.lambda(group);
        terms.extend(block.iter().map(|v| 0.5 * lambda * v * v));
    }
    value += regularizer(model, hp);
    Ok(FrozenTerms {
        terms,
        margins,
        value,
    })
}

/// Margin band treated as non-differentiable by the gradient check.
pub const BOUNDARY_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct FiniteDifference {
    pub gradient: Gradient,
    /// Coordinates whose ±ε probes straddle or touch a hinge boundary.
    pub near_boundary: Vec<bool>,
}

/// Central differences on the objective with tree topologies frozen at `model`.
pub fn finite_difference_gradient(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
    epsilon: f64,
) -> Result<Gradient> {
    Ok(finite_difference_detailed(instances, model, hp, epsilon)?.gradient)
}

pub fn finite_difference_detailed(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
    epsilon: f64,
) -> Result<FiniteDifference> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(BattraeError::Input("epsilon must be positive".into()));
    }
    if instances.is_empty() {
        return Err(BattraeError::Input(
            "objective needs at least one instance".into(),
        ));
    }
    let shapes: Vec<InstanceShapes> = instances
        .iter()
        .map(|inst| forward_instance(inst, model, None).map(|fw| fw.shapes()))
        .collect::<Result<_>>()?;
    let base = frozen_terms(instances, model, hp, &shapes)?;
    let theta = model.flatten();
    let mut probe = model.clone();
    let mut gradient = vec![0.0; theta.len()];
    let mut near_boundary = vec![false; theta.len()];
    let mut x = theta.clone();
    for k in 0..theta.len() {
        x[k] = theta[k] + epsilon;
        probe.assign_flat(&x)?;
        let plus = frozen_terms(instances, &probe, hp, &shapes)?;
        x[k] = theta[k] - epsilon;
        probe.assign_flat(&x)?;
        let minus = frozen_terms(instances, &probe, hp, &shapes)?;
        x[k] = theta[k];

        let same_activity = plus.active().eq(base.active()) && minus.active().eq(base.active());
        let touches = base
            .margins
            .iter()
            .zip(plus.margins.iter().zip(&minus.margins))
            .any(|(m0, (mp, mm))| m0.abs() < BOUNDARY_TOLERANCE && (mp != m0 || mm != m0));
        near_boundary[k] = !same_activity || touches;

        let diff = if same_activity {
            plus.terms
                .iter()
                .zip(&minus.terms)
                .fold(0.0, |acc, (p, m)| acc + (p - m))
        } else {
            plus.value - minus.value
        };
        gradient[k] = diff / (2.0 * epsilon);
    }
    Ok(FiniteDifference {
        gradient,
        near_boundary,
    })
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradientCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .filter(|g| g.worst_index.is_some())
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_relative_error < tolerance)
    }
}

/// Per-group comparison of two gradients, skipping coordinates flagged in `exclude`.
pub fn compare_gradients(
    model: &ModelParams,
    analytic: &[f64],
    numeric: &[f64],
    exclude: &[bool],
) -> GradientCheckReport {
    let groups = model
        .group_ranges()
        .into_iter()
        .map(|(group, range)| {
            let mut report = GroupReport {
                group,
                max_relative_error: 0.0,
                worst_index: None,
                checked: 0,
                excluded: 0,
            };
            for i in range {
                if exclude.get(i).copied().unwrap_or(false) {
                    report.excluded += 1;
                    continue;
                }
                report.checked += 1;
                let e = relative_error(analytic[i], numeric[i]);
                if report.worst_index.is_none() || e > report.max_relative_error {
                    report.max_relative_error = e;
                    report.worst_index = Some(i);
                }
            }
            report
        })
        .collect();
    GradientCheckReport { groups }
}

/// Analytic vs central-difference gradients with boundary coordinates excluded.
pub fn gradient_check(
    instances: &[TrainingInstance],
    model: &ModelParams,
    hp: &Hyperparams,
    epsilon: f64,
) -> Result<GradientCheckReport> {
    let (_, analytic) = objective_and_gradient(instances, model, hp)?;
    let fd = finite_difference_detailed(instances, model, hp, epsilon)?;
    Ok(compare_gradients(
        model,
        &analytic,
        &fd.gradient,
        &fd.near_boundary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PhrasePair, Vocabulary};
    use crate::objective::{joint_objective, sample_all_negatives};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, scale: f64) -> (Vec<TrainingInstance>, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims {
            source: 3,
            target: 3,
            attention: 3,
            semantic: 3,
        };
        let vocab = Vocabulary::from_tokens((0..11).map(|i| format!("w{i}")));
        let mut model = ModelParams::random(dims, 12, 12, &mut rng);
        for b in model.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= scale);
        }
        let pairs: Vec<PhrasePair> = (0..3)
            .map(|_| {
                let phrase = |rng: &mut ChaCha8Rng| {
                    let len = rng.random_range(1..=4);
                    (0..len)
                        .map(|_| rng.random_range(1..12))
                        .collect::<Vec<usize>>()
                };
                PhrasePair::new(phrase(&mut rng), phrase(&mut rng)).unwrap()
            })
            .collect();
        let inst = sample_all_negatives(&pairs, &vocab, &vocab, &mut rng).unwrap();
        (inst, model)
    }

    #[test]
    fn value_matches_joint_objective() {
        for seed in 0..5 {
            let (inst, model) = tiny(seed, 50.0);
            let hp = Hyperparams::default();
            let (v, _) = objective_and_gradient(&inst, &model, &hp).unwrap();
            let j = joint_objective(&inst, &model, &hp).unwrap();
            assert!((v - j).abs() < 1e-12, "{v} vs {j}");
        }
    }

    #[test]
    fn matches_finite_differences() {
        for seed in 0..4 {
            let (inst, model) = tiny(seed, 50.0);
            let hp = Hyperparams {
                alpha: 0.4,
                lambda_l: 1e-2,
                lambda_rec: 1e-3,
                lambda_att: 1e-3,
                lambda_sem: 1e-2,
                ..Hyperparams::default()
            };
            let report = gradient_check(&inst, &model, &hp, 1e-5).unwrap();
            assert!(report.passes(1e-6), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn pure_regularizer_on_semantic_group() {
        let (inst, model) = tiny(7, 50.0);
        // β = 0 removes the semantic error; only λ_sem θ_sem remains.
        let hp = Hyperparams {
            alpha: 1.0,
            lambda_l: 0.0,
            lambda_rec: 0.0,
            lambda_att: 0.0,
            lambda_sem: 1.0,
            ..Hyperparams::default()
        };
        let (_, g) = objective_and_gradient(&inst, &model, &hp).unwrap();
        let (_, range) = model.group_ranges()[3].clone();
        assert_eq!(&g[range.clone()], &model.flatten()[range]);
    }

    #[test]
    fn severed_semantic_path() {
        let (inst, model) = tiny(8, 50.0);
        let hp = Hyperparams {
            alpha: 1.0,
            ..Hyperparams::default()
        };
        let (_, g) = objective_and_gradient(&inst, &model, &hp).unwrap();
        let flat = model.flatten();
        for (group, range) in model.group_ranges() {
            if matches!(group, ParamGroup::Attention | ParamGroup::Semantic) {
                for i in range {
                    assert_eq!(g[i], hp.lambda(group) * flat[i]);
                }
            }
        }
    }

    #[test]
    fn exact_reconstruction_has_zero_gradient() {
        // All-zero parameters: every reconstruction is exact, every score 0.
        let (inst, model) = tiny(9, 0.0);
        let hp = Hyperparams {
            alpha: 1.0,
            lambda_l: 0.0,
            lambda_rec: 0.0,
            lambda_att: 0.0,
            lambda_sem: 0.0,
            ..Hyperparams::default()
        };
        let (v, g) = objective_and_gradient(&inst, &model, &hp).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let fd = finite_difference_gradient(&inst, &model, &hp, 1e-5).unwrap();
        assert!(fd.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let (inst, model) = tiny(10, 50.0);
        let hp = Hyperparams {
            alpha: 0.0,
            lambda_l: 0.3,
            lambda_rec: 0.2,
            lambda_att: 0.1,
            lambda_sem: 0.4,
            ..Hyperparams::default()
        };
        // Shift the semantic error out: S = 0 gives constant hinges, no gradient.
        let mut model = model;
        model.semantic.bilinear = Matrix::zeros(3, 3);
        let fd = finite_difference_gradient(&inst, &model, &hp, 1e-5).unwrap();
        let flat = model.flatten();
        for (group, range) in model.group_ranges() {
            for i in range {
                if group == ParamGroup::Semantic && (model.locate(i).unwrap().1 == "S") {
                    continue;
                }
                let expect = hp.lambda(group) * flat[i];
                assert!(
                    (fd[i] - expect).abs() < 1e-9 * (1.0 + expect.abs()),
                    "{i}: {} vs {expect}",
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (inst0, model) = tiny(11, 50.0);
        let mut inst = Vec::new();
        for _ in 0..7 {
            inst.extend(inst0.iter().cloned());
        }
        inst.shuffle_with(&mut rng);
        let hp = Hyperparams::default();
        let a = Evaluator::new(&inst, hp, 1)
            .unwrap()
            .evaluate(&model, None)
            .unwrap();
        let b = Evaluator::new(&inst, hp, 4)
            .unwrap()
            .evaluate(&model, None)
            .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.gradient, b.gradient);
    }

    trait ShuffleWith {
        fn shuffle_with(&mut self, rng: &mut ChaCha8Rng);
    }
    impl<T> ShuffleWith for Vec<T> {
        fn shuffle_with(&mut self, rng: &mut ChaCha8Rng) {
            use rand::seq::SliceRandom;
            self.shuffle(rng);
        }
    }
}
