//! End-to-end operations behind the `battrae` binary: train, score, attend
//! and gradient-check.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::rank_by_weight;
use crate::corpus::{
    load_corpus, load_pretrained_embeddings, read_raw_pairs, Corpus, RawPair, Vocabulary,
};
use crate::error::{BattraeError, Result, StageContext};
use crate::grad::{compare_gradients, finite_difference_detailed, Evaluator, GradientCheckReport};
use crate::model_io::{init_model, load_model, save_model};
use crate::objective::{sample_all_negatives, Hyperparams, TrainingInstance};
use crate::optimizer::{minimize_with_observer, IterationRecord, LbfgsConfig, OptimizationTrace};
use crate::params::{Dims, ModelParams};
use crate::similarity::{score_pair, ScoredPair};
use crate::toy::tiny_problem;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| BattraeError::io(path, e))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BattraeError + '_ {
    move |e| BattraeError::io(path, e)
}

/// Result of training in memory.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ModelParams,
    pub instances: Vec<TrainingInstance>,
    pub trace: OptimizationTrace,
}

/// Trains on an in-memory corpus. One ChaCha8 stream seeded with `hp.seed`
/// drives, in order: pretrained-table gaps, parameter initialization and
/// negative sampling (`pretrained` tables must already be loaded with it).
pub fn train_corpus(
    corpus: &Corpus,
    hp: &Hyperparams,
    lbfgs: &LbfgsConfig,
    threads: usize,
    rng: &mut ChaCha8Rng,
    pretrained: (
        Option<crate::corpus::EmbeddingTable>,
        Option<crate::corpus::EmbeddingTable>,
    ),
    mut observer: impl FnMut(&IterationRecord),
) -> Result<Trained> {
    hp.validate().stage("checking hyperparameters")?;
    let mut model = init_model(
        hp,
        &corpus.source_vocab,
        &corpus.target_vocab,
        pretrained.0,
        pretrained.1,
        rng,
    )
    .stage("initializing parameters")?;
    let instances = sample_all_negatives(
        &corpus.pairs,
        &corpus.source_vocab,
        &corpus.target_vocab,
        rng,
    )
    .stage("sampling negatives")?;
    let evaluator = Evaluator::new(&instances, *hp, threads).stage("setting up evaluation")?;
    let cfg = LbfgsConfig {
        max_iterations: hp.max_iterations,
        ..*lbfgs
    };
    let mut probe = model.clone();
    let (x, trace) = minimize_with_observer(
        |x: &[f64]| {
            probe.assign_flat(x)?;
            let e = evaluator.evaluate(&probe, None)?;
            Ok((e.value, e.gradient))
        },
        model.flatten(),
        &cfg,
        &mut observer,
    )
    .stage("optimizing")?;
    model.assign_flat(&x)?;
    Ok(Trained {
        model,
        instances,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    pub model_out: PathBuf,
    pub source_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
    pub hp: Hyperparams,
    pub lbfgs: LbfgsConfig,
    pub threads: usize,
    /// JSON-lines optimizer trace; skipped when `None`.
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub initial_value: f64,
    pub final_value: f64,
    pub iterations: usize,
    pub trace: OptimizationTrace,
}

pub fn cmd_train(cfg: &TrainConfig) -> Result<TrainSummary> {
    let corpus = load_corpus(&cfg.corpus).stage("loading corpus")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.hp.seed);
    let src = cfg
        .source_embeddings
        .as_deref()
        .map(|p| load_pretrained_embeddings(p, &corpus.source_vocab, cfg.hp.dims.source, &mut rng))
        .transpose()
        .stage("loading source embeddings")?;
    let tgt = cfg
        .target_embeddings
        .as_deref()
        .map(|p| load_pretrained_embeddings(p, &corpus.target_vocab, cfg.hp.dims.target, &mut rng))
        .transpose()
        .stage("loading target embeddings")?;

    let mut trace_writer = cfg
        .trace_out
        .as_deref()
        .map(create)
        .transpose()
        .stage("writing trace")?;
    let mut write_err = None;
    let trained = train_corpus(
        &corpus,
        &cfg.hp,
        &cfg.lbfgs,
        cfg.threads,
        &mut rng,
        (src, tgt),
        |r| {
            if let Some(w) = trace_writer.as_mut() {
                if let Err(e) = writeln!(w, "{}", r.to_json_line()) {
                    write_err.get_or_insert(e);
                }
            }
        },
    )?;
    if let (Some(e), Some(p)) = (write_err, cfg.trace_out.as_deref()) {
        return Err(BattraeError::io(p, e).in_stage("writing trace"));
    }
    if let (Some(mut w), Some(p)) = (trace_writer, cfg.trace_out.as_deref()) {
        w.flush().map_err(io_err(p)).stage("writing trace")?;
    }
    save_model(
        &cfg.model_out,
        &trained.model,
        &cfg.hp,
        &corpus.source_vocab,
        &corpus.target_vocab,
    )
    .stage("saving model")?;
    Ok(TrainSummary {
        initial_value: trained.trace.initial_value(),
        final_value: trained.trace.final_value(),
        iterations: trained.trace.iterations(),
        trace: trained.trace,
    })
}

/// A loaded model ready for scoring.
pub struct LoadedModel {
    pub model: ModelParams,
    pub hp: Hyperparams,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let (model, hp, source_vocab, target_vocab) = load_model(path)?;
        Ok(LoadedModel {
            model,
            hp,
            source_vocab,
            target_vocab,
        })
    }

    /// Scores a raw pair; out-of-vocabulary tokens map to `<unk>`.
    pub fn score(&self, pair: &RawPair) -> Result<ScoredPair> {
        score_pair(
            &pair.encode(&self.source_vocab, &self.target_vocab),
            &self.model,
        )
    }
}

/// `source ||| target ||| score`, score as the shortest round-trip decimal.
pub fn format_score_line(pair: &RawPair, score: f64) -> String {
    format!("{} ||| {score}", pair.to_line())
}

pub fn write_scores<W: Write>(model: &LoadedModel, pairs: &[RawPair], mut out: W) -> Result<()> {
    for p in pairs {
        let s = model.score(p)?;
        writeln!(out, "{}", format_score_line(p, s.score))
            .map_err(io_err(Path::new("<output>")))?;
    }
    Ok(())
}

pub fn cmd_score(model: &Path, pairs: &Path, out: Option<&Path>) -> Result<()> {
    let model = LoadedModel::load(model).stage("loading model")?;
    let pairs = read_raw_pairs(pairs).stage("reading pairs")?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write_scores(&model, &pairs, &mut w)?;
            w.flush().map_err(io_err(p))
        }
        None => write_scores(&model, &pairs, std::io::stdout().lock()),
    }
    .stage("scoring")
}

/// One attention dump record, serialized as a single JSON line.
///
/// Keys: `source`, `target` (input phrases); `source_tree`, `target_tree`
/// (nested parentheses); `source_nodes`, `target_nodes` (postorder node
/// labels, matching the rows and columns of `B`); `B` (`n_s` rows of `n_t`
/// matching scores); `a_s`, `a_t` (attention weights); `source_rank`,
/// `target_rank` (node indices by descending weight); `score`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AttentionRecord {
    pub source: String,
    pub target: String,
    pub source_tree: String,
    pub target_tree: String,
    pub source_nodes: Vec<String>,
    pub target_nodes: Vec<String>,
    #[serde(rename = "B")]
    pub matrix: Vec<Vec<f64>>,
    pub a_s: Vec<f64>,
    pub a_t: Vec<f64>,
    pub source_rank: Vec<usize>,
    pub target_rank: Vec<usize>,
    pub score: f64,
}

impl AttentionRecord {
    pub fn new(pair: &RawPair, scored: &ScoredPair) -> Self {
        let att = scored.attention();
        let b = &att.matrix;
        AttentionRecord {
            source: pair.source.join(" "),
            target: pair.target.join(" "),
            source_tree: scored.source_tree.render(&pair.source),
            target_tree: scored.target_tree.render(&pair.target),
            source_nodes: scored.source_tree.postorder_labels(&pair.source),
            target_nodes: scored.target_tree.postorder_labels(&pair.target),
            matrix: (0..b.rows())
                .map(|i| (0..b.cols()).map(|j| b.get(i, j)).collect())
                .collect(),
            a_s: att.source_weights.clone(),
            a_t: att.target_weights.clone(),
            source_rank: rank_by_weight(&att.source_weights),
            target_rank: rank_by_weight(&att.target_weights),
            score: scored.score,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub fn write_attention<W: Write>(model: &LoadedModel, pairs: &[RawPair], mut out: W) -> Result<()> {
    for p in pairs {
        let s = model.score(p)?;
        writeln!(out, "{}", AttentionRecord::new(p, &s).to_json_line())
            .map_err(io_err(Path::new("<output>")))?;
    }
    Ok(())
}

pub fn cmd_attend(model: &Path, pairs: &Path, out: Option<&Path>) -> Result<()> {
    let model = LoadedModel::load(model).stage("loading model")?;
    let pairs = read_raw_pairs(pairs).stage("reading pairs")?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write_attention(&model, &pairs, &mut w)?;
            w.flush().map_err(io_err(p))
        }
        None => write_attention(&model, &pairs, std::io::stdout().lock()),
    }
    .stage("attending")
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub dims: Dims,
    /// Ids per side, `<unk>` included.
    pub vocab_size: usize,
    pub instances: usize,
    pub max_len: usize,
    /// Multiplier on the N(0, 0.01²) initialization.
    pub init_scale: f64,
    pub epsilon: f64,
    pub hp: Hyperparams,
    pub seed: u64,
    /// Added to every analytic partial before comparing.
    pub perturb_analytic: f64,
    /// Compare only the regularizer and its gradient.
    pub regularizer_only: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            dims: Dims {
                source: 3,
                target: 3,
                attention: 3,
                semantic: 3,
            },
            vocab_size: 12,
            instances: 3,
            max_len: 4,
            init_scale: 50.0,
            epsilon: 1e-5,
            hp: Hyperparams::default(),
            seed: 0,
            perturb_analytic: 0.0,
            regularizer_only: false,
        }
    }
}

/// Maximum relative error a gradient check may report for the command to succeed.
pub const GRADCHECK_FAIL_THRESHOLD: f64 = 1e-4;

pub fn cmd_gradcheck(cfg: &GradcheckConfig) -> Result<GradientCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (instances, model) = tiny_problem(
        cfg.dims,
        cfg.vocab_size,
        cfg.instances,
        cfg.max_len,
        cfg.init_scale,
        &mut rng,
    )?;
    let (mut analytic, numeric, exclude) = if cfg.regularizer_only {
        let analytic = regularizer_gradient(&model, &cfg.hp);
        let numeric = central_differences(&model, cfg.epsilon, |m| regularizer_terms(m, &cfg.hp))?;
        (analytic, numeric, vec![false; model.flat_len()])
    } else {
        let analytic = Evaluator::new(&instances, cfg.hp, 1)?
            .evaluate(&model, None)?
            .gradient;
        let fd = finite_difference_detailed(&instances, &model, &cfg.hp, cfg.epsilon)?;
        (analytic, fd.gradient, fd.near_boundary)
    };
    analytic.iter_mut().for_each(|g| *g += cfg.perturb_analytic);
    Ok(compare_gradients(&model, &analytic, &numeric, &exclude))
}

/// `λ_g θ` for every scalar.
pub fn regularizer_gradient(model: &ModelParams, hp: &Hyperparams) -> Vec<f64> {
    model
        .blocks()
        .into_iter()
        .flat_map(|(g, _, s)| {
            let l = hp.lambda(g);
            s.iter().map(move |v| l * v)
        })
        .collect()
}

fn regularizer_terms(model: &ModelParams, hp: &Hyperparams) -> Vec<f64> {
    model
        .blocks()
        .into_iter()
        .flat_map(|(g, _, s)| {
            let l = hp.lambda(g);
            s.iter().map(move |v| 0.5 * l * v * v)
        })
        .collect()
}

/// Central differences of a sum, taken term by term.
fn central_differences(
    model: &ModelParams,
    eps: f64,
    terms: impl Fn(&ModelParams) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let theta = model.flatten();
    let mut probe = model.clone();
    let mut x = theta.clone();
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        x[k] = theta[k] + eps;
        probe.assign_flat(&x)?;
        let plus = terms(&probe);
        x[k] = theta[k] - eps;
        probe.assign_flat(&x)?;
        let minus = terms(&probe);
        x[k] = theta[k];
        let diff: f64 = plus.iter().zip(&minus).map(|(a, b)| a - b).sum();
        out.push(diff / (2.0 * eps));
    }
    Ok(out)
}

/// Human-readable report, one line per group plus the worst coordinate.
pub fn format_gradcheck_report(
    report: &GradientCheckReport,
    model_hint: Option<&ModelParams>,
) -> String {
    let mut out = String::new();
    for g in &report.groups {
        out.push_str(&format!(
            "{:<10} max_rel_err={:.3e} checked={} excluded={}\n",
            g.group.name(),
            g.max_relative_error,
            g.checked,
            g.excluded
        ));
    }
    if let Some(w) = report.worst() {
        let idx = w.worst_index.expect("worst has an index");
        let loc = model_hint
            .and_then(|m| m.locate(idx))
            .map(|(_, name, off)| format!(" ({name}[{off}])"))
            .unwrap_or_default();
        out.push_str(&format!(
            "worst: {:.3e} at flat index {idx}{loc} in {}\n",
            w.max_relative_error, w.group
        ));
    }
    out
}

/// Rebuilds the gradcheck model, for locating flat indices in reports.
pub fn gradcheck_model(cfg: &GradcheckConfig) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(tiny_problem(
        cfg.dims,
        cfg.vocab_size,
        cfg.instances,
        cfg.max_len,
        cfg.init_scale,
        &mut rng,
    )?
    .1)
}
