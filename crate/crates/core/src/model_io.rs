//! Model initialization and the JSON model file.
//!
//! File layout (`format_version` 1):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "flat_order": "<FLAT_ORDER_ID>",
//!   "hyperparams": { "d_s", "d_t", "d_a", "d_sem", "alpha", "beta",
//!                    "lambda_L", "lambda_rec", "lambda_att", "lambda_sem",
//!                    "max_iterations", "seed" },
//!   "source_vocab": [token, ...],        // id order, "<unk>" first
//!   "target_vocab": [token, ...],
//!   "parameters": [ { "name", "group", "rows", "cols", "values": [...] }, ... ]
//! }
//! ```
//!
//! Parameters appear in flat order with values column-major. Numbers are
//! written as shortest round-trip decimals, so loading is bit-exact.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::error::{BattraeError, Result};
use crate::objective::Hyperparams;
use crate::params::{Dims, ModelParams, FLAT_ORDER_ID};
use crate::rae::RaeParams;
use crate::similarity::SimilarityParams;

pub const FORMAT_VERSION: u32 = 1;

/// θ_rec, θ_att and θ_sem from N(0, 0.01²); θ_L copied from `pretrained`
/// when given, otherwise drawn from the same normal. Draws follow flat order.
pub fn init_model<R: Rng + ?Sized>(
    hp: &Hyperparams,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    pretrained_source: Option<EmbeddingTable>,
    pretrained_target: Option<EmbeddingTable>,
    rng: &mut R,
) -> Result<ModelParams> {
    hp.validate()?;
    let d = hp.dims;
    let table = |pre: Option<EmbeddingTable>,
                 dim: usize,
                 vocab: &Vocabulary,
                 rng: &mut R|
     -> Result<EmbeddingTable> {
        match pre {
            Some(t) => {
                if t.dim() != dim {
                    return Err(BattraeError::Dimension {
                        expected: dim,
                        found: t.dim(),
                        context: "pretrained embedding dimension".into(),
                    });
                }
                if t.vocab_size() != vocab.len() {
                    return Err(BattraeError::Dimension {
                        expected: vocab.len(),
                        found: t.vocab_size(),
                        context: "pretrained embedding vocabulary size".into(),
                    });
                }
                Ok(t)
            }
            None => Ok(EmbeddingTable::random(dim, vocab.len(), rng)),
        }
    };
    let source_embeddings = table(pretrained_source, d.source, source_vocab, rng)?;
    let target_embeddings = table(pretrained_target, d.target, target_vocab, rng)?;
    Ok(ModelParams {
        source_embeddings,
        target_embeddings,
        source_rae: RaeParams::random(d.source, rng),
        target_rae: RaeParams::random(d.target, rng),
        attention: AttentionParams::random(d.attention, d.source, d.target, rng),
        semantic: SimilarityParams::random(d.semantic, d.source, d.target, rng),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamsRecord {
    pub d_s: usize,
    pub d_t: usize,
    pub d_a: usize,
    pub d_sem: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "lambda_L")]
    pub lambda_l: f64,
    pub lambda_rec: f64,
    pub lambda_att: f64,
    pub lambda_sem: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl From<&Hyperparams> for HyperparamsRecord {
    fn from(hp: &Hyperparams) -> Self {
        HyperparamsRecord {
            d_s: hp.dims.source,
            d_t: hp.dims.target,
            d_a: hp.dims.attention,
            d_sem: hp.dims.semantic,
            alpha: hp.alpha,
            beta: hp.beta(),
            lambda_l: hp.lambda_l,
            lambda_rec: hp.lambda_rec,
            lambda_att: hp.lambda_att,
            lambda_sem: hp.lambda_sem,
            max_iterations: hp.max_iterations,
            seed: hp.seed,
        }
    }
}

impl HyperparamsRecord {
    fn to_hyperparams(&self) -> Result<Hyperparams> {
        let hp = Hyperparams {
            alpha: self.alpha,
            lambda_l: self.lambda_l,
            lambda_rec: self.lambda_rec,
            lambda_att: self.lambda_att,
            lambda_sem: self.lambda_sem,
            dims: Dims {
                source: self.d_s,
                target: self.d_t,
                attention: self.d_a,
                semantic: self.d_sem,
            },
            max_iterations: self.max_iterations,
            seed: self.seed,
        };
        if self.beta != hp.beta() {
            return Err(BattraeError::model_file(
                "hyperparams.beta",
                format!("must equal 1 - alpha = {}, found {}", hp.beta(), self.beta),
            ));
        }
        hp.validate()
            .map_err(|e| BattraeError::model_file("hyperparams", e.to_string()))?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub group: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub flat_order: String,
    pub hyperparams: HyperparamsRecord,
    pub source_vocab: Vec<String>,
    pub target_vocab: Vec<String>,
    pub parameters: Vec<TensorRecord>,
}

/// Expected `(rows, cols)` of every tensor, in flat order.
fn expected_shapes(d: Dims, source_vocab: usize, target_vocab: usize) -> [(usize, usize); 17] {
    let (s, t, a, m) = (d.source, d.target, d.attention, d.semantic);
    [
        (s, source_vocab),
        (t, target_vocab),
        (s, 2 * s),
        (s, 1),
        (2 * s, s),
        (2 * s, 1),
        (t, 2 * t),
        (t, 1),
        (2 * t, t),
        (2 * t, 1),
        (a, s),
        (a, t),
        (a, 1),
        (m, s),
        (m, t),
        (m, m),
        (m, 1),
    ]
}

impl ModelFile {
    pub fn new(
        model: &ModelParams,
        hp: &Hyperparams,
        source_vocab: &Vocabulary,
        target_vocab: &Vocabulary,
    ) -> Result<Self> {
        if model.dims() != hp.dims {
            return Err(BattraeError::shape(
                "model dimensions disagree with hyperparameters",
            ));
        }
        if !model.is_finite() {
            return Err(BattraeError::numeric("saving model parameters"));
        }
        let shapes = expected_shapes(hp.dims, source_vocab.len(), target_vocab.len());
        let parameters = model
            .blocks()
            .into_iter()
            .zip(shapes)
            .map(|((group, name, values), (rows, cols))| TensorRecord {
                name: name.to_owned(),
                group: group.name().to_owned(),
                rows,
                cols,
                values: values.to_vec(),
            })
            .collect();
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            flat_order: FLAT_ORDER_ID.to_owned(),
            hyperparams: hp.into(),
            source_vocab: source_vocab.tokens().to_vec(),
            target_vocab: target_vocab.tokens().to_vec(),
            parameters,
        })
    }

    pub fn into_parts(self) -> Result<(ModelParams, Hyperparams, Vocabulary, Vocabulary)> {
        if self.format_version != FORMAT_VERSION {
            return Err(BattraeError::model_file(
                "format_version",
                format!(
                    "unsupported version {} (expected {FORMAT_VERSION})",
                    self.format_version
                ),
            ));
        }
        if self.flat_order != FLAT_ORDER_ID {
            return Err(BattraeError::model_file(
                "flat_order",
                "unknown parameter ordering",
            ));
        }
        let hp = self.hyperparams.to_hyperparams()?;
        let source_vocab = vocab_from(self.source_vocab, "source_vocab")?;
        let target_vocab = vocab_from(self.target_vocab, "target_vocab")?;

        let mut model = ModelParams::zeros(hp.dims, source_vocab.len(), target_vocab.len());
        let shapes = expected_shapes(hp.dims, source_vocab.len(), target_vocab.len());
        let names: Vec<&'static str> = model.blocks().iter().map(|(_, n, _)| *n).collect();
        if self.parameters.len() != names.len() {
            return Err(BattraeError::model_file(
                "parameters",
                format!(
                    "expected {} tensors, found {}",
                    names.len(),
                    self.parameters.len()
                ),
            ));
        }
        for (((slot, record), name), (rows, cols)) in model
            .blocks_mut()
            .into_iter()
            .zip(&self.parameters)
            .zip(names)
            .zip(shapes)
        {
            if record.name != name {
                return Err(BattraeError::model_file(
                    format!("parameters.{name}.name"),
                    format!("found `{}`", record.name),
                ));
            }
            if record.rows != rows {
                return Err(BattraeError::model_file(
                    format!("parameters.{name}.rows"),
                    format!("expected {rows}, found {}", record.rows),
                ));
            }
            if record.cols != cols {
                return Err(BattraeError::model_file(
                    format!("parameters.{name}.cols"),
                    format!("expected {cols}, found {}", record.cols),
                ));
            }
            if record.values.len() != rows * cols {
                return Err(BattraeError::model_file(
                    format!("parameters.{name}.values"),
                    format!(
                        "expected {} values, found {}",
                        rows * cols,
                        record.values.len()
                    ),
                ));
            }
            slot.copy_from_slice(&record.values);
        }
        Ok((model, hp, source_vocab, target_vocab))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| BattraeError::model_file("<document>", e.to_string()))
    }
}

fn vocab_from(tokens: Vec<String>, field: &str) -> Result<Vocabulary> {
    let n = tokens.len();
    let v = Vocabulary::from(tokens);
    if v.len() != n || v.token(0) != crate::corpus::UNK {
        return Err(BattraeError::model_file(
            field,
            "tokens must be unique and start with <unk>",
        ));
    }
    Ok(v)
}

pub fn save_model(
    path: &Path,
    model: &ModelParams,
    hp: &Hyperparams,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
) -> Result<()> {
    let file = ModelFile::new(model, hp, source_vocab, target_vocab)?;
    fs::write(path, file.to_json()).map_err(|e| BattraeError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Hyperparams, Vocabulary, Vocabulary)> {
    let text = fs::read_to_string(path).map_err(|e| BattraeError::io(path, e))?;
    ModelFile::from_json(&text)?.into_parts()
}
