use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use battrae::error::BattraeError;
use battrae::objective::{
    Hyperparams, DEFAULT_ALPHA, DEFAULT_DIM, DEFAULT_LAMBDA_ATT, DEFAULT_LAMBDA_L,
    DEFAULT_LAMBDA_REC, DEFAULT_LAMBDA_SEM, DEFAULT_MAX_ITERATIONS,
};
use battrae::optimizer::LbfgsConfig;
use battrae::params::Dims;
use battrae::pipeline::{
    cmd_attend, cmd_gradcheck, cmd_score, cmd_train, format_gradcheck_report, gradcheck_model,
    GradcheckConfig, TrainConfig, GRADCHECK_FAIL_THRESHOLD,
};

/// Train, score and inspect phrase-pair similarity models.
///
/// Defaults for dimensions, alpha (beta = 1 - alpha), the four lambda weights
/// and the iteration cap are the reference configuration of the model.
#[derive(Parser)]
#[command(name = "battrae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a `source ||| target` corpus and save the model as JSON.
    Train(TrainArgs),
    /// Print `source ||| target ||| score` for each input pair.
    Score(IoArgs),
    /// Dump trees, the attention matrix and weights per pair as JSON lines.
    Attend(IoArgs),
    /// Compare analytic and finite-difference gradients on a tiny random model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Word/phrase embedding dimension, both sides (reference configuration)
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Attention space dimension (reference configuration)
    #[arg(long = "attn-dim", default_value_t = DEFAULT_DIM)]
    attn_dim: usize,
    /// Semantic space dimension (reference configuration)
    #[arg(long = "sem-dim", default_value_t = DEFAULT_DIM)]
    sem_dim: usize,
    /// Reconstruction weight; the semantic weight is 1 - alpha (reference configuration)
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Word embedding regularization (reference configuration)
    #[arg(long = "lambda-l", default_value_t = DEFAULT_LAMBDA_L)]
    lambda_l: f64,
    /// Recursive autoencoder regularization (reference configuration)
    #[arg(long = "lambda-rec", default_value_t = DEFAULT_LAMBDA_REC)]
    lambda_rec: f64,
    /// Attention regularization (reference configuration)
    #[arg(long = "lambda-att", default_value_t = DEFAULT_LAMBDA_ATT)]
    lambda_att: f64,
    /// Semantic regularization (reference configuration)
    #[arg(long = "lambda-sem", default_value_t = DEFAULT_LAMBDA_SEM)]
    lambda_sem: f64,
    /// L-BFGS iteration cap (reference configuration)
    #[arg(long = "max-iter", default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    /// Random seed for initialization and negative sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            lambda_l: self.lambda_l,
            lambda_rec: self.lambda_rec,
            lambda_att: self.lambda_att,
            lambda_sem: self.lambda_sem,
            dims: Dims {
                source: self.dim,
                target: self.dim,
                attention: self.attn_dim,
                semantic: self.sem_dim,
            },
            max_iterations: self.max_iter,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus, one `source ||| target` pair per line
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the trained model
    #[arg(long)]
    model: PathBuf,
    /// Pretrained source embeddings (word2vec text format)
    #[arg(long = "src-emb")]
    src_emb: Option<PathBuf>,
    /// Pretrained target embeddings (word2vec text format)
    #[arg(long = "tgt-emb")]
    tgt_emb: Option<PathBuf>,
    #[command(flatten)]
    model_args: ModelArgs,
    /// L-BFGS history size
    #[arg(long, default_value_t = LbfgsConfig::default().history_size)]
    history: usize,
    /// Worker threads for objective evaluation; results do not depend on it
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Optimizer trace as JSON lines, one per iteration
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Pairs to process, one `source ||| target` per line
    #[arg(long)]
    pairs: PathBuf,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Dimension of every space
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Attention space dimension; defaults to --dim
    #[arg(long = "attn-dim")]
    attn_dim: Option<usize>,
    /// Semantic space dimension; defaults to --dim
    #[arg(long = "sem-dim")]
    sem_dim: Option<usize>,
    /// Reconstruction weight (reference configuration)
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long = "lambda-l", default_value_t = DEFAULT_LAMBDA_L)]
    lambda_l: f64,
    #[arg(long = "lambda-rec", default_value_t = DEFAULT_LAMBDA_REC)]
    lambda_rec: f64,
    #[arg(long = "lambda-att", default_value_t = DEFAULT_LAMBDA_ATT)]
    lambda_att: f64,
    #[arg(long = "lambda-sem", default_value_t = DEFAULT_LAMBDA_SEM)]
    lambda_sem: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add this to every analytic partial before comparing
    #[arg(long = "perturb-analytic", default_value_t = 0.0, hide = true)]
    perturb_analytic: f64,
    /// Check only the regularization term
    #[arg(long = "regularizer-only", hide = true)]
    regularizer_only: bool,
}

impl GradcheckArgs {
    fn config(&self) -> GradcheckConfig {
        let base = GradcheckConfig::default();
        let dims = Dims {
            source: self.dim,
            target: self.dim,
            attention: self.attn_dim.unwrap_or(self.dim),
            semantic: self.sem_dim.unwrap_or(self.dim),
        };
        GradcheckConfig {
            dims,
            hp: Hyperparams {
                alpha: self.alpha,
                lambda_l: self.lambda_l,
                lambda_rec: self.lambda_rec,
                lambda_att: self.lambda_att,
                lambda_sem: self.lambda_sem,
                dims,
                seed: self.seed,
                ..base.hp
            },
            seed: self.seed,
            perturb_analytic: self.perturb_analytic,
            regularizer_only: self.regularizer_only,
            ..base
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, BattraeError> {
    match cli.command {
        Command::Train(a) => {
            let cfg = TrainConfig {
                corpus: a.corpus,
                model_out: a.model,
                source_embeddings: a.src_emb,
                target_embeddings: a.tgt_emb,
                hp: a.model_args.hyperparams(),
                lbfgs: LbfgsConfig {
                    history_size: a.history,
                    ..LbfgsConfig::default()
                },
                threads: a.threads,
                trace_out: a.out,
            };
            let s = cmd_train(&cfg)?;
            println!(
                "initial objective {} final objective {} iterations {} ({:?})",
                s.initial_value, s.final_value, s.iterations, s.trace.termination
            );
        }
        Command::Score(a) => cmd_score(&a.model, &a.pairs, a.out.as_deref())?,
        Command::Attend(a) => cmd_attend(&a.model, &a.pairs, a.out.as_deref())?,
        Command::Gradcheck(a) => {
            let cfg = a.config();
            let report = cmd_gradcheck(&cfg)?;
            let model = gradcheck_model(&cfg)?;
            print!("{}", format_gradcheck_report(&report, Some(&model)));
            if !report.passes(GRADCHECK_FAIL_THRESHOLD) {
                eprintln!(
                    "gradient check failed: max relative error {:e}",
                    report.max_relative_error()
                );
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
