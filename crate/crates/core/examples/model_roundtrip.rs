//! Trains briefly on a tiny corpus, saves the model as JSON, reloads it and
//! scores pairs containing unseen words.
//!
//! cargo run --example model_roundtrip

use battrae::corpus::parse_raw_pairs;
use battrae::objective::Hyperparams;
use battrae::optimizer::LbfgsConfig;
use battrae::pipeline::{cmd_train, format_score_line, LoadedModel, TrainConfig};

const CORPUS: &str = "\
dui jingji xuezhe ||| to economists
jingji xuezhe ||| economists
dui ta ||| to him
hen da ||| very big
yingxiang hen da ||| great impact
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("battrae-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let corpus = dir.join("corpus.txt");
    std::fs::write(&corpus, CORPUS)?;

    let cfg = TrainConfig {
        corpus,
        model_out: dir.join("model.json"),
        source_embeddings: None,
        target_embeddings: None,
        hp: Hyperparams {
            max_iterations: 20,
            ..Hyperparams::default().with_dim(8)
        },
        lbfgs: LbfgsConfig::default(),
        threads: 1,
        trace_out: Some(dir.join("trace.jsonl")),
    };
    let summary = cmd_train(&cfg)?;
    println!(
        "trained {} iterations: objective {} -> {}",
        summary.iterations, summary.initial_value, summary.final_value
    );

    let model = LoadedModel::load(&cfg.model_out)?;
    println!(
        "reloaded model, alpha {} beta {}",
        model.hp.alpha,
        model.hp.beta()
    );
    for pair in parse_raw_pairs("dui jingji xuezhe ||| to economists\nzhongguo ||| china\n")? {
        println!("{}", format_score_line(&pair, model.score(&pair)?.score));
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
