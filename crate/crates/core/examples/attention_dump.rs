//! Scores a phrase pair with a random model and prints the attention record:
//! trees, the bidimensional attention matrix, weights and node rankings.
//!
//! cargo run --example attention_dump

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use battrae::corpus::{parse_pair_line, Vocabulary};
use battrae::params::{Dims, ModelParams};
use battrae::pipeline::AttentionRecord;
use battrae::similarity::score_pair;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = parse_pair_line("dui jingji xuezhe ||| to economists", 1)?;
    let sv = Vocabulary::from_tokens(&pair.source);
    let tv = Vocabulary::from_tokens(&pair.target);
    let dims = Dims {
        source: 6,
        target: 6,
        attention: 4,
        semantic: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = ModelParams::random(dims, sv.len(), tv.len(), &mut rng);
    for block in model.blocks_mut() {
        block.iter_mut().for_each(|v| *v *= 30.0);
    }

    let scored = score_pair(&pair.encode(&sv, &tv), &model)?;
    let record = AttentionRecord::new(&pair, &scored);
    println!("source tree {}", record.source_tree);
    println!("target tree {}", record.target_tree);
    println!("B ({} x {}):", record.matrix.len(), record.matrix[0].len());
    print!("{:>24}", "");
    for t in &record.target_nodes {
        print!("{t:>22}");
    }
    println!();
    for (label, row) in record.source_nodes.iter().zip(&record.matrix) {
        print!("{label:>24}");
        for b in row {
            print!("{b:>22.4}");
        }
        println!();
    }
    for (side, labels, weights, rank) in [
        (
            "source",
            &record.source_nodes,
            &record.a_s,
            &record.source_rank,
        ),
        (
            "target",
            &record.target_nodes,
            &record.a_t,
            &record.target_rank,
        ),
    ] {
        println!("{side} weights, most attended first:");
        for &i in rank {
            println!("  {:.4}  {}", weights[i], labels[i]);
        }
    }
    println!("score {}", record.score);
    println!("\n{}", record.to_json_line());
    Ok(())
}
