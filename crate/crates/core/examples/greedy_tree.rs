//! Builds greedy recursive-autoencoder trees over a few phrases and prints
//! the merge order, the tree, and per-node reconstruction errors.
//!
//! cargo run --example greedy_tree

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use battrae::corpus::{EmbeddingTable, Vocabulary};
use battrae::rae::{build_tree, extract_granularities, RaeParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab =
        Vocabulary::from_tokens(["dui", "jingji", "xuezhe", "de", "yingxiang", "hen", "da"]);
    let mut table = EmbeddingTable::random(4, vocab.len(), &mut rng);
    table
        .matrix_mut()
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v *= 50.0);
    let mut params = RaeParams::random(4, &mut rng);
    for s in params.slices_mut() {
        s.iter_mut().for_each(|v| *v *= 50.0);
    }

    for phrase in ["dui jingji xuezhe", "de yingxiang hen da", "da"] {
        let words: Vec<&str> = phrase.split_whitespace().collect();
        let ids: Vec<usize> = words.iter().map(|w| vocab.lookup(w)).collect();
        let tree = build_tree(&ids, &table, &params)?;
        println!("{phrase}");
        println!("  tree      {}", tree.render(&words));
        for (id, node) in tree.nodes.iter().enumerate().skip(tree.len()) {
            let (l, r) = node.children.expect("internal");
            println!(
                "  merge #{id}: {l} + {r} covers {:?}, E_rec {:.6}",
                node.span, node.rec_error
            );
        }
        let gran = extract_granularities(&tree);
        println!("  columns   {:?}", tree.postorder_labels(&words));
        println!(
            "  M is {}x{}, total E_rec {:.6}\n",
            gran.dim(),
            gran.n(),
            tree.rec_error()
        );
    }
    Ok(())
}
