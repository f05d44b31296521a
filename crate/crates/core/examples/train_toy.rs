//! Trains on a synthetic word-for-word parallel corpus (40-word lexicon, 200
//! pairs of 2 to 4 words, some reordered) and checks whether the model prefers
//! true translations over random target phrases of the same length.
//!
//! cargo run --release --example train_toy [iterations] [seed]

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use battrae::corpus::build_corpus;
use battrae::objective::Hyperparams;
use battrae::optimizer::LbfgsConfig;
use battrae::pipeline::train_corpus;
use battrae::similarity::score_pair;
use battrae::toy::Lexicon;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(60);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let lexicon = Lexicon::new(40);
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let train = lexicon.corpus(200, 2, 4, 0.3, &mut data_rng);
    let held_out = lexicon.corpus(50, 2, 4, 0.3, &mut data_rng);
    let corpus = build_corpus(train)?;

    let hp = Hyperparams {
        max_iterations: iterations,
        seed,
        ..Hyperparams::default().with_dim(16)
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trained = train_corpus(
        &corpus,
        &hp,
        &LbfgsConfig::default(),
        4,
        &mut rng,
        (None, None),
        |r| {
            if r.iteration % 10 == 0 {
                println!(
                    "iter {:>3}  objective {:.6}  |g|inf {:.3e}",
                    r.iteration, r.value, r.grad_inf_norm
                );
            }
        },
    )?;
    let trace = &trained.trace;
    println!(
        "{} iterations in {:.1?}: objective {:.4} -> {:.4} ({:.1}%), {:?}",
        trace.iterations(),
        start.elapsed(),
        trace.initial_value(),
        trace.final_value(),
        100.0 * trace.final_value() / trace.initial_value(),
        trace.termination
    );

    let (sv, tv) = (&corpus.source_vocab, &corpus.target_vocab);
    let mut wins = 0;
    for pair in &held_out {
        let mut distractor = pair.clone();
        distractor.target = lexicon.random_target_phrase(pair.target.len(), &mut data_rng);
        let good = score_pair(&pair.encode(sv, tv), &trained.model)?.score;
        let bad = score_pair(&distractor.encode(sv, tv), &trained.model)?.score;
        wins += usize::from(good > bad);
    }
    println!("held-out ranking accuracy: {wins}/{}", held_out.len());
    Ok(())
}
