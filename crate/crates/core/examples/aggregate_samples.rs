//! Pooling triplets over many generations and selecting by frequency.
//!
//!     cargo run --example aggregate_samples

use uhoi::aggregation::{pool, select, SelectionMode};
use uhoi::extraction::{extract_rule_based_sample, refine, RefinementConfig};

fn main() -> uhoi::Result<()> {
    let generations = [
        "The man is riding the bike.",
        "The man rides the bike and holds the handlebars.",
        "A man is riding the bike.",
        "The man is pushing the bike.",
        "The man sits on the bike.",
        "The man is riding the bike down the hill.",
        "",
        "The man is holding the bike.",
    ];
    let cfg = RefinementConfig::default();
    let per_sample = generations
        .iter()
        .enumerate()
        .map(|(i, text)| refine(&extract_rule_based_sample(text, i), "bike", &cfg, None))
        .collect::<uhoi::Result<Vec<_>>>()?;
    let freq = pool(&per_sample);
    println!(
        "{} samples, {} triplets, {} distinct",
        freq.samples(),
        freq.total(),
        freq.distinct()
    );
    for (key, count) in freq.in_pool_order() {
        println!("  {count} x {key}");
    }
    for mode in [SelectionMode::Topk, SelectionMode::Sampling] {
        println!("\n{} (k = 2):", mode.as_str());
        for t in select(&freq, mode, 2, 7)? {
            println!(
                "  {}|{}|{}  score {:.3}",
                t.subject, t.verb, t.object, t.score
            );
        }
    }
    Ok(())
}
