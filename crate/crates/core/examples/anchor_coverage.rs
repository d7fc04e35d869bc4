//! How often prompts trigger the anchor vocabulary, and which anchors fire.
//! Reads one prompt per line from a file when given, else uses a small
//! built-in list.

use std::path::Path;

use accelaes::affinity::{AnchorSet, ScoringConfig};
use accelaes::experiment::{anchor_stats, corpus_table, load_prompts, EmbeddingSource, DEFAULT_EMBEDDING_DIM};

const PROMPTS: &[&str] = &[
    "a cinematic portrait of an old fisherman, dramatic lighting",
    "a red bicycle leaning on a brick wall",
    "an intricate clockwork dragon, highly detailed, studio lighting",
    "vivid watercolor of a fox in the snow",
    "two cups of coffee on a table",
    "ethereal forest at dusk, soft bokeh, masterpiece",
    "a plate of fresh fruit",
    "photorealistic city street at night",
];

fn main() -> accelaes::Result<()> {
    let prompts = match std::env::args().nth(1) {
        Some(p) => load_prompts(Path::new(&p))?,
        None => PROMPTS.iter().map(|s| s.to_string()).collect(),
    };
    let anchors = AnchorSet::builtin();
    let source = EmbeddingSource::Synthetic {
        seed: 0,
        dim: DEFAULT_EMBEDDING_DIM,
    };
    let table = corpus_table(&prompts, &anchors, &source)?;
    for top_r in [None, Some(1)] {
        let stats = anchor_stats(&prompts, &anchors, &table, &ScoringConfig { top_r, ..ScoringConfig::default() });
        let top: Vec<String> = stats.top_anchors.iter().map(|a| format!("{} x{}", a.anchor, a.count)).collect();
        println!(
            "top_r {top_r:?}: {}/{} prompts triggered, mean matched anchors {:?}",
            stats.triggered, stats.total, stats.mean_matched_anchors
        );
        println!("  {}", top.join(", "));
    }
    Ok(())
}
