//! Scores a prompt against the anchor vocabulary, captures cross-attention at
//! the mask step and prints the resulting focus mask over the token grid.
//!
//!     cargo run --example aesthetic_mask -- "a cinematic portrait, dramatic lighting"

use accelaes::affinity::{score_tokens, AnchorSet, EmbeddingTable, PromptTokens, ScoringConfig};
use accelaes::guidance::GuidanceConfig;
use accelaes::mask::{LayerSelection, MaskBuilder, TokenWeighting};
use accelaes::model::{sample, DitModel, EngineConfig, LatentTokens, MaskPlan, ModelSpec, TextCondition};

fn main() -> accelaes::Result<()> {
    let prompt = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "a cinematic portrait of an old fisherman, dramatic lighting".into());
    let spec = ModelSpec::default();
    let anchors = AnchorSet::builtin();
    let tokens = PromptTokens::tokenize(&prompt)?;
    let words: Vec<&str> = tokens.tokens().iter().map(String::as_str).chain(anchors.anchors().iter().map(String::as_str)).collect();
    let table = EmbeddingTable::synthetic(&words, 64, 0);
    let scored = score_tokens(&tokens, &anchors, &table, &ScoringConfig::default());

    for (word, score) in tokens.tokens().iter().zip(&scored.scores) {
        println!("{word:>14}  {score:+.3}");
    }

    let cond = TextCondition::from_prompt(&tokens, &spec, spec.seed);
    let uncond = TextCondition::unconditional(cond.len(), &spec, spec.seed);
    let selected: Vec<usize> = scored.selected.iter().copied().filter(|&j| j < cond.len()).collect();
    let weighting = TokenWeighting::from_selection(&selected);
    println!("aesthetic tokens: {selected:?} ({weighting:?})");

    let model = DitModel::build(&spec)?;
    let engine = EngineConfig {
        guidance: GuidanceConfig::uniform(4.0),
        mask: Some(MaskPlan {
            mask_step: 5,
            builder: MaskBuilder {
                weighting,
                layers: LayerSelection::All,
                skip_ratio: 0.5,
            },
        }),
        ..EngineConfig::baseline(30, 4.0)
    };
    let out = sample(&mut model.session(cond, uncond), &LatentTokens::noise(&spec, 0), &engine)?;
    let (mask, affinity) = (out.mask.unwrap(), out.affinity.unwrap());

    let lo = affinity.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = affinity.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("\naffinity (0-9)        mask (# = focus)");
    for r in 0..spec.grid_h {
        let cells = r * spec.grid_w..(r + 1) * spec.grid_w;
        let heat: String = cells
            .clone()
            .map(|i| char::from(b'0' + (9.0 * (affinity.values[i] - lo) / (hi - lo).max(1e-300)) as u8))
            .collect();
        let bits: String = cells.map(|i| if mask.bits()[i] { '#' } else { '.' }).collect();
        println!("{heat}              {bits}");
    }
    println!("\n{} of {} tokens in focus", mask.focus_count(), mask.len());
    println!("{}", serde_json::to_string(&mask.export()).unwrap());
    Ok(())
}
