//! Scores predictions from an external closed-vocabulary model without
//! running generation.
//!
//!     cargo run --example baseline_ingestion -- [predictions.json]

use std::path::PathBuf;

use uhoi::config::PipelineConfig;
use uhoi::datamodel::RaritySplit;
use uhoi::pipeline::{build_similarity, evaluate_predictions, EvaluationInputs, PredictionsFile};
use uhoi::vocab::VerbVocabulary;

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
    let preds = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| fixtures.join("baseline_predictions.json"));
    let cfg = PipelineConfig::load(fixtures.join("config.toml"))?;

    let predictions = PredictionsFile::load(&preds)?;
    let vocabulary = VerbVocabulary::load(fixtures.join("vocabulary.txt"), false)?;
    let rarity = RaritySplit::load(fixtures.join("rarity.json"))?;
    let sim = build_similarity(&cfg)?;
    let report = evaluate_predictions(
        &cfg,
        &EvaluationInputs {
            predictions: &predictions,
            annotations: &fixtures.join("annotations.json"),
            vocabulary: &vocabulary,
            similarity: sim.as_ref(),
            rarity: Some(&rarity),
        },
    )?;
    println!("{}", report.csv_header());
    println!("{}", report.csv_row());
    for c in &report.per_class {
        println!("  {:<14} {:?} AP {:?}", c.class, c.rarity, c.ap.values());
    }
    Ok(())
}
