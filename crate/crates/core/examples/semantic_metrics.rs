//! Semantic mAP and Semantic Recall for open-vocabulary predictions.
//!
//!     cargo run --example semantic_metrics

use std::path::PathBuf;

use uhoi::datamodel::{GroundTruthInteraction, PredictedInteraction};
use uhoi::geometry::BoundingBox;
use uhoi::metrics::{semantic_map, ClassMode, EvalConfig};
use uhoi::vocab::{
    map_to_vocabulary, EmbeddingSimilarity, ExactMatch, TsvEmbeddings, VerbVocabulary,
};

fn main() -> uhoi::Result<()> {
    let table = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/embeddings.tsv");
    let sim = EmbeddingSimilarity::new(TsvEmbeddings::load(table)?);
    let vocab = VerbVocabulary::new(
        [
            "ride", "hold", "push", "carry", "sit on", "eat", "throw", "kick",
        ],
        "demo",
        false,
    )?;

    let h = BoundingBox::new(50.0, 60.0, 200.0, 400.0)?;
    let o = BoundingBox::new(150.0, 250.0, 400.0, 450.0)?;
    let gt = |verb: &str| GroundTruthInteraction {
        human_box: h,
        object_box: o,
        object_label: "bike".into(),
        verb: verb.into(),
        hoi_category_id: None,
    };
    let ground_truth = vec![gt("ride"), gt("hold")];
    let predictions = vec![
        PredictedInteraction::new(h, o, "bike", "straddle", 0.8)?,
        PredictedInteraction::new(h, o, "bike", "grip", 0.6)?,
        PredictedInteraction::new(h, o, "bike", "kick", 0.3)?,
    ];

    for p in &predictions {
        let hits = map_to_vocabulary(&p.verb_phrase, &vocab, 0.6, &sim)?;
        let named: Vec<String> = hits
            .iter()
            .map(|(i, s)| format!("{} ({s:.2})", vocab.verbs()[*i]))
            .collect();
        println!("{:<9} -> {}", p.verb_phrase, named.join(", "));
    }

    let report = semantic_map(
        &predictions,
        &ground_truth,
        &vocab,
        &sim,
        &EvalConfig::default(),
    )?;
    println!("\nSR {:.3}  mAP avg {:.3}", report.sr, report.map_avg);
    for (tau, v) in &report.map_per_threshold.0 {
        println!("  mAP@{tau:<4} {v:.3}");
    }

    // exact matching reduces both metrics to their closed-vocabulary form
    let closed = EvalConfig {
        thresholds: vec![1.0],
        class_mode: ClassMode::Verb,
        ..EvalConfig::default()
    };
    let r = semantic_map(&predictions, &ground_truth, &vocab, &ExactMatch, &closed)?;
    println!("\nexact match: SR {:.3}  mAP {:.3}", r.sr, r.map_avg);
    Ok(())
}
