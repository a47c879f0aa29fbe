//! Extracting and refining triplets from generated text.
//!
//!     cargo run --example refine_triplets -- "The man is riding the bike."

use uhoi::extraction::{
    extract, parse_structured, refine, ExtractorKind, FileTextToGraph, RefinementConfig,
};

fn main() -> uhoi::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| {
        "A young man rides the bike and holds the handlebars. The bike is next to a bench. \
         He has a helmet."
            .into()
    });
    let object = std::env::args().nth(2).unwrap_or_else(|| "bike".into());
    let cfg = RefinementConfig::default();

    let raw = extract(ExtractorKind::RuleBased, &text, &object, 0, None)?;
    println!("rule-based:");
    for t in &raw {
        println!("  {}", t.key());
    }
    println!("kept for object {object:?}:");
    for t in refine(&raw, &object, &cfg, None)? {
        println!("  {}", t.key());
    }

    // canned text-to-graph output, keyed by the exact text
    let table = FileTextToGraph::parse_table(
        r#"{"The cup is next to the bottle.": [{"subject": "cup", "predicate": "next to", "object": "bottle"}]}"#,
    )?;
    let t2g = extract(
        ExtractorKind::T2g,
        "The cup is next to the bottle.",
        "bottle",
        0,
        Some(&table),
    )?;
    println!(
        "\ntext-to-graph: {:?}",
        t2g.iter().map(|t| t.key().to_string()).collect::<Vec<_>>()
    );
    println!("refined: {:?}", refine(&t2g, "bottle", &cfg, None)?);

    let structured = parse_structured("(person, ride, bike). (person, sit on, obj)", "bike");
    println!(
        "\nstructured: {:?}",
        structured
            .iter()
            .map(|t| t.key().to_string())
            .collect::<Vec<_>>()
    );
    Ok(())
}
