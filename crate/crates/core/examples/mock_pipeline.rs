//! The whole pipeline offline: canned generations, rule-based extraction and
//! a phrase-vector table, writing a run directory.
//!
//!     cargo run --example mock_pipeline -- [run_dir]

use std::path::PathBuf;

use uhoi::config::PipelineConfig;
use uhoi::pipeline::{self, read_jsonl, AggregationRecord, AGGREGATION_FILE};
use uhoi::report::render_table;

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
    let run_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mock_run".into()));
    std::fs::create_dir_all(&run_dir)?;

    let cfg = PipelineConfig::load(fixtures.join("config.toml"))?;
    let mut report = pipeline::run_all(
        &run_dir,
        &cfg,
        &fixtures.join("annotations.json"),
        None,
        None,
    )?;
    report.label = Some(format!("mock N={}", cfg.generation.num_samples));

    for rec in read_jsonl::<AggregationRecord>(&run_dir.join(AGGREGATION_FILE))? {
        let picked: Vec<String> = rec
            .selected
            .iter()
            .map(|t| format!("{} ({:.2})", t.verb, t.score))
            .collect();
        println!(
            "{:<9} {:>2} extracted, {:>2} refined: {}",
            rec.pair_id,
            rec.extracted,
            rec.refined,
            picked.join(", ")
        );
    }
    println!();
    print!("{}", render_table(&[report])?);
    println!("\nrun directory: {}", run_dir.display());
    Ok(())
}
