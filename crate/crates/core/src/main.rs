use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use uhoi::aggregation::SelectionMode;
use uhoi::config::{PipelineConfig, ProviderKind};
use uhoi::datamodel::Protocol;
use uhoi::extraction::ExtractorKind;
use uhoi::generation::PromptKind;
use uhoi::metrics::{ClassMode, MetricReport};
use uhoi::pairing::VisualMode;
use uhoi::pipeline::{self, ImageSource, StageOutcome};
use uhoi::report;

#[derive(Parser)]
#[command(
    name = "uhoi",
    version,
    about = "Open-vocabulary human-object interaction evaluation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build human-object pairs from annotations or detections.
    Pairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Image directory or JSON id-to-path mapping.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Query the generation provider for every pair; resumable.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Extract, refine and aggregate triplets into predictions.
    Extract {
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions and write report.json / report.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
        /// External predictions file; defaults to the run's own.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Compare report files in one table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// SVG plot of mAP against number of generations.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Keep candidate verbs a person can perform on an object.
    FilterVerbs {
        #[command(flatten)]
        common: Common,
        /// Newline-separated candidate verbs.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// Comma-separated similarity thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    class_mode: Option<ClassMode>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    rarity_split: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, env = "UHOI_EMBED_URL")]
    embed_url: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    selection: Option<SelectionMode>,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prompt_kind: Option<PromptKind>,
    #[arg(long)]
    visual_mode: Option<VisualMode>,
    #[arg(long)]
    extractor: Option<ExtractorKind>,
    #[arg(long)]
    t2g_table: Option<PathBuf>,
    #[arg(long, env = "UHOI_T2G_URL")]
    t2g_url: Option<String>,
    #[arg(long)]
    mock_pool: Option<PathBuf>,
    #[arg(long, env = "UHOI_CHAT_URL")]
    chat_url: Option<String>,
    #[arg(long, env = "UHOI_CHAT_MODEL")]
    model: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

impl Common {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let e = &mut c.evaluation;
        set(&mut e.thresholds, self.thresholds.clone());
        set(&mut e.iou_threshold, self.iou_threshold);
        set(&mut e.class_mode, self.class_mode);
        if let Some(p) = &self.protocol {
            e.protocol = match p.as_str() {
                "annotated" => Protocol::Annotated,
                "computed" => Protocol::Computed,
                other => bail!("unknown protocol {other:?}"),
            };
        }
        set_some(&mut e.vocabulary, self.vocabulary.clone());
        set_some(&mut e.rarity_split, self.rarity_split.clone());
        set_some(&mut c.similarity.embeddings, self.embeddings.clone());
        set_some(&mut c.similarity.endpoint, self.embed_url.clone());
        set(&mut c.aggregation.k, self.k);
        set(&mut c.aggregation.mode, self.selection);
        let g = &mut c.generation;
        set(&mut g.num_samples, self.num_samples);
        set(&mut g.temperature, self.temperature);
        set(&mut g.seed, self.seed);
        set(&mut g.max_in_flight, self.max_in_flight);
        set_some(&mut g.mock_pool, self.mock_pool.clone());
        if let Some(url) = &self.chat_url {
            g.endpoint = Some(url.clone());
            g.provider = ProviderKind::Chat;
        }
        set(&mut g.model, self.model.clone());
        set(&mut c.prompt.kind, self.prompt_kind);
        set(&mut c.prompt.visual_mode, self.visual_mode);
        set(&mut c.extraction.extractor, self.extractor);
        set_some(&mut c.extraction.t2g_table, self.t2g_table.clone());
        set_some(&mut c.extraction.t2g_endpoint, self.t2g_url.clone());
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn images(p: &Option<PathBuf>) -> anyhow::Result<Option<ImageSource>> {
    p.as_deref()
        .map(|p| ImageSource::open(p).with_context(|| format!("image source {}", p.display())))
        .transpose()
}

fn finish(outcome: StageOutcome, run_dir: &Path) -> ExitCode {
    eprintln!("{}", outcome.summary());
    match outcome.resume_hint(run_dir) {
        Some(hint) => {
            eprintln!("{hint}");
            ExitCode::from(2)
        }
        None => ExitCode::SUCCESS,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    Ok(match cli.command {
        Command::Pairs {
            common,
            annotations,
            detections,
            images: src,
        } => {
            let cfg = common.config()?;
            let src = images(&src)?;
            let o = pipeline::run_pairs(
                &common.run_dir,
                &cfg,
                &annotations,
                detections.as_deref(),
                src.as_ref(),
            )?;
            finish(o, &common.run_dir)
        }
        Command::Generate {
            common,
            images: src,
        } => {
            let cfg = common.config()?;
            let src = images(&src)?;
            let provider = pipeline::build_provider(&cfg)?;
            let o = pipeline::run_generate(&common.run_dir, &cfg, provider.as_ref(), src.as_ref())?;
            finish(o, &common.run_dir)
        }
        Command::Extract { common } => {
            let cfg = common.config()?;
            let t2g = pipeline::build_text_to_graph(&cfg)?;
            let sim = match cfg.extraction.object_match {
                uhoi::extraction::ObjectMatch::Exact => None,
                _ => Some(pipeline::build_similarity(&cfg)?),
            };
            let o = pipeline::run_extract(&common.run_dir, &cfg, t2g.as_deref(), sim.as_deref())?;
            finish(o, &common.run_dir)
        }
        Command::Evaluate {
            common,
            annotations,
            predictions,
            label,
        } => {
            let cfg = common.config()?;
            let sim = pipeline::build_similarity(&cfg)?;
            let r = pipeline::run_evaluate(
                &common.run_dir,
                &cfg,
                &annotations,
                predictions.as_deref(),
                sim.as_ref(),
                label.as_deref(),
            )?;
            print!("{}", report::render_table(&[r])?);
            ExitCode::SUCCESS
        }
        Command::Report { reports, csv, plot } => {
            let loaded = reports
                .iter()
                .map(|p| {
                    let text =
                        std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                    let mut r = MetricReport::from_json(&text, &p.display().to_string())?;
                    if r.label.is_none() {
                        r.label = Some(p.display().to_string());
                    }
                    Ok(r)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            print!("{}", report::render_table(&loaded)?);
            if let Some(out) = csv {
                pipeline::write_atomic(&out, report::render_csv(&loaded)?.as_bytes())?;
            }
            if let Some(out) = plot {
                pipeline::write_atomic(&out, report::render_generations_plot(&loaded)?.as_bytes())?;
            }
            ExitCode::SUCCESS
        }
        Command::FilterVerbs {
            common,
            candidates,
            out,
        } => {
            let cfg = common.config()?;
            let provider = pipeline::build_provider(&cfg)?;
            let o = pipeline::run_filter_verbs(&candidates, provider.as_ref(), 8, &out)?;
            eprintln!(
                "kept {}, rejected {}, undecided {}",
                o.kept.len(),
                o.rejected.len(),
                o.undecided.len()
            );
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
