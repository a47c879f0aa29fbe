//! Queries a chat-completions server with a visual prompt and extracts
//! interactions from the replies.
//!
//!     UHOI_CHAT_URL=http://localhost:8000/v1/chat/completions \
//!     UHOI_CHAT_MODEL=my-vlm cargo run --example chat_provider -- image.png

use image::{Rgb, RgbImage};
use uhoi::aggregation::{pool, select_topk};
use uhoi::datamodel::{Detection, HumanLexicon};
use uhoi::extraction::{extract_rule_based_sample, refine, RefinementConfig};
use uhoi::generation::{
    render_prompt, ChatCompletionsProvider, GenerationProvider, GenerationRequest, PromptKind,
    SamplingConfig,
};
use uhoi::geometry::BoundingBox;
use uhoi::http::RetryPolicy;
use uhoi::pairing::{build_pairs, open_image, render_visual_prompt, VisualMode};

fn main() -> anyhow::Result<()> {
    let Ok(url) = std::env::var("UHOI_CHAT_URL") else {
        eprintln!(
            "set UHOI_CHAT_URL (and UHOI_CHAT_MODEL, optionally UHOI_API_KEY) to run this example"
        );
        return Ok(());
    };
    let model = std::env::var("UHOI_CHAT_MODEL").unwrap_or_default();
    let img = match std::env::args().nth(1) {
        Some(p) => open_image(p)?,
        None => RgbImage::from_pixel(320, 240, Rgb([200, 200, 200])),
    };
    let (w, h) = (img.width() as f64, img.height() as f64);
    let dets = [
        Detection::new(
            BoundingBox::new(0.1 * w, 0.1 * h, 0.5 * w, 0.95 * h)?,
            "person",
            0.9,
        )?,
        Detection::new(
            BoundingBox::new(0.3 * w, 0.4 * h, 0.9 * w, 0.95 * h)?,
            "bicycle",
            0.8,
        )?,
    ];
    let pair = &build_pairs("img", &dets, &HumanLexicon::default(), false)[0];
    let png = render_visual_prompt(&img, pair, VisualMode::Crop)?.to_png()?;

    let sampling = SamplingConfig {
        num_samples: 8,
        ..SamplingConfig::default()
    };
    let provider = ChatCompletionsProvider::new(
        &url,
        &model,
        std::env::var("UHOI_API_KEY").ok(),
        RetryPolicy::default(),
    );
    let req = GenerationRequest::new(
        &pair.pair_id,
        Some(png),
        render_prompt(PromptKind::Direct, &pair.object.label),
        &sampling,
    )?;
    let resp = provider.generate(&req)?;
    println!("{} replies in {} ms", resp.texts.len(), resp.latency_ms);

    let cfg = RefinementConfig::default();
    let per_sample = resp
        .texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            refine(
                &extract_rule_based_sample(t, i),
                &pair.object.label,
                &cfg,
                None,
            )
        })
        .collect::<uhoi::Result<Vec<_>>>()?;
    for t in select_topk(&pool(&per_sample), 5) {
        println!("  {:<12} {:.3}", t.verb, t.score);
    }
    Ok(())
}
