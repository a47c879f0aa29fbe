//! Renders every visual prompt mode for one human-object pair.
//!
//!     cargo run --example visual_prompts -- out_dir [image.png]

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use uhoi::datamodel::{Detection, HumanLexicon};
use uhoi::geometry::BoundingBox;
use uhoi::pairing::{build_pairs, open_image, render_visual_prompt, VisualMode};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "visual_prompts".into()));
    let img = match args.next() {
        Some(p) => open_image(p)?,
        None => RgbImage::from_fn(320, 240, |x, y| {
            Rgb([(x * 255 / 320) as u8, (y * 255 / 240) as u8, 128])
        }),
    };
    let (w, h) = (img.width() as f64, img.height() as f64);
    let dets = [
        Detection::new(
            BoundingBox::new(0.1 * w, 0.2 * h, 0.4 * w, 0.9 * h)?,
            "person",
            0.9,
        )?,
        Detection::new(
            BoundingBox::new(0.35 * w, 0.5 * h, 0.8 * w, 0.95 * h)?,
            "bicycle",
            0.8,
        )?,
    ];
    let pair = &build_pairs("demo", &dets, &HumanLexicon::default(), false)[0];
    std::fs::create_dir_all(&out)?;
    for mode in VisualMode::ALL {
        let prompt = render_visual_prompt(&img, pair, mode)?;
        let path = out.join(format!("{}.png", mode.as_str()));
        std::fs::write(&path, prompt.to_png()?)?;
        println!(
            "{:<13} {}x{} -> {}",
            mode.as_str(),
            prompt.image.width(),
            prompt.image.height(),
            path.display()
        );
    }
    Ok(())
}
