//! Human-object candidate pairs and the per-pair visual prompt image.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Detection, HumanLexicon};
use crate::error::{Error, Result};
use crate::geometry::{union_box, BoundingBox, UnionRegion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanObjectPair {
    pub pair_id: String,
    pub image_id: String,
    pub human: Detection,
    pub object: Detection,
}

impl HumanObjectPair {
    pub fn union(&self) -> UnionRegion {
        union_box(&self.human.bbox, &self.object.bbox)
    }
}

/// All ordered (human, other) detection pairs with distinct members, in
/// (human index, object index) order. With `include_human_human` off, the
/// partner must be a non-human detection.
pub fn build_pairs(
    image_id: &str,
    detections: &[Detection],
    humans: &HumanLexicon,
    include_human_human: bool,
) -> Vec<HumanObjectPair> {
    let is_human: Vec<bool> = detections
        .iter()
        .map(|d| humans.is_human(&d.label))
        .collect();
    let mut pairs = Vec::new();
    for (h, human) in detections.iter().enumerate() {
        if !is_human[h] {
            continue;
        }
        for (o, object) in detections.iter().enumerate() {
            if o == h || (is_human[o] && !include_human_human) {
                continue;
            }
            pairs.push(HumanObjectPair {
                pair_id: format!("{image_id}:{h}:{o}"),
                image_id: image_id.to_string(),
                human: human.clone(),
                object: object.clone(),
            });
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualMode {
    #[default]
    Crop,
    RedCircle,
    ReverseBlur,
    CropMask,
    Blind,
}

impl VisualMode {
    pub const ALL: [VisualMode; 5] = [
        VisualMode::Crop,
        VisualMode::RedCircle,
        VisualMode::ReverseBlur,
        VisualMode::CropMask,
        VisualMode::Blind,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VisualMode::Crop => "crop",
            VisualMode::RedCircle => "red_circle",
            VisualMode::ReverseBlur => "reverse_blur",
            VisualMode::CropMask => "crop_mask",
            VisualMode::Blind => "blind",
        }
    }
}

impl fmt::Display for VisualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VisualMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VisualMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown visual prompt mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrompt {
    pub mode: VisualMode,
    pub image: RgbImage,
    pub region: UnionRegion,
}

impl VisualPrompt {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.image
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| Error::Image {
                context: "png encode".into(),
                message: e.to_string(),
            })?;
        Ok(buf.into_inner())
    }
}

pub fn decode_image(bytes: &[u8], context: &str) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image {
            context: context.to_string(),
            message: e.to_string(),
        })
}

pub fn open_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, &path.display().to_string())
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    /// Rounds half-up to the pixel grid and clamps to the image.
    pub fn from_box(b: &BoundingBox, width: u32, height: u32) -> Self {
        let r = |v: f64, max: u32| ((v + 0.5).floor().max(0.0) as u64).min(u64::from(max)) as u32;
        Self {
            x0: r(b.x_min(), width),
            y0: r(b.y_min(), height),
            x1: r(b.x_max(), width),
            y1: r(b.y_max(), height),
        }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

fn diagonal(img: &RgbImage) -> f64 {
    f64::from(img.width()).hypot(f64::from(img.height()))
}

/// Builds the visual prompt for `pair` over `image`.
///
/// `crop`, `crop_mask` and `blind` produce union-box sized images;
/// `red_circle` and `reverse_blur` keep the full frame.
pub fn render_visual_prompt(
    image: &RgbImage,
    pair: &HumanObjectPair,
    mode: VisualMode,
) -> Result<VisualPrompt> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::validation(&pair.pair_id, "empty source image"));
    }
    let region = pair.union();
    let union = PixelRect::from_box(&region.box_, w, h);
    if union.is_empty() {
        return Err(Error::validation(
            &pair.pair_id,
            "union box is degenerate after clamping to the image",
        ));
    }
    let human = PixelRect::from_box(&pair.human.bbox, w, h);
    let object = PixelRect::from_box(&pair.object.bbox, w, h);
    let crop = || {
        image::imageops::crop_imm(image, union.x0, union.y0, union.width(), union.height())
            .to_image()
    };
    let out = match mode {
        VisualMode::Crop => crop(),
        VisualMode::Blind => RgbImage::new(union.width(), union.height()),
        VisualMode::CropMask => {
            let mut out = crop();
            for (x, y, px) in out.enumerate_pixels_mut() {
                let (ax, ay) = (x + union.x0, y + union.y0);
                if !human.contains(ax, ay) && !object.contains(ax, ay) {
                    *px = Rgb([0, 0, 0]);
                }
            }
            out
        }
        VisualMode::ReverseBlur => {
            let sigma = (0.02 * diagonal(image)) as f32;
            let mut out = image::imageops::blur(image, sigma);
            for (x, y, px) in out.enumerate_pixels_mut() {
                if human.contains(x, y) || object.contains(x, y) {
                    *px = *image.get_pixel(x, y);
                }
            }
            out
        }
        VisualMode::RedCircle => {
            let mut out = image.clone();
            let stroke = (0.005 * diagonal(image)).max(2.0);
            draw_ellipse_ring(&mut out, &union, stroke, Rgb([255, 0, 0]));
            out
        }
    };
    Ok(VisualPrompt {
        mode,
        image: out,
        region,
    })
}

/// Paints the ellipse inscribed in `rect` with the given stroke width,
/// testing pixel centres against the outer and inner ellipses.
fn draw_ellipse_ring(img: &mut RgbImage, rect: &PixelRect, stroke: f64, color: Rgb<u8>) {
    let cx = f64::from(rect.x0 + rect.x1) / 2.0;
    let cy = f64::from(rect.y0 + rect.y1) / 2.0;
    let (rx, ry) = (
        f64::from(rect.width()) / 2.0,
        f64::from(rect.height()) / 2.0,
    );
    let half = stroke / 2.0;
    let inside = |x: f64, y: f64, ax: f64, ay: f64| {
        ax > 0.0 && ay > 0.0 && ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2) <= 1.0
    };
    let (w, h) = img.dimensions();
    let x_lo = (cx - rx - half).floor().max(0.0) as u32;
    let y_lo = (cy - ry - half).floor().max(0.0) as u32;
    let x_hi = ((cx + rx + half).ceil() as u32).min(w);
    let y_hi = ((cy + ry + half).ceil() as u32).min(h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            if inside(px, py, rx + half, ry + half) && !inside(px, py, rx - half, ry - half) {
                img.put_pixel(x, y, color);
            }
        }
    }
}
