//! Per-frame PNG drawings of ground-truth and detected boxes.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use rayon::prelude::*;

use moc::io::write_atomic;
use moc::{BBox, Error};

use crate::commands::{load_annotation, TubeFile};
use crate::config::RunConfig;

#[derive(Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub annotation: PathBuf,
    /// Detected tubes to draw on top of the ground truth.
    #[arg(long)]
    pub tubes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
const GROUND_TRUTH: Rgb<u8> = Rgb([255, 255, 255]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([230, 80, 60]),
    Rgb([60, 170, 230]),
    Rgb([240, 200, 40]),
    Rgb([120, 210, 90]),
    Rgb([200, 90, 220]),
    Rgb([250, 140, 40]),
];

fn draw_rect(img: &mut RgbImage, b: &BBox, color: Rgb<u8>, thickness: u32) {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let clamp = |v: f64, hi: u32| v.round().clamp(0.0, (hi - 1) as f64) as u32;
    let (x1, y1, x2, y2) = (clamp(b.x1, w), clamp(b.y1, h), clamp(b.x2, w), clamp(b.y2, h));
    for t in 0..thickness {
        for x in x1..=x2 {
            for y in [y1.saturating_add(t).min(y2), y2.saturating_sub(t).max(y1)] {
                img.put_pixel(x, y, color);
            }
        }
        for y in y1..=y2 {
            for x in [x1.saturating_add(t).min(x2), x2.saturating_sub(t).max(x1)] {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub fn overlay(cfg: &RunConfig, args: &OverlayArgs) -> Result<()> {
    let ann = load_annotation(cfg, &args.annotation)?;
    let tubes = match &args.tubes {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            serde_json::from_str::<TubeFile>(&text).map_err(Error::from)?.tubes
        }
        None => Vec::new(),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    (0..ann.num_frames).into_par_iter().try_for_each(|f| -> Result<()> {
        let mut img = RgbImage::from_pixel(ann.width as u32, ann.height as u32, BACKGROUND);
        for inst in &ann.instances {
            if let Some(b) = inst.box_at(f) {
                draw_rect(&mut img, b, GROUND_TRUTH, 1);
            }
        }
        for t in &tubes {
            if let Some(b) = t.box_at(f) {
                draw_rect(&mut img, b, PALETTE[t.class_id % PALETTE.len()], 2);
            }
        }
        let mut png = Vec::new();
        PngEncoder::new(&mut png).write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
        write_atomic(args.out.join(format!("frame_{f:05}.png")), &png)?;
        Ok(())
    })?;
    println!("{}: {} frames drawn", ann.video_id, ann.num_frames);
    Ok(())
}
