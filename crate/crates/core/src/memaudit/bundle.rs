use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimilarPair;
use crate::error::{Error, Result};
use crate::imaging::{save_png, DatasetManifest, GrayImage, ImageMeta, Origin};
use crate::jsonl;

pub const INDEX_FILE: &str = "review_index.jsonl";

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const FOOTER_H: usize = GLYPH_H + 4;

/// 3×5 bitmaps, one row per entry, most significant bit on the left.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '#' => [5, 7, 5, 7, 5],
        _ => [0; GLYPH_H],
    }
}

fn stamp(pixels: &mut [u8], width: usize, top: usize, left: usize, text: &str) {
    for (n, c) in text.chars().enumerate() {
        let x0 = left + n * (GLYPH_W + 1);
        for (dy, bits) in glyph(c).iter().enumerate() {
            for dx in 0..GLYPH_W {
                let x = x0 + dx;
                if x < width && bits & (1 << (GLYPH_W - 1 - dx)) != 0 {
                    pixels[(top + dy) * width + x] = 255;
                }
            }
        }
    }
}

/// Real image on the left, synthetic on the right, and a black footer with
/// `#rank cosine` in white.
pub fn compose_pair(real: &GrayImage, synth: &GrayImage, pair: &SimilarPair) -> Result<GrayImage> {
    if real.height() != synth.height() || real.width() != synth.width() {
        return Err(Error::ShapeMismatch(format!(
            "pair {}: {}x{} real vs {}x{} synthetic",
            pair.rank,
            real.width(),
            real.height(),
            synth.width(),
            synth.height()
        )));
    }
    let (w, h) = (real.width(), real.height());
    let width = 2 * w;
    let mut px = vec![0u8; width * (h + FOOTER_H)];
    for y in 0..h {
        px[y * width..y * width + w].copy_from_slice(&real.pixels()[y * w..(y + 1) * w]);
        px[y * width + w..(y + 1) * width].copy_from_slice(&synth.pixels()[y * w..(y + 1) * w]);
    }
    stamp(&mut px, width, h + 2, 1, &format!("#{} {:.4}", pair.rank, pair.cosine));
    GrayImage::new(width, h + FOOTER_H, px, ImageMeta::new(format!("pair-{:03}", pair.rank), Origin::Synthetic))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub rank: usize,
    pub real_id: String,
    pub synth_id: String,
    pub cosine: f64,
    /// Relative to the bundle directory.
    pub composite: PathBuf,
}

fn find(manifests: &[&DatasetManifest], id: &str) -> Result<GrayImage> {
    manifests
        .iter()
        .find_map(|m| m.entries.iter().find(|e| e.source_id == id).map(|e| m.load_image(e)))
        .unwrap_or_else(|| Err(Error::NotFound(format!("image {id} is in no manifest"))))
}

/// Writes one composite PNG per pair plus a JSON Lines index.
pub fn build_review_bundle(
    pairs: &[SimilarPair],
    real: &DatasetManifest,
    synth: &DatasetManifest,
    out_dir: &Path,
) -> Result<Vec<BundleRecord>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let composite = compose_pair(&find(&[real], &pair.real_id)?, &find(&[synth], &pair.synth_id)?, pair)?;
        let name = PathBuf::from(format!("pair_{:03}.png", pair.rank));
        save_png(&composite, out_dir.join(&name))?;
        records.push(BundleRecord {
            rank: pair.rank,
            real_id: pair.real_id.clone(),
            synth_id: pair.synth_id.clone(),
            cosine: pair.cosine,
            composite: name,
        });
    }
    jsonl::write(out_dir.join(INDEX_FILE), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_footer() {
        let real = GrayImage::filled(12, 10, 40, ImageMeta::new("r", Origin::Real)).unwrap();
        let synth = GrayImage::filled(12, 10, 200, ImageMeta::new("s", Origin::Synthetic)).unwrap();
        let pair = SimilarPair { rank: 7, real_id: "r".into(), synth_id: "s".into(), cosine: 0.98 };
        let c = compose_pair(&real, &synth, &pair).unwrap();
        assert_eq!((c.width(), c.height()), (24, 10 + FOOTER_H));
        assert_eq!((c.get(0, 0), c.get(11, 9), c.get(12, 0), c.get(23, 9)), (40, 40, 200, 200));
        assert!((10..c.height()).any(|y| (0..24).any(|x| c.get(x, y) == 255)));
        let tall = GrayImage::filled(12, 11, 0, ImageMeta::new("t", Origin::Synthetic)).unwrap();
        assert!(compose_pair(&real, &tall, &pair).is_err());
    }

    #[test]
    fn digits_are_distinct() {
        let glyphs: Vec<_> = "0123456789".chars().map(glyph).collect();
        for i in 0..glyphs.len() {
            for j in i + 1..glyphs.len() {
                assert_ne!(glyphs[i], glyphs[j], "{i} vs {j}");
            }
        }
    }
}
