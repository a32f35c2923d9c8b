//! Grayscale raster type, preprocessing, and the procedural phantom generator.
//!
//! Every operation here is a pure function over an immutable [`GrayImage`].

mod io;
mod manifest;
mod phantom;

pub use io::{decode, encode_png, encode_pgm, load, save_png, save_pgm};
pub use manifest::{DatasetManifest, ManifestEntry, TriageStatus};
pub use phantom::make_phantom_set;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    Left,
    Right,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub source_id: String,
    pub origin: Origin,
    pub checkpoint: Option<u32>,
    pub facing: Facing,
    pub inverted_flag: Option<bool>,
    /// Set when an automatic step could not decide and a person has to look.
    #[serde(default)]
    pub needs_triage: bool,
}

impl ImageMeta {
    pub fn new(source_id: impl Into<String>, origin: Origin) -> Self {
        Self {
            source_id: source_id.into(),
            origin,
            checkpoint: None,
            facing: Facing::Unknown,
            inverted_flag: None,
            needs_triage: false,
        }
    }
}

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub meta: ImageMeta,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, meta: ImageMeta) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            meta,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8, meta: ImageMeta) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], meta)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Rounds half up and saturates to the 8-bit range.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear resampling with half-pixel-center alignment.
///
/// Source coordinates are `(dst + 0.5) * src / dst_size - 0.5`, clamped to
/// the valid range, and results are rounded half up. A 2x2 image
/// `[[0,255],[0,255]]` therefore resamples to a single pixel of 128.
pub fn resample(img: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid(format!(
            "target dimensions must be nonzero, got {target_w}x{target_h}"
        )));
    }
    let (sw, sh) = (img.width, img.height);
    let axis = |dst: usize, src: usize, dst_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * src as f64 / dst_len as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..target_w).map(|x| axis(x, sw, target_w)).collect();
    let mut pixels = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let (y0, y1, fy) = axis(y, sh, target_h);
        for &(x0, x1, fx) in &xs {
            let p = |xx: usize, yy: usize| img.pixels[yy * sw + xx] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            pixels.push(quantize(top * (1.0 - fy) + bottom * fy));
        }
    }
    GrayImage::new(target_w, target_h, pixels, img.meta.clone())
}

/// Maps every pixel `p` to `255 - p` and toggles the inversion flag.
pub fn invert(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    for p in &mut out.pixels {
        *p = 255 - *p;
    }
    out.meta.inverted_flag = Some(!img.meta.inverted_flag.unwrap_or(false));
    out
}

/// Bone-dark heuristic: the central 50% x 50% region is brighter than the
/// 10%-wide border frame. Equal means resolve to `false`.
pub fn detect_negative(img: &GrayImage) -> bool {
    let (w, h) = (img.width, img.height);
    let center_x = (w / 4, (w - w / 4).max(w / 4 + 1));
    let center_y = (h / 4, (h - h / 4).max(h / 4 + 1));
    let bw = ((w as f64 * 0.1).round() as usize).max(1);
    let bh = ((h as f64 * 0.1).round() as usize).max(1);

    let (mut c_sum, mut c_n, mut b_sum, mut b_n) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y) as f64;
            if (center_x.0..center_x.1).contains(&x) && (center_y.0..center_y.1).contains(&y) {
                c_sum += v;
                c_n += 1;
            }
            if x < bw || x >= w.saturating_sub(bw) || y < bh || y >= h.saturating_sub(bh) {
                b_sum += v;
                b_n += 1;
            }
        }
    }
    if c_n == 0 || b_n == 0 {
        return false;
    }
    c_sum / c_n as f64 > b_sum / b_n as f64
}

/// Horizontal mirror (column order reversed in each row).
pub fn mirror(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    for row in out.pixels.chunks_mut(img.width) {
        row.reverse();
    }
    out.meta.facing = match img.meta.facing {
        Facing::Left => Facing::Right,
        Facing::Right => Facing::Left,
        Facing::Unknown => Facing::Unknown,
    };
    out
}

/// Brings an image to left-facing orientation.
///
/// Right-facing images are mirrored. Unknown facing leaves the pixels alone
/// and raises `needs_triage`.
pub fn standardize_orientation(img: &GrayImage, facing: Facing) -> GrayImage {
    match facing {
        Facing::Right => {
            let mut out = mirror(img);
            out.meta.facing = Facing::Left;
            out
        }
        Facing::Left => {
            let mut out = img.clone();
            out.meta.facing = Facing::Left;
            out
        }
        Facing::Unknown => {
            let mut out = img.clone();
            out.meta.facing = Facing::Unknown;
            out.meta.needs_triage = true;
            out
        }
    }
}

/// Full preprocessing of one ingested image: polarity, orientation, size.
///
/// An explicit `inverted_flag` (`true` = negative scan) overrides the
/// heuristic; only images without one go through `detect_negative`. The
/// output's flag records whether inversion was applied.
pub fn preprocess(img: &GrayImage, size: usize) -> Result<GrayImage> {
    let negative = img.meta.inverted_flag.unwrap_or_else(|| detect_negative(img));
    let mut out = if negative { invert(img) } else { img.clone() };
    out.meta.inverted_flag = Some(negative);
    resample(&standardize_orientation(&out, img.meta.facing), size, size)
}
