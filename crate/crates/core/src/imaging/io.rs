use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Luma};

use super::{GrayImage, ImageMeta};
use crate::error::{Error, Result};

/// Decodes PNG or binary PGM (P5) bytes. Multi-channel input is rejected.
pub fn decode(bytes: &[u8], meta: ImageMeta) -> Result<GrayImage> {
    let format = image::guess_format(bytes)?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::invalid(format!("unsupported image format {format:?}")));
    }
    let dynimg = image::load_from_memory_with_format(bytes, format)?;
    let gray = match dynimg {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::invalid(format!(
                "expected 8-bit grayscale, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    GrayImage::new(w as usize, h as usize, gray.into_raw(), meta)
}

pub fn load(path: impl AsRef<Path>, meta: ImageMeta) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, meta).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn buffer(img: &GrayImage) -> image::ImageBuffer<Luma<u8>, Vec<u8>> {
    image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .expect("pixel count matches dimensions")
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    buffer(img).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Binary PGM, maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Origin;

    #[test]
    fn png_and_pgm_round_trip() {
        let meta = ImageMeta::new("x", Origin::Real);
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255], meta.clone()).unwrap();
        let png = encode_png(&img).unwrap();
        assert_eq!(decode(&png, meta.clone()).unwrap(), img);
        let pgm = encode_pgm(&img);
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode(&pgm, meta).unwrap(), img);
    }

    #[test]
    fn rejects_color_png() {
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3]));
        let mut bytes = Cursor::new(Vec::new());
        rgb.write_to(&mut bytes, ImageFormat::Png).unwrap();
        assert!(decode(bytes.get_ref(), ImageMeta::new("c", Origin::Real)).is_err());
    }
}
