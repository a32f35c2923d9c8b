use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffusion::pixel_to_unit;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::neural::{conv2d, Activation, Tensor4};

/// Fixed random-feature map: three stride-2 3×3 convolutions with SiLU,
/// followed by a global average pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub seed: u64,
    layers: Vec<(Tensor4, Vec<f64>)>,
}

impl Embedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, Self::DEFAULT_DIM).expect("default dimension is valid")
    }

    /// Channels go `1 → d/4 → d/2 → d`.
    pub fn with_dim(seed: u64, out_dim: usize) -> Result<Self> {
        if out_dim < 4 || !out_dim.is_multiple_of(4) {
            return Err(Error::invalid(format!("embedding dimension {out_dim} must be a positive multiple of 4")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = [1, out_dim / 4, out_dim / 2, out_dim];
        let layers = channels
            .windows(2)
            .map(|w| {
                let (ic, oc) = (w[0], w[1]);
                let limit = (6.0 / ((ic + oc) * 9) as f64).sqrt();
                let weight = Tensor4::from_fn([oc, ic, 3, 3], |_, _, _, _| rng.random_range(-limit..limit));
                let bias = (0..oc).map(|_| rng.random_range(-0.1..0.1)).collect();
                (weight, bias)
            })
            .collect();
        Ok(Self { seed, layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.dims()[0])
    }

    pub fn embed(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let data = img.pixels().iter().map(|&p| pixel_to_unit(p)).collect();
        let mut x = Tensor4::from_vec([1, 1, img.height(), img.width()], data)?;
        for (w, b) in &self.layers {
            x = Activation::Silu.apply(&conv2d(&x, w, b, 2, 1)?);
        }
        Ok((0..x.channels())
            .map(|c| {
                let plane = x.plane(0, c);
                plane.iter().sum::<f64>() / plane.len() as f64
            })
            .collect())
    }
}

/// One feature row per image, keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::ShapeMismatch(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        if let Some(d) = rows.first().map(Vec::len) {
            if d == 0 || rows.iter().any(|r| r.len() != d) {
                return Err(Error::ShapeMismatch("feature rows must share a nonzero width".into()));
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// CSV with header `id,f0,..,f{d-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 0..self.dim() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(&self.rows) {
            out.push_str(id);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::invalid("feature CSV is empty"))?;
        let cols: Vec<&str> = header.split(',').collect();
        let expected: Vec<String> = std::iter::once("id".to_string())
            .chain((0..cols.len().saturating_sub(1)).map(|j| format!("f{j}")))
            .collect();
        if cols.len() < 2 || cols != expected {
            return Err(Error::invalid("feature CSV header must be id,f0,..,f{d-1}"));
        }
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (n, line) in lines {
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().to_string();
            let row = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
            if row.len() != cols.len() - 1 {
                return Err(Error::invalid(format!("line {}: expected {} features", n + 1, cols.len() - 1)));
            }
            ids.push(id);
            rows.push(row);
        }
        Self::new(ids, rows)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Embeds every image; rows follow input order.
pub fn embed_set(images: &[GrayImage], embedder: &Embedder) -> Result<FeatureMatrix> {
    if let Some(first) = images.first() {
        if images.iter().any(|i| (i.width(), i.height()) != (first.width(), first.height())) {
            return Err(Error::ShapeMismatch("embed_set needs images of one size".into()));
        }
    }
    let rows = images.par_iter().map(|i| embedder.embed(i)).collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(images.iter().map(|i| i.meta.source_id.clone()).collect(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{ImageMeta, Origin};

    fn flat(v: u8) -> GrayImage {
        GrayImage::filled(16, 16, v, ImageMeta::new(format!("flat{v}"), Origin::Real)).unwrap()
    }

    #[test]
    fn deterministic_and_discriminating() {
        let e = Embedder::new(3);
        assert_eq!(e, Embedder::new(3));
        assert_eq!(e.out_dim(), 64);
        let black = e.embed(&flat(0)).unwrap();
        assert_eq!(black, Embedder::new(3).embed(&flat(0)).unwrap());
        let white = e.embed(&flat(255)).unwrap();
        let dist: f64 = black.iter().zip(&white).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.0);
        let m = embed_set(&[flat(0), flat(0)], &e).unwrap();
        assert_eq!(m.rows[0], m.rows[1]);
    }

    #[test]
    fn csv_round_trip() {
        let m = embed_set(&[flat(0), flat(90)], &Embedder::with_dim(1, 8).unwrap()).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("id,f0,f1,f2,f3,f4,f5,f6,f7\n"));
        assert_eq!(FeatureMatrix::from_csv(&text).unwrap(), m);
        assert!(FeatureMatrix::from_csv("id,g0\na,1\n").is_err());
        assert!(FeatureMatrix::from_csv("id,f0\na,x\n").is_err());
    }

    #[test]
    fn invalid_dims_and_sizes() {
        assert!(Embedder::with_dim(0, 6).is_err());
        let small = GrayImage::filled(8, 8, 0, ImageMeta::new("s", Origin::Real)).unwrap();
        assert!(embed_set(&[flat(0), small], &Embedder::new(0)).is_err());
    }
}
