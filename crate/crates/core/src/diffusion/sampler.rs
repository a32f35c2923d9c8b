use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{p_sample_step, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imaging::{quantize, Facing, GrayImage, ImageMeta, Origin};
use crate::neural::Tensor4;

/// Images sampled together through the network.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub checkpoint: Option<u32>,
    pub id_prefix: String,
}

impl SampleOptions {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            seed,
            checkpoint: None,
            id_prefix: "synth".into(),
        }
    }

    pub fn image_id(&self, index: usize) -> String {
        match self.checkpoint {
            Some(c) => format!("{}-c{c:04}-{index:06}", self.id_prefix),
            None => format!("{}-{index:06}", self.id_prefix),
        }
    }
}

/// Maps `[0, 255]` to `[-1, 1]`.
pub fn pixel_to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Clamps to `[-1, 1]` and maps to `[0, 255]`, rounding half up.
pub fn unit_to_pixel(v: f64) -> u8 {
    quantize((v.clamp(-1.0, 1.0) + 1.0) * 127.5)
}

/// Stacks equally sized images into an `[n, 1, h, w]` tensor in `[-1, 1]`.
pub fn images_to_tensor(images: &[GrayImage]) -> Result<Tensor4> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}x{}, expected {w}x{h}",
                img.meta.source_id,
                img.width(),
                img.height()
            )));
        }
        data.extend(img.pixels().iter().map(|&p| pixel_to_unit(p)));
    }
    Tensor4::from_vec([images.len(), 1, h, w], data)
}

/// Draws images `range` of the seeded sample set. Image `i` always uses noise
/// stream `i`, so any split of the index range yields the same pixels.
pub fn sample_range<P: NoisePredictor + Sync>(
    model: &P,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    range: std::ops::Range<usize>,
) -> Result<Vec<GrayImage>> {
    if opts.width == 0 || opts.height == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let indices: Vec<usize> = range.collect();
    let chunks: Vec<Result<Vec<GrayImage>>> = indices
        .par_chunks(CHUNK)
        .map(|idx| sample_chunk(model, sched, opts, idx))
        .collect();
    let mut out = Vec::with_capacity(indices.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Draws `count` images starting at index 0.
pub fn sample<P: NoisePredictor + Sync>(
    model: &P,
    sched: &NoiseSchedule,
    count: usize,
    opts: &SampleOptions,
) -> Result<Vec<GrayImage>> {
    sample_range(model, sched, opts, 0..count)
}

fn sample_chunk<P: NoisePredictor>(
    model: &P,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    indices: &[usize],
) -> Result<Vec<GrayImage>> {
    let plane = opts.width * opts.height;
    let dims = [indices.len(), 1, opts.height, opts.width];
    let mut rngs: Vec<ChaCha8Rng> = indices
        .iter()
        .map(|&i| {
            let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let draw = |rngs: &mut [ChaCha8Rng]| -> Result<Tensor4> {
        let mut data = Vec::with_capacity(indices.len() * plane);
        for r in rngs.iter_mut() {
            data.extend((0..plane).map(|_| r.sample::<f64, _>(StandardNormal)));
        }
        Tensor4::from_vec(dims, data)
    };
    let mut x = draw(&mut rngs)?;
    for t in (1..=sched.len()).rev() {
        let steps = vec![t; indices.len()];
        let eps_hat = model.predict(&x, &steps)?;
        let z = if t > 1 { Some(draw(&mut rngs)?) } else { None };
        x = p_sample_step(&x, t, &eps_hat, sched, z.as_ref())?;
    }
    if !x.all_finite() {
        return Err(Error::Numerical("sampler produced non-finite values".into()));
    }
    indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let pixels = x.plane(k, 0).iter().map(|&v| unit_to_pixel(v)).collect();
            let mut meta = ImageMeta::new(opts.image_id(i), Origin::Synthetic);
            meta.checkpoint = opts.checkpoint;
            meta.facing = Facing::Left;
            meta.inverted_flag = Some(false);
            GrayImage::new(opts.width, opts.height, pixels, meta)
        })
        .collect()
}
