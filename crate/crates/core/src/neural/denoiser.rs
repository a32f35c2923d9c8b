//! Small encoder–decoder ε-prediction network with hand-written backprop.
//!
//! Layout for `L = num_down_levels` and `C = base_channels` (every level keeps
//! `C` channels):
//!
//! ```text
//! h0  = act(conv3x3(x, enc0)            + time_bias[0])      H x W
//! hl  = act(conv3x3_s2(h{l-1}, down{l}) + time_bias[l])      H/2^l, l = 1..=L
//! m   = act(conv3x3(hL, mid))
//! dl  = act(conv3x3(concat(up2x(d{l+1} or m), hl), up{l}))   l = L-1..=0
//! eps = conv3x3(d0, out)
//! ```
//!
//! `time_bias` is one dense layer over a sinusoidal embedding of `t`, split
//! into `L + 1` channel-wise bias vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    add_channel_bias, concat_channels, conv2d, conv2d_backward, plane_sums, split_channels,
    upsample2x, upsample2x_backward, Activation,
};
use super::{ParamStore, ParamTensor, Tensor4};
use crate::error::{Error, Result};

const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub base_channels: usize,
    pub num_down_levels: usize,
    pub time_embed_dim: usize,
    /// Largest diffusion step the model accepts (`T`).
    pub num_timesteps: usize,
    pub activation: Activation,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_down_levels: 2,
            time_embed_dim: 32,
            num_timesteps: 1000,
            activation: Activation::Silu,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.num_down_levels == 0 {
            return Err(Error::invalid("base_channels and num_down_levels must be positive"));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::invalid("time_embed_dim must be positive and even"));
        }
        if self.num_timesteps == 0 {
            return Err(Error::invalid("num_timesteps must be positive"));
        }
        Ok(())
    }

    fn bias_width(&self) -> usize {
        (self.num_down_levels + 1) * self.base_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Output convolution starts at zero so the initial prediction is ε̂ = 0.
    ZeroOutput,
    /// Every weight drawn from the Glorot range, including the output layer.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub params: ParamStore,
    pub arch: Arch,
    pub step_count: u64,
}

impl DenoiserModel {
    pub fn new(arch: Arch, seed: u64, init: Init) -> Result<Self> {
        arch.validate()?;
        let c = arch.base_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();

        let mut glorot = |name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let len = shape.iter().product();
            let values = (0..len).map(|_| rng.random_range(-limit..=limit)).collect();
            tensors.push(ParamTensor { name, shape, values });
        };
        let k2 = KERNEL * KERNEL;

        glorot("time.weight".into(), vec![arch.bias_width(), arch.time_embed_dim], arch.time_embed_dim, arch.bias_width(), &mut rng);
        glorot("enc0.weight".into(), vec![c, 1, KERNEL, KERNEL], k2, c * k2, &mut rng);
        for l in 1..=arch.num_down_levels {
            glorot(format!("down{l}.weight"), vec![c, c, KERNEL, KERNEL], c * k2, c * k2, &mut rng);
        }
        glorot("mid.weight".into(), vec![c, c, KERNEL, KERNEL], c * k2, c * k2, &mut rng);
        for l in (0..arch.num_down_levels).rev() {
            glorot(format!("up{l}.weight"), vec![c, 2 * c, KERNEL, KERNEL], 2 * c * k2, c * k2, &mut rng);
        }
        glorot("out.weight".into(), vec![1, c, KERNEL, KERNEL], c * k2, k2, &mut rng);

        // Biases start at zero; interleave them after their weights for readability of dumps.
        let mut ordered = Vec::with_capacity(tensors.len() * 2);
        for t in tensors {
            let bias_len = t.shape[0];
            let bias_name = t.name.replace(".weight", ".bias");
            ordered.push(t);
            ordered.push(ParamTensor::zeros(bias_name, vec![bias_len]));
        }
        let mut params = ParamStore::new(ordered)?;
        if init == Init::ZeroOutput {
            params.expect_mut("out.weight").values.fill(0.0);
        }
        Ok(Self {
            params,
            arch,
            step_count: 0,
        })
    }

    pub fn validate_input(&self, x: &Tensor4, t: &[usize]) -> Result<()> {
        let [n, c, h, w] = x.dims();
        if c != 1 {
            return Err(Error::ShapeMismatch(format!("denoiser expects 1 channel, got {c}")));
        }
        let div = 1usize << self.arch.num_down_levels;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims {h}x{w} must be positive multiples of {div}"
            )));
        }
        if t.len() != n {
            return Err(Error::ShapeMismatch(format!("{} step indices for batch {n}", t.len())));
        }
        if let Some(&bad) = t.iter().find(|&&s| s == 0 || s > self.arch.num_timesteps) {
            return Err(Error::invalid(format!(
                "step index {bad} outside [1, {}]",
                self.arch.num_timesteps
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4, t: &[usize]) -> Result<Tensor4> {
        Ok(self.forward_cached(x, t)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor4, t: &[usize]) -> Result<(Tensor4, ForwardCache)> {
        self.validate_input(x, t)?;
        let act = self.arch.activation;
        let levels = self.arch.num_down_levels;
        let c = self.arch.base_channels;
        let n = x.batch();
        let p = &self.params;

        let emb = sinusoidal_embedding(t, self.arch.time_embed_dim);
        let time_bias = dense(&emb, n, self.arch.time_embed_dim, p.expect("time.weight"), p.expect("time.bias"));
        let level_bias = |l: usize| -> Vec<f64> {
            let width = self.arch.bias_width();
            (0..n)
                .flat_map(|b| time_bias[b * width + l * c..b * width + (l + 1) * c].iter().copied())
                .collect()
        };

        let conv = |input: &Tensor4, name: &str, stride: usize| -> Result<Tensor4> {
            let w = p.expect(&format!("{name}.weight"));
            let b = p.expect(&format!("{name}.bias"));
            conv2d(input, &w.to_tensor4(), &b.values, stride, 1)
        };

        let mut enc_pre = Vec::with_capacity(levels + 1);
        let mut enc_out = Vec::with_capacity(levels + 1);
        let mut a0 = conv(x, "enc0", 1)?;
        add_channel_bias(&mut a0, &level_bias(0))?;
        enc_out.push(act.apply(&a0));
        enc_pre.push(a0);
        for l in 1..=levels {
            let mut a = conv(&enc_out[l - 1], &format!("down{l}"), 2)?;
            add_channel_bias(&mut a, &level_bias(l))?;
            enc_out.push(act.apply(&a));
            enc_pre.push(a);
        }

        let mid_pre = conv(&enc_out[levels], "mid", 1)?;
        let mid_out = act.apply(&mid_pre);

        let mut dec_in = vec![None; levels];
        let mut dec_pre = vec![None; levels];
        let mut dec_out: Vec<Option<Tensor4>> = vec![None; levels];
        for l in (0..levels).rev() {
            let below = if l + 1 == levels {
                &mid_out
            } else {
                dec_out[l + 1].as_ref().expect("computed")
            };
            let cat = concat_channels(&upsample2x(below), &enc_out[l])?;
            let a = conv(&cat, &format!("up{l}"), 1)?;
            dec_out[l] = Some(act.apply(&a));
            dec_pre[l] = Some(a);
            dec_in[l] = Some(cat);
        }
        let dec_out: Vec<Tensor4> = dec_out.into_iter().map(|d| d.expect("computed")).collect();
        let out = conv(&dec_out[0], "out", 1)?;

        let cache = ForwardCache {
            input: x.clone(),
            emb,
            enc_pre,
            enc_out,
            mid_pre,
            mid_out,
            dec_in: dec_in.into_iter().map(|d| d.expect("computed")).collect(),
            dec_pre: dec_pre.into_iter().map(|d| d.expect("computed")).collect(),
            dec_out,
        };
        Ok((out, cache))
    }

    /// ∂loss/∂θ given ∂loss/∂ε̂. Recomputes the forward pass; never mutates the model.
    pub fn backward(&self, x: &Tensor4, t: &[usize], loss_grad: &Tensor4) -> Result<ParamStore> {
        let (out, cache) = self.forward_cached(x, t)?;
        loss_grad.expect_dims(out.dims(), "denoiser loss gradient")?;
        self.backward_cached(&cache, loss_grad)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, loss_grad: &Tensor4) -> Result<ParamStore> {
        let act = self.arch.activation;
        let levels = self.arch.num_down_levels;
        let c = self.arch.base_channels;
        let n = cache.input.batch();
        let p = &self.params;
        let mut grads = p.zeros_like();

        let mut conv_back = |input: &Tensor4, name: &str, grad_out: &Tensor4, stride: usize, need_input: bool| -> Result<Option<Tensor4>> {
            let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
            let g = conv2d_backward(input, &p.expect(&wn).to_tensor4(), grad_out, stride, 1, need_input)?;
            accumulate(&mut grads.expect_mut(&wn).values, g.weight.data());
            accumulate(&mut grads.expect_mut(&bn).values, &g.bias);
            Ok(g.input)
        };

        let mut g_dec = conv_back(&cache.dec_out[0], "out", loss_grad, 1, true)?.expect("input grad");
        let mut g_enc: Vec<Option<Tensor4>> = vec![None; levels + 1];
        let add_into = |slot: &mut Option<Tensor4>, g: Tensor4| {
            *slot = Some(match slot.take() {
                Some(prev) => prev.zip_map(&g, |a, b| a + b).expect("same dims"),
                None => g,
            });
        };

        #[allow(clippy::needless_range_loop)]
        for l in 0..levels {
            let g_pre = act.backward(&cache.dec_pre[l], &g_dec)?;
            let g_cat = conv_back(&cache.dec_in[l], &format!("up{l}"), &g_pre, 1, true)?.expect("input grad");
            let (g_up, g_skip) = split_channels(&g_cat, c);
            add_into(&mut g_enc[l], g_skip);
            g_dec = upsample2x_backward(&g_up);
        }

        let g_mid_pre = act.backward(&cache.mid_pre, &g_dec)?;
        let g_bottom = conv_back(&cache.enc_out[levels], "mid", &g_mid_pre, 1, true)?.expect("input grad");
        add_into(&mut g_enc[levels], g_bottom);

        let width = self.arch.bias_width();
        let mut g_time_bias = vec![0.0; n * width];
        for l in (0..=levels).rev() {
            let g_out = g_enc[l].take().expect("every level receives gradient");
            let g_pre = act.backward(&cache.enc_pre[l], &g_out)?;
            for (plane, s) in plane_sums(&g_pre).into_iter().enumerate() {
                let (b, ch) = (plane / c, plane % c);
                g_time_bias[b * width + l * c + ch] += s;
            }
            if l == 0 {
                conv_back(&cache.input, "enc0", &g_pre, 1, false)?;
            } else {
                let g_in = conv_back(&cache.enc_out[l - 1], &format!("down{l}"), &g_pre, 2, true)?.expect("input grad");
                add_into(&mut g_enc[l - 1], g_in);
            }
        }

        let d = self.arch.time_embed_dim;
        {
            let gw = &mut grads.expect_mut("time.weight").values;
            for b in 0..n {
                for j in 0..width {
                    let g = g_time_bias[b * width + j];
                    for k in 0..d {
                        gw[j * d + k] += g * cache.emb[b * d + k];
                    }
                }
            }
        }
        {
            let gb = &mut grads.expect_mut("time.bias").values;
            for b in 0..n {
                accumulate(gb, &g_time_bias[b * width..(b + 1) * width]);
            }
        }
        Ok(grads)
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Activations kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor4,
    emb: Vec<f64>,
    enc_pre: Vec<Tensor4>,
    enc_out: Vec<Tensor4>,
    mid_pre: Tensor4,
    mid_out: Tensor4,
    dec_in: Vec<Tensor4>,
    dec_pre: Vec<Tensor4>,
    dec_out: Vec<Tensor4>,
}

impl ForwardCache {
    pub fn all_finite(&self) -> bool {
        self.enc_pre
            .iter()
            .chain(&self.enc_out)
            .chain(&self.dec_in)
            .chain(&self.dec_pre)
            .chain(&self.dec_out)
            .chain([&self.mid_pre, &self.mid_out])
            .all(Tensor4::all_finite)
    }
}

/// `[sin(t·f_0..f_{d/2}), cos(t·f_0..f_{d/2})]` with `f_i = 10000^(-i/(d/2))`, row per batch item.
pub fn sinusoidal_embedding(t: &[usize], dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let s = step as f64;
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((s * f).sin(), (s * f).cos())).unzip();
        out.extend(sin);
        out.extend(cos);
    }
    out
}

fn dense(input: &[f64], n: usize, in_dim: usize, weight: &ParamTensor, bias: &ParamTensor) -> Vec<f64> {
    let out_dim = bias.values.len();
    let mut out = Vec::with_capacity(n * out_dim);
    for b in 0..n {
        let row = &input[b * in_dim..(b + 1) * in_dim];
        for j in 0..out_dim {
            let w = &weight.values[j * in_dim..(j + 1) * in_dim];
            out.push(bias.values[j] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Arch {
        Arch {
            base_channels: 4,
            num_down_levels: 2,
            time_embed_dim: 8,
            num_timesteps: 50,
            activation: Activation::Silu,
        }
    }

    fn input(n: usize, s: usize) -> Tensor4 {
        Tensor4::from_fn([n, 1, s, s], |b, _, y, x| ((b * 31 + y * 7 + x * 3) % 11) as f64 / 5.0 - 1.0)
    }

    #[test]
    fn zero_params_zero_output() {
        let mut m = DenoiserModel::new(tiny(), 1, Init::Full).unwrap();
        m.params.iter_mut().for_each(|p| p.values.fill(0.0));
        let y = m.forward(&input(2, 8), &[1, 7]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_init_predicts_zero() {
        let m = DenoiserModel::new(tiny(), 3, Init::ZeroOutput).unwrap();
        let y = m.forward(&input(3, 8), &[1, 2, 50]).unwrap();
        assert_eq!(y.dims(), [3, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_layer_blocks_upstream_gradients() {
        let m = DenoiserModel::new(tiny(), 3, Init::ZeroOutput).unwrap();
        let x = input(2, 8);
        let g = Tensor4::from_fn([2, 1, 8, 8], |_, _, y, x| (y as f64 - x as f64) * 0.1);
        let grads = m.backward(&x, &[4, 9], &g).unwrap();
        for p in grads.iter() {
            let zero = p.values.iter().all(|&v| v == 0.0);
            assert_eq!(zero, !p.name.starts_with("out."), "{}", p.name);
        }
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let m = DenoiserModel::new(tiny(), 5, Init::Full).unwrap();
        let grads = m.backward(&input(1, 8), &[3], &Tensor4::zeros([1, 1, 8, 8])).unwrap();
        assert!(grads.all_zero());
    }

    #[test]
    fn deterministic_and_pure() {
        let m = DenoiserModel::new(tiny(), 5, Init::Full).unwrap();
        let before = m.clone();
        let x = input(2, 8);
        let a = m.forward(&x, &[1, 2]).unwrap();
        let b = m.forward(&x, &[1, 2]).unwrap();
        assert_eq!(a, b);
        let _ = m.backward(&x, &[1, 2], &a).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn input_validation() {
        let m = DenoiserModel::new(tiny(), 5, Init::Full).unwrap();
        assert!(m.forward(&input(1, 6), &[1]).is_err());
        assert!(m.forward(&input(1, 8), &[0]).is_err());
        assert!(m.forward(&input(1, 8), &[51]).is_err());
        assert!(m.forward(&input(2, 8), &[1]).is_err());
        let g = Tensor4::zeros([1, 1, 4, 4]);
        assert!(matches!(m.backward(&input(1, 8), &[1], &g), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn unique_names_consistent_shapes() {
        let m = DenoiserModel::new(Arch::default(), 0, Init::ZeroOutput).unwrap();
        let names: Vec<_> = m.params.iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), 2 * (1 + 1 + 2 + 1 + 2 + 1));
        assert_eq!(m.params.expect("time.weight").shape, vec![48, 32]);
        assert_eq!(m.params.expect("up0.weight").shape, vec![16, 32, 3, 3]);
        assert_eq!(m.params.expect("out.bias").shape, vec![1]);
    }

    #[test]
    fn activations_finite_for_bounded_inputs() {
        let m = DenoiserModel::new(Arch { num_timesteps: 1000, ..Arch::default() }, 9, Init::Full).unwrap();
        let x = Tensor4::from_fn([2, 1, 16, 16], |b, _, y, x| if (x + y + b) % 2 == 0 { 3.0 } else { -3.0 });
        let (out, cache) = m.forward_cached(&x, &[1, 1000]).unwrap();
        assert!(out.all_finite() && cache.all_finite());
    }
}
