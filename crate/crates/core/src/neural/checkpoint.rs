//! Self-describing binary checkpoint format.
//!
//! ```text
//! "DDPMCKPT" | version u32
//! arch: base_channels u32 | num_down_levels u32 | time_embed_dim u32 | num_timesteps u32 | activation u8
//! param_count u32, then per parameter:
//!     name_len u32 | name utf-8 | ndim u32 | dims u64 x ndim | values f64 x prod(dims)
//! optimizer: present u8; if 1: timestep u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!     then first moments and second moments, each in parameter order
//! step_count u64
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::ops::Activation;
use super::{AdamHyper, Arch, DenoiserModel, OptimizerState, ParamStore, ParamTensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DDPMCKPT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &DenoiserModel, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.params.scalar_count() * 8 * 3);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let a = &model.arch;
    put_u32(&mut out, a.base_channels as u32);
    put_u32(&mut out, a.num_down_levels as u32);
    put_u32(&mut out, a.time_embed_dim as u32);
    put_u32(&mut out, a.num_timesteps as u32);
    out.push(match a.activation {
        Activation::Silu => 0,
        Activation::Identity => 1,
    });

    put_u32(&mut out, model.params.len() as u32);
    for p in model.params.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.shape.len() as u32);
        for &d in &p.shape {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, &p.values);
    }

    match optimizer {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            put_u64(&mut out, st.timestep);
            put_f64s(&mut out, &[st.hyper.lr, st.hyper.beta1, st.hyper.beta2, st.hyper.eps]);
            for m in st.first_moment.iter() {
                put_f64s(&mut out, &m.values);
            }
            for v in st.second_moment.iter() {
                put_f64s(&mut out, &v.values);
            }
        }
    }
    put_u64(&mut out, model.step_count);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::invalid(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::invalid("checkpoint size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(DenoiserModel, Option<OptimizerState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::invalid("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
    }
    let arch = Arch {
        base_channels: r.u32()? as usize,
        num_down_levels: r.u32()? as usize,
        time_embed_dim: r.u32()? as usize,
        num_timesteps: r.u32()? as usize,
        activation: match r.u8()? {
            0 => Activation::Silu,
            1 => Activation::Identity,
            other => return Err(Error::invalid(format!("unknown activation tag {other}"))),
        },
    };
    arch.validate()?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::invalid("parameter name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = r.f64s(shape.iter().product())?;
        tensors.push(ParamTensor { name, shape, values });
    }
    let params = ParamStore::new(tensors)?;

    let expected = DenoiserModel::new(arch, 0, super::Init::Full)?;
    expected.params.check_compatible(&params)?;

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let timestep = r.u64()?;
            let h = r.f64s(4)?;
            let mut first_moment = params.zeros_like();
            for m in first_moment.iter_mut() {
                m.values = r.f64s(m.values.len())?;
            }
            let mut second_moment = params.zeros_like();
            for v in second_moment.iter_mut() {
                v.values = r.f64s(v.values.len())?;
            }
            Some(OptimizerState {
                first_moment,
                second_moment,
                timestep,
                hyper: AdamHyper {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                },
            })
        }
        other => return Err(Error::invalid(format!("bad optimizer flag {other}"))),
    };
    let step_count = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::invalid("trailing bytes after checkpoint"));
    }
    Ok((
        DenoiserModel {
            params,
            arch,
            step_count,
        },
        optimizer,
    ))
}

pub fn save(path: impl AsRef<Path>, model: &DenoiserModel, optimizer: Option<&OptimizerState>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(model, optimizer)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(DenoiserModel, Option<OptimizerState>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{adam_step, Init};

    fn trained() -> (DenoiserModel, OptimizerState) {
        let arch = Arch {
            base_channels: 3,
            num_down_levels: 1,
            time_embed_dim: 4,
            num_timesteps: 20,
            activation: Activation::Silu,
        };
        let mut m = DenoiserModel::new(arch, 11, Init::Full).unwrap();
        let mut st = OptimizerState::new(&m.params, AdamHyper::default());
        let mut g = m.params.zeros_like();
        for p in g.iter_mut() {
            for (i, v) in p.values.iter_mut().enumerate() {
                *v = (i as f64 * 0.37).sin();
            }
        }
        adam_step(&mut m, &g, &mut st).unwrap();
        (m, st)
    }

    #[test]
    fn bit_exact_round_trip() {
        let (m, st) = trained();
        let bytes = encode(&m, Some(&st));
        assert_eq!(&bytes[..8], b"DDPMCKPT");
        let (m2, st2) = decode(&bytes).unwrap();
        assert_eq!(m2, m);
        assert_eq!(st2.as_ref(), Some(&st));
        assert_eq!(encode(&m2, st2.as_ref()), bytes);

        let bare = encode(&m, None);
        let (m3, st3) = decode(&bare).unwrap();
        assert_eq!(m3, m);
        assert!(st3.is_none());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let (m, st) = trained();
        let bytes = encode(&m, Some(&st));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
