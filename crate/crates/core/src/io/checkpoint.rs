//! `H2OC` training checkpoints: parameters, optimizer moments and the
//! training RNG position.

use std::path::Path;

use super::binary::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{AdamW, AttentionSource, Denoiser, DenoiserConfig, Init, ParamStore, Tensor, TrainConfig, TrainState};
use crate::rng::TrackedRng;

pub const MAGIC: &[u8; 4] = b"H2OC";
pub const VERSION: u32 = 1;

const CONFIG_TENSOR: &str = "config";
const STEP_TENSOR: &str = "adam.step";

/// Decoded checkpoint. Learning rate and weight decay come from the
/// training config at resume time, see [`Checkpoint::into_state`].
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
    pub rng_seed: u64,
    pub rng_counter: u64,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            model: state.model.clone(),
            m: state.opt.m.clone(),
            v: state.opt.v.clone(),
            step: state.opt.step,
            rng_seed: state.rng.seed(),
            rng_counter: state.rng.counter(),
        }
    }

    pub fn into_state(self, cfg: &TrainConfig) -> TrainState {
        let mut opt = AdamW::new(&self.model.params, cfg.lr, cfg.weight_decay);
        opt.m = self.m;
        opt.v = self.v;
        opt.step = self.step;
        TrainState {
            model: self.model,
            opt,
            rng: TrackedRng::restore(self.rng_seed, self.rng_counter),
        }
    }
}

fn config_tensor(c: &DenoiserConfig) -> Tensor {
    let (src, block) = match c.attention_source {
        AttentionSource::FinalBlock => (0, 0),
        AttentionSource::Block(b) => (1, b),
        AttentionSource::MeanOverBlocks => (2, 0),
    };
    let v = [c.hidden, c.heads, c.blocks, c.n_points, c.t_embed_dim, c.mlp_ratio, src, block];
    Tensor::new(vec![v.len()], v.iter().map(|&x| x as f64).collect()).expect("shape matches")
}

fn config_from_tensor(t: &Tensor, at: usize) -> Result<DenoiserConfig> {
    let bad = || Error::Format {
        offset: at,
        msg: "malformed config tensor".into(),
    };
    if t.shape() != [8] {
        return Err(bad());
    }
    let mut v = [0usize; 8];
    for (o, x) in v.iter_mut().zip(t.data()) {
        if !(*x >= 0.0 && x.fract() == 0.0) {
            return Err(bad());
        }
        *o = *x as usize;
    }
    let attention_source = match v[6] {
        0 => AttentionSource::FinalBlock,
        1 => AttentionSource::Block(v[7]),
        2 => AttentionSource::MeanOverBlocks,
        _ => return Err(bad()),
    };
    Ok(DenoiserConfig {
        hidden: v[0],
        heads: v[1],
        blocks: v[2],
        n_points: v[3],
        t_embed_dim: v[4],
        mlp_ratio: v[5],
        attention_source,
    })
}

fn write_tensor(w: &mut Writer, name: &str, t: &Tensor) {
    w.u16(name.len() as u16);
    w.bytes(name.as_bytes());
    w.u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    w.f32s(t.data().iter().copied());
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let len = r.u16("tensor name length")? as usize;
    let at = r.offset();
    let name = String::from_utf8(r.take(len, "tensor name")?.to_vec()).map_err(|_| Error::Format {
        offset: at,
        msg: "tensor name is not UTF-8".into(),
    })?;
    let rank = r.u8("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("tensor dim")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| r.err("tensor size overflow"))?;
    let data = r.f32s(n, "tensor data")?.into_iter().map(f64::from).collect();
    Ok((name, Tensor::new(shape, data)?))
}

fn write_section(w: &mut Writer, tensors: &[(String, &Tensor)]) {
    w.u32(tensors.len() as u32);
    for (name, t) in tensors {
        write_tensor(w, name, t);
    }
}

fn read_section(r: &mut Reader) -> Result<Vec<(String, Tensor)>> {
    let n = r.u32("tensor count")? as usize;
    (0..n).map(|_| read_tensor(r)).collect()
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let cfg = config_tensor(&state.model.config);
    let mut params: Vec<(String, &Tensor)> = vec![(CONFIG_TENSOR.into(), &cfg)];
    params.extend(state.model.params.iter().map(|(n, t)| (n.to_string(), t)));
    write_section(&mut w, &params);

    // the step is split into 16-bit pieces so it survives float32 storage
    let step = state.opt.step;
    let step_t = Tensor::new(
        vec![3],
        vec![(step & 0xffff) as f64, ((step >> 16) & 0xffff) as f64, (step >> 32) as f64],
    )
    .expect("shape matches");
    let mut opt: Vec<(String, &Tensor)> = vec![(STEP_TENSOR.into(), &step_t)];
    opt.extend(state.opt.m.iter().map(|(n, t)| (format!("m.{n}"), t)));
    opt.extend(state.opt.v.iter().map(|(n, t)| (format!("v.{n}"), t)));
    write_section(&mut w, &opt);

    w.u64(state.rng.seed());
    w.u64(state.rng.counter());
    w.buf
}

fn fill(store: &mut ParamStore, tensors: Vec<(String, Tensor)>, prefix: &str, at: usize) -> Result<()> {
    let fmt = |msg: String| Error::Format { offset: at, msg };
    if tensors.len() != store.len() {
        return Err(fmt(format!("expected {} {prefix}tensors, found {}", store.len(), tensors.len())));
    }
    for (name, t) in tensors {
        let key = name
            .strip_prefix(prefix)
            .ok_or_else(|| fmt(format!("tensor `{name}` lacks prefix `{prefix}`")))?;
        let slot = store
            .get_mut(key)
            .ok_or_else(|| fmt(format!("unexpected tensor `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(fmt(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(data);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let mut params = read_section(&mut r)?;
    if params.is_empty() || params[0].0 != CONFIG_TENSOR {
        return Err(Error::Format {
            offset: at,
            msg: "checkpoint does not start with the config tensor".into(),
        });
    }
    let config = config_from_tensor(&params.remove(0).1, at)?;
    let mut model = Denoiser::new(config, Init::ZeroModulation, 0).map_err(|e| Error::Format {
        offset: at,
        msg: format!("stored config is invalid: {e}"),
    })?;
    fill(&mut model.params, params, "", at)?;

    let at = r.offset();
    let mut opt = read_section(&mut r)?;
    if opt.is_empty() || opt[0].0 != STEP_TENSOR || opt[0].1.shape() != [3] {
        return Err(Error::Format {
            offset: at,
            msg: "optimizer section does not start with the step counter".into(),
        });
    }
    let s = opt.remove(0).1;
    let step = s.data()[0] as u64 | (s.data()[1] as u64) << 16 | (s.data()[2] as u64) << 32;
    let split = opt.iter().position(|(n, _)| n.starts_with("v.")).unwrap_or(opt.len());
    let v_part = opt.split_off(split);
    let mut m = model.params.zeros_like();
    let mut v = model.params.zeros_like();
    fill(&mut m, opt, "m.", at)?;
    fill(&mut v, v_part, "v.", at)?;

    let rng_seed = r.u64("rng seed")?;
    let rng_counter = r.u64("rng counter")?;
    r.finish()?;
    Ok(Checkpoint {
        model,
        m,
        v,
        step,
        rng_seed,
        rng_counter,
    })
}

pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    write_file(path, &encode_checkpoint(state))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState {
        let cfg = DenoiserConfig {
            hidden: 8,
            heads: 2,
            blocks: 2,
            n_points: 4,
            t_embed_dim: 4,
            mlp_ratio: 1,
            attention_source: AttentionSource::Block(1),
        };
        let model = Denoiser::new(cfg, Init::Random, 3).unwrap();
        let mut s = TrainState::new(model, &TrainConfig::default());
        s.opt.step = (7 << 32) + (5 << 16) + 3;
        for (_, t) in s.opt.m.iter_mut() {
            t.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = (i as f32 * 0.25) as f64);
        }
        use rand::RngCore;
        for _ in 0..5 {
            s.rng.rng().next_u64();
        }
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = state();
        let bytes = encode_checkpoint(&s);
        let c = decode_checkpoint(&bytes).unwrap();
        assert_eq!(c.model.config, s.model.config);
        assert_eq!(c.model.params, s.model.params);
        assert_eq!(c.m, s.opt.m);
        assert_eq!(c.v, s.opt.v);
        assert_eq!(c.step, s.opt.step);
        assert_eq!((c.rng_seed, c.rng_counter), (s.rng.seed(), s.rng.counter()));
        let back = c.into_state(&TrainConfig::default());
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&state());
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Version { found: 9, .. })));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }
}
