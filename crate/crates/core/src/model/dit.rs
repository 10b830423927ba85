//! Diffusion transformer over per-point tokens: self-attention across the
//! joint flow/human tokens, cross-attention to object tokens, and timestep
//! conditioning through adaptive layer modulation.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{FlowField, PointCloud};
use crate::math::Vec3;
use crate::rng::stream;

/// Which cross-attention maps supply the human-object weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSource {
    FinalBlock,
    Block(usize),
    MeanOverBlocks,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub n_points: usize,
    pub t_embed_dim: usize,
    pub mlp_ratio: usize,
    pub attention_source: AttentionSource,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 4,
            blocks: 5,
            n_points: 512,
            t_embed_dim: 64,
            mlp_ratio: 4,
            attention_source: AttentionSource::FinalBlock,
        }
    }
}

impl DenoiserConfig {
    /// Small preset that trains in minutes on one core.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            heads: 4,
            blocks: 2,
            n_points: 64,
            t_embed_dim: 32,
            mlp_ratio: 2,
            attention_source: AttentionSource::FinalBlock,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.blocks == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("denoiser sizes must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.t_embed_dim < 2 || self.t_embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig("t_embed_dim must be even and >= 2".into()));
        }
        if let AttentionSource::Block(b) = self.attention_source {
            if b >= self.blocks {
                return Err(Error::InvalidConfig(format!(
                    "attention block {b} out of range for {} blocks",
                    self.blocks
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    pub eps_theta: FlowField,
    /// Per-element interpolation weights in (0, 1).
    pub v_theta: Vec<Vec3>,
    /// `N_H x N_O`, rows sum to one.
    pub cross_attn: Tensor,
}

/// How parameters are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Modulation and output heads start at zero, so every block starts as
    /// the identity and the model predicts zero noise.
    ZeroModulation,
    /// Everything random; used for gradient checks.
    Random,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
}

fn xavier(rng: &mut crate::rng::Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::matrix(
        fan_in,
        fan_out,
        (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect(),
    )
}

fn normal(rng: &mut crate::rng::Rng, shape: &[usize], std: f64) -> Tensor {
    let d = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).unwrap()
}

/// Sinusoidal embedding of a timestep: `[cos(t f_i), sin(t f_i)]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * f).cos();
        out[half + i] = (t as f64 * f).sin();
    }
    out
}

fn points_tensor(pts: &[Vec3]) -> Tensor {
    Tensor::matrix(pts.len(), 3, pts.iter().flat_map(|p| p.to_array()).collect())
}

/// Variables of one recorded forward pass.
pub struct ForwardVars {
    pub eps: Var,
    pub v: Var,
    /// `attn[block][head]`, each `N_H x N_O`.
    pub cross_attn: Vec<Vec<Var>>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, init: Init, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "denoiser-init", 0);
        let h = config.hidden;
        let zero_mod = init == Init::ZeroModulation;
        let mut p = ParamStore::new();
        let bias = |rng: &mut crate::rng::Rng, n: usize| {
            if zero_mod {
                Tensor::zeros(&[n])
            } else {
                normal(rng, &[n], 0.1)
            }
        };
        for enc in ["enc_flow", "enc_human", "enc_obj"] {
            p.insert(format!("{enc}.w1"), xavier(&mut rng, 3, h));
            p.insert(format!("{enc}.b1"), bias(&mut rng, h));
            p.insert(format!("{enc}.w2"), xavier(&mut rng, h, h));
            p.insert(format!("{enc}.b2"), bias(&mut rng, h));
        }
        p.insert("joint.w", xavier(&mut rng, 2 * h, h));
        p.insert("joint.b", bias(&mut rng, h));
        let temb_std = if zero_mod { 0.02 } else { 0.3 };
        p.insert("temb.w1", normal(&mut rng, &[config.t_embed_dim, h], temb_std));
        p.insert("temb.b1", bias(&mut rng, h));
        p.insert("temb.w2", normal(&mut rng, &[h, h], temb_std));
        p.insert("temb.b2", bias(&mut rng, h));
        let maybe_zero = |rng: &mut crate::rng::Rng, r: usize, c: usize| {
            if zero_mod {
                Tensor::zeros(&[r, c])
            } else {
                normal(rng, &[r, c], 0.3)
            }
        };
        for b in 0..config.blocks {
            p.insert(format!("block{b}.ada.w"), maybe_zero(&mut rng, h, 9 * h));
            p.insert(format!("block{b}.ada.b"), bias(&mut rng, 9 * h));
            for att in ["self", "cross"] {
                for w in ["wq", "wk", "wv", "wo"] {
                    p.insert(format!("block{b}.{att}.{w}"), xavier(&mut rng, h, h));
                }
                p.insert(format!("block{b}.{att}.bo"), bias(&mut rng, h));
            }
            let m = h * config.mlp_ratio;
            p.insert(format!("block{b}.mlp.w1"), xavier(&mut rng, h, m));
            p.insert(format!("block{b}.mlp.b1"), bias(&mut rng, m));
            p.insert(format!("block{b}.mlp.w2"), xavier(&mut rng, m, h));
            p.insert(format!("block{b}.mlp.b2"), bias(&mut rng, h));
        }
        p.insert("final.ada.w", maybe_zero(&mut rng, h, 2 * h));
        p.insert("final.ada.b", bias(&mut rng, 2 * h));
        p.insert("head.eps.w", maybe_zero(&mut rng, h, 3));
        p.insert("head.eps.b", bias(&mut rng, 3));
        p.insert("head.v.w", maybe_zero(&mut rng, h, 3));
        p.insert("head.v.b", bias(&mut rng, 3));
        p.round_to_f32();
        for (_, t) in p.iter_mut() {
            t.requires_grad = true;
        }
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config, Init::ZeroModulation, 0)?;
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::InvalidData(format!("checkpoint lacks parameter `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::InvalidData(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::InvalidData("checkpoint has unexpected parameters".into()));
        }
        Ok(Self { config, params })
    }

    fn linear(&self, g: &mut Graph, x: Var, w: &str, b: Option<&str>) -> Var {
        let wv = g.param(&self.params, w);
        let y = g.matmul(x, wv);
        match b {
            Some(b) => {
                let bv = g.param(&self.params, b);
                g.add_row(y, bv)
            }
            None => y,
        }
    }

    /// Shared per-point MLP: `silu(x W1 + b1) W2 + b2`.
    pub fn encode(&self, g: &mut Graph, x: Var, prefix: &str) -> Var {
        let h = self.linear(g, x, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")));
        let h = g.silu(h);
        self.linear(g, h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))
    }

    fn attention(&self, g: &mut Graph, q_in: Var, kv_in: Var, prefix: &str) -> (Var, Vec<Var>) {
        let heads = self.config.heads;
        let dh = self.config.hidden / heads;
        let q = self.linear(g, q_in, &format!("{prefix}.wq"), None);
        let k = self.linear(g, kv_in, &format!("{prefix}.wk"), None);
        let v = self.linear(g, kv_in, &format!("{prefix}.wv"), None);
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = g.slice_cols(q, hd * dh, dh);
            let kh = g.slice_cols(k, hd * dh, dh);
            let vh = g.slice_cols(v, hd * dh, dh);
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh));
            maps.push(a);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        let o = self.linear(g, cat, &format!("{prefix}.wo"), Some(&format!("{prefix}.bo")));
        (o, maps)
    }

    /// `LN(x) * (1 + scale) + shift` with row-vector shift and scale.
    fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let s1 = g.add_scalar(scale, 1.0);
        let y = g.mul_row(n, s1);
        g.add_row(y, shift)
    }

    /// Records one forward pass on `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        f_t: &[Vec3],
        h0: &[Vec3],
        object: &[Vec3],
        t: usize,
    ) -> Result<ForwardVars> {
        if f_t.len() != h0.len() {
            return Err(invalid_arg(format!(
                "flow has {} rows, human cloud has {}",
                f_t.len(),
                h0.len()
            )));
        }
        if f_t.is_empty() || object.is_empty() {
            return Err(invalid_arg("denoiser needs non-empty human and object clouds"));
        }
        let h = self.config.hidden;
        let fx = g.input(points_tensor(f_t));
        let hx = g.input(points_tensor(h0));
        let ox = g.input(points_tensor(object));
        let ff = self.encode(g, fx, "enc_flow");
        let fh = self.encode(g, hx, "enc_human");
        let joint = g.concat_cols(&[ff, fh]);
        let mut x = self.linear(g, joint, "joint.w", Some("joint.b"));
        let fo = self.encode(g, ox, "enc_obj");
        let obj = g.layer_norm_rows(fo);

        let te = g.input(Tensor::matrix(1, self.config.t_embed_dim, timestep_embedding(t, self.config.t_embed_dim)));
        let c = self.linear(g, te, "temb.w1", Some("temb.b1"));
        let c = g.silu(c);
        let c = self.linear(g, c, "temb.w2", Some("temb.b2"));
        let c = g.silu(c);

        let mut cross_attn = Vec::with_capacity(self.config.blocks);
        for b in 0..self.config.blocks {
            let ada = self.linear(g, c, &format!("block{b}.ada.w"), Some(&format!("block{b}.ada.b")));
            let chunk: Vec<Var> = (0..9).map(|i| g.slice_cols(ada, i * h, h)).collect();

            let m = Self::modulate(g, x, chunk[0], chunk[1]);
            let (a, _) = self.attention(g, m, m, &format!("block{b}.self"));
            let a = g.mul_row(a, chunk[2]);
            x = g.add(x, a);

            let m = Self::modulate(g, x, chunk[3], chunk[4]);
            let (a, maps) = self.attention(g, m, obj, &format!("block{b}.cross"));
            let a = g.mul_row(a, chunk[5]);
            x = g.add(x, a);
            cross_attn.push(maps);

            let m = Self::modulate(g, x, chunk[6], chunk[7]);
            let y = self.linear(g, m, &format!("block{b}.mlp.w1"), Some(&format!("block{b}.mlp.b1")));
            let y = g.silu(y);
            let y = self.linear(g, y, &format!("block{b}.mlp.w2"), Some(&format!("block{b}.mlp.b2")));
            let y = g.mul_row(y, chunk[8]);
            x = g.add(x, y);
        }
        let ada = self.linear(g, c, "final.ada.w", Some("final.ada.b"));
        let shift = g.slice_cols(ada, 0, h);
        let scale = g.slice_cols(ada, h, h);
        let x = Self::modulate(g, x, shift, scale);
        let eps = self.linear(g, x, "head.eps.w", Some("head.eps.b"));
        let v = self.linear(g, x, "head.v.w", Some("head.v.b"));
        let v = g.sigmoid(v);
        Ok(ForwardVars { eps, v, cross_attn })
    }

    /// Head-averaged, row-normalized cross-attention per the configured source.
    pub fn attention_weights(&self, g: &Graph, vars: &ForwardVars) -> Tensor {
        let blocks: Vec<usize> = match self.config.attention_source {
            AttentionSource::FinalBlock => vec![self.config.blocks - 1],
            AttentionSource::Block(b) => vec![b],
            AttentionSource::MeanOverBlocks => (0..self.config.blocks).collect(),
        };
        let first = g.value(vars.cross_attn[blocks[0]][0]);
        let (r, c) = (first.rows(), first.cols());
        let mut acc = vec![0.0; r * c];
        for &b in &blocks {
            for &m in &vars.cross_attn[b] {
                for (a, v) in acc.iter_mut().zip(g.value(m).data()) {
                    *a += v;
                }
            }
        }
        for row in acc.chunks_mut(c) {
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Tensor::matrix(r, c, acc)
    }

    pub fn predict(
        &self,
        f_t: &FlowField,
        h0: &PointCloud,
        object: &PointCloud,
        t: usize,
    ) -> Result<DenoiserOutput> {
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, f_t.vectors(), h0.points(), object.points(), t)?;
        let to_vecs = |t: &Tensor| -> Vec<Vec3> {
            t.data()
                .chunks(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect()
        };
        let eps = to_vecs(g.value(vars.eps));
        let v = to_vecs(g.value(vars.v));
        if !g.value(vars.eps).is_finite() || !g.value(vars.v).is_finite() {
            return Err(Error::NumericFailure {
                t,
                msg: "denoiser produced non-finite output".into(),
            });
        }
        Ok(DenoiserOutput {
            eps_theta: FlowField::new(eps),
            v_theta: v,
            cross_attn: self.attention_weights(&g, &vars),
        })
    }
}

/// Applies the named encoder to every point (no gradient recorded).
pub fn encode_points(model: &Denoiser, prefix: &str, points: &[Vec3]) -> Tensor {
    let mut g = Graph::new();
    let x = g.input(points_tensor(points));
    let y = model.encode(&mut g, x, prefix);
    g.value(y).clone()
}
