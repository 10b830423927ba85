//! Hybrid-loss training with AdamW.

use rand::Rng as _;
use rayon::prelude::*;

use super::dit::Denoiser;
use super::graph::{Graph, Var};
use super::params::{AdamW, ParamStore};
use super::tensor::Tensor;
use crate::diffusion::{forward_noise, gaussian_field, NoiseSchedule, LAMBDA_VLB};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{FlowField, PointCloud};
use crate::math::Vec3;
use crate::rng::TrackedRng;
use crate::synthdata::{augment, HoiSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Random yaw about the vertical axis.
    pub rotate: bool,
    /// Occlusion fraction is drawn uniformly from `[0, max_occlusion]`.
    pub max_occlusion: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotate: true,
            max_occlusion: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides the epoch count when set.
    pub max_steps: Option<usize>,
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            epochs: 2000,
            max_steps: None,
            augment: AugmentPolicy::default(),
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.max_steps.unwrap_or_else(|| {
            self.epochs * dataset_len.div_ceil(self.batch_size.max(1))
        })
    }
}

/// Everything needed to resume training bitwise.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Denoiser,
    pub opt: AdamW,
    pub rng: TrackedRng,
}

impl TrainState {
    pub fn new(model: Denoiser, cfg: &TrainConfig) -> Self {
        let opt = AdamW::new(&model.params, cfg.lr, cfg.weight_decay);
        Self {
            model,
            opt,
            rng: TrackedRng::new(crate::rng::derive_seed(cfg.seed, "train", 0)),
        }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub simple: f64,
    pub vlb: f64,
}

/// One training example after augmentation.
#[derive(Clone, Debug)]
pub struct Example {
    pub f0: Vec<Vec3>,
    pub object: Vec<Vec3>,
    pub t: usize,
    pub eps: Vec<Vec3>,
}

fn pts_input(g: &mut Graph, v: &[Vec3]) -> Var {
    g.input(Tensor::matrix(v.len(), 3, v.iter().flat_map(|p| p.to_array()).collect()))
}

/// Records the hybrid loss on `g`; returns `(total, simple, vlb)`. The
/// model mean inside the variational term is a constant.
pub fn loss_graph(
    model: &Denoiser,
    g: &mut Graph,
    h0: &[Vec3],
    ex: &Example,
    sched: &NoiseSchedule,
) -> Result<(Var, Var, Var)> {
    loss_graph_with_mean(model, g, h0, ex, sched, None)
}

/// As [`loss_graph`], but the model mean in the variational term is built
/// from `mean_eps` (flattened noise prediction) when given.
pub fn loss_graph_with_mean(
    model: &Denoiser,
    g: &mut Graph,
    h0: &[Vec3],
    ex: &Example,
    sched: &NoiseSchedule,
    mean_eps: Option<&[f64]>,
) -> Result<(Var, Var, Var)> {
    let t = ex.t;
    sched.check_t(t)?;
    let f0 = FlowField::new(ex.f0.clone());
    let eps_f = FlowField::new(ex.eps.clone());
    let f_t = forward_noise(&f0, t, &eps_f, sched)?.flow;
    let out = model.forward_graph(g, f_t.vectors(), h0, &ex.object, t)?;

    let eps = pts_input(g, &ex.eps);
    let d = g.sub(out.eps, eps);
    let sq = g.mul(d, d);
    let simple = g.mean(sq);

    // posterior mean (constant) and detached model mean
    let (c0, ct) = sched.posterior_mean_coefs(t);
    let k = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let s = 1.0 / sched.alpha(t).sqrt();
    let eps_theta = match mean_eps {
        Some(e) if e.len() == 3 * ex.f0.len() => e.to_vec(),
        Some(_) => return Err(invalid_arg("frozen noise prediction has the wrong length")),
        None => g.value(out.eps).data().to_vec(),
    };
    let mut diff2 = Vec::with_capacity(eps_theta.len());
    for i in 0..ex.f0.len() {
        for c in 0..3 {
            let ft = f_t.vectors()[i].get(c);
            let mq = c0 * ex.f0[i].get(c) + ct * ft;
            let mp = (ft - k * eps_theta[3 * i + c]) * s;
            diff2.push((mq - mp).powi(2));
        }
    }
    let lq = sched.log_posterior_var(t);
    let (lb, lpv) = (sched.beta(t).ln(), sched.log_posterior_var(t));
    // lp = v (lb - lpv) + lpv
    let lp = g.scale(out.v, lb - lpv);
    let lp = g.add_scalar(lp, lpv);
    let neg = g.scale(lp, -1.0);
    let ratio = g.add_scalar(neg, lq);
    let ratio = g.exp(ratio);
    let inv = g.exp(neg);
    let d2 = g.input(Tensor::matrix(ex.f0.len(), 3, diff2));
    let quad = g.mul(d2, inv);
    let kl = g.add(lp, ratio);
    let kl = g.add(kl, quad);
    let kl = g.scale(kl, 0.5);
    let kl = g.add_scalar(kl, 0.5 * (-1.0 - lq));
    let vlb = g.mean(kl);

    let wv = g.scale(vlb, LAMBDA_VLB);
    let total = g.add(simple, wv);
    Ok((total, simple, vlb))
}

/// Loss values and parameter gradients for one example.
pub fn example_gradients(
    model: &Denoiser,
    h0: &[Vec3],
    ex: &Example,
    sched: &NoiseSchedule,
) -> Result<(LossRecord, ParamStore)> {
    let mut g = Graph::new();
    let (total, simple, vlb) = loss_graph(model, &mut g, h0, ex, sched)?;
    let rec = LossRecord {
        step: 0,
        total: g.value(total).data()[0],
        simple: g.value(simple).data()[0],
        vlb: g.value(vlb).data()[0],
    };
    let grads = g.backward(total)?;
    let mut acc = model.params.zeros_like();
    acc.accumulate(&grads, 1.0)?;
    Ok((rec, acc))
}

/// Draws one augmented example for `sample` from the training stream.
pub fn draw_example(
    sample: &HoiSample,
    h0: &PointCloud,
    policy: &AugmentPolicy,
    sched: &NoiseSchedule,
    rng: &mut crate::rng::Rng,
) -> Result<Example> {
    let t = rng.gen_range(1..=sched.steps);
    let rot_seed: u64 = rng.gen();
    let occ_seed: u64 = rng.gen();
    let frac = if policy.max_occlusion > 0.0 {
        rng.gen_range(0.0..=policy.max_occlusion)
    } else {
        0.0
    };
    let eps = gaussian_field(rng, h0.len()).vectors().to_vec();
    let aug = augment(&sample.object, policy.rotate.then_some(rot_seed), frac, occ_seed)?;
    let f0 = sample
        .human_goal
        .points()
        .iter()
        .zip(h0.points())
        .map(|(h, z)| aug.rotation.mul_vec(*h) + aug.shift - *z)
        .collect();
    Ok(Example {
        f0,
        object: aug.cloud.points().to_vec(),
        t,
        eps,
    })
}

/// Runs `n_steps` optimizer steps. Non-finite losses abort with
/// `NumericFailure`; `state` then still holds the last good step.
pub fn train_steps(
    state: &mut TrainState,
    data: &[HoiSample],
    h0: &PointCloud,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    n_steps: usize,
    mut on_step: impl FnMut(&TrainState, &LossRecord),
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(invalid_arg("training needs a non-empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    for s in data {
        if s.human_goal.len() != h0.len() {
            return Err(invalid_arg(format!(
                "sample has {} human points, model expects {}",
                s.human_goal.len(),
                h0.len()
            )));
        }
    }
    let mut log = Vec::new();
    for _ in 0..n_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = state.rng.rng().gen_range(0..data.len());
            batch.push(draw_example(&data[i], h0, &cfg.augment, sched, state.rng.rng())?);
        }
        let results: Vec<Result<(LossRecord, ParamStore)>> = batch
            .par_iter()
            .map(|ex| example_gradients(&state.model, h0.points(), ex, sched))
            .collect();
        let scale = 1.0 / cfg.batch_size as f64;
        let mut grads = state.model.params.zeros_like();
        let mut rec = LossRecord {
            step: state.opt.step + 1,
            total: 0.0,
            simple: 0.0,
            vlb: 0.0,
        };
        for r in results {
            let (l, g) = r?;
            grads.add_scaled(&g, scale);
            rec.total += l.total * scale;
            rec.simple += l.simple * scale;
            rec.vlb += l.vlb * scale;
        }
        if !rec.total.is_finite() || !grads.is_finite() {
            return Err(Error::NumericFailure {
                t: 0,
                msg: format!("training diverged at step {}", rec.step),
            });
        }
        state.opt.update(&mut state.model.params, &grads);
        on_step(state, &rec);
        log.push(rec);
    }
    Ok(log)
}
