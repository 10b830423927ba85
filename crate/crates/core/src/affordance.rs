//! Contact, orientational and spatial affordances estimated from sampled
//! human configurations around an object.

use rayon::prelude::*;

use crate::diffusion::{sample_flows_with_attention, FlowDenoiser, NoiseSchedule};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{make_sphere_bins, FlowField, FrameTag, PointCloud, SphereBins, VoxelGridSpec};
use crate::math::Vec3;
use crate::model::Tensor;

/// Below this norm a cross product is treated as undefined.
pub const DEGENERATE_CROSS: f64 = 1e-9;

/// How cross-attention weights enter the scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// Each sample uses its own attention map.
    PerSample,
    /// One consensus map, the mean over samples.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffordanceConfig {
    pub tau_contact: f64,
    pub tau_orient: f64,
    pub sigma2: f64,
    pub n_b: usize,
    pub use_attention: bool,
    /// `exp(-d / tau)` instead of `exp(-d) / tau`.
    pub tau_inside_exp: bool,
    pub weight_mode: WeightMode,
    pub grid_cells: usize,
    /// Grid side relative to the object's largest bounding-box side.
    pub grid_extent: f64,
    /// Pairs with fewer valid orientation samples than this fraction of K
    /// are scored as uniform.
    pub min_valid_fraction: f64,
}

impl Default for AffordanceConfig {
    fn default() -> Self {
        Self {
            tau_contact: 20.0,
            tau_orient: 10.0,
            sigma2: 1.0,
            n_b: 64,
            use_attention: true,
            tau_inside_exp: false,
            weight_mode: WeightMode::PerSample,
            grid_cells: 16,
            grid_extent: 2.0,
            min_valid_fraction: 0.1,
        }
    }
}

impl AffordanceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_contact", self.tau_contact),
            ("tau_orient", self.tau_orient),
            ("sigma2", self.sigma2),
            ("grid_extent", self.grid_extent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_b < 2 || self.grid_cells == 0 {
            return Err(Error::InvalidConfig("n_b must be >= 2 and grid_cells >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(Error::InvalidConfig("min_valid_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid_for(&self, object: &PointCloud) -> Result<VoxelGridSpec> {
        VoxelGridSpec::around(object, self.grid_cells, self.grid_extent)
    }
}

/// K sampled interactions with one object.
#[derive(Clone, Debug)]
pub struct HoiSampleSet {
    pub h0: PointCloud,
    pub object: PointCloud,
    pub flows: Vec<FlowField>,
    pub humans: Vec<PointCloud>,
    /// Per-sample `N_H x N_O` maps; `None` means uniform weights.
    pub weights: Option<Vec<Tensor>>,
}

impl HoiSampleSet {
    pub fn new(
        h0: PointCloud,
        object: PointCloud,
        flows: Vec<FlowField>,
        weights: Option<Vec<Tensor>>,
    ) -> Result<Self> {
        if flows.is_empty() {
            return Err(invalid_arg("sample set needs at least one flow"));
        }
        if object.is_empty() {
            return Err(invalid_arg("sample set needs a non-empty object"));
        }
        let humans = flows.iter().map(|f| f.displace(&h0)).collect::<Result<Vec<_>>>()?;
        if let Some(w) = &weights {
            if w.len() != flows.len() {
                return Err(invalid_arg(format!("{} weight maps for {} flows", w.len(), flows.len())));
            }
            if w.iter().any(|m| m.shape() != [h0.len(), object.len()]) {
                return Err(invalid_arg("weight map shape must be N_H x N_O"));
            }
        }
        Ok(Self {
            h0,
            object,
            flows,
            humans,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.flows.len()
    }

    pub fn n_h(&self) -> usize {
        self.h0.len()
    }

    pub fn n_o(&self) -> usize {
        self.object.len()
    }

    /// Same interactions expressed in a frame shifted by `by`.
    pub fn translated(&self, by: Vec3) -> Result<Self> {
        Self::new(
            self.h0.translated(by),
            self.object.translated(by),
            self.flows.clone(),
            self.weights.clone(),
        )
    }

    /// Weight of pair `(i, j)` for each sample under `cfg`.
    fn pair_weights(&self, cfg: &AffordanceConfig, i: usize, j: usize, out: &mut Vec<f64>) {
        out.clear();
        match (&self.weights, cfg.use_attention) {
            (Some(w), true) => match cfg.weight_mode {
                WeightMode::PerSample => out.extend(w.iter().map(|m| m.at(i, j))),
                WeightMode::Mean => {
                    let mean = w.iter().map(|m| m.at(i, j)).sum::<f64>() / w.len() as f64;
                    out.resize(w.len(), mean);
                }
            },
            _ => out.resize(self.k(), 1.0),
        }
    }
}

/// `N_H x N_O` contact affordance.
pub fn contact_scores(set: &HoiSampleSet, cfg: &AffordanceConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (nh, no, k) = (set.n_h(), set.n_o(), set.k());
    let rows: Vec<Vec<f64>> = (0..nh)
        .into_par_iter()
        .map(|i| {
            let mut w = Vec::with_capacity(k);
            (0..no)
                .map(|j| {
                    set.pair_weights(cfg, i, j, &mut w);
                    let o = set.object.points()[j];
                    let mut acc = 0.0;
                    for (s, human) in set.humans.iter().enumerate() {
                        let d = (human.points()[i] - o).norm();
                        let kern = if cfg.tau_inside_exp {
                            (-d / cfg.tau_contact).exp()
                        } else {
                            (-d).exp() / cfg.tau_contact
                        };
                        acc += w[s] * kern;
                    }
                    acc / k as f64
                })
                .collect()
        })
        .collect();
    Ok(Tensor::matrix(nh, no, rows.concat()))
}

/// Unit direction of `d x f`, or `None` when the cross product degenerates.
pub fn orientation_vector(d: Vec3, f: Vec3) -> Option<Vec3> {
    let c = d.cross(f);
    let n = c.norm();
    (n >= DEGENERATE_CROSS).then(|| c * (1.0 / n))
}

/// Orientation vectors of sample `k` in row-major pair order.
pub fn orientation_vectors(set: &HoiSampleSet, k: usize) -> Result<Vec<Option<Vec3>>> {
    if k >= set.k() {
        return Err(invalid_arg(format!("sample {k} out of range for K={}", set.k())));
    }
    let human = set.humans[k].points();
    let flow = set.flows[k].vectors();
    let mut out = Vec::with_capacity(set.n_h() * set.n_o());
    for i in 0..set.n_h() {
        for o in set.object.points() {
            out.push(orientation_vector(human[i] - *o, flow[i]));
        }
    }
    Ok(out)
}

/// `sum_n p(n) log p(n)` of the normalized sum of kernel vectors of
/// `dirs`. `None` when `dirs` is empty.
pub fn pooled_entropy(dirs: &[Vec3], bins: &SphereBins, sigma2: f64) -> Option<f64> {
    if dirs.is_empty() {
        return None;
    }
    let mut acc = vec![0.0; bins.len()];
    let mut kern = Vec::with_capacity(bins.len());
    for &x in dirs {
        crate::geometry::kernel_into(x, bins, sigma2, &mut kern);
        for (a, v) in acc.iter_mut().zip(&kern) {
            *a += v;
        }
    }
    let z: f64 = acc.iter().sum();
    Some(
        acc.iter()
            .map(|&a| {
                let p = a / z;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum(),
    )
}

/// Pooled orientation entropy `H_ij` and orientational affordance `R_ij`.
#[derive(Clone, Debug)]
pub struct Orientational {
    pub entropy: Tensor,
    pub scores: Tensor,
}

pub fn orientational_scores(set: &HoiSampleSet, bins: &SphereBins, cfg: &AffordanceConfig) -> Result<Orientational> {
    cfg.validate()?;
    let (nh, no, k) = (set.n_h(), set.n_o(), set.k());
    let floor = -(bins.len() as f64).ln();
    let min_valid = cfg.min_valid_fraction * k as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..nh)
        .into_par_iter()
        .map(|i| {
            let mut w = Vec::with_capacity(k);
            let mut dirs = Vec::with_capacity(k);
            let mut hs = Vec::with_capacity(no);
            let mut rs = Vec::with_capacity(no);
            for j in 0..no {
                let o = set.object.points()[j];
                dirs.clear();
                for s in 0..k {
                    let d = set.humans[s].points()[i] - o;
                    if let Some(x) = orientation_vector(d, set.flows[s].vectors()[i]) {
                        dirs.push(x);
                    }
                }
                let h = if dirs.is_empty() || (dirs.len() as f64) < min_valid {
                    floor
                } else {
                    pooled_entropy(&dirs, bins, cfg.sigma2).unwrap_or(floor)
                };
                set.pair_weights(cfg, i, j, &mut w);
                let mean_w = w.iter().sum::<f64>() / k as f64;
                hs.push(h);
                rs.push(mean_w * h / cfg.tau_orient);
            }
            (hs, rs)
        })
        .collect();
    let (h, r): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    Ok(Orientational {
        entropy: Tensor::matrix(nh, no, h.concat()),
        scores: Tensor::matrix(nh, no, r.concat()),
    })
}

/// Occupancy frequencies of every human point over the K samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialOccupancy {
    pub grid: VoxelGridSpec,
    /// `per_human[i * cells + c]`.
    pub per_human: Vec<f64>,
    pub marginal: Vec<f64>,
    /// Sample points that fell outside the grid.
    pub dropped: usize,
}

impl SpatialOccupancy {
    pub fn point_grid(&self, i: usize) -> &[f64] {
        let c = self.grid.cell_count();
        &self.per_human[i * c..(i + 1) * c]
    }
}

pub fn spatial_occupancy(set: &HoiSampleSet, grid: &VoxelGridSpec) -> SpatialOccupancy {
    let cells = grid.cell_count();
    let (nh, k) = (set.n_h(), set.k());
    let mut per_human = vec![0.0; nh * cells];
    let mut dropped = 0;
    let inv = 1.0 / k as f64;
    for human in &set.humans {
        for (i, p) in human.points().iter().enumerate() {
            match grid.index_of(*p) {
                Some(c) => per_human[i * cells + c] += inv,
                None => dropped += 1,
            }
        }
    }
    let mut marginal = vec![0.0; cells];
    for row in per_human.chunks(cells) {
        for (m, v) in marginal.iter_mut().zip(row) {
            *m += v;
        }
    }
    SpatialOccupancy {
        grid: *grid,
        per_human,
        marginal,
        dropped,
    }
}

#[derive(Clone, Debug)]
pub struct AffordanceBundle {
    pub contact: Tensor,
    pub orientational: Tensor,
    pub entropy: Tensor,
    pub spatial: SpatialOccupancy,
    pub config: AffordanceConfig,
    /// Translation from the input object frame to the frame the scores and
    /// grids live in.
    pub offset: Vec3,
}

/// All three affordances of `set` with spatial grids on `grid`.
pub fn compute_bundle(set: &HoiSampleSet, cfg: &AffordanceConfig, grid: &VoxelGridSpec) -> Result<AffordanceBundle> {
    let bins = make_sphere_bins(cfg.n_b)?;
    let contact = contact_scores(set, cfg)?;
    let orient = orientational_scores(set, &bins, cfg)?;
    Ok(AffordanceBundle {
        contact,
        orientational: orient.scores,
        entropy: orient.entropy,
        spatial: spatial_occupancy(set, grid),
        config: *cfg,
        offset: Vec3::zeros(),
    })
}

/// Samples `n_samples` interactions for `object`, which is first moved to
/// its centroid; the returned offset maps input coordinates to that frame.
pub fn infer_samples<D: FlowDenoiser>(
    model: &D,
    h0: &PointCloud,
    object: &PointCloud,
    sched: &NoiseSchedule,
    n_samples: usize,
    seed: u64,
) -> Result<(HoiSampleSet, Vec3)> {
    if n_samples == 0 {
        return Err(invalid_arg("need at least one sample"));
    }
    let offset = -object.centroid();
    let mut canonical = object.translated(offset);
    canonical.set_frame(FrameTag::CanonicalObject);
    let draws = sample_flows_with_attention(model, h0, &canonical, sched, n_samples, seed)?;
    let (flows, weights) = draws.into_iter().map(|d| (d.flow, d.cross_attn)).unzip();
    let set = HoiSampleSet::new(h0.clone(), canonical, flows, Some(weights))?;
    Ok((set, offset))
}

pub fn infer_bundle<D: FlowDenoiser>(
    model: &D,
    h0: &PointCloud,
    object: &PointCloud,
    sched: &NoiseSchedule,
    cfg: &AffordanceConfig,
    n_samples: usize,
    seed: u64,
) -> Result<AffordanceBundle> {
    cfg.validate()?;
    let (set, offset) = infer_samples(model, h0, object, sched, n_samples, seed)?;
    let grid = cfg.grid_for(&set.object)?;
    let mut bundle = compute_bundle(&set, cfg, &grid)?;
    bundle.offset = offset;
    Ok(bundle)
}
