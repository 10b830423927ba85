//! Affordance metrics, generator ground truth and the occlusion sweep.

use crate::affordance::{compute_bundle, infer_samples, AffordanceBundle, AffordanceConfig, HoiSampleSet};
use crate::diffusion::{FlowDenoiser, NoiseSchedule};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{FlowField, PointCloud};
use crate::model::Tensor;
use crate::rng::{derive_seed, stream};
use crate::synthdata::{
    augment, generate_scenario, sample_mode, ApproachSide, DatasetConfig, Generator, HoiSample,
    InteractionMode, ModeId, ObjectSpec,
};

/// Scales to unit sum; an all-zero (or non-positive) input maps to uniform.
pub fn normalize(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    if !(s > 0.0) {
        return vec![1.0 / p.len() as f64; p.len()];
    }
    p.iter().map(|v| v / s).collect()
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(invalid_arg(format!("distribution lengths {} and {} differ", p.len(), q.len())));
    }
    Ok(())
}

/// Histogram intersection of the normalized inputs.
pub fn sim(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    if p == q {
        return Ok(1.0);
    }
    let (p, q) = (normalize(p), normalize(q));
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum())
}

/// Mean absolute difference of the normalized inputs.
pub fn mae(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let (p, q) = (normalize(p), normalize(q));
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

pub fn mse_grid(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid_arg(format!("grid sizes {} and {} differ", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Indices of the `k` largest scores, ties going to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn precision_at_k(pred: &[f64], gt: &[f64], k_fraction: f64) -> Result<f64> {
    same_len(pred, gt)?;
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(invalid_arg(format!("k_fraction {k_fraction} outside (0, 1]")));
    }
    let k = ((k_fraction * pred.len() as f64).round() as usize).clamp(1, pred.len());
    let a = top_k(pred, k);
    let mut in_b = vec![false; gt.len()];
    for i in top_k(gt, k) {
        in_b[i] = true;
    }
    Ok(a.iter().filter(|&&i| in_b[i]).count() as f64 / k as f64)
}

fn row_sums(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row(i).iter().sum()).collect()
}

/// Per-point views of a bundle that the metrics compare.
#[derive(Clone, Debug)]
pub struct Summary {
    /// Contact mass per human point.
    pub contact_h: Vec<f64>,
    /// Contact mass per object point of the full (unoccluded) cloud.
    pub contact_o: Vec<f64>,
    /// Mean orientational score per human point; the ranking key.
    pub orientation: Vec<f64>,
    pub grids: Vec<f64>,
}

impl Summary {
    /// `kept[j]` is the full-cloud index of bundle column `j`; columns of
    /// dropped object points carry no contact mass.
    pub fn from_bundle(b: &AffordanceBundle, kept: Option<(&[usize], usize)>) -> Result<Self> {
        let cols = b.contact.cols();
        let mut contact_o: Vec<f64> = (0..cols).map(|j| (0..b.contact.rows()).map(|i| b.contact.at(i, j)).sum()).collect();
        if let Some((kept, n)) = kept {
            if kept.len() != cols || kept.iter().any(|&j| j >= n) {
                return Err(invalid_arg("kept indices do not match the bundle columns"));
            }
            let mut full = vec![0.0; n];
            for (c, &j) in kept.iter().enumerate() {
                full[j] = contact_o[c];
            }
            contact_o = full;
        }
        Ok(Self {
            contact_h: row_sums(&b.contact),
            contact_o,
            orientation: row_sums(&b.orientational).into_iter().map(|s| s / cols as f64).collect(),
            grids: b.spatial.per_human.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub sim_h: f64,
    pub sim_o: f64,
    pub mae_h: f64,
    pub mae_o: f64,
    pub precision_at_k: f64,
    pub mse_spatial: f64,
    pub occlusion_level: f64,
}

impl EvalReport {
    pub fn compare(pred: &Summary, gt: &Summary, k_fraction: f64, occlusion_level: f64) -> Result<Self> {
        Ok(Self {
            sim_h: sim(&pred.contact_h, &gt.contact_h)?,
            sim_o: sim(&pred.contact_o, &gt.contact_o)?,
            mae_h: mae(&pred.contact_h, &gt.contact_h)?,
            mae_o: mae(&pred.contact_o, &gt.contact_o)?,
            precision_at_k: precision_at_k(&pred.orientation, &gt.orientation, k_fraction)?,
            mse_spatial: mse_grid(&pred.grids, &gt.grids)?,
            occlusion_level,
        })
    }

    pub fn mean(reports: &[EvalReport]) -> Self {
        let n = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            sim_h: avg(|r| r.sim_h),
            sim_o: avg(|r| r.sim_o),
            mae_h: avg(|r| r.mae_h),
            mae_o: avg(|r| r.mae_o),
            precision_at_k: avg(|r| r.precision_at_k),
            mse_spatial: avg(|r| r.mse_spatial),
            occlusion_level: reports[0].occlusion_level,
        }
    }

    /// One `key = value` line per metric.
    pub fn to_text(&self) -> String {
        format!(
            "occlusion_level = {}\nsim_h = {}\nsim_o = {}\nmae_h = {}\nmae_o = {}\nprecision_at_k = {}\nmse_spatial = {}\n",
            self.occlusion_level, self.sim_h, self.sim_o, self.mae_h, self.mae_o, self.precision_at_k, self.mse_spatial
        )
    }
}

/// Ground-truth affordances of generator samples that share one object
/// cloud, scored with uniform weights.
pub fn gt_affordances(h0: &PointCloud, samples: &[HoiSample], cfg: &AffordanceConfig) -> Result<AffordanceBundle> {
    let first = samples.first().ok_or_else(|| invalid_arg("no ground-truth samples"))?;
    if samples.iter().any(|s| s.object.points() != first.object.points()) {
        return Err(invalid_arg("ground-truth samples must share one object cloud"));
    }
    let flows: Vec<FlowField> = samples.iter().map(|s| s.flow_gt.clone()).collect();
    let set = HoiSampleSet::new(h0.clone(), first.object.clone(), flows, None)?;
    let cfg = AffordanceConfig {
        use_attention: false,
        ..*cfg
    };
    compute_bundle(&set, &cfg, &cfg.grid_for(&set.object)?)
}

/// One benchmark object with its generator ground truth.
#[derive(Clone, Debug)]
pub struct BenchmarkCase {
    pub object: PointCloud,
    pub gt_samples: Vec<HoiSample>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub objects: Vec<ObjectSpec>,
    pub modes: Vec<ModeId>,
    pub approach_sides: Vec<ApproachSide>,
    pub n_cases: usize,
    /// Ground-truth interactions per object.
    pub k_gt: usize,
    pub n_object_points: usize,
    pub n_human_points: usize,
    pub seed: u64,
    pub max_seed_advances: usize,
}

impl BenchmarkConfig {
    /// Held-out objects drawn from the same families and modes as `data`.
    pub fn like(data: &DatasetConfig, n_cases: usize, seed: u64) -> Self {
        Self {
            objects: data.objects.clone(),
            modes: data.modes.clone(),
            approach_sides: data.approach_sides.clone(),
            n_cases,
            k_gt: 50,
            n_object_points: data.n_object_points,
            n_human_points: data.n_human_points,
            seed,
            max_seed_advances: data.max_seed_advances,
        }
    }
}

pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkCase>> {
    if cfg.objects.is_empty() || cfg.modes.is_empty() || cfg.approach_sides.is_empty() || cfg.k_gt == 0 {
        return Err(Error::InvalidConfig("benchmark needs objects, modes, sides and k_gt > 0".into()));
    }
    let gen = Generator::new(cfg.n_human_points)?;
    (0..cfg.n_cases)
        .map(|c| {
            let spec = cfg.objects[c % cfg.objects.len()];
            let instance = spec.instantiate(&mut stream(cfg.seed, "bench-object", c as u64));
            let fixed = ObjectSpec::fixed(instance);
            let case_seed = derive_seed(cfg.seed, "bench-case", c as u64);
            let mut gt_samples = Vec::with_capacity(cfg.k_gt);
            for s in 0..cfg.k_gt {
                let seed = derive_seed(case_seed, "gt", s as u64);
                let mode = sample_mode(&cfg.modes, seed);
                let side = cfg.approach_sides[(derive_seed(seed, "side", 0) % cfg.approach_sides.len() as u64) as usize];
                let mut last = None;
                let mut got = None;
                for k in 0..cfg.max_seed_advances.max(1) {
                    match generate_scenario(&gen, &fixed, InteractionMode::new(mode, side), cfg.n_object_points, seed.wrapping_add(k as u64)) {
                        Ok(x) => {
                            got = Some(x);
                            break;
                        }
                        Err(e @ Error::GenerationFailure(_)) => last = Some(e),
                        Err(e) => return Err(e),
                    }
                }
                match got {
                    Some(x) => gt_samples.push(x),
                    None => return Err(last.expect("attempted")),
                }
            }
            Ok(BenchmarkCase {
                object: gt_samples[0].object.clone(),
                gt_samples,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Sampled interactions per object.
    pub n_samples: usize,
    pub k_fraction: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_samples: 50,
            k_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Model samples for one case, expressed in the case's object frame.
#[derive(Clone, Debug)]
pub struct CasePrediction {
    pub set: HoiSampleSet,
    pub kept: Option<Vec<usize>>,
}

/// Samples the model on the case object with `level` of it occluded. The
/// occlusion direction and sampling seed depend only on the case index, so
/// higher levels remove supersets of the points lower levels remove.
pub fn predict_case<D: FlowDenoiser>(
    model: &D,
    h0: &PointCloud,
    case: &BenchmarkCase,
    case_index: usize,
    sched: &NoiseSchedule,
    opts: &EvalOptions,
    level: f64,
) -> Result<CasePrediction> {
    let seed = derive_seed(opts.seed, "eval-case", case_index as u64);
    if level == 0.0 {
        let (set, offset) = infer_samples(model, h0, &case.object, sched, opts.n_samples, seed)?;
        return Ok(CasePrediction {
            set: set.translated(-offset)?,
            kept: None,
        });
    }
    let occ_seed = derive_seed(opts.seed, "eval-occlusion", case_index as u64);
    let aug = augment(&case.object, None, level, occ_seed)?;
    let (set, offset) = infer_samples(model, h0, &aug.cloud, sched, opts.n_samples, seed)?;
    Ok(CasePrediction {
        set: set.translated(-(offset + aug.shift))?,
        kept: Some(aug.kept),
    })
}

/// Scores a prediction against the case ground truth.
pub fn score_case(
    pred: &CasePrediction,
    case: &BenchmarkCase,
    h0: &PointCloud,
    cfg: &AffordanceConfig,
    k_fraction: f64,
    level: f64,
) -> Result<EvalReport> {
    let gt = gt_affordances(h0, &case.gt_samples, cfg)?;
    let bundle = compute_bundle(&pred.set, cfg, &gt.spatial.grid)?;
    let kept = pred.kept.as_deref().map(|k| (k, case.object.len()));
    let p = Summary::from_bundle(&bundle, kept)?;
    let g = Summary::from_bundle(&gt, None)?;
    EvalReport::compare(&p, &g, k_fraction, level)
}

/// Benchmark-mean report at one occlusion level.
pub fn evaluate<D: FlowDenoiser>(
    model: &D,
    h0: &PointCloud,
    cases: &[BenchmarkCase],
    sched: &NoiseSchedule,
    cfg: &AffordanceConfig,
    opts: &EvalOptions,
    level: f64,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(invalid_arg("empty benchmark"));
    }
    let mut reports = Vec::with_capacity(cases.len());
    for (c, case) in cases.iter().enumerate() {
        let pred = predict_case(model, h0, case, c, sched, opts, level)?;
        reports.push(score_case(&pred, case, h0, cfg, opts.k_fraction, level)?);
    }
    Ok(EvalReport::mean(&reports))
}

/// Reports in ascending level order; the unoccluded baseline is always
/// included.
pub fn occlusion_sweep<D: FlowDenoiser>(
    model: &D,
    h0: &PointCloud,
    cases: &[BenchmarkCase],
    sched: &NoiseSchedule,
    cfg: &AffordanceConfig,
    opts: &EvalOptions,
    levels: &[f64],
) -> Result<Vec<EvalReport>> {
    let mut levels: Vec<f64> = levels.to_vec();
    if levels.iter().any(|l| !(0.0..1.0).contains(l)) {
        return Err(invalid_arg("occlusion levels must lie in [0, 1)"));
    }
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
        .iter()
        .map(|&l| evaluate(model, h0, cases, sched, cfg, opts, l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionSource, Denoiser, DenoiserConfig, Init};
    use crate::synthdata::{ObjectKind, ObjectSpec};
    use proptest::prelude::*;

    #[test]
    fn metric_identities() {
        let p = [0.1, 0.0, 0.7, 0.2];
        assert_eq!(sim(&p, &p).unwrap(), 1.0);
        assert_eq!(mae(&p, &p).unwrap(), 0.0);
        assert_eq!(mse_grid(&p, &p).unwrap(), 0.0);
        assert_eq!(precision_at_k(&p, &p, 0.5).unwrap(), 1.0);
        assert_eq!(sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sim(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mae(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let b: Vec<f64> = p.iter().map(|v| v + 0.1).collect();
        assert!((mse_grid(&p, &b).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!(sim(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_grid(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn precision_reversed_and_full() {
        let a = [8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let r: Vec<f64> = a.iter().rev().cloned().collect();
        assert_eq!(precision_at_k(&a, &r, 0.5).unwrap(), 0.0);
        assert_eq!(precision_at_k(&a, &r, 1.0).unwrap(), 1.0);
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 0.0], 2), vec![1, 2]);
        assert!(precision_at_k(&a, &r, 0.0).is_err());
    }

    fn dist() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 6)
    }

    proptest! {
        #[test]
        fn sim_and_mae_properties(p in dist(), q in dist(), r in dist()) {
            let s = sim(&p, &q).unwrap();
            prop_assert!((s - sim(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!((-1e-15..=1.0 + 1e-12).contains(&s));
            prop_assert!((mae(&p, &q).unwrap() - mae(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(mae(&p, &r).unwrap() <= mae(&p, &q).unwrap() + mae(&q, &r).unwrap() + 1e-12);
        }

        #[test]
        fn precision_depends_on_ranks_only(p in dist(), q in dist(), kf in 0.05f64..=1.0) {
            let base = precision_at_k(&p, &q, kf).unwrap();
            let tp: Vec<f64> = p.iter().map(|v| v.powi(3) + 2.0).collect();
            let tq: Vec<f64> = q.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(precision_at_k(&tp, &tq, kf).unwrap(), base);
        }
    }

    fn tiny_bench() -> (Vec<BenchmarkCase>, PointCloud, Denoiser) {
        let cfg = BenchmarkConfig {
            objects: vec![ObjectSpec::default_for(ObjectKind::Box)],
            modes: vec![ModeId::GraspLeft, ModeId::GraspRight],
            approach_sides: vec![ApproachSide::Front],
            n_cases: 1,
            k_gt: 6,
            n_object_points: 16,
            n_human_points: 16,
            seed: 3,
            max_seed_advances: 8,
        };
        let cases = build_benchmark(&cfg).unwrap();
        let h0 = Generator::new(16).unwrap().h0().clone();
        let dc = DenoiserConfig {
            hidden: 8,
            heads: 2,
            blocks: 1,
            n_points: 16,
            t_embed_dim: 4,
            mlp_ratio: 1,
            attention_source: AttentionSource::FinalBlock,
        };
        (cases, h0, Denoiser::new(dc, Init::Random, 4).unwrap())
    }

    #[test]
    fn ground_truth_marks_both_hands_for_two_modes() {
        let (cases, h0, _) = tiny_bench();
        let case = &cases[0];
        let modes: Vec<ModeId> = case.gt_samples.iter().map(|s| s.mode.mode_id).collect();
        assert!(modes.contains(&ModeId::GraspLeft) && modes.contains(&ModeId::GraspRight));
        let gt = gt_affordances(&h0, &case.gt_samples, &AffordanceConfig::default()).unwrap();
        let again = gt_affordances(&h0, &case.gt_samples, &AffordanceConfig::default()).unwrap();
        assert_eq!(gt.contact, again.contact);
        assert!(gt.contact.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sweep_baseline_matches_plain_evaluation() {
        let (cases, h0, model) = tiny_bench();
        let sched = NoiseSchedule::build(4, 1e-2, 0.2).unwrap();
        let cfg = AffordanceConfig {
            n_b: 16,
            grid_cells: 4,
            ..Default::default()
        };
        let opts = EvalOptions {
            n_samples: 3,
            k_fraction: 0.25,
            seed: 1,
        };
        let plain = evaluate(&model, &h0, &cases, &sched, &cfg, &opts, 0.0).unwrap();
        let sweep = occlusion_sweep(&model, &h0, &cases, &sched, &cfg, &opts, &[0.5, 0.25]).unwrap();
        assert_eq!(sweep.len(), 3);
        assert_eq!(sweep[0], plain);
        assert_eq!(sweep.iter().map(|r| r.occlusion_level).collect::<Vec<_>>(), vec![0.0, 0.25, 0.5]);
        for r in &sweep {
            assert!((0.0..=1.0).contains(&r.sim_h) && (0.0..=1.0).contains(&r.sim_o));
            assert!(r.mse_spatial >= 0.0 && r.mae_h >= 0.0);
        }
    }
}
