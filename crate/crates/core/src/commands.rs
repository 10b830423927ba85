//! Subcommand bodies behind the command-line front end. Each returns a
//! short summary for stdout; files are written only to the given outputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::affordance::{compute_bundle, infer_samples, AffordanceBundle};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{build_benchmark, evaluate, occlusion_sweep as sweep, BenchmarkConfig, EvalOptions};
use crate::fitting::{
    cross_embodiment_fit, fit_body as fit, CorrespondenceMap, RobotModel, RobotPose, RobotTargets,
};
use crate::geometry::PointCloud;
use crate::io::{self, StoredBundle};
use crate::math::Vec3;
use crate::model::{train_steps, Denoiser, Init, TrainState};
use crate::rng::derive_seed;
use crate::synthdata::{generate_dataset, Generator};

/// Fails with a usage error when an input path is missing.
pub fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Usage(format!("input `{}` does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<(Denoiser, PointCloud)> {
    let model = io::read_checkpoint(path)?.model;
    let h0 = Generator::new(model.config.n_points)?.h0().clone();
    Ok((model, h0))
}

fn load_object(path: &Path) -> Result<PointCloud> {
    Ok(io::read_sample(path)?.object)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let manifest = generate_dataset(&cfg.data, out)?;
    Ok(format!("wrote {} samples to {}", manifest.len(), out.display()))
}

/// Trains from scratch or from `resume` up to the configured step count.
/// A diverging step leaves the last good state in `out` and fails.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>, log: Option<&Path>) -> Result<String> {
    let samples = io::read_dataset(data)?;
    let h0 = Generator::new(cfg.data.n_human_points)?.h0().clone();
    let sched = cfg.schedule.build()?;
    let mut state = match resume {
        Some(p) => io::read_checkpoint(p)?.into_state(&cfg.train),
        None => TrainState::new(
            Denoiser::new(cfg.denoiser, Init::ZeroModulation, derive_seed(cfg.seed, "model", 0))?,
            &cfg.train,
        ),
    };
    let total = cfg.train.total_steps(samples.len()) as u64;
    let mut lines = String::new();
    let mut written = false;
    while state.step() < total {
        let chunk = match cfg.checkpoint_every {
            0 => total - state.step(),
            n => (n as u64).min(total - state.step()),
        };
        let res = train_steps(&mut state, &samples, &h0, &cfg.train, &sched, chunk as usize, |_, rec| {
            if cfg.train.log_every > 0 && rec.step % cfg.train.log_every as u64 == 0 {
                let _ = writeln!(lines, "{} {:e} {:e} {:e}", rec.step, rec.total, rec.simple, rec.vlb);
            }
        });
        // on divergence `state` still holds the last good step
        io::write_checkpoint(out, &state)?;
        written = true;
        res?;
    }
    if !written {
        io::write_checkpoint(out, &state)?;
    }
    if let Some(p) = log {
        io::write_text(p, &lines)?;
    }
    Ok(format!("trained to step {} -> {}", state.step(), out.display()))
}

/// `k x y z` per predicted human point, in the object file's frame.
pub fn sample(cfg: &RunConfig, checkpoint: &Path, object: &Path, out: &Path) -> Result<String> {
    let (model, h0) = load_model(checkpoint)?;
    let obj = load_object(object)?;
    let sched = cfg.schedule.build()?;
    let (set, offset) = infer_samples(&model, &h0, &obj, &sched, cfg.n_samples, derive_seed(cfg.seed, "sample", 0))?;
    let mut text = String::new();
    for (k, human) in set.humans.iter().enumerate() {
        for p in human.points() {
            let q = *p - offset;
            let _ = writeln!(text, "{k} {} {} {}", q.x, q.y, q.z);
        }
    }
    io::write_text(out, &text)?;
    Ok(format!("wrote {} sampled interactions to {}", set.k(), out.display()))
}

fn bundle_for(cfg: &RunConfig, model: &Denoiser, h0: &PointCloud, obj: &PointCloud) -> Result<(AffordanceBundle, crate::affordance::HoiSampleSet)> {
    let sched = cfg.schedule.build()?;
    let (set, offset) = infer_samples(model, h0, obj, &sched, cfg.n_samples, derive_seed(cfg.seed, "affordance", 0))?;
    let grid = cfg.affordance.grid_for(&set.object)?;
    let mut bundle = compute_bundle(&set, &cfg.affordance, &grid)?;
    bundle.offset = offset;
    Ok((bundle, set))
}

pub fn affordance(cfg: &RunConfig, checkpoint: &Path, object: &Path, out: &Path) -> Result<String> {
    let (model, h0) = load_model(checkpoint)?;
    let (bundle, _) = bundle_for(cfg, &model, &h0, &load_object(object)?)?;
    io::write_bundle(out, &bundle)?;
    let contact_rows: Vec<f64> = (0..bundle.contact.rows()).map(|i| bundle.contact.row(i).iter().sum()).collect();
    let best = crate::eval::top_k(&contact_rows, 1)[0];
    Ok(format!(
        "wrote {} ({} human x {} object points); strongest contact at human point {best}",
        out.display(),
        bundle.contact.rows(),
        bundle.contact.cols()
    ))
}

fn benchmark(cfg: &RunConfig) -> Result<(Vec<crate::eval::BenchmarkCase>, EvalOptions)> {
    let bench = BenchmarkConfig::like(&cfg.data, cfg.eval_cases, derive_seed(cfg.seed, "benchmark", 0));
    let cases = build_benchmark(&bench)?;
    let opts = EvalOptions {
        n_samples: cfg.n_samples,
        k_fraction: cfg.k_fraction,
        seed: derive_seed(cfg.seed, "eval", 0),
    };
    Ok((cases, opts))
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<String> {
    let (model, h0) = load_model(checkpoint)?;
    let (cases, opts) = benchmark(cfg)?;
    let report = evaluate(&model, &h0, &cases, &cfg.schedule.build()?, &cfg.affordance, &opts, 0.0)?;
    let text = report.to_text();
    io::write_text(out, &text)?;
    Ok(text)
}

pub fn occlusion_sweep(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<String> {
    let (model, h0) = load_model(checkpoint)?;
    let (cases, opts) = benchmark(cfg)?;
    let reports = sweep(&model, &h0, &cases, &cfg.schedule.build()?, &cfg.affordance, &opts, &cfg.occlusion_levels)?;
    let text: Vec<String> = reports.iter().map(|r| r.to_text()).collect();
    let text = text.join("\n");
    io::write_text(out, &text)?;
    Ok(text)
}

/// Fits the generator body to the human points stored in `targets`.
pub fn fit_body(cfg: &RunConfig, targets: &Path, out: &Path) -> Result<String> {
    let sample = io::read_sample(targets)?;
    let gen = Generator::new(sample.human_goal.len())?;
    let subset: Vec<usize> = (0..sample.human_goal.len()).collect();
    let result = fit(gen.body(), &sample.human_goal, &subset, &cfg.fit, None)?;
    io::write_text(out, &io::body_fit_text(&result))?;
    Ok(format!(
        "data loss {:e} after {} iterations -> {}",
        result.data_loss,
        result.trace.len(),
        out.display()
    ))
}

/// Transfers the predicted affordances of the most-contacting human points
/// to a three-link planar arm and fits its pose.
pub fn cross_embody(cfg: &RunConfig, checkpoint: &Path, object: &Path, out: &Path) -> Result<String> {
    let (model, h0) = load_model(checkpoint)?;
    let (bundle, set) = bundle_for(cfg, &model, &h0, &load_object(object)?)?;
    let robot = RobotModel::planar_3dof();
    let rows: Vec<f64> = (0..bundle.contact.rows()).map(|i| bundle.contact.row(i).iter().sum()).collect();
    let assign = crate::eval::top_k(&rows, robot.n_points().min(rows.len()));
    let assign: Vec<usize> = (0..robot.n_points()).map(|k| assign[k % assign.len()]).collect();
    let m = CorrespondenceMap::one_hot(&assign, set.n_h())?;
    let targets = RobotTargets::from_human(&bundle, &set, &m)?;

    // start with the arm stretched out and centred on the matched points
    let mut anchor = Vec3::zeros();
    for &i in &assign {
        let mean: Vec3 = set.humans.iter().fold(Vec3::zeros(), |a, h| a + h.points()[i]) * (1.0 / set.k() as f64);
        anchor += mean * (1.0 / assign.len() as f64);
    }
    let reach: f64 = robot.links.iter().map(|l| l.0).sum();
    let init = RobotPose {
        phi: vec![0.0; robot.dof()],
        r: Vec3::zeros(),
        t: anchor - Vec3::new(0.5 * reach, 0.0, 0.0),
    };
    let result = cross_embodiment_fit(&robot, &targets, &init, &cfg.robot)?;
    let mut text = io::robot_fit_text(&result);
    let _ = writeln!(text, "object_offset = {:e} {:e} {:e}", bundle.offset.x, bundle.offset.y, bundle.offset.z);
    io::write_text(out, &text)?;
    Ok(format!("loss {:e} after {} iterations -> {}", result.loss, result.trace.len(), out.display()))
}

/// One colorized cloud per requested object point and affordance type:
/// human points colored by contact and by orientational score against
/// that object point, and grid cell centers colored by occupancy.
pub fn export_viz(cfg: &RunConfig, bundle: &Path, object: &Path, out_dir: &Path) -> Result<String> {
    let b = io::read_bundle(bundle)?;
    let obj = load_object(object)?;
    if obj.len() != b.n_o {
        return Err(Error::InvalidArgument(format!(
            "bundle covers {} object points, object file has {}",
            b.n_o,
            obj.len()
        )));
    }
    let h0 = Generator::new(b.n_h)?.h0().clone();
    let offset = -obj.centroid();
    let grid = cfg.affordance.grid_for(&obj.translated(offset))?;
    if grid.dims != b.dims {
        return Err(Error::InvalidArgument(format!(
            "bundle grid {:?} does not match the configured grid {:?}",
            b.dims, grid.dims
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let occupied: Vec<usize> = (0..b.cells()).filter(|&c| b.marginal[c] > 0.0).collect();
    let centers: Vec<Vec3> = occupied.iter().map(|&c| grid.cell_center(c) - offset).collect();
    let occupancy: Vec<f64> = occupied.iter().map(|&c| b.marginal[c] as f64).collect();
    let mut written = 0;
    for &j in &cfg.viz_points {
        if j >= b.n_o {
            return Err(Error::InvalidArgument(format!("object point {j} out of range")));
        }
        let column = |m: &StoredBundle, data: &[f32]| -> Vec<f64> { (0..m.n_h).map(|i| data[i * m.n_o + j] as f64).collect() };
        let files = [
            ("contact", h0.points().to_vec(), column(&b, &b.contact)),
            ("orientation", h0.points().to_vec(), column(&b, &b.orientational)),
            ("spatial", centers.clone(), occupancy.clone()),
        ];
        for (kind, pts, scores) in files {
            let path = out_dir.join(format!("{kind}_obj{j:04}.txt"));
            io::write_text(&path, &io::colorized_cloud(&pts, &scores))?;
            written += 1;
        }
    }
    Ok(format!("wrote {written} point clouds to {}", out_dir.display()))
}
