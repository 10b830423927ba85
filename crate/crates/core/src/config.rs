//! Run configuration: `key = value` files with `#` comments, overridable
//! key by key from the command line.

use std::path::Path;
use std::str::FromStr;

use crate::affordance::{AffordanceConfig, WeightMode};
use crate::diffusion::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::fitting::{CrossFitConfig, FitBodyConfig};
use crate::model::{AttentionSource, DenoiserConfig, TrainConfig};
use crate::synthdata::{ApproachSide, DatasetConfig, ModeId, ModePolicy, ObjectKind, ObjectSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Every random stream in a run is derived from this seed.
    pub seed: u64,
    pub data: DatasetConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    /// Checkpoint cadence in optimizer steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub affordance: AffordanceConfig,
    /// Interactions sampled per object for affordances and evaluation.
    pub n_samples: usize,
    pub k_fraction: f64,
    pub eval_cases: usize,
    pub occlusion_levels: Vec<f64>,
    pub fit: FitBodyConfig,
    pub robot: CrossFitConfig,
    /// Object points that get a visualization per affordance type.
    pub viz_points: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DatasetConfig::default(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every: 0,
            affordance: AffordanceConfig::default(),
            n_samples: 50,
            k_fraction: 0.1,
            eval_cases: 20,
            occlusion_levels: vec![0.0, 0.1, 0.3, 0.5],
            fit: FitBodyConfig::default(),
            robot: CrossFitConfig::default(),
            viz_points: vec![0],
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidConfig(format!("cannot parse `{v}`")))
}

fn flag(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "objects",
        "modes",
        "approach_sides",
        "mode_policy",
        "samples_per_combo",
        "dataset_samples",
        "n_object_points",
        "n_human_points",
        "hidden",
        "heads",
        "blocks",
        "t_embed_dim",
        "mlp_ratio",
        "attention_source",
        "diffusion_steps",
        "beta_start",
        "beta_end",
        "lr",
        "weight_decay",
        "batch_size",
        "epochs",
        "max_steps",
        "augment_rotate",
        "max_occlusion",
        "log_every",
        "checkpoint_every",
        "tau_contact",
        "tau_orient",
        "sigma2",
        "n_b",
        "use_attention",
        "tau_inside_exp",
        "weight_mode",
        "grid_cells",
        "grid_extent",
        "min_valid_fraction",
        "n_samples",
        "k_fraction",
        "eval_cases",
        "occlusion_levels",
        "lambda_theta",
        "lambda_beta",
        "fit_iters",
        "lambda_orient",
        "robot_tau",
        "robot_tau_inside_exp",
        "penetration_weight",
        "margin",
        "robot_iters",
        "fix_rigid",
        "viz_points",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(v)?,
            "objects" => {
                self.data.objects = list(v, |s| ObjectKind::parse(s).map(ObjectSpec::default_for))?
            }
            "modes" => self.data.modes = list(v, ModeId::parse)?,
            "approach_sides" => self.data.approach_sides = list(v, ApproachSide::parse)?,
            "mode_policy" => {
                self.data.policy = match v {
                    "enumerate" => ModePolicy::Enumerate,
                    "random" => ModePolicy::Random,
                    _ => return Err(Error::InvalidConfig(format!("unknown mode policy `{v}`"))),
                }
            }
            "samples_per_combo" => self.data.samples_per_combo = num(v)?,
            "dataset_samples" => self.data.n_samples = num(v)?,
            "n_object_points" => self.data.n_object_points = num(v)?,
            "n_human_points" => {
                self.data.n_human_points = num(v)?;
                self.denoiser.n_points = self.data.n_human_points;
            }
            "hidden" => self.denoiser.hidden = num(v)?,
            "heads" => self.denoiser.heads = num(v)?,
            "blocks" => self.denoiser.blocks = num(v)?,
            "t_embed_dim" => self.denoiser.t_embed_dim = num(v)?,
            "mlp_ratio" => self.denoiser.mlp_ratio = num(v)?,
            "attention_source" => {
                self.denoiser.attention_source = match v {
                    "final" => AttentionSource::FinalBlock,
                    "mean" => AttentionSource::MeanOverBlocks,
                    _ => match v.strip_prefix("block:") {
                        Some(b) => AttentionSource::Block(num(b)?),
                        None => {
                            return Err(Error::InvalidConfig(format!(
                                "expected final, mean or block:N, got `{v}`"
                            )))
                        }
                    },
                }
            }
            "diffusion_steps" => self.schedule.steps = num(v)?,
            "beta_start" => self.schedule.beta_start = num(v)?,
            "beta_end" => self.schedule.beta_end = num(v)?,
            "lr" => self.train.lr = num(v)?,
            "weight_decay" => self.train.weight_decay = num(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "epochs" => self.train.epochs = num(v)?,
            "max_steps" => self.train.max_steps = if v == "none" { None } else { Some(num(v)?) },
            "augment_rotate" => self.train.augment.rotate = flag(v)?,
            "max_occlusion" => self.train.augment.max_occlusion = num(v)?,
            "log_every" => self.train.log_every = num(v)?,
            "checkpoint_every" => self.checkpoint_every = num(v)?,
            "tau_contact" => self.affordance.tau_contact = num(v)?,
            "tau_orient" => self.affordance.tau_orient = num(v)?,
            "sigma2" => self.affordance.sigma2 = num(v)?,
            "n_b" => self.affordance.n_b = num(v)?,
            "use_attention" => self.affordance.use_attention = flag(v)?,
            "tau_inside_exp" => self.affordance.tau_inside_exp = flag(v)?,
            "weight_mode" => {
                self.affordance.weight_mode = match v {
                    "per_sample" => WeightMode::PerSample,
                    "mean" => WeightMode::Mean,
                    _ => return Err(Error::InvalidConfig(format!("expected per_sample or mean, got `{v}`"))),
                }
            }
            "grid_cells" => self.affordance.grid_cells = num(v)?,
            "grid_extent" => self.affordance.grid_extent = num(v)?,
            "min_valid_fraction" => self.affordance.min_valid_fraction = num(v)?,
            "n_samples" => self.n_samples = num(v)?,
            "k_fraction" => self.k_fraction = num(v)?,
            "eval_cases" => self.eval_cases = num(v)?,
            "occlusion_levels" => self.occlusion_levels = list(v, num)?,
            "lambda_theta" => self.fit.lambda_theta = num(v)?,
            "lambda_beta" => self.fit.lambda_beta = num(v)?,
            "fit_iters" => self.fit.descent.iters = num(v)?,
            "lambda_orient" => self.robot.lambda = num(v)?,
            "robot_tau" => self.robot.scores.tau = num(v)?,
            "robot_tau_inside_exp" => self.robot.scores.tau_inside_exp = flag(v)?,
            "penetration_weight" => self.robot.penetration_weight = num(v)?,
            "margin" => self.robot.margin = num(v)?,
            "robot_iters" => self.robot.descent.iters = num(v)?,
            "fix_rigid" => self.robot.fix_rigid = flag(v)?,
            "viz_points" => self.viz_points = list(v, num)?,
            _ => return Err(Error::InvalidConfig("unknown key".into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                key: line.to_string(),
                msg: "expected `key = value`".into(),
            })?;
            self.apply_one(key.trim(), value.trim(), n + 1)?;
        }
        Ok(())
    }

    /// Applies a single setting, reporting errors against `line`
    /// (0 for command-line overrides).
    pub fn apply_one(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        self.set(key, value).map_err(|e| Error::Config {
            line,
            key: key.to_string(),
            msg: match e {
                Error::InvalidConfig(m) | Error::InvalidArgument(m) => m,
                other => other.to_string(),
            },
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Fans the master seed out to the consumers and checks the pieces.
    pub fn finalize(mut self) -> Result<Self> {
        self.data.master_seed = self.seed;
        self.train.seed = self.seed;
        self.denoiser.n_points = self.data.n_human_points;
        self.data.validate()?;
        self.denoiser.validate()?;
        self.affordance.validate()?;
        self.schedule.build()?;
        if self.n_samples == 0 || !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::InvalidConfig("n_samples must be positive and k_fraction in (0, 1]".into()));
        }
        if self.occlusion_levels.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(Error::InvalidConfig("occlusion levels must lie in [0, 1)".into()));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::from_text("# nothing here\n\n").unwrap();
        assert_eq!(cfg.affordance, AffordanceConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.weight_decay, 1e-5);
    }

    #[test]
    fn values_reach_their_configs() {
        let cfg = RunConfig::from_text(
            "tau_contact = 20  # contact temperature\nmodes = grasp-left, grasp-right\nattention_source = block:1\n\
             occlusion_levels = 0.1,0.3\nmax_steps = 300\n",
        )
        .unwrap();
        assert_eq!(cfg.affordance.tau_contact, 20.0);
        assert_eq!(cfg.data.modes, [ModeId::GraspLeft, ModeId::GraspRight]);
        assert_eq!(cfg.denoiser.attention_source, AttentionSource::Block(1));
        assert_eq!(cfg.occlusion_levels, [0.1, 0.3]);
        assert_eq!(cfg.train.max_steps, Some(300));
    }

    #[test]
    fn bad_values_name_the_key_and_line() {
        match RunConfig::from_text("seed = 1\ntau_contact = abc\n") {
            Err(Error::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "tau_contact")),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::from_text("\n\nno_such_key = 3\n") {
            Err(Error::Config { line, key, msg }) => {
                assert_eq!((line, key.as_str(), msg.as_str()), (3, "no_such_key", "unknown key"))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(RunConfig::from_text("just words"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let mut cfg = RunConfig::default();
        for key in RunConfig::KEYS {
            let err = cfg.set(key, "\u{1}").unwrap_err();
            assert!(!err.to_string().contains("unknown key"), "{key}");
        }
    }

    #[test]
    fn seed_reaches_every_consumer() {
        let cfg = RunConfig::from_text("seed = 77").unwrap().finalize().unwrap();
        assert_eq!((cfg.data.master_seed, cfg.train.seed), (77, 77));
    }
}
