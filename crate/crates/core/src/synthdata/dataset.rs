//! Corpus generation: seeds fan out from a master seed, samples are built in
//! parallel and written in index order.

use std::path::Path;

use rayon::prelude::*;

use super::objects::{ObjectKind, ObjectSpec};
use super::scenario::{generate_scenario, sample_mode, Generator, ApproachSide, HoiSample, InteractionMode, ModeId};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// How a sample's interaction mode is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModePolicy {
    /// Every (object, mode) pair gets `samples_per_combo` samples.
    Enumerate,
    /// Each sample draws its mode uniformly from its seed.
    Random,
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub objects: Vec<ObjectSpec>,
    pub modes: Vec<ModeId>,
    pub approach_sides: Vec<ApproachSide>,
    pub policy: ModePolicy,
    pub samples_per_combo: usize,
    /// Sample count under [`ModePolicy::Random`].
    pub n_samples: usize,
    pub n_object_points: usize,
    pub n_human_points: usize,
    pub master_seed: u64,
    /// Seeds tried per sample before the corpus fails.
    pub max_seed_advances: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            objects: ObjectKind::ALL.iter().map(|&k| ObjectSpec::default_for(k)).collect(),
            modes: vec![ModeId::GraspLeft, ModeId::GraspRight],
            approach_sides: vec![ApproachSide::Front],
            policy: ModePolicy::Enumerate,
            samples_per_combo: 50,
            n_samples: 400,
            n_object_points: 512,
            n_human_points: 512,
            master_seed: 0,
            max_seed_advances: 32,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.modes.is_empty() || self.approach_sides.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset needs at least one object, mode and approach side".into(),
            ));
        }
        if self.n_object_points == 0 || self.n_human_points == 0 {
            return Err(Error::InvalidConfig("point counts must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self.policy {
            ModePolicy::Enumerate => self.objects.len() * self.modes.len() * self.samples_per_combo,
            ModePolicy::Random => self.n_samples,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Object spec, mode and first seed of sample `index`.
    fn plan(&self, index: usize) -> (ObjectSpec, InteractionMode, u64) {
        let seed = derive_seed(self.master_seed, "sample", index as u64);
        let side = self.approach_sides
            [(derive_seed(seed, "side", 0) % self.approach_sides.len() as u64) as usize];
        match self.policy {
            ModePolicy::Enumerate => {
                let per_object = self.modes.len() * self.samples_per_combo;
                let obj = index / per_object;
                let mode = (index % per_object) / self.samples_per_combo;
                (self.objects[obj], InteractionMode::new(self.modes[mode], side), seed)
            }
            ModePolicy::Random => {
                let obj = (derive_seed(seed, "object", 0) % self.objects.len() as u64) as usize;
                let mode = sample_mode(&self.modes, seed);
                (self.objects[obj], InteractionMode::new(mode, side), seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub filename: String,
    pub mode_id: ModeId,
    pub seed: u64,
}

/// Builds one sample, advancing the seed past generation failures. The
/// returned sample records the seed that succeeded.
pub fn generate_one(config: &DatasetConfig, gen: &Generator, index: usize) -> Result<HoiSample> {
    let (spec, mode, seed) = config.plan(index);
    let mut last = None;
    for k in 0..config.max_seed_advances.max(1) {
        match generate_scenario(gen, &spec, mode, config.n_object_points, seed.wrapping_add(k as u64)) {
            Ok(s) => return Ok(s),
            Err(e @ Error::GenerationFailure(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// All samples of the corpus, in index order.
pub fn generate_samples(config: &DatasetConfig) -> Result<Vec<HoiSample>> {
    config.validate()?;
    let gen = Generator::new(config.n_human_points)?;
    (0..config.len())
        .into_par_iter()
        .map(|i| generate_one(config, &gen, i))
        .collect()
}

/// Writes `sample_NNNNN.h2od` files plus `manifest.txt` into `dir`.
pub fn generate_dataset(config: &DatasetConfig, dir: &Path) -> Result<Vec<ManifestEntry>> {
    let samples = generate_samples(config)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let filename = format!("sample_{i:05}.h2od");
        crate::io::write_sample(&dir.join(&filename), s)?;
        manifest.push(ManifestEntry {
            filename,
            mode_id: s.mode.mode_id,
            seed: s.seed,
        });
    }
    crate::io::write_manifest(&dir.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}
