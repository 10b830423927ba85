//! Procedural human-object interaction samples: a capsule body posed
//! against analytic objects, plus the training-time augmentation.

pub mod augment;
pub mod body;
pub mod dataset;
pub mod objects;
pub mod scenario;

pub use augment::{augment, Augmented};
pub use body::{
    body_vertices, build_canonical_body, default_body, default_joints, ArticulatedBody, BodyParams, BodyPart, SHAPE_DIMS,
};
pub use dataset::{generate_dataset, generate_one, generate_samples, DatasetConfig, ManifestEntry, ModePolicy};
pub use objects::{ObjectInstance, ObjectKind, ObjectShape, ObjectSpec};
pub use scenario::{
    compute_flow_gt, generate_scenario, Generator, sample_mode, ApproachSide, ContactAudit, HoiSample,
    InteractionMode, ModeId, CONTACT_THRESHOLD,
};

use crate::math::Vec3;

/// Storage lattice spacing (2^-20 m). Coordinates below 4 m on this lattice
/// are exact in f32, and so are their sums and differences, which keeps
/// `h0 + flow == human` bitwise through the binary formats.
pub const LATTICE: f64 = 1.0 / (1u64 << 20) as f64;

pub fn quantize_scalar(v: f64) -> f64 {
    (v / LATTICE).round() * LATTICE
}

pub fn quantize(p: Vec3) -> Vec3 {
    Vec3::new(quantize_scalar(p.x), quantize_scalar(p.y), quantize_scalar(p.z))
}
