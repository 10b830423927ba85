//! Binary containers (`H2OD`, `H2OC`, `H2OA`) and text exports.

pub mod binary;
pub mod bundle;
pub mod checkpoint;
pub mod dataset;
pub mod text;

pub use bundle::{read_bundle, write_bundle, StoredBundle};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use dataset::{
    decode_sample, encode_sample, read_dataset, read_manifest, read_sample, write_manifest,
    write_sample,
};
pub use text::{body_fit_text, colorized_cloud, robot_fit_text, score_color, write_text};
