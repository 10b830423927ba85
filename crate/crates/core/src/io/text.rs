//! Plain-text exports: `key = value` reports and colorized point clouds.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitting::{BodyFit, RobotFit};
use crate::math::Vec3;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

/// Blue (low) to red (high) after min-max normalization; a constant
/// score maps to the middle of the ramp.
pub fn score_color(s: f64, lo: f64, hi: f64) -> [u8; 3] {
    let u = if hi > lo { ((s - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let r = (255.0 * u).round() as u8;
    let b = 255 - r;
    let g = (255.0 * (1.0 - (2.0 * u - 1.0).abs()) * 0.5).round() as u8;
    [r, g, b]
}

/// One `x y z r g b` line per point.
pub fn colorized_cloud(points: &[Vec3], scores: &[f64]) -> String {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::new();
    for (p, s) in points.iter().zip(scores) {
        let [r, g, b] = score_color(*s, lo, hi);
        let _ = writeln!(out, "{} {} {} {r} {g} {b}", p.x, p.y, p.z);
    }
    out
}

pub fn body_fit_text(fit: &BodyFit) -> String {
    let p = &fit.params;
    let mut out = String::new();
    let _ = writeln!(out, "loss = {:e}", fit.loss);
    let _ = writeln!(out, "data_loss = {:e}", fit.data_loss);
    let _ = writeln!(out, "iterations = {}", fit.trace.len());
    let _ = writeln!(out, "theta = {}", join(p.theta.iter().flat_map(|t| t.to_array())));
    let _ = writeln!(out, "beta = {}", join(p.beta.iter().copied()));
    let _ = writeln!(out, "r_global = {}", join(p.r_global.to_array()));
    let _ = writeln!(out, "t_global = {}", join(p.t_global.to_array()));
    out
}

pub fn robot_fit_text(fit: &RobotFit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "loss = {:e}", fit.loss);
    let _ = writeln!(out, "iterations = {}", fit.trace.len());
    let _ = writeln!(out, "phi = {}", join(fit.pose.phi.iter().copied()));
    let _ = writeln!(out, "r = {}", join(fit.pose.r.to_array()));
    let _ = writeln!(out, "t = {}", join(fit.pose.t.to_array()));
    let _ = writeln!(out, "trace = {}", join(fit.trace.iter().copied()));
    out
}
