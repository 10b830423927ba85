//! `H2OD` sample files and the dataset manifest.

use std::path::Path;

use super::binary::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::{FlowField, FrameTag, PointCloud};
use crate::math::Vec3;
use crate::synthdata::{ApproachSide, HoiSample, InteractionMode, ManifestEntry, ModeId};

pub const MAGIC: &[u8; 4] = b"H2OD";
pub const VERSION: u32 = 1;

const TAG_OBJECT: u8 = 1;
const TAG_HUMAN: u8 = 2;
const TAG_FLOW: u8 = 3;

fn write_block(w: &mut Writer, tag: u8, pts: &[Vec3]) {
    w.u8(tag);
    w.u32(pts.len() as u32);
    w.f32s(pts.iter().flat_map(|p| p.to_array()));
}

fn read_block(r: &mut Reader, tag: u8) -> Result<Vec<Vec3>> {
    let at = r.offset();
    let got = r.u8("block tag")?;
    if got != tag {
        return Err(Error::Format {
            offset: at,
            msg: format!("expected block tag {tag}, found {got}"),
        });
    }
    let n = r.u32("block count")? as usize;
    let v = r.f32s(n * 3, "block data")?;
    Ok(v.chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect())
}

pub fn encode_sample(s: &HoiSample) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    write_block(&mut w, TAG_OBJECT, s.object.points());
    write_block(&mut w, TAG_HUMAN, s.human_goal.points());
    write_block(&mut w, TAG_FLOW, s.flow_gt.vectors());
    w.u8(s.mode.mode_id as u8);
    w.u8(s.mode.approach_side as u8);
    w.u64(s.seed);
    w.buf
}

pub fn decode_sample(data: &[u8]) -> Result<HoiSample> {
    let mut r = Reader::new(data);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let object = read_block(&mut r, TAG_OBJECT)?;
    let human = read_block(&mut r, TAG_HUMAN)?;
    let flow = read_block(&mut r, TAG_FLOW)?;
    if flow.len() != human.len() {
        return Err(r.err(format!(
            "flow has {} vectors for {} human points",
            flow.len(),
            human.len()
        )));
    }
    let at = r.offset();
    let mode_id = ModeId::from_u8(r.u8("mode id")?).ok_or(Error::Format {
        offset: at,
        msg: "unknown mode id".into(),
    })?;
    let side = ApproachSide::from_u8(r.u8("approach side")?).ok_or(Error::Format {
        offset: at + 1,
        msg: "unknown approach side".into(),
    })?;
    let seed = r.u64("seed")?;
    r.finish()?;
    Ok(HoiSample {
        object: PointCloud::new(object, FrameTag::CanonicalObject)?,
        human_goal: PointCloud::new(human, FrameTag::CanonicalObject)?,
        flow_gt: FlowField::new(flow),
        mode: InteractionMode::new(mode_id, side),
        seed,
        audit: None,
        instance: None,
        params: None,
    })
}

pub fn write_sample(path: &Path, s: &HoiSample) -> Result<()> {
    write_file(path, &encode_sample(s))
}

pub fn read_sample(path: &Path) -> Result<HoiSample> {
    decode_sample(&read_file(path)?).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&format!("{} {} {}\n", e.filename, e.mode_id as u8, e.seed));
    }
    write_file(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::InvalidData(format!("{}:{}: {msg}", path.display(), n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad("expected `<filename> <mode_id> <seed>`"));
        }
        let mode_id = f[1]
            .parse::<u8>()
            .ok()
            .and_then(ModeId::from_u8)
            .ok_or_else(|| bad("bad mode id"))?;
        let seed = f[2].parse::<u64>().map_err(|_| bad("bad seed"))?;
        out.push(ManifestEntry {
            filename: f[0].to_string(),
            mode_id,
            seed,
        });
    }
    Ok(out)
}

/// Reads every sample listed in `dir/manifest.txt`, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<HoiSample>> {
    read_manifest(&dir.join("manifest.txt"))?
        .iter()
        .map(|e| read_sample(&dir.join(&e.filename)))
        .collect()
}
