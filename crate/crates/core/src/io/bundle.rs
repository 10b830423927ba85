//! `H2OA` affordance bundles.

use std::path::Path;

use super::binary::{read_file, write_file, Reader, Writer};
use crate::affordance::AffordanceBundle;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"H2OA";
pub const VERSION: u32 = 1;

/// The stored part of an [`AffordanceBundle`], at float32 precision.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredBundle {
    pub n_h: usize,
    pub n_o: usize,
    /// `n_h x n_o`, row-major.
    pub contact: Vec<f32>,
    pub orientational: Vec<f32>,
    pub dims: [usize; 3],
    pub marginal: Vec<f32>,
    /// `n_h` grids of `dims` cells each.
    pub per_point: Vec<f32>,
}

impl StoredBundle {
    pub fn from_bundle(b: &AffordanceBundle) -> Self {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Self {
            n_h: b.contact.rows(),
            n_o: b.contact.cols(),
            contact: f(b.contact.data()),
            orientational: f(b.orientational.data()),
            dims: b.spatial.grid.dims,
            marginal: f(&b.spatial.marginal),
            per_point: f(&b.spatial.per_human),
        }
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.n_h as u32);
        w.u32(self.n_o as u32);
        for block in [&self.contact, &self.orientational] {
            block.iter().for_each(|&x| w.f32(x));
        }
        for d in self.dims {
            w.u32(d as u32);
        }
        for block in [&self.marginal, &self.per_point] {
            block.iter().for_each(|&x| w.f32(x));
        }
        w.buf
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n_h = r.u32("N_H")? as usize;
        let n_o = r.u32("N_O")? as usize;
        let pairs = n_h.checked_mul(n_o).ok_or_else(|| r.err("size overflow"))?;
        let contact = r.f32s(pairs, "contact scores")?;
        let orientational = r.f32s(pairs, "orientational scores")?;
        let dims = [r.u32("grid dim")? as usize, r.u32("grid dim")? as usize, r.u32("grid dim")? as usize];
        let cells = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.err("grid size overflow"))?;
        let marginal = r.f32s(cells, "marginal grid")?;
        let per_point = r.f32s(
            cells.checked_mul(n_h).ok_or_else(|| r.err("grid size overflow"))?,
            "per-point grids",
        )?;
        r.finish()?;
        Ok(Self {
            n_h,
            n_o,
            contact,
            orientational,
            dims,
            marginal,
            per_point,
        })
    }
}

pub fn write_bundle(path: &Path, b: &AffordanceBundle) -> Result<()> {
    write_file(path, &StoredBundle::from_bundle(b).encode())
}

pub fn read_bundle(path: &Path) -> Result<StoredBundle> {
    StoredBundle::decode(&read_file(path)?).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_bundle() -> impl Strategy<Value = StoredBundle> {
        (1usize..5, 1usize..5, 1usize..3, 1usize..3, 1usize..3).prop_flat_map(|(n_h, n_o, a, b, c)| {
            let cells = a * b * c;
            (
                prop::collection::vec(any::<f32>(), n_h * n_o),
                prop::collection::vec(any::<f32>(), n_h * n_o),
                prop::collection::vec(any::<f32>(), cells),
                prop::collection::vec(any::<f32>(), cells * n_h),
            )
                .prop_map(move |(contact, orientational, marginal, per_point)| StoredBundle {
                    n_h,
                    n_o,
                    contact,
                    orientational,
                    dims: [a, b, c],
                    marginal,
                    per_point,
                })
        })
    }

    proptest! {
        #[test]
        fn encoding_round_trips_bitwise(b in arb_bundle()) {
            let bytes = b.encode();
            let back = StoredBundle::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }

        #[test]
        fn truncation_is_reported(b in arb_bundle(), frac in 0.0f64..1.0) {
            let bytes = b.encode();
            let cut = ((bytes.len() as f64) * frac) as usize;
            let is_format_error = matches!(StoredBundle::decode(&bytes[..cut]), Err(Error::Format { .. }));
            prop_assert!(is_format_error);
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let b = StoredBundle {
            n_h: 1,
            n_o: 1,
            contact: vec![0.5],
            orientational: vec![-1.0],
            dims: [1, 1, 1],
            marginal: vec![1.0],
            per_point: vec![1.0],
        };
        let mut bytes = b.encode();
        bytes[4] = 2;
        assert!(matches!(StoredBundle::decode(&bytes), Err(Error::Version { found: 2, expected: 1 })));
        bytes[0] = b'X';
        assert!(matches!(StoredBundle::decode(&bytes), Err(Error::Format { .. })));
    }
}
