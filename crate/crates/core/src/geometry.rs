//! Point-set kernels shared by the rest of the crate: farthest point
//! sampling, canonicalization, voxelization and spherical binning.

use crate::error::{invalid_arg, Error, Result};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameTag {
    CanonicalObject,
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<u16>>,
    frame: FrameTag,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: FrameTag) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid_arg("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite coordinate at point {i}")));
        }
        Ok(Self {
            points,
            labels: None,
            frame,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(invalid_arg(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn frame(&self) -> FrameTag {
        self.frame
    }

    pub fn set_frame(&mut self, frame: FrameTag) {
        self.frame = frame;
    }

    pub fn centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        for p in &self.points {
            acc += *p;
        }
        acc * (1.0 / self.points.len() as f64)
    }

    /// Sub-cloud at `indices`, labels carried along.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut out = PointCloud::new(points, self.frame)?;
        if let Some(l) = &self.labels {
            out.labels = Some(indices.iter().map(|&i| l[i]).collect());
        }
        Ok(out)
    }

    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            labels: self.labels.clone(),
            frame: self.frame,
        }
    }

    pub fn translated(&self, by: Vec3) -> PointCloud {
        self.map_points(|p| p + by)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    }
}

/// Per-point displacement field, index-aligned with a human cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Self {
        Self { vectors }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec3] {
        &mut self.vectors
    }

    pub fn select(&self, indices: &[usize]) -> FlowField {
        FlowField::new(indices.iter().map(|&i| self.vectors[i]).collect())
    }

    /// Row-major `n x 3` buffer.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vectors.iter().flat_map(|v| v.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self::new(
            flat.chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    /// `base + self`, point by point.
    pub fn displace(&self, base: &PointCloud) -> Result<PointCloud> {
        if base.len() != self.len() {
            return Err(invalid_arg(format!(
                "flow has {} vectors, cloud has {} points",
                self.len(),
                base.len()
            )));
        }
        let mut out = base.clone();
        for (p, f) in out.points.iter_mut().zip(&self.vectors) {
            *p = *p + *f;
        }
        Ok(out)
    }
}

/// Greedy farthest point sampling. Ties go to the lowest index.
pub fn fps_sample(pc: &PointCloud, k: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(invalid_arg(format!("fps: k={k} outside [1, {n}]")));
    }
    if start_index >= n {
        return Err(invalid_arg(format!("fps: start index {start_index} >= {n}")));
    }
    let pts = pc.points();
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut cur = start_index;
    for _ in 0..k {
        picked.push(cur);
        taken[cur] = true;
        let c = pts[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = (*p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !taken[i] && min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(picked)
}

/// Translates both clouds so the object centroid sits at the origin.
pub fn center_on_centroid(
    object: &PointCloud,
    human: &PointCloud,
) -> Result<(PointCloud, PointCloud, Vec3)> {
    if object.is_empty() || human.is_empty() {
        return Err(invalid_arg("center_on_centroid: empty cloud"));
    }
    let c = object.centroid();
    let mut o = object.translated(-c);
    let mut h = human.translated(-c);
    o.frame = FrameTag::CanonicalObject;
    h.frame = FrameTag::CanonicalObject;
    Ok((o, h, c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelGridSpec {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, cell_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(invalid_arg("voxel cell size must be positive"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(invalid_arg("voxel dims must be positive"));
        }
        Ok(Self {
            origin,
            cell_size,
            dims,
        })
    }

    /// Cubic grid of `cells` per side covering `extent_factor` times the
    /// cloud's largest bounding-box side, centered on the box center.
    pub fn around(cloud: &PointCloud, cells: usize, extent_factor: f64) -> Result<Self> {
        let (lo, hi) = cloud.bounds();
        let side = (hi - lo).x.max((hi - lo).y).max((hi - lo).z).max(1e-3) * extent_factor;
        let center = (lo + hi) * 0.5;
        Self::new(center - Vec3::splat(side * 0.5), side / cells as f64, [cells; 3])
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat row-major cell index of `p`, or `None` outside the half-open extent.
    pub fn index_of(&self, p: Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for (a, slot) in idx.iter_mut().enumerate() {
            let f = ((p.get(a) - self.origin.get(a)) / self.cell_size).floor();
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            *slot = f as usize;
        }
        Some(self.flat(idx))
    }

    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn cell_center(&self, flat: usize) -> Vec3 {
        let l = self.dims[2];
        let w = self.dims[1];
        let iz = flat % l;
        let iy = (flat / l) % w;
        let ix = flat / (l * w);
        self.origin
            + Vec3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5) * self.cell_size
    }

    pub fn translated(&self, by: Vec3) -> Self {
        Self {
            origin: self.origin + by,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelCounts {
    pub counts: Vec<u32>,
    pub dropped: usize,
}

pub fn voxelize(points: &PointCloud, spec: &VoxelGridSpec) -> VoxelCounts {
    let mut counts = vec![0u32; spec.cell_count()];
    let mut dropped = 0;
    for &p in points.points() {
        match spec.index_of(p) {
            Some(i) => counts[i] += 1,
            None => dropped += 1,
        }
    }
    VoxelCounts { counts, dropped }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SphereBins {
    directions: Vec<Vec3>,
}

impl SphereBins {
    pub fn from_directions(directions: Vec<Vec3>) -> Result<Self> {
        if directions.len() < 2 {
            return Err(invalid_arg("need at least two sphere bins"));
        }
        if directions.iter().any(|d| (d.norm() - 1.0).abs() > 1e-9) {
            return Err(invalid_arg("sphere bin directions must be unit vectors"));
        }
        Ok(Self { directions })
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Fibonacci spherical lattice with `n_b` directions.
pub fn make_sphere_bins(n_b: usize) -> Result<SphereBins> {
    if n_b < 2 {
        return Err(invalid_arg(format!("n_b={n_b} < 2")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let directions = (0..n_b)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n_b as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z).normalized()
        })
        .collect();
    SphereBins::from_directions(directions)
}

/// Gaussian-kernel soft assignment of a unit direction to the sphere bins.
pub fn bin_probabilities(x: Vec3, bins: &SphereBins, sigma2: f64) -> Result<Vec<f64>> {
    if !((x.norm() - 1.0).abs() <= 1e-6) {
        return Err(invalid_arg(format!("direction {x:?} is not a unit vector")));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid_arg("sigma2 must be positive"));
    }
    let mut out = Vec::with_capacity(bins.len());
    kernel_into(x, bins, sigma2, &mut out);
    Ok(out)
}

/// Unchecked kernel evaluation into a reused buffer.
pub(crate) fn kernel_into(x: Vec3, bins: &SphereBins, sigma2: f64, out: &mut Vec<f64>) {
    out.clear();
    let inv = 1.0 / (2.0 * sigma2);
    let mut max = f64::NEG_INFINITY;
    for n in bins.directions() {
        let l = -(x - *n).norm_squared() * inv;
        max = max.max(l);
        out.push(l);
    }
    let mut z = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&a| Vec3::from_array(a)).collect(), FrameTag::Raw).unwrap()
    }

    #[test]
    fn fps_single_point() {
        assert_eq!(fps_sample(&cloud(&[[0.0; 3]]), 1, 0).unwrap(), vec![0]);
    }

    #[test]
    fn fps_collinear_picks_far_end() {
        let pc = cloud(&[[0., 0., 0.], [1., 0., 0.], [2., 0., 0.], [3., 0., 0.]]);
        assert_eq!(fps_sample(&pc, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_rejects_bad_k() {
        let pc = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(fps_sample(&pc, 3, 0), Err(Error::InvalidArgument(_))));
        assert!(fps_sample(&pc, 1, 2).is_err());
    }

    #[test]
    fn non_finite_points_rejected() {
        let r = PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], FrameTag::Raw);
        assert!(matches!(r, Err(Error::InvalidData(_))));
    }

    #[test]
    fn centering_shifts_both_clouds() {
        let o = cloud(&[[0., 2., 3.], [2., 2., 3.]]);
        let h = cloud(&[[1., 1., 1.]]);
        let (o2, h2, c) = center_on_centroid(&o, &h).unwrap();
        assert_eq!(c, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(h2.points()[0], Vec3::new(0.0, -1.0, -2.0));
        assert_eq!(o2.centroid(), Vec3::zeros());
        assert_eq!(o2.frame(), FrameTag::CanonicalObject);
    }

    #[test]
    fn voxel_single_point_and_boundary() {
        let spec = VoxelGridSpec::new(Vec3::zeros(), 0.5, [2, 2, 2]).unwrap();
        let v = voxelize(&cloud(&[[0.25, 0.25, 0.25]]), &spec);
        assert_eq!(v.counts[0], 1);
        assert_eq!(v.counts.iter().sum::<u32>(), 1);
        let v = voxelize(&cloud(&[[0.5, 0.1, 0.1]]), &spec);
        assert_eq!(v.counts[spec.flat([1, 0, 0])], 1);
        let v = voxelize(&cloud(&[[1.0, 0.1, 0.1]]), &spec);
        assert_eq!(v.dropped, 1);
    }

    #[test]
    fn two_bins_are_opposed() {
        let b = make_sphere_bins(2).unwrap();
        assert!(b.directions()[0].dot(b.directions()[1]) < 0.0);
        assert!(make_sphere_bins(1).is_err());
    }

    #[test]
    fn kernel_limits() {
        let bins = make_sphere_bins(64).unwrap();
        let x = bins.directions()[5];
        let p = bin_probabilities(x, &bins, 1e-4).unwrap();
        assert!((p[5] - 1.0).abs() < 1e-9);
        let p = bin_probabilities(x, &bins, 1e9).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 64.0).abs() < 1e-8));
        assert!(bin_probabilities(Vec3::zeros(), &bins, 1.0).is_err());
    }
}
