//! Training-time augmentation: yaw rotation and half-space occlusion.

use rand::Rng as _;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{invalid_arg, Result};
use crate::geometry::PointCloud;
use crate::math::{Matrix3, Vec3};
use crate::rng::stream;

#[derive(Clone, Debug)]
pub struct Augmented {
    /// `cloud[k] == rotation * object[kept[k]] + shift`.
    pub cloud: PointCloud,
    /// Indices of the surviving input points, ascending.
    pub kept: Vec<usize>,
    pub rotation: Matrix3,
    pub shift: Vec3,
}

/// Rotates about z (uniform yaw drawn from `rotation_seed`, identity when
/// `None`), drops the `occlusion_fraction` of points furthest along a random
/// direction, and re-centers the survivors on their centroid.
pub fn augment(
    object: &PointCloud,
    rotation_seed: Option<u64>,
    occlusion_fraction: f64,
    seed: u64,
) -> Result<Augmented> {
    if !(0.0..1.0).contains(&occlusion_fraction) {
        return Err(invalid_arg(format!(
            "occlusion fraction {occlusion_fraction} outside [0, 1)"
        )));
    }
    let rotation = match rotation_seed {
        Some(s) => {
            let yaw = stream(s, "rotation", 0).gen_range(0.0..std::f64::consts::TAU);
            Matrix3::rot_z(yaw)
        }
        None => Matrix3::identity(),
    };
    let rotated: Vec<Vec3> = object.points().iter().map(|p| rotation.mul_vec(*p)).collect();
    let n = rotated.len();
    let n_drop = (occlusion_fraction * n as f64).round() as usize;
    if n_drop >= n {
        return Err(invalid_arg(format!(
            "occluding {n_drop} of {n} points leaves an empty cloud"
        )));
    }
    let mut kept: Vec<usize> = (0..n).collect();
    if n_drop > 0 {
        let d = Vec3::from_array(UnitSphere.sample(&mut stream(seed, "occlusion", 0)));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            rotated[b]
                .dot(d)
                .total_cmp(&rotated[a].dot(d))
                .then(a.cmp(&b))
        });
        kept = order[n_drop..].to_vec();
        kept.sort_unstable();
    }
    let survivors: Vec<Vec3> = kept.iter().map(|&i| rotated[i]).collect();
    let mut c = Vec3::zeros();
    for p in &survivors {
        c += *p;
    }
    let shift = -(c * (1.0 / survivors.len() as f64));
    let mut cloud = PointCloud::new(survivors.iter().map(|p| *p + shift).collect(), object.frame())?;
    if let Some(l) = object.labels() {
        cloud = cloud.with_labels(kept.iter().map(|&i| l[i]).collect())?;
    }
    Ok(Augmented {
        cloud,
        kept,
        rotation,
        shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrameTag;
    use proptest::prelude::*;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = stream(seed, "test", 0);
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.0..1.0)))
                .collect(),
            FrameTag::CanonicalObject,
        )
        .unwrap()
    }

    #[test]
    fn no_op_path_centers() {
        let pc = cloud(40, 1);
        let a = augment(&pc, None, 0.0, 5).unwrap();
        let c = pc.centroid();
        assert_eq!(a.kept, (0..40).collect::<Vec<_>>());
        for (p, q) in a.cloud.points().iter().zip(pc.points()) {
            assert!((*p - (*q - c)).norm() < 1e-12);
        }
    }

    #[test]
    fn half_occlusion_count() {
        let a = augment(&cloud(512, 2), Some(3), 0.5, 4).unwrap();
        assert_eq!(a.cloud.len(), 256);
    }

    #[test]
    fn rejects_full_occlusion() {
        assert!(augment(&cloud(4, 2), None, 1.0, 0).is_err());
        assert!(augment(&cloud(1, 2), None, 0.6, 0).is_err());
    }

    proptest! {
        #[test]
        fn dropped_points_form_a_half_space(seed in 0u64..500, frac in 0.05f64..0.9) {
            let pc = cloud(64, seed);
            let a = augment(&pc, Some(seed ^ 7), frac, seed).unwrap();
            let d = Vec3::from_array(UnitSphere.sample(&mut stream(seed, "occlusion", 0)));
            let proj = |i: usize| a.rotation.mul_vec(pc.points()[i]).dot(d);
            let kept_max = a.kept.iter().map(|&i| proj(i)).fold(f64::NEG_INFINITY, f64::max);
            for i in (0..64).filter(|i| !a.kept.contains(i)) {
                prop_assert!(proj(i) >= kept_max);
            }
            // survivors are a rigid image of the kept inputs
            for (k, &i) in a.kept.iter().enumerate() {
                let want = a.rotation.mul_vec(pc.points()[i]) + a.shift;
                prop_assert!((a.cloud.points()[k] - want).norm() < 1e-12);
            }
            prop_assert!(a.cloud.centroid().norm() < 1e-9);
        }
    }
}
