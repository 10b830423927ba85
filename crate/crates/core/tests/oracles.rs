mod common;

use h2oflow::affordance::{contact_scores, orientational_scores, spatial_occupancy, AffordanceConfig, HoiSampleSet};
use h2oflow::geometry::{make_sphere_bins, FlowField, FrameTag, PointCloud};
use h2oflow::math::Vec3;
use h2oflow::model::Tensor;
use proptest::prelude::*;

fn points(v: &[f64]) -> Vec<Vec3> {
    v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn instance(nh: usize, no: usize, k: usize) -> impl Strategy<Value = HoiSampleSet> {
    (
        prop::collection::vec(-0.5..0.5f64, nh * 3),
        prop::collection::vec(-0.3..0.3f64, no * 3),
        prop::collection::vec(-0.4..0.4f64, k * nh * 3),
        prop::collection::vec(0.01..1.0f64, k * nh * no),
    )
        .prop_map(move |(h, o, f, w)| {
            let h0 = PointCloud::new(points(&h), FrameTag::CanonicalObject).unwrap();
            let object = PointCloud::new(points(&o), FrameTag::CanonicalObject).unwrap();
            let flows = f.chunks(nh * 3).map(|c| FlowField::new(points(c))).collect();
            let weights = w.chunks(nh * no).map(|c| Tensor::matrix(nh, no, c.to_vec())).collect();
            HoiSampleSet::new(h0, object, flows, Some(weights)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimators_match_reference_loops(set in instance(6, 5, 4), use_attention in any::<bool>()) {
        let cfg = AffordanceConfig { use_attention, ..Default::default() };
        let raw = common::Raw::from_set(&set, use_attention);
        let c = contact_scores(&set, &cfg).unwrap();
        prop_assert!(common::max_rel_err(c.data(), &common::contact(&raw, cfg.tau_contact)) <= 1e-9);

        let bins = make_sphere_bins(cfg.n_b).unwrap();
        let arrays: Vec<[f64; 3]> = bins.directions().iter().map(|b| b.to_array()).collect();
        let o = orientational_scores(&set, &bins, &cfg).unwrap();
        let (h, r) = common::orientational(&raw, &arrays, cfg.sigma2, cfg.tau_orient, cfg.min_valid_fraction);
        prop_assert!(common::max_rel_err(o.entropy.data(), &h) <= 1e-9);
        prop_assert!(common::max_rel_err(o.scores.data(), &r) <= 1e-9);

        let grid = cfg.grid_for(&set.object).unwrap();
        let s = spatial_occupancy(&set, &grid);
        prop_assert!(common::max_rel_err(&s.per_human, &common::spatial(&raw, &grid)) <= 1e-9);
    }

    #[test]
    fn occupancy_tallies_are_consistent(set in instance(7, 4, 5)) {
        let grid = AffordanceConfig::default().grid_for(&set.object).unwrap();
        let s = spatial_occupancy(&set, &grid);
        let cells = grid.cell_count();
        for (c, m) in s.marginal.iter().enumerate() {
            let sum: f64 = (0..set.n_h()).map(|i| s.point_grid(i)[c]).sum();
            prop_assert!(common::rel_close(*m, sum, 1e-12));
        }
        // each point's frequencies plus its dropped share cover all samples
        let kept: f64 = s.per_human.iter().sum::<f64>() * set.k() as f64;
        prop_assert_eq!((kept.round() as usize) + s.dropped, set.n_h() * set.k());
        prop_assert!(s.per_human.len() == set.n_h() * cells);
    }
}
