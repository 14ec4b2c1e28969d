mod common;

use nalgebra::DMatrix;
use ncp_core::eval::{corrupt_map, iou, pck_curve};
use ncp_core::fmap::{format_point_map, parse_point_map, solve_fmap};
use ncp_core::fskd::{
    combination_weights, fskd_predict_features, FskdParams, FskdSource, Keypoint, KeypointSet,
};
use ncp_core::losses::{lie_loss, nce_loss, NCE_TAU};
use ncp_core::{Direction, PointMap, Shape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Random rotation of R^d from the QR factors of a random matrix.
fn orthogonal(seed: u64, d: usize) -> DMatrix<f64> {
    let mut r = common::rng(seed);
    common::random_matrix(&mut r, d, d, 1.0).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pck_is_monotone_and_bounded(
        errors in prop::collection::vec(0.0f64..0.2, 0..50),
        mut thresholds in prop::collection::vec(0.0f64..0.2, 1..20),
    ) {
        thresholds.sort_by(f64::total_cmp);
        let pck = pck_curve(&errors, &thresholds).unwrap();
        prop_assert!(pck.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(pck.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn nce_is_rotation_invariant(f in matrix(8, 4), g in matrix(6, 4), seed in 0u64..1000) {
        let pairs: Vec<_> = (0..8).map(|i| (i, i % 6)).collect();
        let q = orthogonal(seed, 4);
        let a = nce_loss(&f, &g, &pairs, NCE_TAU).unwrap().value;
        let b = nce_loss(&(&f * &q), &(&g * &q), &pairs, NCE_TAU).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn lie_ignores_coordinate_translation(
        f in matrix(7, 3),
        g in matrix(9, 3),
        x in matrix(9, 3),
        shift in prop::array::uniform3(-5.0f64..5.0),
        image in prop::collection::vec(0usize..9, 7),
    ) {
        let gt = PointMap::from_hard(image, Direction::MToN);
        let moved = DMatrix::from_fn(9, 3, |i, c| x[(i, c)] + shift[c]);
        let a = lie_loss(&f, &g, &x, &gt).unwrap().value;
        let b = lie_loss(&f, &g, &moved, &gt).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn looser_nu_keeps_more_candidates(
        fs in matrix(12, 2),
        ft in matrix(10, 2),
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 12),
        nu in 1e-3f64..1.0,
    ) {
        let src = Shape::new("s", pts, Vec::new()).unwrap();
        let tgt = Shape::new("t", (0..10).map(|i| [i as f64, 0.0, 0.0]).collect(), Vec::new()).unwrap();
        let kp = KeypointSet::new("s", (0..6).map(|i| Keypoint { id: i, vertex: 2 * i as usize }).collect()).unwrap();
        let view = FskdSource { shape: &src, features: &fs, keypoints: &kp };
        let kept = |nu: f64| {
            let p = FskdParams { nu, ..FskdParams::default() };
            fskd_predict_features(&[view], &tgt, &ft, &p).unwrap().candidates.iter().filter(|c| c.kept).count()
        };
        prop_assert!(kept(nu) <= kept(2.0 * nu));
    }

    #[test]
    fn weights_normalize_and_favour_low_residuals(
        residuals in prop::collection::vec(0.0f64..0.1, 1..8),
        sigma in 1e-3f64..1.0,
    ) {
        let w = combination_weights(&residuals, sigma);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..w.len() {
            for j in 0..w.len() {
                if residuals[i] < residuals[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn unpenalized_fmap_recovers_exact_maps(c0 in matrix(4, 4), a in matrix(4, 10)) {
        prop_assume!((&a * a.transpose()).determinant().abs() > 1e-3);
        let b = &c0 * &a;
        let sol = solve_fmap(&a, &b, &[0.0, 1.0, 2.0, 3.0], &[0.0, 1.5, 2.5, 3.5], 0.0).unwrap();
        prop_assert!((sol.map.c - c0).amax() < 1e-6);
    }

    #[test]
    fn corruption_levels_are_exact_at_the_ends(image in prop::collection::vec(0usize..30, 1..40), seed in any::<u64>()) {
        let gt = PointMap::from_hard(image, Direction::MToN);
        prop_assert_eq!(&corrupt_map(&gt, 0.0, 30, seed).unwrap(), &gt);
        let full = corrupt_map(&gt, 1.0, 30, seed).unwrap();
        prop_assert!(full.hard().unwrap().iter().all(|&i| i < 30));
    }

    #[test]
    fn point_maps_roundtrip_through_text(image in prop::collection::vec(0usize..500, 1..60), reverse in any::<bool>()) {
        let dir = if reverse { Direction::NToM } else { Direction::MToN };
        let map = PointMap::from_hard(image, dir).with_ids("a", "b");
        prop_assert_eq!(parse_point_map(&format_point_map(&map).unwrap()).unwrap(), map);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40)) {
        let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let a = iou(&p, &g, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, iou(&g, &p, 4).unwrap());
        prop_assert_eq!(iou(&p, &p, 4).unwrap(), 1.0);
    }
}
