mod common;

use geometry::knn::brute_force_knn;
use geometry::{
    linear_blend_skinning, normalize_cloud, Bvh, KnnIndex, PointCloud, Ray, SkinWeights, UpAxis,
};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn rows(max_n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    (2..=max_n).prop_flat_map(move |n| prop::collection::vec(-4i32..4, n * d))
        .prop_map(|v| v.into_iter().map(|x| x as f64 * 0.25).collect())
}

fn point() -> impl Strategy<Value = Point3<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_3d_equals_sorting(data in rows(200, 3), k in 1usize..10, exclude in any::<bool>()) {
        let n = data.len() / 3;
        let k = k.min(if exclude { n - 1 } else { n });
        prop_assume!(k >= 1);
        let expected = brute_force_knn(&data, 3, &data, k, exclude);
        prop_assert_eq!(KnnIndex::kd_tree(&data, 3).unwrap().knn_self(k, exclude).unwrap(), expected.clone());
        prop_assert_eq!(KnnIndex::flat(&data, 3).unwrap().knn_self(k, exclude).unwrap(), expected);
    }

    #[test]
    fn knn_64d_equals_sorting(data in rows(60, 64), k in 1usize..20) {
        let n = data.len() / 64;
        let k = k.min(n);
        let expected = brute_force_knn(&data, 64, &data, k, false);
        prop_assert_eq!(KnnIndex::auto(&data, 64).unwrap().knn_self(k, false).unwrap(), expected);
    }

    #[test]
    fn bvh_equals_brute_force(origin in point(), dir in unit_vector()) {
        let bvh = Bvh::build(&common::icosphere(2)).unwrap();
        let ray = Ray::new(origin, dir).unwrap();
        prop_assert_eq!(bvh.raycast_all(&ray), bvh.raycast_all_brute_force(&ray));
    }

    #[test]
    fn exterior_parity_is_even(dir in unit_vector(), target in unit_vector(), r in 0.0..0.95f64) {
        let bvh = Bvh::build(&common::icosphere(2)).unwrap();
        let origin = Point3::from(dir * 3.0);
        let ray = Ray::towards(origin, Point3::from(target * r) - origin).unwrap();
        prop_assert_eq!(bvh.raycast_all(&ray).len() % 2, 0);
    }

    #[test]
    fn normalization_is_idempotent_and_similar(pts in prop::collection::vec(point(), 3..50)) {
        let cloud = PointCloud::new(pts.clone());
        let Ok(once) = normalize_cloud(&cloud, &[], UpAxis::Y) else { return Ok(()) };
        let twice = normalize_cloud(&once.geometry, &[], UpAxis::Y).unwrap();
        for (a, b) in once.geometry.points.iter().zip(&twice.geometry.points) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        let s = once.record.height;
        for i in 1..pts.len() {
            let before = (pts[i] - pts[0]).norm() / s;
            let after = (once.geometry.points[i] - once.geometry.points[0]).norm();
            prop_assert!((before - after).abs() < 1e-12 * (1.0 + before));
        }
    }

    #[test]
    fn skinning_is_affine_in_translations(
        v in point(),
        w in 0.0..1.0f64,
        t1 in point(), t2 in point(), u1 in point(), u2 in point(),
        axis in unit_vector(), angle in -1.0..1.0f64,
    ) {
        let weights = SkinWeights::new(vec![vec![(0, w), (1, 1.0 - w)]]).unwrap();
        let rot = UnitQuaternion::from_scaled_axis(axis * angle);
        let make = |a: Point3<f64>, b: Point3<f64>| -> Vec<Isometry3<f64>> {
            vec![
                Isometry3::from_parts(Translation3::from(a.coords), rot),
                Isometry3::from_parts(Translation3::from(b.coords), rot.inverse()),
            ]
        };
        let f = |a, b| linear_blend_skinning(&[v], &weights, &make(a, b)).unwrap()[0];
        let mid = |a: Point3<f64>, b: Point3<f64>| Point3::from((a.coords + b.coords) / 2.0);
        let lhs = f(mid(t1, u1), mid(t2, u2));
        let rhs = mid(f(t1, t2), f(u1, u2));
        prop_assert!((lhs - rhs).norm() < 1e-9);

        let ident = linear_blend_skinning(&[v], &weights, &[Isometry3::identity(); 2]).unwrap()[0];
        prop_assert!((ident - v).norm() < 1e-12);
    }
}
