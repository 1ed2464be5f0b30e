use kfvo::geometry::{
    ate_rmse, umeyama_align, Alignment, GeometryError, Rigid3, Sim3, Trajectory,
};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-10.0..10.0f64).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    prop::array::uniform3(-3.0..3.0f64).prop_map(|w| UnitQuaternion::from_scaled_axis(Vector3::from(w)))
}

fn sim3() -> impl Strategy<Value = Sim3> {
    (0.1..10.0f64, rotation(), vec3()).prop_map(|(s, r, t)| Sim3::new(s, r, t))
}

fn trajectory(positions: &[Vector3<f64>]) -> Trajectory {
    Trajectory::from_entries(
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 * 0.1, Rigid3::from_translation(p.x, p.y, p.z)))
            .collect(),
    )
    .unwrap()
}

/// Three or more points with clearly non-collinear spread.
fn spread_points() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(), 3..30).prop_filter("non-degenerate", |p| {
        !kfvo::geometry::is_degenerate(p) && {
            let c = p.iter().sum::<Vector3<f64>>() / p.len() as f64;
            let cov = p
                .iter()
                .map(|x| (x - c) * (x - c).transpose())
                .sum::<nalgebra::Matrix3<f64>>();
            let ev = cov.symmetric_eigenvalues();
            let mut ev: Vec<f64> = ev.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev[1] > 1e-3 * ev[2]
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn umeyama_recovers_similarity(points in spread_points(), g in sim3()) {
        let target: Vec<_> = points.iter().map(|p| g.transform_point(p)).collect();
        let est = umeyama_align(&points, &target, true).unwrap();
        prop_assert!((est.scale - g.scale).abs() < 1e-8 * g.scale.max(1.0));
        prop_assert!(est.rotation.angle_to(&g.rotation) < 1e-7);
        prop_assert!((est.translation - g.translation).norm() < 1e-7);
    }

    #[test]
    fn sim3_ate_is_invariant_to_estimate_transform(
        gt in spread_points(),
        noise in prop::collection::vec(vec3(), 30),
        g in sim3(),
    ) {
        let est: Vec<_> = gt.iter().zip(&noise).map(|(p, n)| p + 0.01 * n).collect();
        let moved: Vec<_> = est.iter().map(|p| g.transform_point(p)).collect();
        let a = ate_rmse(&trajectory(&est), &trajectory(&gt), Alignment::Sim3).unwrap();
        let b = ate_rmse(&trajectory(&moved), &trajectory(&gt), Alignment::Sim3).unwrap();
        prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn ate_is_non_negative_and_zero_on_identity(
        gt in spread_points(),
        noise in prop::collection::vec(vec3(), 30),
        mode in prop_oneof![Just(Alignment::None), Just(Alignment::Se3), Just(Alignment::Sim3)],
    ) {
        let est: Vec<_> = gt.iter().zip(&noise).map(|(p, n)| p + 0.1 * n).collect();
        prop_assert!(ate_rmse(&trajectory(&est), &trajectory(&gt), mode).unwrap() >= 0.0);
        prop_assert!(ate_rmse(&trajectory(&gt), &trajectory(&gt), mode).unwrap() < 1e-9);
    }

    #[test]
    fn rigid_inverse_composes_to_identity(w in prop::array::uniform3(-3.0..3.0f64), t in vec3()) {
        let p = Rigid3::from_rotation_vector(Vector3::from(w), t);
        prop_assert!(p.compose(&p.inverse()).max_abs_diff(&Rigid3::identity()) < 1e-12);
    }
}

#[test]
fn unit_offset_without_alignment_is_one() {
    let gt: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
    let est: Vec<_> = gt.iter().map(|p| p + Vector3::x()).collect();
    let ate = ate_rmse(&trajectory(&est), &trajectory(&gt), Alignment::None).unwrap();
    assert!((ate - 1.0).abs() < 1e-12);
}

#[test]
fn reflection_is_never_returned() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let src: Vec<_> = (0..6)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mirrored: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let g = umeyama_align(&src, &mirrored, true).unwrap();
        assert!((g.rotation.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn collinear_points_are_rejected() {
    let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
    assert!(matches!(
        umeyama_align(&line, &line, true),
        Err(GeometryError::DegenerateInput(_))
    ));
}

#[test]
fn long_composition_chain_stays_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pose = Rigid3::identity();
    for _ in 0..1_000_000 {
        let w = Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
        pose = pose.compose(&Rigid3::from_rotation_vector(w, Vector3::new(0.01, 0.0, 0.0)));
    }
    assert!((pose.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
    let r = pose.rotation_matrix();
    assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
}
