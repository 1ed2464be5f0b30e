use kfvo::geometry::{Rigid3, Trajectory};
use kfvo::trajectory_io::{
    parse_kitti_str, parse_manifest, parse_tum_str, read_trajectory, write_kitti, write_tum,
    write_trajectory_file, PoseFormat, TrajectoryIoError,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Rigid3> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-100.0..100.0f64))
        .prop_map(|(w, t)| Rigid3::from_rotation_vector(Vector3::from(w), Vector3::from(t)))
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(pose(), 0..40).prop_map(|poses| {
        Trajectory::from_entries(
            poses
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i as f64, p))
                .collect(),
        )
        .unwrap()
    })
}

/// Largest difference over the components a TUM line stores, with the
/// quaternion sign ambiguity removed.
fn tum_component_diff(a: &Rigid3, b: &Rigid3) -> f64 {
    let (qa, qb) = (a.quaternion_xyzw(), b.quaternion_xyzw());
    let sign = if qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let dq = qa.iter().zip(&qb).map(|(x, y)| (x - sign * y).abs()).fold(0.0, f64::max);
    dq.max((a.translation - b.translation).abs().max())
}

fn assert_close(
    a: &Trajectory,
    b: &Trajectory,
    diff: fn(&Rigid3, &Rigid3) -> f64,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for ((ta, pa), (tb, pb)) in a.iter().zip(b.iter()) {
        prop_assert!((ta - tb).abs() <= 1e-9);
        prop_assert!(diff(pa, pb) <= 1e-9, "{:?} vs {:?}", pa, pb);
    }
    Ok(())
}

proptest! {
    #[test]
    fn tum_round_trip(t in trajectory()) {
        assert_close(&parse_tum_str(&write_tum(&t)).unwrap(), &t, tum_component_diff)?;
    }

    #[test]
    fn kitti_round_trip(t in trajectory()) {
        // KITTI stores the rotation matrix itself.
        assert_close(&parse_kitti_str(&write_kitti(&t)).unwrap(), &t, Rigid3::max_abs_diff)?;
    }

    #[test]
    fn parsing_is_total(text in "[0-9eE+. \\-#a-z\n]{0,200}") {
        for result in [parse_tum_str(&text), parse_kitti_str(&text)] {
            match result {
                Ok(_) => {}
                Err(TrajectoryIoError::Parse { line, .. }) => prop_assert!(line >= 1),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}

#[test]
fn empty_trajectory_writes_nothing() {
    assert_eq!(write_tum(&Trajectory::new()), "");
    assert_eq!(write_kitti(&Trajectory::new()), "");
    assert!(parse_tum_str("# only a comment\n\n").unwrap().is_empty());
}

#[test]
fn file_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trajectory::from_entries(
        (0..5)
            .map(|i| (i as f64, Rigid3::from_translation(i as f64, -0.5, 2.0)))
            .collect(),
    )
    .unwrap();
    for format in [PoseFormat::Tum, PoseFormat::Kitti] {
        let path = dir.path().join("t.txt");
        write_trajectory_file(&path, &t, format).unwrap();
        let back = read_trajectory(&path, format).unwrap();
        assert_eq!(back.len(), 5);
        assert!(back.entries()[4].1.max_abs_diff(&t.entries()[4].1) < 1e-9);
    }
}

#[test]
fn slightly_unnormalized_quaternion_is_accepted_and_bad_one_rejected() {
    assert!(parse_tum_str("0 1 2 3 0 0 0 1.0004\n").is_ok());
    assert!(matches!(
        parse_tum_str("0 1 2 3 0 0 0 1.5\n"),
        Err(TrajectoryIoError::Parse { line: 1, .. })
    ));
}

#[test]
fn manifest_rejects_duplicates() {
    assert!(parse_manifest(r#"{"name":"s","frames":["a","b"]}"#).is_ok());
    assert!(parse_manifest(r#"{"name":"s","frames":["a","a"]}"#).is_err());
    assert!(parse_manifest(r#"{"name":"s","frames":[]}"#).is_err());
}
