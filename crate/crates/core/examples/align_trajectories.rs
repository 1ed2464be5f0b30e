//! Recovers a known similarity transform with Umeyama alignment and reports
//! ATE under each alignment mode.

use kfvo::geometry::{ate_rmse, umeyama_align, Alignment, Rigid3, Sim3, Trajectory};
use nalgebra::{UnitQuaternion, Vector3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = Trajectory::from_entries(
        (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, Rigid3::from_translation(t.cos() * 2.0, t.sin() * 2.0, 0.1 * t))
            })
            .collect(),
    )?;
    let g = Sim3::new(
        1.7,
        UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
        Vector3::new(4.0, -1.0, 0.5),
    );
    let estimate = gt.transformed(&g);

    let recovered = umeyama_align(&estimate.positions(), &gt.positions(), true)?;
    println!("recovered scale {:.9} (true {:.9})", recovered.scale, 1.0 / g.scale);
    for mode in [Alignment::None, Alignment::Se3, Alignment::Sim3] {
        println!("ATE {mode:?}: {:.6} m", ate_rmse(&estimate, &gt, mode)?);
    }
    Ok(())
}
