//! Rigid-body helpers.
//!
//! Orientations are roll/pitch/yaw applied as intrinsic z-y'-x'' rotations,
//! i.e. `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Every producer and consumer in
//! this crate uses this convention.

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

pub fn rotation(rpy: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z)
}

pub fn rpy(r: &Rotation3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = r.euler_angles();
    Vector3::new(roll, pitch, yaw)
}

/// Pose from a position and roll/pitch/yaw angles.
pub fn pose(position: &Vector3<f64>, rpy: &Vector3<f64>) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(*position),
        UnitQuaternion::from_rotation_matrix(&rotation(rpy)),
    )
}

/// Angle difference wrapped into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

pub fn transform_point(iso: &Isometry3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    iso.transform_point(&Point3::from(*p)).coords
}

pub fn inverse_transform_point(iso: &Isometry3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    iso.inverse_transform_point(&Point3::from(*p)).coords
}
