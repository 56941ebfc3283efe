//! Projection, unprojection and pixel-ray construction.
//!
//! Depth everywhere means camera-frame z, matching 16-bit depth-map
//! semantics; pixel (u, v) corresponds to continuous image coordinate
//! (u, v) exactly.

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, Pose, Ray, Vec3};

/// Result of projecting a world point into a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

fn check_in_bounds(intr: &CameraIntrinsics, u: f64, v: f64) -> Result<()> {
    if u < 0.0 || u >= intr.width as f64 || v < 0.0 || v >= intr.height as f64 {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            intr.width, intr.height
        )));
    }
    Ok(())
}

/// World-frame ray through pixel (u, v); origin is the camera center.
pub fn ray_through_pixel(intr: &CameraIntrinsics, pose: &Pose, u: f64, v: f64) -> Result<Ray> {
    check_in_bounds(intr, u, v)?;
    let dir_cam = Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0).normalized();
    Ok(Ray {
        origin: pose.camera_center(),
        direction: pose.rotation.mul_vec(dir_cam),
    })
}

/// World point at camera-z `depth` along the pixel's viewing ray.
pub fn unproject(intr: &CameraIntrinsics, pose: &Pose, u: f64, v: f64, depth: f64) -> Result<Vec3> {
    check_in_bounds(intr, u, v)?;
    if depth <= 0.0 {
        return Err(Error::Domain(format!("depth must be > 0, got {depth}")));
    }
    let p_cam = Vec3::new(
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    );
    Ok(pose.to_world(p_cam))
}

/// Perspective projection of a world point into the given view.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, point: Vec3) -> Projection {
    let p_cam = pose.to_camera(point);
    if p_cam.z <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::Visible {
        u: intr.fx * p_cam.x / p_cam.z + intr.cx,
        v: intr.fy * p_cam.y / p_cam.z + intr.cy,
        depth: p_cam.z,
    }
}

/// Camera-frame z of a world point in the given view.
pub fn camera_depth(pose: &Pose, point: Vec3) -> f64 {
    pose.to_camera(point).z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Mat3;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray_is_camera_forward() {
        let ray = ray_through_pixel(&intr(), &Pose::identity(), 320.0, 240.0).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(ray.origin, Vec3::ZERO);
    }

    #[test]
    fn off_axis_ray_direction() {
        // (420 - 320) / 500 = 0.2
        let ray = ray_through_pixel(&intr(), &Pose::identity(), 420.0, 240.0).unwrap();
        let expect = Vec3::new(0.2, 0.0, 1.0).normalized();
        assert!((ray.direction - expect).norm() < 1e-12);
    }

    #[test]
    fn translation_moves_origin_not_direction() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        let pose = Pose::new(Mat3::identity(), t).unwrap();
        let a = ray_through_pixel(&intr(), &Pose::identity(), 100.0, 50.0).unwrap();
        let b = ray_through_pixel(&intr(), &pose, 100.0, 50.0).unwrap();
        assert!((a.direction - b.direction).norm() < 1e-12);
        assert_eq!(b.origin, t);
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        assert!(ray_through_pixel(&intr(), &Pose::identity(), 640.0, 0.0).is_err());
        assert!(unproject(&intr(), &Pose::identity(), -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn unproject_principal_ray() {
        let p = unproject(&intr(), &Pose::identity(), 320.0, 240.0, 2.0).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_similar_triangles() {
        let p = unproject(&intr(), &Pose::identity(), 420.0, 240.0, 2.0).unwrap();
        assert!((p - Vec3::new(0.4, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_rejects_nonpositive_depth() {
        assert!(unproject(&intr(), &Pose::identity(), 320.0, 240.0, 0.0).is_err());
        assert!(unproject(&intr(), &Pose::identity(), 320.0, 240.0, -1.0).is_err());
    }

    #[test]
    fn project_examples() {
        match project(&intr(), &Pose::identity(), Vec3::new(0.0, 0.0, 2.0)) {
            Projection::Visible { u, v, depth } => {
                assert!((u - 320.0).abs() < 1e-12);
                assert!((v - 240.0).abs() < 1e-12);
                assert!((depth - 2.0).abs() < 1e-12);
            }
            _ => panic!("expected visible"),
        }
        match project(&intr(), &Pose::identity(), Vec3::new(0.4, 0.0, 2.0)) {
            Projection::Visible { u, .. } => assert!((u - 420.0).abs() < 1e-12),
            _ => panic!("expected visible"),
        }
        assert_eq!(
            project(&intr(), &Pose::identity(), Vec3::new(0.0, 0.0, -1.0)),
            Projection::BehindCamera
        );
    }

    #[test]
    fn project_unproject_round_trip() {
        let pose = Pose::new(crate::types::rot_y(0.4), Vec3::new(0.5, 0.1, -0.3)).unwrap();
        let p = unproject(&intr(), &pose, 123.0, 456.0, 3.7).unwrap();
        match project(&intr(), &pose, p) {
            Projection::Visible { u, v, depth } => {
                assert!((u - 123.0).abs() < 1e-9);
                assert!((v - 456.0).abs() < 1e-9);
                assert!((depth - 3.7).abs() < 1e-9);
            }
            _ => panic!("expected visible"),
        }
    }
}
