//! Synthetic RGB-D generator with a closed-form ray-tracing oracle.
//!
//! Scenes are unions of axis-aligned rectangles (room shells, boxes, free
//! planes) with procedural albedo and Lambertian shading under one
//! directional light. Every pixel's depth and normal have exact analytic
//! values, which are emitted as f32 sidecars next to the regular dataset
//! so geometric tests can compare against ground truth; hole noise is
//! applied only to the sensor depth channel.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::ray_through_pixel;
use crate::dataset::{frame_stem, write_f32_sidecar, write_frame, write_intrinsics};
use crate::error::Result;
use crate::nn::Tensor;
use crate::types::{CameraIntrinsics, Mat3, Pose, Ray, Vec3};

#[derive(Debug, Clone, Copy)]
pub enum Albedo {
    Solid([f64; 3]),
    /// Checkerboard over the two in-plane axes, `scale` meters per cell.
    Checker { scale: f64, c0: [f64; 3], c1: [f64; 3] },
    /// Linear blend along one world axis between `from` and `to`.
    Gradient { axis: usize, from: f64, to: f64, c0: [f64; 3], c1: [f64; 3] },
}

impl Albedo {
    fn eval(&self, p: Vec3, plane_axis: usize) -> [f64; 3] {
        match *self {
            Albedo::Solid(c) => c,
            Albedo::Checker { scale, c0, c1 } => {
                let coords = [p.x, p.y, p.z];
                let (a, b) = in_plane(plane_axis);
                let i = (coords[a] / scale).floor() as i64 + (coords[b] / scale).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    c0
                } else {
                    c1
                }
            }
            Albedo::Gradient { axis, from, to, c0, c1 } => {
                let coords = [p.x, p.y, p.z];
                let t = ((coords[axis] - from) / (to - from)).clamp(0.0, 1.0);
                [
                    c0[0] + t * (c1[0] - c0[0]),
                    c0[1] + t * (c1[1] - c0[1]),
                    c0[2] + t * (c1[2] - c0[2]),
                ]
            }
        }
    }
}

fn in_plane(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Axis-aligned rectangle: the plane `coords[axis] == coord` clipped to
/// `[lo, hi]` over the two in-plane axes, with normal `sign` along `axis`.
#[derive(Debug, Clone, Copy)]
pub struct RectSurface {
    pub axis: usize,
    pub coord: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub sign: f64,
    pub albedo: Albedo,
}

impl RectSurface {
    pub fn normal(&self) -> Vec3 {
        let mut n = [0.0; 3];
        n[self.axis] = self.sign;
        Vec3::new(n[0], n[1], n[2])
    }

    fn intersect(&self, ray: &Ray) -> Option<f64> {
        let o = [ray.origin.x, ray.origin.y, ray.origin.z];
        let d = [ray.direction.x, ray.direction.y, ray.direction.z];
        if d[self.axis].abs() < 1e-12 {
            return None;
        }
        let t = (self.coord - o[self.axis]) / d[self.axis];
        if t <= 1e-6 {
            return None;
        }
        let (a, b) = in_plane(self.axis);
        let pa = o[a] + t * d[a];
        let pb = o[b] + t * d[b];
        if pa < self.lo[0] || pa > self.hi[0] || pb < self.lo[1] || pb > self.hi[1] {
            return None;
        }
        Some(t)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Trajectory {
    /// Camera fixed at `center`, yawing from `angle_start` over `angle_span`
    /// radians about the world y axis.
    OrbitYaw { center: Vec3, angle_start: f64, angle_span: f64 },
    /// Camera translating from `start` to `end` with a fixed view direction.
    Sweep { start: Vec3, end: Vec3, forward: Vec3 },
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub surfaces: Vec<RectSurface>,
    /// Direction the light travels (will be normalized).
    pub light_dir: Vec3,
    pub ambient: f64,
    pub trajectory: Trajectory,
    /// Target fraction of sensor-depth pixels dropped by hole noise.
    pub hole_prob: f64,
    /// Hole blob radius in pixels.
    pub hole_radius: f64,
}

/// Rotation whose camera z axis is `forward`: x = up x z renormalized,
/// y = z x x; right-handed with determinant +1.
pub fn look_at_rotation(forward: Vec3, up: Vec3) -> Mat3 {
    let z = forward.normalized();
    let mut x = up.cross(z);
    if x.norm() < 1e-9 {
        x = Vec3::new(1.0, 0.0, 0.0).cross(z);
        if x.norm() < 1e-9 {
            x = Vec3::new(0.0, 0.0, 1.0).cross(z);
        }
    }
    let x = x.normalized();
    let y = z.cross(x);
    Mat3::from_cols(x, y, z)
}

impl SceneSpec {
    /// Single fronto-parallel wall at `dist` meters, viewed from the origin.
    pub fn flat_wall(dist: f64) -> SceneSpec {
        SceneSpec {
            surfaces: vec![RectSurface {
                axis: 2,
                coord: dist,
                lo: [-50.0, -50.0],
                hi: [50.0, 50.0],
                sign: -1.0,
                albedo: Albedo::Checker {
                    scale: 0.5,
                    c0: [0.9, 0.3, 0.2],
                    c1: [0.2, 0.4, 0.9],
                },
            }],
            light_dir: Vec3::new(0.3, -0.5, 1.0),
            ambient: 0.4,
            trajectory: Trajectory::Sweep {
                start: Vec3::ZERO,
                end: Vec3::ZERO,
                forward: Vec3::new(0.0, 0.0, 1.0),
            },
            hole_prob: 0.0,
            hole_radius: 2.5,
        }
    }

    /// Closed room (inward shell) with an inner box and a free plane;
    /// camera orbits in place near the center. Used across the test suite
    /// as the reference scene.
    pub fn reference_room() -> SceneSpec {
        let mut surfaces = Vec::new();
        let (hx, hy, hz) = (2.5, 1.5, 2.5);
        let shell = [
            (0, -hx, 1.0, [0.85, 0.3, 0.25], [0.9, 0.85, 0.8]),
            (0, hx, -1.0, [0.25, 0.7, 0.35], [0.9, 0.85, 0.8]),
            (1, -hy, 1.0, [0.45, 0.4, 0.4], [0.55, 0.5, 0.5]),
            (1, hy, -1.0, [0.9, 0.9, 0.85], [0.8, 0.8, 0.85]),
            (2, -hz, 1.0, [0.3, 0.4, 0.8], [0.9, 0.85, 0.8]),
            (2, hz, -1.0, [0.85, 0.7, 0.3], [0.9, 0.85, 0.8]),
        ];
        for (axis, coord, sign, c0, c1) in shell {
            let ranges = match axis {
                0 => ([-hy, -hz], [hy, hz]),
                1 => ([-hx, -hz], [hx, hz]),
                _ => ([-hx, -hy], [hx, hy]),
            };
            surfaces.push(RectSurface {
                axis,
                coord,
                lo: ranges.0,
                hi: ranges.1,
                sign,
                albedo: Albedo::Checker { scale: 0.6, c0, c1 },
            });
        }
        // Inner box, outward normals.
        let c = Vec3::new(1.0, -0.9, 1.2);
        let h = 0.45;
        for axis in 0..3 {
            let (a, b) = in_plane(axis);
            let ca = [c.x, c.y, c.z];
            for sign in [-1.0, 1.0] {
                surfaces.push(RectSurface {
                    axis,
                    coord: ca[axis] + sign * h,
                    lo: [ca[a] - h, ca[b] - h],
                    hi: [ca[a] + h, ca[b] + h],
                    sign,
                    albedo: Albedo::Solid([0.8, 0.5, 0.2]),
                });
            }
        }
        // Free-standing gradient panel.
        surfaces.push(RectSurface {
            axis: 0,
            coord: -1.4,
            lo: [-1.2, -1.8],
            hi: [0.8, -0.4],
            sign: 1.0,
            albedo: Albedo::Gradient {
                axis: 1,
                from: -1.2,
                to: 0.8,
                c0: [0.2, 0.2, 0.7],
                c1: [0.7, 0.9, 0.95],
            },
        });
        SceneSpec {
            surfaces,
            light_dir: Vec3::new(0.4, -1.0, 0.6),
            ambient: 0.35,
            trajectory: Trajectory::OrbitYaw {
                center: Vec3::new(0.0, 0.0, 0.0),
                angle_start: 0.0,
                angle_span: 1.5 * PI,
            },
            hole_prob: 0.05,
            hole_radius: 2.5,
        }
    }

    pub fn pose(&self, index: usize, n_frames: usize) -> Pose {
        let f = if n_frames <= 1 {
            0.0
        } else {
            index as f64 / (n_frames - 1) as f64
        };
        let up = Vec3::new(0.0, 1.0, 0.0);
        match self.trajectory {
            Trajectory::OrbitYaw { center, angle_start, angle_span } => {
                let a = angle_start + f * angle_span;
                let forward = Vec3::new(a.sin(), 0.0, a.cos());
                Pose::new(look_at_rotation(forward, up), center).expect("orthonormal look-at")
            }
            Trajectory::Sweep { start, end, forward } => {
                let p = start + (end - start) * f;
                Pose::new(look_at_rotation(forward, up), p).expect("orthonormal look-at")
            }
        }
    }

    fn trace(&self, ray: &Ray) -> Option<(f64, &RectSurface)> {
        let mut best: Option<(f64, &RectSurface)> = None;
        for s in &self.surfaces {
            if let Some(t) = s.intersect(ray) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, s));
                }
            }
        }
        best
    }

    fn shade(&self, s: &RectSurface, p: Vec3) -> [f64; 3] {
        let l = self.light_dir.normalized();
        let lambert = self.ambient + (1.0 - self.ambient) * s.normal().dot(l * -1.0).max(0.0);
        let a = s.albedo.eval(p, s.axis);
        [
            (a[0] * lambert).clamp(0.0, 1.0),
            (a[1] * lambert).clamp(0.0, 1.0),
            (a[2] * lambert).clamp(0.0, 1.0),
        ]
    }
}

/// One analytically rendered view: RGB [3, H, W], camera-z depth (0 where
/// no surface is hit), and world-space normals (3 per pixel, row-major).
pub fn render_frame_analytic(
    spec: &SceneSpec,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (w, h) = (intr.width, intr.height);
    let mut rgb = Tensor::zeros(&[3, h, w]);
    let mut depth = vec![0.0f64; h * w];
    let mut normals = vec![0.0f64; 3 * h * w];
    for v in 0..h {
        for u in 0..w {
            let ray = ray_through_pixel(intr, pose, u as f64, v as f64)?;
            if let Some((t, s)) = spec.trace(&ray) {
                let p = ray.at(t);
                depth[v * w + u] = pose.to_camera(p).z;
                let n = s.normal();
                normals[3 * (v * w + u)] = n.x;
                normals[3 * (v * w + u) + 1] = n.y;
                normals[3 * (v * w + u) + 2] = n.z;
                let c = spec.shade(s, p);
                for k in 0..3 {
                    rgb.data[k * h * w + v * w + u] = c[k];
                }
            }
        }
    }
    Ok((rgb, depth, normals))
}

/// Punches circular holes into the depth map in place. Blob seeds are
/// Poisson-thinned so the expected dropped fraction is `prob` regardless of
/// blob radius: seed rate = -ln(1 - prob) / blob area.
pub fn apply_hole_noise(depth: &mut [f64], width: usize, height: usize, prob: f64, radius: f64, rng: &mut ChaCha8Rng) {
    if prob <= 0.0 {
        return;
    }
    let blob_area = PI * radius * radius;
    let seed_rate = -(1.0 - prob).ln() / blob_area;
    let r = radius.ceil() as isize;
    let mut stamps = Vec::new();
    for v in 0..height {
        for u in 0..width {
            if rng.gen::<f64>() < seed_rate {
                stamps.push((u as isize, v as isize));
            }
        }
    }
    for (cu, cv) in stamps {
        for dv in -r..=r {
            for du in -r..=r {
                if (du * du + dv * dv) as f64 <= radius * radius {
                    let (u, v) = (cu + du, cv + dv);
                    if u >= 0 && v >= 0 && (u as usize) < width && (v as usize) < height {
                        depth[v as usize * width + u as usize] = 0.0;
                    }
                }
            }
        }
    }
}

/// Writes an `n_frames` dataset to `out_dir`: the standard layout plus
/// per-frame `NNNNNN.exact_depth.bin` / `NNNNNN.normal.bin` sidecars with
/// the noise-free oracle values.
pub fn synth_generate(
    spec: &SceneSpec,
    intr: &CameraIntrinsics,
    n_frames: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| crate::error::Error::io(out_dir.display().to_string(), e))?;
    write_intrinsics(out_dir, intr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_frames {
        let pose = spec.pose(i, n_frames);
        let (rgb, exact_depth, normals) = render_frame_analytic(spec, intr, &pose)?;
        let mut sensor = exact_depth.clone();
        apply_hole_noise(&mut sensor, intr.width, intr.height, spec.hole_prob, spec.hole_radius, &mut rng);
        write_frame(out_dir, i, &rgb, &sensor, &pose)?;
        let frames = out_dir.join("frames");
        write_f32_sidecar(&frames.join(format!("{}.exact_depth.bin", frame_stem(i))), &exact_depth)?;
        write_f32_sidecar(&frames.join(format!("{}.normal.bin", frame_stem(i))), &normals)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_f32_sidecar, DatasetReader};
    use tempfile::tempdir;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(30.0, 30.0, 20.0, 15.0, 40, 30).unwrap()
    }

    #[test]
    fn flat_wall_constant_depth_and_normal() {
        let spec = SceneSpec::flat_wall(2.0);
        let pose = spec.pose(0, 1);
        let (_, depth, normals) = render_frame_analytic(&spec, &intr(), &pose).unwrap();
        for &d in &depth {
            assert!((d - 2.0).abs() < 1e-9, "depth {d}");
        }
        for px in normals.chunks(3) {
            assert_eq!(px, [0.0, 0.0, -1.0]);
        }
    }

    #[test]
    fn room_covers_every_pixel() {
        let spec = SceneSpec::reference_room();
        for i in [0, 7, 19] {
            let pose = spec.pose(i, 20);
            let (rgb, depth, _) = render_frame_analytic(&spec, &intr(), &pose).unwrap();
            assert!(depth.iter().all(|&d| d > 0.1));
            assert!(rgb.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Checker walls: not a constant image.
            let mean = rgb.data.iter().sum::<f64>() / rgb.data.len() as f64;
            assert!(rgb.data.iter().any(|&v| (v - mean).abs() > 0.05));
        }
    }

    #[test]
    fn orbit_poses_are_orthonormal_and_distinct() {
        let spec = SceneSpec::reference_room();
        let p0 = spec.pose(0, 20);
        let p1 = spec.pose(1, 20);
        assert!(p0.validate().is_ok() && p1.validate().is_ok());
        let d00 = p0.rotation.m[2][2];
        let d10 = p1.rotation.m[2][2];
        assert!(d00 != d10);
    }

    #[test]
    fn hole_fraction_matches_probability() {
        let mut depth = vec![1.0f64; 640 * 480];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        apply_hole_noise(&mut depth, 640, 480, 0.1, 2.5, &mut rng);
        let frac = depth.iter().filter(|&&d| d == 0.0).count() as f64 / depth.len() as f64;
        assert!((frac - 0.1).abs() < 0.02, "hole fraction {frac}");
    }

    #[test]
    fn generated_dataset_is_loadable_and_matches_oracle() {
        let dir = tempdir().unwrap();
        let mut spec = SceneSpec::reference_room();
        spec.hole_prob = 0.1;
        let intr = intr();
        synth_generate(&spec, &intr, 3, 9, dir.path()).unwrap();
        let reader = DatasetReader::open(dir.path()).unwrap();
        assert_eq!(reader.count, 3);
        let frame = reader.frame(1).unwrap();
        let exact = read_f32_sidecar(
            &dir.path().join("frames").join("000001.exact_depth.bin"),
            intr.width * intr.height,
        )
        .unwrap();
        let mut holes = 0;
        for i in 0..exact.len() {
            if frame.valid_mask[i] {
                // Sensor depth is quantized to millimeters.
                assert!((frame.sensor_depth[i] - exact[i]).abs() <= 5e-4 + 1e-9);
            } else {
                holes += 1;
            }
        }
        assert!(holes > 0);
    }
}
