//! Domain types shared by all modules: surfels, the surfel map, camera
//! intrinsics, poses and rays, plus the small vector/matrix math they need.

use crate::error::{Error, Result};
use std::collections::HashMap;

pub const UNIT_TOL: f64 = 1e-6;

/// 3-component column vector, f64.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self * (1.0 / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub fn identity() -> Mat3 {
        Mat3 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_rows(r0: [f64; 3], r1: [f64; 3], r2: [f64; 3]) -> Mat3 {
        Mat3 { m: [r0, r1, r2] }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            m: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    pub fn transpose(self) -> Mat3 {
        let m = self.m;
        Mat3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn det(self) -> f64 {
        let m = self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(self, v: Vec3) -> Vec3 {
        let m = self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Mat3 { m: out }
    }
}

/// One surface element: an oriented disk with a confidence weight and a
/// learned feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Surfel {
    pub id: u64,
    /// World-frame position, meters.
    pub position: Vec3,
    /// Unit normal, world frame.
    pub normal: Vec3,
    /// Disk radius, meters, > 0.
    pub radius: f64,
    /// Confidence, > 0.
    pub weight: f64,
    pub feature: Vec<f64>,
}

impl Surfel {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !self.position.is_finite()
            || !self.normal.is_finite()
            || !self.radius.is_finite()
            || !self.weight.is_finite()
            || self.feature.iter().any(|f| !f.is_finite())
        {
            return Err(Error::Domain(format!("surfel {} has non-finite field", self.id)));
        }
        if (self.normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!(
                "surfel {} normal is not unit length (|n| = {})",
                self.id,
                self.normal.norm()
            )));
        }
        if self.radius <= 0.0 {
            return Err(Error::Domain(format!("surfel {} radius <= 0", self.id)));
        }
        if self.weight <= 0.0 {
            return Err(Error::Domain(format!("surfel {} weight <= 0", self.id)));
        }
        if self.feature.len() != feature_dim {
            return Err(Error::Shape(format!(
                "surfel {} feature length {} != map feature dim {}",
                self.id,
                self.feature.len(),
                feature_dim
            )));
        }
        Ok(())
    }
}

/// Growable collection of surfels with stable ids; the radiance-field state.
#[derive(Debug, Clone)]
pub struct SurfelMap {
    surfels: Vec<Surfel>,
    by_id: HashMap<u64, usize>,
    pub feature_dim: usize,
    next_id: u64,
}

impl SurfelMap {
    pub fn new(feature_dim: usize) -> SurfelMap {
        SurfelMap {
            surfels: Vec::new(),
            by_id: HashMap::new(),
            feature_dim,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    /// Inserts a surfel, assigning it a fresh id. Returns the id.
    pub fn insert(&mut self, mut surfel: Surfel) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        surfel.id = id;
        self.by_id.insert(id, self.surfels.len());
        self.surfels.push(surfel);
        id
    }

    /// Inserts a surfel keeping its id; used by deserialization.
    pub fn insert_with_id(&mut self, surfel: Surfel) -> Result<()> {
        if self.by_id.contains_key(&surfel.id) {
            return Err(Error::Domain(format!("duplicate surfel id {}", surfel.id)));
        }
        self.next_id = self.next_id.max(surfel.id + 1);
        self.by_id.insert(surfel.id, self.surfels.len());
        self.surfels.push(surfel);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&Surfel> {
        self.by_id.get(&id).map(|&i| &self.surfels[i])
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Surfel> {
        self.by_id.get(&id).copied().map(move |i| &mut self.surfels[i])
    }

    /// Surfels in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Surfel> {
        self.surfels.iter()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn at(&self, index: usize) -> &Surfel {
        &self.surfels[index]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Surfel {
        &mut self.surfels[index]
    }

    pub fn total_weight(&self) -> f64 {
        self.surfels.iter().map(|s| s.weight).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.surfels {
            s.validate(self.feature_dim)?;
        }
        Ok(())
    }
}

/// Pinhole camera intrinsics; pixel (u, v) maps to continuous coordinate
/// (u, v) exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Domain("focal lengths must be > 0".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64
        {
            return Err(Error::Domain("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn f_mean(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::ZERO,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Pose> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose().mul_mat(self.rotation);
        let id = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                if (rtr.m[i][j] - id.m[i][j]).abs() > UNIT_TOL {
                    return Err(Error::Domain("rotation is not orthonormal".into()));
                }
            }
        }
        if (self.rotation.det() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain("rotation determinant is not +1".into()));
        }
        if !self.translation.is_finite() {
            return Err(Error::Domain("translation is not finite".into()));
        }
        Ok(())
    }

    /// World point of a camera-frame point.
    pub fn to_world(&self, p_cam: Vec3) -> Vec3 {
        self.rotation.mul_vec(p_cam) + self.translation
    }

    /// Camera-frame point of a world point.
    pub fn to_camera(&self, p_world: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p_world - self.translation)
    }

    /// self then other, as camera-to-world maps: (other ∘ self).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: other.rotation.mul_mat(self.rotation),
            translation: other.rotation.mul_vec(self.translation) + other.translation,
        }
    }

    pub fn camera_center(&self) -> Vec3 {
        self.translation
    }
}

/// Ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Rotation about +y, used across test modules.
#[cfg(test)]
pub(crate) fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::from_rows([c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c])
}
