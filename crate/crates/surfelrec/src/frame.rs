//! One posed RGB-D time step.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::types::{CameraIntrinsics, Pose};

/// RGB image, sensor depth (0 = invalid), validity mask, and camera for one
/// time step. `rgb` is stored channel-major as [3, H, W] with values in
/// [0, 1]; depth is row-major meters.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: Tensor,
    pub sensor_depth: Vec<f64>,
    pub valid_mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub index: usize,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn rgb_at(&self, v: usize, u: usize) -> [f64; 3] {
        let (h, w) = (self.height(), self.width());
        [
            self.rgb.data[v * w + u],
            self.rgb.data[h * w + v * w + u],
            self.rgb.data[2 * h * w + v * w + u],
        ]
    }

    pub fn depth_at(&self, v: usize, u: usize) -> f64 {
        self.sensor_depth[v * self.width() + u]
    }

    pub fn has_valid_depth(&self) -> bool {
        self.valid_mask.iter().any(|&m| m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width() * self.height();
        if self.rgb.shape != vec![3, self.height(), self.width()] {
            return Err(Error::Shape(format!(
                "frame {}: rgb shape {:?} does not match {}x{}",
                self.index,
                self.rgb.shape,
                self.height(),
                self.width()
            )));
        }
        if self.sensor_depth.len() != n || self.valid_mask.len() != n {
            return Err(Error::Shape(format!("frame {}: depth/mask size mismatch", self.index)));
        }
        if self.rgb.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain(format!("frame {}: rgb outside [0, 1]", self.index)));
        }
        for i in 0..n {
            if self.valid_mask[i] != (self.sensor_depth[i] > 0.0) {
                return Err(Error::Domain(format!(
                    "frame {}: valid_mask inconsistent with sensor_depth at pixel {i}",
                    self.index
                )));
            }
        }
        self.intrinsics.validate()?;
        self.pose.validate()
    }
}
