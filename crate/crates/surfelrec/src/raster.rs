//! Surfel rasterization: per-pixel depth-sorted ray-disk intersection
//! buffers. The same primitive backs association and rendering.
//!
//! Each surfel is culled by the conservative screen bound of its enclosing
//! sphere, then every pixel in that bound runs the exact ray-disk test, so
//! the output equals the all-pairs oracle by construction.

use crate::camera::ray_through_pixel;
use crate::types::{CameraIntrinsics, Pose, Ray, Surfel, SurfelMap, Vec3};

/// Minimum ray parameter; avoids self-intersection at the camera.
pub const T_NEAR: f64 = 1e-4;

/// One ray-disk intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfelHit {
    pub surfel_id: u64,
    /// Ray parameter, meters (unit direction).
    pub t: f64,
    /// The shading point.
    pub hit_point: Vec3,
    /// Distance from the hit to the surfel center.
    pub center_offset: f64,
}

/// Per-pixel hit lists, sorted ascending by t (ties by surfel id) and
/// truncated to the capacity cap.
#[derive(Debug, Clone)]
pub struct PixelSurfelBuffer {
    pub width: usize,
    pub height: usize,
    pub cap: usize,
    buffers: Vec<Vec<SurfelHit>>,
}

impl PixelSurfelBuffer {
    pub fn hits(&self, v: usize, u: usize) -> &[SurfelHit] {
        &self.buffers[v * self.width + u]
    }

    pub fn pixel(&self, index: usize) -> &[SurfelHit] {
        &self.buffers[index]
    }

    pub fn pixel_count(&self) -> usize {
        self.buffers.len()
    }
}

/// Exact ray-disk intersection; parallel rays miss.
pub fn ray_disk_intersect(ray: &Ray, surfel: &Surfel) -> Option<SurfelHit> {
    let denom = ray.direction.dot(surfel.normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (surfel.position - ray.origin).dot(surfel.normal) / denom;
    if t <= T_NEAR {
        return None;
    }
    let hit_point = ray.at(t);
    let center_offset = (hit_point - surfel.position).norm();
    if center_offset > surfel.radius {
        return None;
    }
    Some(SurfelHit {
        surfel_id: surfel.id,
        t,
        hit_point,
        center_offset,
    })
}

fn sort_truncate(hits: &mut Vec<SurfelHit>, cap: usize) {
    hits.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.surfel_id.cmp(&b.surfel_id))
    });
    hits.truncate(cap);
}

/// Conservative pixel bounds of a surfel's enclosing sphere in the view, or
/// None when nothing in front of the near plane can project to it.
fn screen_bounds(
    surfel: &Surfel,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Option<(usize, usize, usize, usize)> {
    let c = pose.to_camera(surfel.position);
    let r = surfel.radius;
    if c.z + r <= T_NEAR {
        return None;
    }
    if c.z - r <= T_NEAR {
        // Sphere straddles the near plane; scan everything.
        return Some((0, intr.width - 1, 0, intr.height - 1));
    }
    let z_lo = c.z - r;
    let z_hi = c.z + r;
    let ratio_bounds = |lo: f64, hi: f64| -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for num in [lo, hi] {
            for den in [z_lo, z_hi] {
                let v = num / den;
                min = min.min(v);
                max = max.max(v);
            }
        }
        (min, max)
    };
    let (xr_min, xr_max) = ratio_bounds(c.x - r, c.x + r);
    let (yr_min, yr_max) = ratio_bounds(c.y - r, c.y + r);
    let u_min = (intr.cx + intr.fx * xr_min - 1.0).floor().max(0.0) as usize;
    let u_max = (intr.cx + intr.fx * xr_max + 1.0).ceil().min(intr.width as f64 - 1.0) as usize;
    let v_min = (intr.cy + intr.fy * yr_min - 1.0).floor().max(0.0) as usize;
    let v_max = (intr.cy + intr.fy * yr_max + 1.0).ceil().min(intr.height as f64 - 1.0) as usize;
    if u_min > u_max || v_min > v_max {
        return None;
    }
    Some((u_min, u_max, v_min, v_max))
}

/// Rasterizes the map into the given view: for every pixel, the `cap`
/// nearest hits among all surfels whose disk the pixel ray intersects.
pub fn rasterize(
    map: &SurfelMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cap: usize,
) -> PixelSurfelBuffer {
    assert!(cap >= 1, "cap must be >= 1");
    let (w, h) = (intr.width, intr.height);
    let mut buffers: Vec<Vec<SurfelHit>> = vec![Vec::new(); w * h];

    // Precompute pixel rays once; all surfels reuse them.
    let mut rays = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            rays.push(ray_through_pixel(intr, pose, u as f64, v as f64).expect("in-bounds"));
        }
    }

    for surfel in map.iter() {
        let Some((u_min, u_max, v_min, v_max)) = screen_bounds(surfel, intr, pose) else {
            continue;
        };
        for v in v_min..=v_max {
            for u in u_min..=u_max {
                let i = v * w + u;
                if let Some(hit) = ray_disk_intersect(&rays[i], surfel) {
                    buffers[i].push(hit);
                }
            }
        }
    }
    for hits in &mut buffers {
        sort_truncate(hits, cap);
    }
    PixelSurfelBuffer {
        width: w,
        height: h,
        cap,
        buffers,
    }
}

/// All-pairs reference rasterizer: tests every surfel against every pixel
/// ray. Slow and obviously correct; the fast path is checked against it.
pub fn rasterize_bruteforce(
    map: &SurfelMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cap: usize,
) -> PixelSurfelBuffer {
    let (w, h) = (intr.width, intr.height);
    let mut buffers: Vec<Vec<SurfelHit>> = vec![Vec::new(); w * h];
    for v in 0..h {
        for u in 0..w {
            let ray = ray_through_pixel(intr, pose, u as f64, v as f64).expect("in-bounds");
            let hits = &mut buffers[v * w + u];
            for surfel in map.iter() {
                if let Some(hit) = ray_disk_intersect(&ray, surfel) {
                    hits.push(hit);
                }
            }
            sort_truncate(hits, cap);
        }
    }
    PixelSurfelBuffer {
        width: w,
        height: h,
        cap,
        buffers,
    }
}

/// Mean hits/pixel, max hits/pixel and covered-pixel fraction, computed on
/// the capped buffers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterStats {
    pub mean_hits: f64,
    pub max_hits: usize,
    pub coverage: f64,
}

pub fn raster_stats(buffers: &PixelSurfelBuffer) -> RasterStats {
    let pixels = buffers.pixel_count();
    let mut total = 0usize;
    let mut max = 0usize;
    let mut covered = 0usize;
    for i in 0..pixels {
        let n = buffers.pixel(i).len();
        total += n;
        max = max.max(n);
        if n > 0 {
            covered += 1;
        }
    }
    RasterStats {
        mean_hits: total as f64 / pixels as f64,
        max_hits: max,
        coverage: covered as f64 / pixels as f64,
    }
}
