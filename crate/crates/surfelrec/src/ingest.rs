//! Turning one frame into a local surfel field: depth refinement, normal
//! estimation, radius/weight initialization and per-pixel features.

use crate::camera::{ray_through_pixel, unproject};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::tensor::{avg_pool, conv3x3, image_to_rows, matmul, upsample_nearest, Tensor};
use crate::nn::{dense, NetworkBundle, NodeId, ParamNodes, Tape};
use crate::types::{CameraIntrinsics, Pose, Surfel, SurfelMap, Vec3};

/// Radius/weight constants in the spirit of classical surfel fusion.
pub const RADIUS_SQRT2: f64 = std::f64::consts::SQRT_2;
pub const RADIUS_COS_CLAMP_DEG: f64 = 75.0;
pub const WEIGHT_SIGMA: f64 = 0.6;
/// Diffusion-fill stopping rule: max change below this or the iteration cap.
pub const DIFFUSION_TOL: f64 = 1e-4;
pub const DIFFUSION_MAX_ITERS: usize = 500;

/// Depth refinement strategy. The learned variant's parameters live in the
/// network bundle under `refiner.*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthRefiner {
    /// Pass-through; only valid for frames with fully dense depth.
    Identity,
    /// Iterated masked neighborhood averaging until convergence; valid
    /// pixels are kept exactly.
    DiffusionFill,
    /// Diffusion fill modulated by a small trainable conv stack.
    Learned,
}

/// Fills zero-depth holes by Jacobi iteration of 4-neighbor averages,
/// keeping valid pixels fixed.
pub fn diffusion_fill(depth: &[f64], mask: &[bool], h: usize, w: usize) -> Vec<f64> {
    let valid_sum: f64 = depth.iter().zip(mask).filter(|(_, &m)| m).map(|(&d, _)| d).sum();
    let valid_count = mask.iter().filter(|&&m| m).count();
    let seed = if valid_count > 0 {
        valid_sum / valid_count as f64
    } else {
        1.0
    };
    let mut cur: Vec<f64> = depth
        .iter()
        .zip(mask)
        .map(|(&d, &m)| if m { d } else { seed })
        .collect();
    for _ in 0..DIFFUSION_MAX_ITERS {
        let mut next = cur.clone();
        let mut max_change = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if mask[i] {
                    continue;
                }
                let mut acc = 0.0;
                let mut n = 0.0;
                if y > 0 {
                    acc += cur[i - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    acc += cur[i + w];
                    n += 1.0;
                }
                if x > 0 {
                    acc += cur[i - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    acc += cur[i + 1];
                    n += 1.0;
                }
                let v = acc / n;
                max_change = max_change.max((v - cur[i]).abs());
                next[i] = v;
            }
        }
        cur = next;
        if max_change < DIFFUSION_TOL {
            break;
        }
    }
    cur
}

/// Dense positive depth for the frame under the chosen refiner.
pub fn refine_depth(refiner: DepthRefiner, frame: &Frame, bundle: &NetworkBundle) -> Result<Vec<f64>> {
    if !frame.has_valid_depth() {
        return Err(Error::Domain("no depth support".into()));
    }
    let (h, w) = (frame.height(), frame.width());
    match refiner {
        DepthRefiner::Identity => {
            if frame.valid_mask.iter().any(|&m| !m) {
                return Err(Error::Domain(
                    "identity refiner requires fully dense sensor depth".into(),
                ));
            }
            Ok(frame.sensor_depth.clone())
        }
        DepthRefiner::DiffusionFill => {
            Ok(diffusion_fill(&frame.sensor_depth, &frame.valid_mask, h, w))
        }
        DepthRefiner::Learned => {
            let filled = diffusion_fill(&frame.sensor_depth, &frame.valid_mask, h, w);
            let gate = refiner_gate_plain(bundle, &filled, &frame.valid_mask, h, w);
            Ok(filled
                .iter()
                .zip(gate.data.iter())
                .map(|(&d, &t)| d * (1.0 + 0.5 * t))
                .collect())
        }
    }
}

fn refiner_input(filled: &[f64], mask: &[bool], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(filled);
    data.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    Tensor::from_vec(&[2, h, w], data)
}

fn refiner_gate_plain(bundle: &NetworkBundle, filled: &[f64], mask: &[bool], h: usize, w: usize) -> Tensor {
    let input = refiner_input(filled, mask, h, w);
    let relu = |mut t: Tensor| {
        for v in &mut t.data {
            *v = v.max(0.0);
        }
        t
    };
    let c0 = relu(conv3x3(&input, bundle.param("refiner.conv0.w"), bundle.param("refiner.conv0.b")));
    let c1 = relu(conv3x3(&c0, bundle.param("refiner.conv1.w"), bundle.param("refiner.conv1.b")));
    let mut c2 = conv3x3(&c1, bundle.param("refiner.conv2.w"), bundle.param("refiner.conv2.b"));
    for v in &mut c2.data {
        *v = v.tanh();
    }
    c2
}

/// Tape version of the learned refiner; returns the refined depth node as a
/// [1, H, W] tensor. The diffusion fill itself is treated as constant input.
pub fn refine_depth_learned_tape(
    tape: &mut Tape,
    params: &ParamNodes,
    frame: &Frame,
) -> NodeId {
    let (h, w) = (frame.height(), frame.width());
    let filled = diffusion_fill(&frame.sensor_depth, &frame.valid_mask, h, w);
    let input = tape.leaf(refiner_input(&filled, &frame.valid_mask, h, w));
    let c0 = {
        let c = tape.conv3x3(
            input,
            params.node("refiner.conv0.w"),
            params.node("refiner.conv0.b"),
        );
        tape.relu(c)
    };
    let c1 = {
        let c = tape.conv3x3(
            c0,
            params.node("refiner.conv1.w"),
            params.node("refiner.conv1.b"),
        );
        tape.relu(c)
    };
    let c2 = tape.conv3x3(
        c1,
        params.node("refiner.conv2.w"),
        params.node("refiner.conv2.b"),
    );
    let gate = tape.tanh(c2);
    let filled_leaf = tape.leaf(Tensor::from_vec(&[1, h, w], filled));
    let scaled = tape.mul_elem(gate, filled_leaf);
    tape.add_scaled(filled_leaf, scaled, 0.5)
}

/// Per-pixel unit normals in the world frame, oriented toward the camera.
/// Central differences of unprojected points; one-sided at borders;
/// degenerate pixels fall back to pointing back along the viewing ray.
pub fn estimate_normals(
    depth: &[f64],
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Result<Vec<Vec3>> {
    let (h, w) = (intr.height, intr.width);
    if depth.len() != h * w || depth.iter().any(|&d| d <= 0.0) {
        return Err(Error::Domain("estimate_normals requires dense positive depth".into()));
    }
    let point = |v: usize, u: usize| -> Vec3 {
        unproject(intr, pose, u as f64, v as f64, depth[v * w + u]).expect("in-bounds pixel")
    };
    let cam = pose.camera_center();
    let mut normals = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let p = point(v, u);
            let du = point(v, (u + 1).min(w - 1)) - point(v, u.saturating_sub(1));
            let dv = point((v + 1).min(h - 1), u) - point(v.saturating_sub(1), u);
            let cross = du.cross(dv);
            let n = if cross.norm() < 1e-12 {
                (cam - p).normalized()
            } else {
                let n = cross.normalized();
                if n.dot(cam - p) < 0.0 {
                    -n
                } else {
                    n
                }
            };
            normals.push(n);
        }
    }
    Ok(normals)
}

/// Radius and weight for a new surfel at the given pixel.
///
/// radius = (sqrt(2) * depth / f_mean) / max(|n.v|, cos 75 deg);
/// weight = exp(-gamma^2 / (2 * 0.6^2)) with gamma the radial distance of
/// the pixel from the principal point, normalized to 1 at the farthest
/// image corner.
pub fn init_radius_weight(
    depth: f64,
    normal: Vec3,
    u: f64,
    v: f64,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> (f64, f64) {
    let ray = ray_through_pixel(intr, pose, u, v).expect("pixel in bounds");
    let cos_clamp = RADIUS_COS_CLAMP_DEG.to_radians().cos();
    let cos_angle = normal.dot(ray.direction).abs().max(cos_clamp);
    let radius = RADIUS_SQRT2 * depth / intr.f_mean() / cos_angle;

    let du = u - intr.cx;
    let dv = v - intr.cy;
    let corner = [
        (0.0, 0.0),
        (intr.width as f64 - 1.0, 0.0),
        (0.0, intr.height as f64 - 1.0),
        (intr.width as f64 - 1.0, intr.height as f64 - 1.0),
    ]
    .iter()
    .map(|&(cu, cv)| ((cu - intr.cx).powi(2) + (cv - intr.cy).powi(2)).sqrt())
    .fold(0.0f64, f64::max);
    let gamma = (du * du + dv * dv).sqrt() / corner;
    let weight = (-gamma * gamma / (2.0 * WEIGHT_SIGMA * WEIGHT_SIGMA)).exp();
    (radius, weight)
}

/// Per-pixel surfel features as an [H*W, F] row matrix: conv pyramid at
/// three scales, channel concat, then the learned linear projection.
pub fn extract_features(bundle: &NetworkBundle, rgb: &Tensor) -> Tensor {
    let (h, w) = (rgb.shape[1], rgb.shape[2]);
    let relu = |mut t: Tensor| {
        for v in &mut t.data {
            *v = v.max(0.0);
        }
        t
    };
    let s0 = relu(conv3x3(rgb, bundle.param("extractor.conv0.w"), bundle.param("extractor.conv0.b")));
    let p2 = avg_pool(rgb, 2);
    let s1 = relu(conv3x3(&p2, bundle.param("extractor.conv1.w"), bundle.param("extractor.conv1.b")));
    let s1 = upsample_nearest(&s1, 2, h, w);
    let p4 = avg_pool(rgb, 4);
    let s2 = relu(conv3x3(&p4, bundle.param("extractor.conv2.w"), bundle.param("extractor.conv2.b")));
    let s2 = upsample_nearest(&s2, 4, h, w);

    let total = s0.shape[0] + s1.shape[0] + s2.shape[0];
    let mut stacked = Tensor::zeros(&[total, h, w]);
    let mut at = 0;
    for part in [&s0, &s1, &s2] {
        stacked.data[at..at + part.len()].copy_from_slice(&part.data);
        at += part.len();
    }
    let rows = image_to_rows(&stacked);
    let mut projected = matmul(&rows, bundle.param("projector.w"));
    let bias = bundle.param("projector.b");
    for i in 0..projected.rows() {
        let row = projected.row_mut(i);
        for (j, b) in bias.data.iter().enumerate() {
            row[j] += b;
        }
    }
    projected
}

/// Tape version of [`extract_features`].
pub fn extract_features_tape(tape: &mut Tape, params: &ParamNodes, rgb: Tensor) -> NodeId {
    let (h, w) = (rgb.shape[1], rgb.shape[2]);
    let rgb = tape.leaf(rgb);
    let s0 = {
        let c = tape.conv3x3(rgb, params.node("extractor.conv0.w"), params.node("extractor.conv0.b"));
        tape.relu(c)
    };
    let s1 = {
        let p = tape.avg_pool(rgb, 2);
        let c = tape.conv3x3(p, params.node("extractor.conv1.w"), params.node("extractor.conv1.b"));
        let r = tape.relu(c);
        tape.upsample_nearest(r, 2, h, w)
    };
    let s2 = {
        let p = tape.avg_pool(rgb, 4);
        let c = tape.conv3x3(p, params.node("extractor.conv2.w"), params.node("extractor.conv2.b"));
        let r = tape.relu(c);
        tape.upsample_nearest(r, 4, h, w)
    };
    let stacked = tape.concat_rows(&[s0, s1, s2]);
    let rows = tape.image_to_rows(stacked);
    dense(tape, params, "projector", rows)
}

/// Sampled pixel grid used for local surfel construction: every stride-th
/// pixel in each axis, row-major.
pub fn sampled_pixels(h: usize, w: usize, stride: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..h)
        .step_by(stride)
        .flat_map(move |v| (0..w).step_by(stride).map(move |u| (v, u)))
}

/// Builds the local surfel field for one frame: one surfel per sampled
/// pixel, ids in scan order starting at 0.
pub fn build_local_surfels(
    frame: &Frame,
    refiner: DepthRefiner,
    bundle: &NetworkBundle,
    stride: usize,
) -> Result<SurfelMap> {
    if stride == 0 {
        return Err(Error::Domain("stride must be >= 1".into()));
    }
    let refined = refine_depth(refiner, frame, bundle)?;
    build_local_surfels_with(frame, &refined, bundle, stride, None)
}

/// Shared construction path; `features` overrides the plain extractor when
/// the caller has already computed (possibly tape-tracked) features.
pub fn build_local_surfels_with(
    frame: &Frame,
    refined_depth: &[f64],
    bundle: &NetworkBundle,
    stride: usize,
    features: Option<&Tensor>,
) -> Result<SurfelMap> {
    let intr = &frame.intrinsics;
    let (h, w) = (frame.height(), frame.width());
    let normals = estimate_normals(refined_depth, intr, &frame.pose)?;
    let computed;
    let feats = match features {
        Some(f) => f,
        None => {
            computed = extract_features(bundle, &frame.rgb);
            &computed
        }
    };
    let mut map = SurfelMap::new(bundle.config.feature_dim);
    for (v, u) in sampled_pixels(h, w, stride) {
        let i = v * w + u;
        let depth = refined_depth[i];
        let position = unproject(intr, &frame.pose, u as f64, v as f64, depth)?;
        let normal = normals[i];
        let (radius, weight) =
            init_radius_weight(depth, normal, u as f64, v as f64, intr, &frame.pose);
        map.insert(Surfel {
            id: 0,
            position,
            normal,
            radius,
            weight,
            feature: feats.row(i).to_vec(),
        });
    }
    map.validate()?;
    Ok(map)
}
