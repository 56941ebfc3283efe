//! Map fusion: associate each new per-frame surfel with at most one
//! existing map surfel via rasterized candidates, then merge geometry by
//! weighted averaging and features by a learned gated update (or a plain
//! weighted sum). Unmatched surfels are inserted with fresh ids.

use crate::camera::{camera_depth, project, Projection};
use crate::error::{Error, Result};
use crate::nn::{tensor, NetworkBundle, NodeId, ParamNodes, Tape, Tensor};
use crate::raster::{rasterize, PixelSurfelBuffer};
use crate::types::{CameraIntrinsics, Pose, Surfel, SurfelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionScheme {
    Gru,
    WeightedSum,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Max camera-z distance between a surfel and its merge candidate, meters.
    pub delta_depth: f64,
    /// Per-pixel candidate cap used when rasterizing the map for association.
    pub k_candidates: usize,
    /// Max angle between normals of merge partners, degrees.
    pub normal_angle_max_deg: f64,
    pub scheme: FusionScheme,
}

impl Default for FusionConfig {
    fn default() -> FusionConfig {
        FusionConfig {
            delta_depth: 0.1,
            k_candidates: 8,
            normal_angle_max_deg: 30.0,
            scheme: FusionScheme::Gru,
        }
    }
}

/// Outcome of integrating one frame of surfels into the map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionReport {
    pub merged: usize,
    pub inserted: usize,
    /// Merges whose averaged normal degenerated; the map normal was kept.
    pub degenerate_normals: usize,
}

/// Finds the map surfel the local surfel should merge into, scanning the
/// pixel's candidates near-to-far and taking the first that passes the
/// depth and normal-angle gates. Returns the map index.
pub fn associate(
    local: &Surfel,
    map: &SurfelMap,
    buffers: &PixelSurfelBuffer,
    intr: &CameraIntrinsics,
    pose: &Pose,
    config: &FusionConfig,
) -> Option<usize> {
    let Projection::Visible { u, v, depth } = project(intr, pose, local.position) else {
        return None;
    };
    let (ui, vi) = (u.round(), v.round());
    if ui < 0.0 || vi < 0.0 || ui >= intr.width as f64 || vi >= intr.height as f64 {
        return None;
    }
    let cos_max = config.normal_angle_max_deg.to_radians().cos();
    for hit in buffers.hits(vi as usize, ui as usize) {
        let idx = map.index_of(hit.surfel_id)?;
        let cand = map.at(idx);
        if (camera_depth(pose, cand.position) - depth).abs() > config.delta_depth {
            continue;
        }
        if local.normal.dot(cand.normal) < cos_max {
            continue;
        }
        return Some(idx);
    }
    None
}

/// Merges local geometry into the map surfel in place: weight-weighted
/// average of position, normal and radius; weights add. A degenerate
/// averaged normal keeps the map normal and is reported via the return.
pub fn merge_geometry(global: &mut Surfel, local: &Surfel) -> bool {
    let (wl, wg) = (local.weight, global.weight);
    let wsum = wl + wg;
    global.position = (local.position * wl + global.position * wg) * (1.0 / wsum);
    global.radius = (wl * local.radius + wg * global.radius) / wsum;
    let n_avg = local.normal * wl + global.normal * wg;
    let degenerate = n_avg.norm() < 1e-6;
    if !degenerate {
        global.normal = n_avg.normalized();
    }
    global.weight = wsum;
    degenerate
}

/// Gated feature update over row-aligned batches: `f_local` and `f_global`
/// are [N, F]; returns the fused [N, F].
pub fn gru_fuse_rows(
    tape: &mut Tape,
    params: &ParamNodes,
    f_local: NodeId,
    f_global: NodeId,
) -> NodeId {
    let cat = tape.concat_cols(&[f_local, f_global]);
    let z = crate::nn::dense(tape, params, "gru.mz", cat);
    let z = tape.sigmoid(z);
    let r = crate::nn::dense(tape, params, "gru.mr", cat);
    let r = tape.sigmoid(r);
    let rg = tape.mul_elem(r, f_global);
    let cat_t = tape.concat_cols(&[rg, f_local]);
    let f_tilde = crate::nn::dense(tape, params, "gru.mt", cat_t);
    let f_tilde = tape.tanh(f_tilde);
    // f' = (1 - z) * f_global + z * f_tilde
    let diff = tape.sub(f_tilde, f_global);
    let gated = tape.mul_elem(z, diff);
    tape.add(f_global, gated)
}

fn dense_plain(bundle: &NetworkBundle, name: &str, x: &Tensor) -> Tensor {
    let mut y = tensor::matmul(x, bundle.param(&format!("{name}.w")));
    let b = bundle.param(&format!("{name}.b"));
    for i in 0..y.rows() {
        for (j, bj) in b.data.iter().enumerate() {
            y.row_mut(i)[j] += bj;
        }
    }
    y
}

/// Tape-free feature merge for the online (non-training) path. Matches
/// `gru_fuse_rows` exactly: same kernels, same evaluation order.
pub fn merge_feature(
    bundle: &NetworkBundle,
    scheme: FusionScheme,
    local: &Surfel,
    global: &Surfel,
) -> Vec<f64> {
    match scheme {
        FusionScheme::WeightedSum => {
            let (wl, wg) = (local.weight, global.weight);
            let wsum = wl + wg;
            local
                .feature
                .iter()
                .zip(&global.feature)
                .map(|(fl, fg)| (wl * fl + wg * fg) / wsum)
                .collect()
        }
        FusionScheme::Gru => {
            let f = local.feature.len();
            let mut cat = Tensor::zeros(&[1, 2 * f]);
            cat.data[..f].copy_from_slice(&local.feature);
            cat.data[f..].copy_from_slice(&global.feature);
            let z = dense_plain(bundle, "gru.mz", &cat);
            let r = dense_plain(bundle, "gru.mr", &cat);
            let mut cat_t = Tensor::zeros(&[1, 2 * f]);
            for j in 0..f {
                cat_t.data[j] = sigmoid(r.data[j]) * global.feature[j];
            }
            cat_t.data[f..].copy_from_slice(&local.feature);
            let f_tilde = dense_plain(bundle, "gru.mt", &cat_t);
            (0..f)
                .map(|j| {
                    let zj = sigmoid(z.data[j]);
                    let fg = global.feature[j];
                    fg + zj * (f_tilde.data[j].tanh() - fg)
                })
                .collect()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Integrates one frame of local surfels into the map in scan order:
/// rasterize the current map once, associate each local surfel, merge or
/// insert. Merge candidates are filtered against the evolving map state.
pub fn integrate_frame(
    map: &mut SurfelMap,
    locals: &[Surfel],
    intr: &CameraIntrinsics,
    pose: &Pose,
    bundle: &NetworkBundle,
    config: &FusionConfig,
) -> Result<FusionReport> {
    for s in locals {
        s.validate(map.feature_dim)?;
    }
    let buffers = rasterize(map, intr, pose, config.k_candidates);
    let mut report = FusionReport::default();
    for local in locals {
        match associate(local, map, &buffers, intr, pose, config) {
            Some(idx) => {
                let fused = merge_feature(bundle, config.scheme, local, map.at(idx));
                let global = map.at_mut(idx);
                if merge_geometry(global, local) {
                    report.degenerate_normals += 1;
                }
                global.feature = fused;
                report.merged += 1;
            }
            None => {
                map.insert(local.clone());
                report.inserted += 1;
            }
        }
    }
    if map.total_weight().is_finite() {
        Ok(report)
    } else {
        Err(Error::Numeric("non-finite surfel weight after fusion".into()))
    }
}

/// Per-frame merge plan for the differentiable path: geometry and
/// associations are resolved eagerly; feature merges are grouped into
/// passes with unique targets so each pass is one batched gated update.
#[derive(Debug, Clone)]
pub struct FramePlan {
    /// (map_index, local_index, local_blend) merge triples grouped into
    /// unique-target passes; `local_blend` is the local surfel's weight share
    /// at merge time, as used by the weighted-sum scheme.
    pub passes: Vec<Vec<(usize, usize, f64)>>,
    /// Local indices inserted as new surfels, in scan order.
    pub inserted_locals: Vec<usize>,
    pub report: FusionReport,
}

/// Applies a frame to the map like `integrate_frame` but leaves features
/// untouched, returning the plan needed to replay the feature merges on a
/// tape. Geometry, weights and insertions are updated in place.
pub fn plan_frame(
    map: &mut SurfelMap,
    locals: &[Surfel],
    intr: &CameraIntrinsics,
    pose: &Pose,
    config: &FusionConfig,
) -> Result<FramePlan> {
    for s in locals {
        s.validate(map.feature_dim)?;
    }
    let buffers = rasterize(map, intr, pose, config.k_candidates);
    let mut passes: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut occurrences: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut inserted_locals = Vec::new();
    let mut report = FusionReport::default();
    for (li, local) in locals.iter().enumerate() {
        match associate(local, map, &buffers, intr, pose, config) {
            Some(idx) => {
                let pass = *occurrences
                    .entry(idx)
                    .and_modify(|c| *c += 1)
                    .or_insert(0);
                if passes.len() <= pass {
                    passes.push(Vec::new());
                }
                let blend = local.weight / (local.weight + map.at(idx).weight);
                passes[pass].push((idx, li, blend));
                if merge_geometry(map.at_mut(idx), local) {
                    report.degenerate_normals += 1;
                }
                report.merged += 1;
            }
            None => {
                map.insert(local.clone());
                inserted_locals.push(li);
                report.inserted += 1;
            }
        }
    }
    if !map.total_weight().is_finite() {
        return Err(Error::Numeric("non-finite surfel weight after fusion".into()));
    }
    Ok(FramePlan {
        passes,
        inserted_locals,
        report,
    })
}

/// Replays a frame plan's feature merges on the tape. `global_features` is
/// the [N_map_before, F] node, `local_features` [N_local, F]; returns the
/// grown [N_map_after, F] node whose row order matches the map after
/// `plan_frame`.
pub fn apply_plan_features(
    tape: &mut Tape,
    params: &ParamNodes,
    scheme: FusionScheme,
    plan: &FramePlan,
    global_features: NodeId,
    local_features: NodeId,
) -> NodeId {
    let feature_dim = tape.value(global_features).shape[1];
    let mut current = global_features;
    for pass in &plan.passes {
        let map_idx: Vec<usize> = pass.iter().map(|&(g, _, _)| g).collect();
        let loc_idx: Vec<usize> = pass.iter().map(|&(_, l, _)| l).collect();
        let fg = tape.gather_rows(current, &map_idx);
        let fl = tape.gather_rows(local_features, &loc_idx);
        let fused = match scheme {
            FusionScheme::Gru => gru_fuse_rows(tape, params, fl, fg),
            FusionScheme::WeightedSum => {
                // Per-row constant blend factors recorded at planning time.
                let mut al = Tensor::zeros(&[pass.len(), feature_dim]);
                let mut ag = Tensor::zeros(&[pass.len(), feature_dim]);
                for (row, &(_, _, blend)) in pass.iter().enumerate() {
                    al.row_mut(row).fill(blend);
                    ag.row_mut(row).fill(1.0 - blend);
                }
                let al = tape.leaf(al);
                let ag = tape.leaf(ag);
                let wl = tape.mul_elem(al, fl);
                let wg = tape.mul_elem(ag, fg);
                tape.add(wl, wg)
            }
        };
        current = tape.scatter_rows(current, fused, &map_idx);
    }
    if plan.inserted_locals.is_empty() {
        current
    } else {
        let new_rows = tape.gather_rows(local_features, &plan.inserted_locals);
        tape.concat_rows(&[current, new_rows])
    }
}
