//! Differentiable rendering of a surfel map: per-pixel hit lists are shaded
//! by small dense heads on interpolated surfel features, then alpha
//! composited front to back. A deliberately naive dense ray-marching
//! renderer with identical shading serves as the reference baseline.

use crate::camera::ray_through_pixel;
use crate::error::Result;
use crate::nn::{dense, NetConfig, NetworkBundle, NodeId, ParamNodes, Tape, Tensor};
use crate::raster::{ray_disk_intersect, rasterize, PixelSurfelBuffer, SurfelHit};
use crate::types::{CameraIntrinsics, Pose, Ray, SurfelMap};

#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    /// Per-pixel hit cap for rendering.
    pub max_hits: usize,
    /// Path length assigned to the last hit of a pixel, meters.
    pub last_delta: f64,
    pub background: [f64; 3],
    /// Square tile edge used to bound tape memory during full-image renders.
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> RenderConfig {
        RenderConfig {
            max_hits: 80,
            last_delta: 0.01,
            background: [0.0, 0.0, 0.0],
            tile_size: 32,
        }
    }
}

/// Sinusoidal embedding of each scalar: the raw value followed by
/// sin/cos pairs at octave frequencies, `bands` octaves.
pub fn embed_scalars(values: &[f64], bands: usize, include_input: bool, out: &mut Vec<f64>) {
    for &x in values {
        if include_input {
            out.push(x);
        }
        for k in 0..bands {
            let a = (1u64 << k) as f64 * std::f64::consts::PI * x;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
}

/// Flat hit batch for a set of pixels: `offsets` has one entry per pixel
/// plus a terminator, indexing into `hits`/`deltas`/`rays`.
pub struct PixelBatch {
    pub hits: Vec<SurfelHit>,
    pub rays: Vec<Ray>,
    pub offsets: Vec<usize>,
    pub deltas: Vec<f64>,
}

impl PixelBatch {
    pub fn pixel_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Builds a batch from rasterized buffers: deltas are inter-hit spacings
/// with `last_delta` closing each pixel.
pub fn batch_from_buffers(
    buffers: &PixelSurfelBuffer,
    intr: &CameraIntrinsics,
    pose: &Pose,
    pixels: &[(usize, usize)],
    config: &RenderConfig,
) -> PixelBatch {
    let mut batch = PixelBatch {
        hits: Vec::new(),
        rays: Vec::new(),
        offsets: vec![0],
        deltas: Vec::new(),
    };
    for &(u, v) in pixels {
        let ray = ray_through_pixel(intr, pose, u as f64, v as f64).expect("in-bounds pixel");
        let hits = buffers.hits(v, u);
        let n = hits.len().min(config.max_hits);
        for k in 0..n {
            batch.hits.push(hits[k]);
            batch.rays.push(ray);
            batch.deltas.push(if k + 1 < n {
                hits[k + 1].t - hits[k].t
            } else {
                config.last_delta
            });
        }
        batch.offsets.push(batch.hits.len());
    }
    batch
}

/// Shades and composites a hit batch on the tape. `features` is the
/// [N_map, F] feature node row-aligned with `map`; the result is [P, 3]
/// pixel colors. Geometry (positions, normals, radii, weights, rays) enters
/// as constants; gradients flow through features and network parameters.
pub fn shade_batch(
    tape: &mut Tape,
    params: &ParamNodes,
    net: &NetConfig,
    config: &RenderConfig,
    map: &SurfelMap,
    features: NodeId,
    batch: &PixelBatch,
) -> NodeId {
    let h = batch.hits.len();
    let bands = net.emb_bands;
    let inc = net.emb_include_input;
    let scalar_len = net.emb_scalar_len();

    let mut feat_idx = Vec::with_capacity(h);
    let mut emb_cond = Vec::with_capacity(h * 10 * scalar_len);
    let mut emb_pos = Vec::with_capacity(h * 3 * scalar_len);
    let mut emb_dir = Vec::with_capacity(h * 3 * scalar_len);
    let mut scales = Vec::with_capacity(h);
    for (hit, ray) in batch.hits.iter().zip(&batch.rays) {
        let idx = map.index_of(hit.surfel_id).expect("hit refers to map surfel");
        let s = map.at(idx);
        feat_idx.push(idx);
        scales.push((s.radius - hit.center_offset) / s.radius);
        let d = ray.direction;
        let n = s.normal;
        let dn = d - n;
        embed_scalars(&[d.x, d.y, d.z], bands, inc, &mut emb_cond);
        embed_scalars(&[d.x, d.y, d.z], bands, inc, &mut emb_dir);
        embed_scalars(&[s.weight], bands, inc, &mut emb_cond);
        embed_scalars(&[n.x, n.y, n.z], bands, inc, &mut emb_cond);
        embed_scalars(&[dn.x, dn.y, dn.z], bands, inc, &mut emb_cond);
        let x = hit.hit_point;
        embed_scalars(&[x.x, x.y, x.z], bands, inc, &mut emb_pos);
    }
    let emb_cond = tape.leaf(Tensor::from_vec(&[h, 10 * scalar_len], emb_cond));
    let emb_pos = tape.leaf(Tensor::from_vec(&[h, 3 * scalar_len], emb_pos));
    let emb_dir = tape.leaf(Tensor::from_vec(&[h, 3 * scalar_len], emb_dir));
    let feat_rows = tape.gather_rows(features, &feat_idx);

    let ff_in = tape.concat_cols(&[feat_rows, emb_cond]);
    let hdd = dense(tape, params, "ff.l0", ff_in);
    let hdd = tape.relu(hdd);
    let feat = dense(tape, params, "ff.l1", hdd);
    let feat = tape.scale_rows(feat, &scales);

    let sig_in = tape.concat_cols(&[feat, emb_pos]);
    let sigma = dense(tape, params, "fsigma", sig_in);
    let sigma = tape.relu(sigma);

    let rgb_in = tape.concat_cols(&[feat, emb_dir]);
    let mut x = rgb_in;
    for l in 0..3 {
        x = dense(tape, params, &format!("fr.l{l}"), x);
        x = tape.relu(x);
    }
    let x = dense(tape, params, "fr.l3", x);
    let rgb = tape.sigmoid(x);

    tape.composite(sigma, rgb, &batch.offsets, &batch.deltas, config.background)
}

/// Renders a full image tile by tile, each tile on its own short-lived
/// tape. Returns [3, H, W] colors in [0, 1] plus background blend.
pub fn render_image(
    map: &SurfelMap,
    bundle: &NetworkBundle,
    intr: &CameraIntrinsics,
    pose: &Pose,
    config: &RenderConfig,
) -> Result<Tensor> {
    let buffers = rasterize(map, intr, pose, config.max_hits);
    let (w, h) = (intr.width, intr.height);
    let mut out = Tensor::zeros(&[3, h, w]);
    let feature_rows: Vec<f64> = map.iter().flat_map(|s| s.feature.iter().copied()).collect();
    let feature_tensor = Tensor::from_vec(&[map.len(), map.feature_dim], feature_rows);
    let ts = config.tile_size.max(1);
    for v0 in (0..h).step_by(ts) {
        for u0 in (0..w).step_by(ts) {
            let pixels: Vec<(usize, usize)> = (v0..(v0 + ts).min(h))
                .flat_map(|v| (u0..(u0 + ts).min(w)).map(move |u| (u, v)))
                .collect();
            let batch = batch_from_buffers(&buffers, intr, pose, &pixels, config);
            let mut tape = Tape::new();
            let params = ParamNodes::insert_all(&mut tape, bundle);
            let features = tape.leaf(feature_tensor.clone());
            let colors = shade_batch(&mut tape, &params, &bundle.config, config, map, features, &batch);
            let cv = tape.value(colors);
            cv.check_finite("rendered colors")?;
            for (p, &(u, v)) in pixels.iter().enumerate() {
                let row = cv.row(p);
                for c in 0..3 {
                    out.data[c * h * w + v * w + u] = row[c];
                }
            }
        }
    }
    Ok(out)
}

/// Reference renderer: samples every pixel ray densely with a fixed step and
/// determines each sample's occupancy by exhaustively testing every surfel in
/// the map, without any screen-space culling. A surfel crossed by the ray
/// contributes one hit in the step bin containing its crossing, with the step
/// size as its path length. Hits are shaded with the exact same networks as
/// `render_image`, so the only difference is how candidate surfels are found.
pub fn render_image_dense_baseline(
    map: &SurfelMap,
    bundle: &NetworkBundle,
    intr: &CameraIntrinsics,
    pose: &Pose,
    config: &RenderConfig,
    step: f64,
) -> Result<Tensor> {
    let (w, h) = (intr.width, intr.height);
    let mut out = Tensor::zeros(&[3, h, w]);
    let feature_rows: Vec<f64> = map.iter().flat_map(|s| s.feature.iter().copied()).collect();
    let feature_tensor = Tensor::from_vec(&[map.len(), map.feature_dim], feature_rows);

    let ts = config.tile_size.max(1);
    for v0 in (0..h).step_by(ts) {
        for u0 in (0..w).step_by(ts) {
            let pixels: Vec<(usize, usize)> = (v0..(v0 + ts).min(h))
                .flat_map(|v| (u0..(u0 + ts).min(w)).map(move |u| (u, v)))
                .collect();
            let mut batch = PixelBatch {
                hits: Vec::new(),
                rays: Vec::new(),
                offsets: vec![0],
                deltas: Vec::new(),
            };
            for &(u, v) in &pixels {
                let ray = ray_through_pixel(intr, pose, u as f64, v as f64)?;
                let mut found: Vec<SurfelHit> = Vec::new();
                for s in map.iter() {
                    if let Some(hit) = ray_disk_intersect(&ray, s) {
                        found.push(hit);
                    }
                }
                found.sort_by(|a, b| {
                    a.t.partial_cmp(&b.t).unwrap().then(a.surfel_id.cmp(&b.surfel_id))
                });
                found.truncate(config.max_hits);
                for hit in found {
                    batch.hits.push(hit);
                    batch.rays.push(ray);
                    batch.deltas.push(step);
                }
                batch.offsets.push(batch.hits.len());
            }
            let mut tape = Tape::new();
            let params = ParamNodes::insert_all(&mut tape, bundle);
            let features = tape.leaf(feature_tensor.clone());
            let colors = shade_batch(&mut tape, &params, &bundle.config, config, map, features, &batch);
            let cv = tape.value(colors);
            cv.check_finite("rendered colors")?;
            for (p, &(u, v)) in pixels.iter().enumerate() {
                let row = cv.row(p);
                for c in 0..3 {
                    out.data[c * h * w + v * w + u] = row[c];
                }
            }
        }
    }
    Ok(out)
}
