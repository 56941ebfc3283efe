//! Orchestration: keyframe selection, the online reconstruction loop,
//! end-to-end training with unrolling truncated to the last few fusion
//! steps, and per-scene fine-tuning of features plus the shading heads.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::fusion::{apply_plan_features, integrate_frame, plan_frame, FusionConfig};
use crate::ingest::{
    build_local_surfels, build_local_surfels_with, extract_features_tape, refine_depth,
    refine_depth_learned_tape, sampled_pixels, DepthRefiner,
};
use crate::metrics::{psnr, ssim};
use crate::nn::{AdamParams, AdamState, NetworkBundle, ParamNodes, Tape, Tensor};
use crate::raster::rasterize;
use crate::render::{batch_from_buffers, render_image, shade_batch, RenderConfig};
use crate::types::{Surfel, SurfelMap};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda_depth: f64,
    pub keyframe_fraction: f64,
    pub unroll_window: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn train_defaults() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            lambda_depth: 0.1,
            keyframe_fraction: 0.05,
            unroll_window: 2,
            iterations: 2000,
            seed: 0,
        }
    }

    pub fn finetune_defaults() -> TrainConfig {
        TrainConfig {
            lr: 2e-4,
            ..TrainConfig::train_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keyframe_fraction > 0.0 && self.keyframe_fraction <= 1.0) {
            return Err(Error::Domain("keyframe_fraction must be in (0, 1]".into()));
        }
        if self.unroll_window < 1 {
            return Err(Error::Domain("unroll_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Non-training knobs shared across pipeline entry points.
#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub stride: usize,
    pub refiner: DepthRefiner,
    pub fusion: FusionConfig,
    pub render: RenderConfig,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            stride: 1,
            refiner: DepthRefiner::DiffusionFill,
            fusion: FusionConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

/// ceil(n * fraction) evenly spaced indices starting at 0.
pub fn select_keyframes(n: usize, fraction: f64) -> Vec<usize> {
    assert!(n >= 1);
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    (0..k).map(|i| i * n / k).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct KeyframeReport {
    pub frame_index: usize,
    pub merged: usize,
    pub inserted: usize,
    pub degenerate_normals: usize,
    pub total_surfels: usize,
    pub bytes: usize,
    pub ms: f64,
}

/// Rough in-memory footprint of the map.
pub fn map_bytes(map: &SurfelMap) -> usize {
    map.len() * (std::mem::size_of::<Surfel>() + map.feature_dim * 8)
}

/// Streams frames in order, integrating the listed keyframes into a fresh
/// map; non-keyframes are skipped. The map is valid for rendering after
/// every keyframe.
pub fn reconstruct_online<I>(
    frames: I,
    keyframes: &[usize],
    bundle: &NetworkBundle,
    pcfg: &PipelineConfig,
) -> Result<(SurfelMap, Vec<KeyframeReport>)>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    let mut map = SurfelMap::new(bundle.config.feature_dim);
    let mut reports = Vec::new();
    for frame in frames {
        let frame = frame?;
        if !keyframes.contains(&frame.index) {
            continue;
        }
        let start = Instant::now();
        let locals = build_local_surfels(&frame, pcfg.refiner, bundle, pcfg.stride)?;
        let locals: Vec<Surfel> = locals.iter().cloned().collect();
        let report = integrate_frame(
            &mut map,
            &locals,
            &frame.intrinsics,
            &frame.pose,
            bundle,
            &pcfg.fusion,
        )?;
        reports.push(KeyframeReport {
            frame_index: frame.index,
            merged: report.merged,
            inserted: report.inserted,
            degenerate_normals: report.degenerate_normals,
            total_surfels: map.len(),
            bytes: map_bytes(&map),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((map, reports))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLosses {
    pub l_render: f64,
    pub l_d: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub l_render: f64,
    pub l_d: f64,
    pub l: f64,
    pub wall_ms: f64,
}

fn frame_rgb_rows(frame: &Frame) -> Tensor {
    let (h, w) = (frame.height(), frame.width());
    let mut rows = Tensor::zeros(&[h * w, 3]);
    for v in 0..h {
        for u in 0..w {
            rows.row_mut(v * w + u).copy_from_slice(&frame.rgb_at(v, u));
        }
    }
    rows
}

/// One optimization step: rebuild the map over all keyframes with gradient
/// tracking only through the last `unroll_window` fusion steps (earlier
/// features enter as constants), render one sampled supervision view, and
/// take an Adam step on all parameters.
pub fn train_step(
    frames: &[Frame],
    keyframes: &[usize],
    bundle: &mut NetworkBundle,
    cfg: &TrainConfig,
    pcfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainLosses> {
    cfg.validate()?;
    let split = keyframes.len().saturating_sub(cfg.unroll_window);
    let (prefix, tracked) = keyframes.split_at(split);

    // Constant prefix: plain integration.
    let mut map = SurfelMap::new(bundle.config.feature_dim);
    for &ki in prefix {
        let frame = &frames[ki];
        let locals = build_local_surfels(frame, pcfg.refiner, bundle, pcfg.stride)?;
        let locals: Vec<Surfel> = locals.iter().cloned().collect();
        integrate_frame(&mut map, &locals, &frame.intrinsics, &frame.pose, bundle, &pcfg.fusion)?;
    }

    let mut tape = Tape::new();
    let params = ParamNodes::insert_all(&mut tape, bundle);
    let base_rows: Vec<f64> = map.iter().flat_map(|s| s.feature.iter().copied()).collect();
    let mut feat_node = tape.leaf(Tensor::from_vec(&[map.len(), map.feature_dim], base_rows));

    // Tracked suffix: features and (for the learned refiner) depth flow
    // through the tape; geometry is rebuilt from current values.
    let mut depth_loss_nodes = Vec::new();
    let mut depth_available = false;
    for &ki in tracked {
        let frame = &frames[ki];
        depth_available |= frame.has_valid_depth();
        let refined: Vec<f64> = match pcfg.refiner {
            DepthRefiner::Learned => {
                let node = refine_depth_learned_tape(&mut tape, &params, frame);
                let target = Tensor::from_vec(
                    &[1, frame.height(), frame.width()],
                    frame.sensor_depth.clone(),
                );
                depth_loss_nodes.push(tape.masked_mean_abs(node, target, frame.valid_mask.clone()));
                tape.value(node).data.clone()
            }
            other => {
                let refined = refine_depth(other, frame, bundle)?;
                let node_target =
                    Tensor::from_vec(&[1, frame.height(), frame.width()], refined.clone());
                let node = tape.leaf(node_target);
                let target = Tensor::from_vec(
                    &[1, frame.height(), frame.width()],
                    frame.sensor_depth.clone(),
                );
                depth_loss_nodes.push(tape.masked_mean_abs(node, target, frame.valid_mask.clone()));
                refined
            }
        };
        let pix_feat = extract_features_tape(&mut tape, &params, frame.rgb.clone());
        let locals_map = build_local_surfels_with(
            frame,
            &refined,
            bundle,
            pcfg.stride,
            Some(tape.value(pix_feat)),
        )?;
        let locals: Vec<Surfel> = locals_map.iter().cloned().collect();
        let sample_idx: Vec<usize> = sampled_pixels(frame.height(), frame.width(), pcfg.stride)
            .map(|(v, u)| v * frame.width() + u)
            .collect();
        let local_feat = tape.gather_rows(pix_feat, &sample_idx);
        let plan = plan_frame(&mut map, &locals, &frame.intrinsics, &frame.pose, &pcfg.fusion)?;
        feat_node = apply_plan_features(
            &mut tape,
            &params,
            pcfg.fusion.scheme,
            &plan,
            feat_node,
            local_feat,
        );
    }

    // Supervision view: uniform over non-keyframes (falls back to keyframes
    // for degenerate tiny sequences).
    let pool: Vec<usize> = (0..frames.len()).filter(|i| !keyframes.contains(i)).collect();
    let view = if pool.is_empty() {
        keyframes[rng.gen_range(0..keyframes.len())]
    } else {
        pool[rng.gen_range(0..pool.len())]
    };
    let sup = &frames[view];
    let buffers = rasterize(&map, &sup.intrinsics, &sup.pose, pcfg.render.max_hits);
    let pixels: Vec<(usize, usize)> = (0..sup.height())
        .flat_map(|v| (0..sup.width()).map(move |u| (u, v)))
        .collect();
    let batch = batch_from_buffers(&buffers, &sup.intrinsics, &sup.pose, &pixels, &pcfg.render);
    let colors = shade_batch(
        &mut tape,
        &params,
        &bundle.config,
        &pcfg.render,
        &map,
        feat_node,
        &batch,
    );
    let l_render = tape.mean_squared_error(colors, frame_rgb_rows(sup));

    let l_d = if depth_loss_nodes.is_empty() {
        tape.leaf(Tensor::scalar(0.0))
    } else {
        let mut acc = depth_loss_nodes[0];
        for &n in &depth_loss_nodes[1..] {
            acc = tape.add(acc, n);
        }
        tape.scale(acc, 1.0 / depth_loss_nodes.len() as f64)
    };
    let indicator = if depth_available { 1.0 } else { 0.0 };
    let loss = tape.add_scaled(l_render, l_d, cfg.lambda_depth * indicator);

    let losses = TrainLosses {
        l_render: tape.value(l_render).data[0],
        l_d: tape.value(l_d).data[0],
        l: tape.value(loss).data[0],
    };
    if !losses.l.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", losses.l)));
    }
    let grads = tape.backward(loss);
    let named = params.collect_grads(&tape, &grads);
    bundle.adam_step(&named, AdamParams::with_lr(cfg.lr));
    Ok(losses)
}

/// Runs `cfg.iterations` training steps on one scene.
pub fn train_scene(
    frames: &[Frame],
    bundle: &mut NetworkBundle,
    cfg: &TrainConfig,
    pcfg: &PipelineConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let keyframes = select_keyframes(frames.len(), cfg.keyframe_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let start = Instant::now();
        let losses = train_step(frames, &keyframes, bundle, cfg, pcfg, &mut rng)?;
        logs.push(StepLog {
            step,
            l_render: losses.l_render,
            l_d: losses.l_d,
            l: losses.l,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(logs)
}

/// Hash of everything in the map except features: surfel count, ids and
/// geometry bit patterns. Fine-tuning must leave this unchanged.
pub fn geometry_hash(map: &SurfelMap) -> u64 {
    let mut h = DefaultHasher::new();
    map.len().hash(&mut h);
    for s in map.iter() {
        s.id.hash(&mut h);
        for v in [
            s.position.x,
            s.position.y,
            s.position.z,
            s.normal.x,
            s.normal.y,
            s.normal.z,
            s.radius,
            s.weight,
        ] {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

const FINETUNE_TRAINABLE: &[&str] = &["ff.", "fsigma.", "fr."];

/// Per-scene fine-tuning: optimizes the stored surfel features and the
/// shading heads against the given views. Geometry, surfel count, and all
/// other networks (fusion GRU, extractor, refiner) stay fixed.
pub fn finetune_scene(
    map: &mut SurfelMap,
    bundle: &mut NetworkBundle,
    frames: &[Frame],
    cfg: &TrainConfig,
    pcfg: &PipelineConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Domain("fine-tuning needs at least one view".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows: Vec<f64> = map.iter().flat_map(|s| s.feature.iter().copied()).collect();
    let mut features = Tensor::from_vec(&[map.len(), map.feature_dim], rows);
    let mut feat_adam = AdamState::new(&features.shape);
    let trainable = bundle.names_with_prefix(FINETUNE_TRAINABLE);
    let opt = AdamParams::with_lr(cfg.lr);

    let mut logs = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let start = Instant::now();
        let view = &frames[rng.gen_range(0..frames.len())];
        let buffers = rasterize(map, &view.intrinsics, &view.pose, pcfg.render.max_hits);
        let pixels: Vec<(usize, usize)> = (0..view.height())
            .flat_map(|v| (0..view.width()).map(move |u| (u, v)))
            .collect();
        let batch = batch_from_buffers(&buffers, &view.intrinsics, &view.pose, &pixels, &pcfg.render);

        let mut tape = Tape::new();
        let params = ParamNodes::insert_all(&mut tape, bundle);
        let feat_node = tape.leaf(features.clone());
        let colors = shade_batch(
            &mut tape,
            &params,
            &bundle.config,
            &pcfg.render,
            map,
            feat_node,
            &batch,
        );
        let loss = tape.mean_squared_error(colors, frame_rgb_rows(view));
        let l = tape.value(loss).data[0];
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {l}")));
        }
        let grads = tape.backward(loss);
        let mut named = params.collect_grads(&tape, &grads);
        named.retain(|name, _| trainable.contains(name));
        bundle.adam_step(&named, opt);
        feat_adam.step(&mut features, &grads.grad(&tape, feat_node), opt);

        logs.push(StepLog {
            step,
            l_render: l,
            l_d: 0.0,
            l,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    for i in 0..map.len() {
        map.at_mut(i).feature = features.row(i).to_vec();
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalRow {
    pub frame_index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders each view from the map and scores it against the captured RGB.
pub fn eval_views(
    map: &SurfelMap,
    bundle: &NetworkBundle,
    frames: &[Frame],
    rcfg: &RenderConfig,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(frames.len());
    for frame in frames {
        let img = render_image(map, bundle, &frame.intrinsics, &frame.pose, rcfg)?;
        rows.push(EvalRow {
            frame_index: frame.index,
            psnr: psnr(&img, &frame.rgb)?,
            ssim: ssim(&img, &frame.rgb)?,
        });
    }
    Ok(rows)
}
