//! Acceptance suite: ten end-to-end criteria the engine must satisfy.
//! Each test prints one `ACCEPTANCE n: PASS/FAIL` line with the measured
//! numbers, then asserts.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfelrec::dataset::DatasetReader;
use surfelrec::fusion::{
    apply_plan_features, integrate_frame, merge_feature, merge_geometry, plan_frame,
    FusionConfig, FusionScheme,
};
use surfelrec::ingest::{
    build_local_surfels, build_local_surfels_with, extract_features_tape, refine_depth,
    sampled_pixels, DepthRefiner,
};
use surfelrec::mapio::{load_map, save_map};
use surfelrec::nn::{grad_check, NetConfig, NetworkBundle, ParamNodes, Tape, Tensor};
use surfelrec::pipeline::{
    eval_views, finetune_scene, reconstruct_online, select_keyframes, train_scene,
    PipelineConfig, TrainConfig,
};
use surfelrec::raster::{raster_stats, rasterize, rasterize_bruteforce};
use surfelrec::render::{
    batch_from_buffers, render_image, render_image_dense_baseline, shade_batch, RenderConfig,
};
use surfelrec::synth::{look_at_rotation, render_frame_analytic, SceneSpec, Trajectory};
use surfelrec::types::{Vec3};
use surfelrec::{CameraIntrinsics, Frame, Pose, Surfel, SurfelMap};

fn verdict(n: usize, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n}: {} - {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance criterion {n} failed: {detail}");
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n < 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let up = Vec3::new(0.0, 1.0, 0.0);
    let forward = loop {
        let f = random_unit(rng);
        if f.dot(up).abs() < 0.95 {
            break f;
        }
    };
    let center = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    Pose::new(look_at_rotation(forward, up), center).expect("orthonormal")
}

fn random_surfel(rng: &mut ChaCha8Rng, feature_dim: usize) -> Surfel {
    Surfel {
        id: 0,
        position: Vec3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ),
        normal: random_unit(rng),
        radius: rng.gen_range(0.02..0.6),
        weight: rng.gen_range(0.1..5.0),
        feature: (0..feature_dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    }
}

/// Analytic views of the reference room, posed along its trajectory.
fn room_frames(n: usize, w: usize, h: usize) -> Vec<Frame> {
    frames_of(&SceneSpec::reference_room(), n, w, h)
}

/// Reference room reduced to its closed shell: depth is continuous in every
/// view, which removes silhouette-edge surfel artifacts.
fn room_shell_frames(n: usize, w: usize, h: usize) -> Vec<Frame> {
    let mut spec = SceneSpec::reference_room();
    spec.surfaces.truncate(6);
    frames_of(&spec, n, w, h)
}

/// Reference room viewed along a narrow 0.4 rad orbit segment starting at
/// `angle_start`: every view overlaps the mapped region, so supervision
/// never asks for geometry the keyframes cannot have seen.
fn room_segment_frames(n: usize, w: usize, h: usize, angle_start: f64) -> Vec<Frame> {
    let mut spec = SceneSpec::reference_room();
    spec.trajectory = Trajectory::OrbitYaw {
        center: Vec3::new(0.0, 0.0, 0.0),
        angle_start,
        angle_span: 0.4,
    };
    frames_of(&spec, n, w, h)
}

fn frames_of(spec: &SceneSpec, n: usize, w: usize, h: usize) -> Vec<Frame> {
    let intr = CameraIntrinsics::new(
        w as f64 * 0.75,
        w as f64 * 0.75,
        w as f64 / 2.0,
        h as f64 / 2.0,
        w,
        h,
    )
    .unwrap();
    (0..n)
        .map(|i| {
            let pose = spec.pose(i, n);
            let (rgb, depth, _) = render_frame_analytic(&spec, &intr, &pose).unwrap();
            let valid_mask = depth.iter().map(|&d| d > 0.0).collect();
            Frame {
                rgb,
                sensor_depth: depth,
                valid_mask,
                intrinsics: intr,
                pose,
                index: i,
            }
        })
        .collect()
}

fn rgb_rows(frame: &Frame) -> Tensor {
    let (h, w) = (frame.height(), frame.width());
    let mut rows = Tensor::zeros(&[h * w, 3]);
    for v in 0..h {
        for u in 0..w {
            rows.row_mut(v * w + u).copy_from_slice(&frame.rgb_at(v, u));
        }
    }
    rows
}

fn all_pixels(w: usize, h: usize) -> Vec<(usize, usize)> {
    (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).collect()
}

// ---------------------------------------------------------------------------
// 1. The screen-space culled rasterizer is exactly equivalent to the
//    brute-force all-pairs oracle on randomized scenes.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_01_rasterizer_equals_bruteforce_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut hits_total = 0usize;
    for scene in 0..200 {
        let w = rng.gen_range(8..=64usize);
        let h = rng.gen_range(8..=64usize);
        let n = rng.gen_range(1..=500usize);
        let intr = CameraIntrinsics::new(
            w as f64 * rng.gen_range(0.5..1.2),
            h as f64 * rng.gen_range(0.5..1.2),
            w as f64 * rng.gen_range(0.4..0.6),
            h as f64 * rng.gen_range(0.4..0.6),
            w,
            h,
        )
        .unwrap();
        let pose = random_pose(&mut rng);
        let mut map = SurfelMap::new(0);
        for _ in 0..n {
            map.insert(random_surfel(&mut rng, 0));
        }
        let cap = [1usize, 4, 8][rng.gen_range(0..3)];
        let fast = rasterize(&map, &intr, &pose, cap);
        let slow = rasterize_bruteforce(&map, &intr, &pose, cap);
        for i in 0..fast.pixel_count() {
            let (a, b) = (fast.pixel(i), slow.pixel(i));
            assert_eq!(a.len(), b.len(), "scene {scene}, pixel {i}: hit count differs");
            for (x, y) in a.iter().zip(b) {
                assert_eq!(
                    (x.surfel_id, x.t.to_bits()),
                    (y.surfel_id, y.t.to_bits()),
                    "scene {scene}, pixel {i}: hit differs"
                );
            }
            hits_total += a.len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        secs < 60.0,
        &format!("200 randomized scenes identical to the all-pairs oracle ({hits_total} hits) in {secs:.1}s (< 60s)"),
    );
}

// ---------------------------------------------------------------------------
// 2. Compositing: half-opacity two-hit closed form to 1e-12; transmittance
//    monotonicity and total-weight bound over 10^4 random pixels.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_02_compositing_closed_form_and_invariants() {
    let ln2 = std::f64::consts::LN_2;
    let (d1, d2) = (0.3, 0.7);
    let c1 = [0.8, 0.1, 0.3];
    let c2 = [0.2, 0.9, 0.5];
    let bg = [0.4, 0.4, 0.2];
    let mut tape = Tape::new();
    let sigma = tape.leaf(Tensor::from_vec(&[2], vec![ln2 / d1, ln2 / d2]));
    let rgb = tape.leaf(Tensor::from_vec(
        &[2, 3],
        vec![c1[0], c1[1], c1[2], c2[0], c2[1], c2[2]],
    ));
    let out = tape.composite(sigma, rgb, &[0, 2], &[d1, d2], bg);
    let v = tape.value(out);
    let mut max_err = 0.0f64;
    for k in 0..3 {
        let expected = 0.5 * c1[k] + 0.25 * c2[k] + 0.25 * bg[k];
        max_err = max_err.max((v.row(0)[k] - expected).abs());
    }

    // Random batch: rebuild the per-hit weights by hand and check the
    // physical invariants plus agreement with the compositing op.
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let pixels = 10_000usize;
    let mut sigmas = Vec::new();
    let mut deltas = Vec::new();
    let mut colors = Vec::new();
    let mut offsets = vec![0usize];
    for _ in 0..pixels {
        let hits = rng.gen_range(0..=8usize);
        for _ in 0..hits {
            sigmas.push(rng.gen_range(0.0..50.0));
            deltas.push(rng.gen_range(1e-4..0.5));
            for _ in 0..3 {
                colors.push(rng.gen_range(0.0..1.0));
            }
        }
        offsets.push(sigmas.len());
    }
    let mut tape = Tape::new();
    let sn = tape.leaf(Tensor::from_vec(&[sigmas.len()], sigmas.clone()));
    let cn = tape.leaf(Tensor::from_vec(&[sigmas.len(), 3], colors.clone()));
    let out = tape.composite(sn, cn, &offsets, &deltas, bg);
    let ov = tape.value(out);
    let mut max_batch_err = 0.0f64;
    for p in 0..pixels {
        let mut trans = 1.0f64;
        let mut weight_sum = 0.0f64;
        let mut c = [0.0f64; 3];
        for i in offsets[p]..offsets[p + 1] {
            let e = (-sigmas[i] * deltas[i]).exp();
            let w = trans * (1.0 - e);
            let next = trans * e;
            assert!(next <= trans + 1e-15, "transmittance must not increase");
            assert!(w >= 0.0);
            weight_sum += w;
            for k in 0..3 {
                c[k] += w * colors[3 * i + k];
            }
            trans = next;
        }
        assert!(
            weight_sum <= 1.0 + 1e-12,
            "pixel {p}: hit weights sum to {weight_sum} > 1"
        );
        assert!((weight_sum + trans - 1.0).abs() < 1e-12, "weights + residual != 1");
        for k in 0..3 {
            c[k] += trans * bg[k];
            max_batch_err = max_batch_err.max((ov.row(p)[k] - c[k]).abs());
        }
    }
    verdict(
        2,
        max_err < 1e-12 && max_batch_err < 1e-12,
        &format!(
            "two-hit closed form err {max_err:.2e}; {pixels} random pixels: op vs manual err {max_batch_err:.2e}, transmittance monotone, weight sums <= 1"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients of the full render loss, including one unrolled
//    gated fusion step, match central finite differences.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_03_full_gradient_matches_finite_differences() {
    let start = Instant::now();
    let cfg = NetConfig {
        feature_dim: 16,
        hidden: 16,
        ..NetConfig::default()
    };
    let bundle0 = NetworkBundle::init(cfg, 42);
    let frames = room_frames(3, 4, 4);
    // Frozen map prefix: the first frame integrated with the unperturbed
    // parameters. The checked objective unrolls exactly one fusion step on
    // top of it, mirroring truncated training.
    let m0 = build_local_surfels(&frames[0], DepthRefiner::DiffusionFill, &bundle0, 2).unwrap();
    let fcfg = FusionConfig::default();
    let rcfg = RenderConfig::default();
    let target = rgb_rows(&frames[0]);

    let run = |b: &NetworkBundle, want_grads: bool| -> (f64, BTreeMap<String, Tensor>, usize) {
        let mut map = m0.clone();
        let mut tape = Tape::new();
        let params = ParamNodes::insert_all(&mut tape, b);
        let rows: Vec<f64> = map.iter().flat_map(|s| s.feature.iter().copied()).collect();
        let feat0 = tape.leaf(Tensor::from_vec(&[map.len(), map.feature_dim], rows));

        let frame = &frames[1];
        let (w, h) = (frame.width(), frame.height());
        let refined = refine_depth(DepthRefiner::DiffusionFill, frame, b).unwrap();
        let pix_feat = extract_features_tape(&mut tape, &params, frame.rgb.clone());
        let locals_map =
            build_local_surfels_with(frame, &refined, b, 1, Some(tape.value(pix_feat))).unwrap();
        let locals: Vec<Surfel> = locals_map.iter().cloned().collect();
        let sample_idx: Vec<usize> = sampled_pixels(h, w, 1).map(|(v, u)| v * w + u).collect();
        let local_feat = tape.gather_rows(pix_feat, &sample_idx);
        let plan = plan_frame(&mut map, &locals, &frame.intrinsics, &frame.pose, &fcfg).unwrap();
        let feat = apply_plan_features(
            &mut tape,
            &params,
            FusionScheme::Gru,
            &plan,
            feat0,
            local_feat,
        );

        let sup = &frames[0];
        let buffers = rasterize(&map, &sup.intrinsics, &sup.pose, rcfg.max_hits);
        let pixels = all_pixels(sup.width(), sup.height());
        let batch = batch_from_buffers(&buffers, &sup.intrinsics, &sup.pose, &pixels, &rcfg);
        let colors = shade_batch(&mut tape, &params, &b.config, &rcfg, &map, feat, &batch);
        let loss = tape.mean_squared_error(colors, target.clone());
        let l = tape.value(loss).data[0];
        let grads = if want_grads {
            let g = tape.backward(loss);
            params.collect_grads(&tape, &g)
        } else {
            BTreeMap::new()
        };
        (l, grads, map.len())
    };

    let (l0, analytic, surfels) = run(&bundle0, true);
    // Guard against a vacuous check: the loss must actually respond to the
    // parameters through rendering and fusion.
    let grad_norm: f64 = analytic
        .values()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let nonzero = analytic
        .values()
        .flat_map(|t| t.data.iter())
        .filter(|g| **g != 0.0)
        .count();
    assert!(grad_norm > 1e-6, "analytic gradient is numerically zero");
    let loss_fn = |b: &NetworkBundle| run(b, false).0;
    let max_rel = grad_check(&loss_fn, &bundle0, &analytic, 1e-6, 4, 7);
    let secs = start.elapsed().as_secs_f64();
    println!(
        "  gradient norm {grad_norm:.3e} over {nonzero} nonzero entries"
    );
    verdict(
        3,
        max_rel < 1e-4 && secs < 120.0,
        &format!(
            "4x4 image, {surfels}-surfel map, loss {l0:.4}: max relative gradient error {max_rel:.2e} (< 1e-4) in {secs:.1}s (< 120s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Fusion conserves total weight, merges match the closed forms, and
//    re-integrating an identical frame inserts nothing.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_04_fusion_conservation_and_closed_forms() {
    // Closed-form geometric merge: weight-weighted averages, weights add.
    let f = 8usize;
    let local = Surfel {
        id: 0,
        position: Vec3::new(1.0, 2.0, 3.0),
        normal: Vec3::new(0.0, 0.0, 1.0),
        radius: 0.2,
        weight: 1.0,
        feature: vec![0.3; f],
    };
    let mut global = Surfel {
        id: 1,
        position: Vec3::new(2.0, 0.0, 3.0),
        normal: Vec3::new(0.0, 1.0, 0.0),
        radius: 0.4,
        weight: 3.0,
        feature: vec![-0.1; f],
    };
    let g0 = global.clone();
    merge_geometry(&mut global, &local);
    let wsum = 4.0;
    let exp_pos = (local.position * 1.0 + g0.position * 3.0) * (1.0 / wsum);
    let exp_rad = (1.0 * local.radius + 3.0 * g0.radius) / wsum;
    let exp_n = (local.normal * 1.0 + g0.normal * 3.0).normalized();
    let geo_err = (global.position - exp_pos).norm()
        + (global.radius - exp_rad).abs()
        + (global.normal - exp_n).norm()
        + (global.weight - wsum).abs();

    // Feature closed forms: weighted sum exactly; the gated update with
    // zeroed fusion parameters halves the global feature.
    let cfg = NetConfig {
        feature_dim: f,
        hidden: 8,
        ..NetConfig::default()
    };
    let bundle = NetworkBundle::init(cfg, 3);
    let ws = merge_feature(&bundle, FusionScheme::WeightedSum, &local, &g0);
    let mut feat_err = 0.0f64;
    for (j, v) in ws.iter().enumerate() {
        let expect = (1.0 * local.feature[j] + 3.0 * g0.feature[j]) / wsum;
        feat_err = feat_err.max((v - expect).abs());
    }
    let mut zeroed = bundle.clone();
    for (name, t) in zeroed.params.iter_mut() {
        if name.starts_with("gru.") {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let gz = merge_feature(&zeroed, FusionScheme::Gru, &local, &g0);
    for (j, v) in gz.iter().enumerate() {
        feat_err = feat_err.max((v - 0.5 * g0.feature[j]).abs());
    }

    // Weight conservation and idempotent re-integration on real frames.
    // The closed shell (no free-standing inner objects) keeps depth
    // continuous, so silhouette-edge disks cannot crowd out the candidate
    // lists between identical integrations.
    let frames = room_shell_frames(2, 24, 18);
    let bundle = NetworkBundle::init(NetConfig { hidden: 16, ..NetConfig::default() }, 5);
    let fcfg = FusionConfig::default();
    let mut map = SurfelMap::new(bundle.config.feature_dim);
    let mut expected_weight = 0.0f64;
    let mut reports = Vec::new();
    for frame in &frames {
        let locals: Vec<Surfel> = build_local_surfels(frame, DepthRefiner::DiffusionFill, &bundle, 1)
            .unwrap()
            .iter()
            .cloned()
            .collect();
        expected_weight += locals.iter().map(|s| s.weight).sum::<f64>();
        let rep = integrate_frame(&mut map, &locals, &frame.intrinsics, &frame.pose, &bundle, &fcfg)
            .unwrap();
        reports.push(rep);
    }
    let rel = (map.total_weight() - expected_weight).abs() / expected_weight;

    // Same frame again: everything must associate, nothing may insert.
    let locals: Vec<Surfel> =
        build_local_surfels(&frames[1], DepthRefiner::DiffusionFill, &bundle, 1)
            .unwrap()
            .iter()
            .cloned()
            .collect();
    let redo =
        integrate_frame(&mut map, &locals, &frames[1].intrinsics, &frames[1].pose, &bundle, &fcfg)
            .unwrap();

    verdict(
        4,
        geo_err < 1e-12 && feat_err < 1e-12 && rel < 1e-6 && redo.inserted == 0,
        &format!(
            "closed-form merge err {geo_err:.2e}/{feat_err:.2e}; weight conservation rel err {rel:.2e} (< 1e-6); identical-frame re-integration inserted {} (= 0) of {} locals",
            redo.inserted,
            locals.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Map growth is sublinear over a 20-keyframe sweep of the reference room.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_05_sublinear_map_growth() {
    let frames = room_frames(20, 40, 30);
    let bundle = NetworkBundle::init(NetConfig { hidden: 16, ..NetConfig::default() }, 2);
    let pcfg = PipelineConfig::default();
    let keyframes: Vec<usize> = (0..frames.len()).collect();
    let (map, reports) =
        reconstruct_online(frames.iter().cloned().map(Ok), &keyframes, &bundle, &pcfg).unwrap();
    assert_eq!(reports.len(), 20);
    let first_inserted = reports[0].inserted;
    let locals_total: usize = reports.iter().map(|r| r.merged + r.inserted).sum();
    let worst_late = reports[5..].iter().map(|r| r.inserted).max().unwrap();
    let late_ok = reports[5..]
        .iter()
        .all(|r| (r.inserted as f64) < 0.5 * first_inserted as f64);
    let total_ok = (map.len() as f64) < 0.6 * locals_total as f64;
    verdict(
        5,
        late_ok && total_ok,
        &format!(
            "keyframe 1 inserted {first_inserted}; worst insertion after keyframe 5 is {worst_late} (< {}); final map {} surfels vs {} accumulated locals ({:.1}% < 60%)",
            first_inserted / 2,
            map.len(),
            locals_total,
            100.0 * map.len() as f64 / locals_total as f64
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Rendering ablation on a 10k-surfel single-layer wall at 320x240: the
//    rasterization-guided renderer is >= 10x faster than the dense
//    ray-marching baseline and matches it to < 5/255 mean |dRGB|.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_06_rasterization_guided_rendering_ablation() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut map = SurfelMap::new(32);
    // 100x100 non-overlapping disks tiling a fronto-parallel wall.
    for iy in 0..100 {
        for ix in 0..100 {
            map.insert(Surfel {
                id: 0,
                position: Vec3::new(
                    -0.40 + 0.80 * ix as f64 / 99.0,
                    -0.31 + 0.62 * iy as f64 / 99.0,
                    0.6,
                ),
                normal: Vec3::new(0.0, 0.0, -1.0),
                radius: 0.003,
                weight: 1.0,
                feature: (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            });
        }
    }
    assert_eq!(map.len(), 10_000);
    let bundle = NetworkBundle::init(NetConfig { hidden: 32, ..NetConfig::default() }, 4);
    let intr = CameraIntrinsics::new(256.0, 256.0, 160.0, 120.0, 320, 240).unwrap();
    let pose = Pose::identity();
    let rcfg = RenderConfig {
        background: [0.15, 0.2, 0.25],
        ..RenderConfig::default()
    };

    let t0 = Instant::now();
    let fast = render_image(&map, &bundle, &intr, &pose, &rcfg).unwrap();
    let fast_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let dense = render_image_dense_baseline(&map, &bundle, &intr, &pose, &rcfg, rcfg.last_delta)
        .unwrap();
    let dense_s = t1.elapsed().as_secs_f64();

    let mean_abs = fast
        .data
        .iter()
        .zip(&dense.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / fast.data.len() as f64;
    let speedup = dense_s / fast_s;
    verdict(
        6,
        speedup >= 10.0 && mean_abs < 5.0 / 255.0,
        &format!(
            "10k surfels at 320x240: guided {fast_s:.2}s vs dense {dense_s:.2}s ({speedup:.1}x >= 10x); mean |dRGB| {:.4} (< {:.4})",
            mean_abs,
            5.0 / 255.0
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Toy end-to-end: 2000 training steps cut the render loss by >= 10x, and
//    per-scene fine-tuning lifts held-out PSNR by >= 2 dB over feedforward.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_07_end_to_end_training_and_finetuning() {
    let start = Instant::now();
    // Feedforward training happens on one orbit segment; fine-tuning and its
    // held-out evaluation use a disjoint, never-trained-on segment of the same
    // room, so the measured gain is genuine per-scene adaptation.
    let train_frames = room_segment_frames(12, 24, 18, 0.0);
    let frames = room_segment_frames(12, 24, 18, 2.0);
    let n = frames.len();
    let tcfg = TrainConfig {
        iterations: 2000,
        keyframe_fraction: 0.25,
        seed: 0,
        ..TrainConfig::train_defaults()
    };
    let mut pcfg = PipelineConfig {
        stride: 2,
        ..PipelineConfig::default()
    };
    pcfg.render.last_delta = 0.1;
    let mut bundle = NetworkBundle::init(NetConfig { hidden: 48, ..NetConfig::default() }, 9);
    let logs = train_scene(&train_frames, &mut bundle, &tcfg, &pcfg).unwrap();
    let early: f64 = logs[..10].iter().map(|s| s.l_render).sum::<f64>() / 10.0;
    let late: f64 = logs[logs.len() - 10..].iter().map(|s| s.l_render).sum::<f64>() / 10.0;
    let reduction = early / late;

    let keyframes = select_keyframes(n, tcfg.keyframe_fraction);
    let nonkf: Vec<usize> = (0..n).filter(|i| !keyframes.contains(i)).collect();
    let heldout: Vec<usize> = nonkf
        .iter()
        .enumerate()
        .filter(|(p, _)| p % 2 == 1)
        .map(|(_, &i)| i)
        .collect();
    let heldout_frames: Vec<Frame> =
        heldout.iter().map(|&i| frames[i].clone()).collect();
    let heldin: Vec<Frame> = frames
        .iter()
        .filter(|f| !heldout.contains(&f.index))
        .cloned()
        .collect();

    let (mut map, _) =
        reconstruct_online(frames.iter().cloned().map(Ok), &keyframes, &bundle, &pcfg).unwrap();
    let before = eval_views(&map, &bundle, &heldout_frames, &pcfg.render).unwrap();
    let p0 = before.iter().map(|r| r.psnr).sum::<f64>() / before.len() as f64;

    let fcfg = TrainConfig {
        iterations: 2000,
        keyframe_fraction: tcfg.keyframe_fraction,
        seed: 1,
        ..TrainConfig::finetune_defaults()
    };
    finetune_scene(&mut map, &mut bundle, &heldin, &fcfg, &pcfg).unwrap();
    let after = eval_views(&map, &bundle, &heldout_frames, &pcfg.render).unwrap();
    let p1 = after.iter().map(|r| r.psnr).sum::<f64>() / after.len() as f64;

    let mins = start.elapsed().as_secs_f64() / 60.0;
    verdict(
        7,
        reduction >= 10.0 && p1 - p0 >= 2.0 && mins < 30.0,
        &format!(
            "render loss {early:.4} -> {late:.4} ({reduction:.1}x >= 10x) over 2000 steps; held-out PSNR {p0:.2} -> {p1:.2} dB (+{:.2} >= 2.0) after fine-tuning; {mins:.1} min (< 30)",
            p1 - p0
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Gated fusion does not trail weighted-sum averaging: after identical toy
//    training budgets, its held-out PSNR is within 0.1 dB or better.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_08_gated_fusion_vs_weighted_sum() {
    let frames = room_segment_frames(8, 20, 15, 0.0);
    let n = frames.len();
    let tcfg = TrainConfig {
        iterations: 300,
        keyframe_fraction: 0.25,
        seed: 0,
        ..TrainConfig::train_defaults()
    };
    let keyframes = select_keyframes(n, tcfg.keyframe_fraction);
    let nonkf: Vec<usize> = (0..n).filter(|i| !keyframes.contains(i)).collect();
    let heldout: Vec<Frame> = nonkf
        .iter()
        .enumerate()
        .filter(|(p, _)| p % 2 == 1)
        .map(|(_, &i)| frames[i].clone())
        .collect();

    let run = |scheme: FusionScheme| -> f64 {
        let mut pcfg = PipelineConfig {
            stride: 2,
            ..PipelineConfig::default()
        };
        pcfg.fusion.scheme = scheme;
        let mut bundle = NetworkBundle::init(NetConfig { hidden: 32, ..NetConfig::default() }, 9);
        train_scene(&frames, &mut bundle, &tcfg, &pcfg).unwrap();
        let (map, _) =
            reconstruct_online(frames.iter().cloned().map(Ok), &keyframes, &bundle, &pcfg)
                .unwrap();
        let rows = eval_views(&map, &bundle, &heldout, &pcfg.render).unwrap();
        rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64
    };
    let p_gru = run(FusionScheme::Gru);
    let p_ws = run(FusionScheme::WeightedSum);
    // The two schemes must genuinely diverge; identical scores would mean
    // the ablation toggles nothing.
    assert!(
        (p_gru - p_ws).abs() > 1e-9,
        "fusion schemes produced identical held-out PSNR {p_gru}"
    );
    verdict(
        8,
        p_gru >= p_ws - 0.1,
        &format!(
            "identical 300-step budgets: gated fusion {p_gru:.4} dB vs weighted sum {p_ws:.4} dB (margin {:+.4} >= -0.1)",
            p_gru - p_ws
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Instrumentation: the reconstruction report CSV feeds a growth plot via
//    the CLI, and no view ever exceeds the per-pixel hit budget of 80.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_09_instrumentation_and_hit_budget() {
    let exe = env!("CARGO_BIN_EXE_surfelrec");
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let ckpt = dir.path().join("net.snrf");
    let map_path = dir.path().join("scene.smap");
    let report = dir.path().join("report.csv");
    let plot = dir.path().join("growth.png");
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "keyframe_fraction = 1.0\nstride = 2\n").unwrap();
    NetworkBundle::init(NetConfig { hidden: 16, ..NetConfig::default() }, 0)
        .save(&ckpt)
        .unwrap();

    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(
            out.status.success(),
            "command failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(Command::new(exe).args([
        "synth", "--scene", "room", "--frames", "6", "--width", "32", "--height", "24", "--out",
    ]).arg(&ds));
    ok(Command::new(exe)
        .args(["reconstruct", "--dataset"])
        .arg(&ds)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&map_path)
        .arg("--report")
        .arg(&report)
        .arg("--config")
        .arg(&cfg_path));
    ok(Command::new(exe)
        .args(["stats", "--report"])
        .arg(&report)
        .arg("--plot")
        .arg(&plot));

    // The CSV alone must carry everything a growth plot needs.
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frame_index,merged,inserted,total_surfels,bytes,ms"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.windows(2).all(|w| w[1][3] >= w[0][3]), "total surfels must be monotone");
    assert!(plot.is_file() && std::fs::metadata(&plot).unwrap().len() > 0);

    // Hit budget: rasterizing the final map from every dataset pose at the
    // render cap never exceeds 80 hits in any pixel.
    let map = load_map(&map_path).unwrap();
    let reader = DatasetReader::open(Path::new(&ds)).unwrap();
    let mut max_hits = 0usize;
    let mut mean_hits = 0.0f64;
    for frame in reader {
        let frame = frame.unwrap();
        let buffers = rasterize(&map, &frame.intrinsics, &frame.pose, 80);
        let stats = raster_stats(&buffers);
        max_hits = max_hits.max(stats.max_hits);
        mean_hits = mean_hits.max(stats.mean_hits);
    }
    verdict(
        9,
        max_hits <= 80,
        &format!(
            "report CSV (6 rows) -> growth plot via CLI; per-pixel hits over all views: max {max_hits} (<= 80), peak mean {mean_hits:.2}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Serialization: 1000 randomized map/checkpoint round trips are
//     byte-exact on re-save.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_10_serialization_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut trips = 0usize;
    for i in 0..500 {
        let fdim = [4usize, 8, 32][rng.gen_range(0..3)];
        let mut map = SurfelMap::new(fdim);
        for _ in 0..rng.gen_range(0..40usize) {
            map.insert(random_surfel(&mut rng, fdim));
        }
        let a = dir.path().join(format!("m{i}_a.smap"));
        let b = dir.path().join(format!("m{i}_b.smap"));
        save_map(&map, &a).unwrap();
        let loaded = load_map(&a).unwrap();
        assert_eq!(loaded.len(), map.len());
        save_map(&loaded, &b).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "map round trip {i} not byte-exact"
        );
        trips += 1;
    }
    for i in 0..500 {
        let cfg = NetConfig {
            feature_dim: [4usize, 8][rng.gen_range(0..2)],
            hidden: [4usize, 8][rng.gen_range(0..2)],
            ..NetConfig::default()
        };
        let bundle = NetworkBundle::init(cfg, i as u64);
        let a = dir.path().join(format!("c{i}_a.snrf"));
        let b = dir.path().join(format!("c{i}_b.snrf"));
        bundle.save(&a).unwrap();
        let loaded = NetworkBundle::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "checkpoint round trip {i} not byte-exact"
        );
        trips += 1;
    }
    verdict(10, trips == 1000, &format!("{trips} map/checkpoint round trips byte-exact"));
}
