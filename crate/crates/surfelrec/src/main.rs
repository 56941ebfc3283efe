use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use surfelrec::dataset::{read_intrinsics_file, read_pose, write_rgb_png, DatasetReader};
use surfelrec::fusion::FusionScheme;
use surfelrec::ingest::DepthRefiner;
use surfelrec::mapio::{load_map, save_map};
use surfelrec::nn::{NetConfig, NetworkBundle};
use surfelrec::pipeline::{
    eval_views, finetune_scene, reconstruct_online, select_keyframes, train_scene,
    KeyframeReport, PipelineConfig, StepLog, TrainConfig,
};
use surfelrec::plot::write_line_plot;
use surfelrec::render::{render_image, render_image_dense_baseline};
use surfelrec::synth::{synth_generate, SceneSpec};
use surfelrec::types::CameraIntrinsics;
use surfelrec::{Error, Frame, Result};

#[derive(Parser)]
#[command(name = "surfelrec", version, about = "Online neural-surfel reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic RGB-D dataset with exact depth/normal sidecars.
    Synth {
        /// Scene preset: "room" or "wall".
        #[arg(long, default_value = "room")]
        scene: String,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 80)]
        width: usize,
        #[arg(long, default_value_t = 60)]
        height: usize,
        /// Override the preset's sensor-depth hole probability.
        #[arg(long)]
        hole_prob: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate a dataset's keyframes into a surfel map.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        /// Per-keyframe CSV (frame_index,merged,inserted,total_surfels,bytes,ms).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render the map from a pose.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 4x4 camera-to-world pose, row-major text.
        #[arg(long)]
        pose_file: PathBuf,
        /// intrinsics.txt describing the output camera.
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "dense" switches to the brute-force ray-marching renderer.
        #[arg(long)]
        baseline: Option<String>,
        /// March step for the dense baseline, meters.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the networks end to end on one scene.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Warm-start checkpoint; fresh seeded init when absent.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Training log CSV (step,L_render,L_d,L,wall_ms).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fine-tune surfel features and shading heads on one reconstructed scene.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        out_map: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render dataset views from a map and score PSNR/SSIM.
    Eval {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// "heldout", "keyframes", or "all".
        #[arg(long, default_value = "heldout")]
        split: String,
        /// Output CSV (frame_index,psnr,ssim).
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a reconstruction report CSV and plot map growth.
    Stats {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        plot: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code differs from our contract (1 = usage),
            // except for --help/--version which remain success.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

/// TOML key=value overrides for training/pipeline knobs.
fn apply_config(
    path: Option<&PathBuf>,
    tcfg: &mut TrainConfig,
    pcfg: &mut PipelineConfig,
) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let bad = |k: &str| Error::Format(format!("{}: bad value for {k}", path.display()));
    for (key, val) in table {
        match key.as_str() {
            "lr" => tcfg.lr = val.as_float().ok_or_else(|| bad(&key))?,
            "lambda_depth" => tcfg.lambda_depth = val.as_float().ok_or_else(|| bad(&key))?,
            "keyframe_fraction" => {
                tcfg.keyframe_fraction = val.as_float().ok_or_else(|| bad(&key))?
            }
            "unroll_window" => {
                tcfg.unroll_window = val.as_integer().ok_or_else(|| bad(&key))? as usize
            }
            "iterations" => tcfg.iterations = val.as_integer().ok_or_else(|| bad(&key))? as usize,
            "stride" => pcfg.stride = val.as_integer().ok_or_else(|| bad(&key))? as usize,
            "refiner" => {
                pcfg.refiner = match val.as_str().ok_or_else(|| bad(&key))? {
                    "identity" => DepthRefiner::Identity,
                    "diffusion" => DepthRefiner::DiffusionFill,
                    "learned" => DepthRefiner::Learned,
                    other => {
                        return Err(Error::Format(format!("unknown refiner {other:?}")));
                    }
                }
            }
            "fusion_scheme" => {
                pcfg.fusion.scheme = match val.as_str().ok_or_else(|| bad(&key))? {
                    "gru" => FusionScheme::Gru,
                    "weighted_sum" => FusionScheme::WeightedSum,
                    other => {
                        return Err(Error::Format(format!("unknown fusion scheme {other:?}")));
                    }
                }
            }
            "delta_depth" => pcfg.fusion.delta_depth = val.as_float().ok_or_else(|| bad(&key))?,
            "k_candidates" => {
                pcfg.fusion.k_candidates = val.as_integer().ok_or_else(|| bad(&key))? as usize
            }
            "normal_angle_max_deg" => {
                pcfg.fusion.normal_angle_max_deg = val.as_float().ok_or_else(|| bad(&key))?
            }
            "max_hits" => {
                pcfg.render.max_hits = val.as_integer().ok_or_else(|| bad(&key))? as usize
            }
            "last_delta" => pcfg.render.last_delta = val.as_float().ok_or_else(|| bad(&key))?,
            "tile_size" => {
                pcfg.render.tile_size = val.as_integer().ok_or_else(|| bad(&key))? as usize
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: unknown config key {other:?}",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn load_all_frames(dir: &Path) -> Result<Vec<Frame>> {
    DatasetReader::open(dir)?.collect()
}

fn write_report_csv(path: &Path, reports: &[KeyframeReport]) -> Result<()> {
    let mut text = String::from("frame_index,merged,inserted,total_surfels,bytes,ms\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.frame_index, r.merged, r.inserted, r.total_surfels, r.bytes, r.ms
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_train_log_csv(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut text = String::from("step,L_render,L_d,L,wall_ms\n");
    for l in logs {
        text.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.3}\n",
            l.step, l.l_render, l.l_d, l.l, l.wall_ms
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Held-out views: every other non-keyframe (odd positions in the sorted
/// non-keyframe list). The complement (keyframes plus the remaining
/// non-keyframes) is the held-in set used for fine-tuning.
fn heldout_split(n: usize, keyframes: &[usize]) -> Vec<usize> {
    (0..n)
        .filter(|i| !keyframes.contains(i))
        .enumerate()
        .filter_map(|(pos, i)| if pos % 2 == 1 { Some(i) } else { None })
        .collect()
}

fn default_intrinsics(width: usize, height: usize) -> Result<CameraIntrinsics> {
    CameraIntrinsics::new(
        width as f64 * 0.8,
        width as f64 * 0.8,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { scene, frames, width, height, hole_prob, out, seed } => {
            let mut spec = match scene.as_str() {
                "room" => SceneSpec::reference_room(),
                "wall" => SceneSpec::flat_wall(2.0),
                other => {
                    return Err(Error::Domain(format!(
                        "unknown scene preset {other:?} (expected \"room\" or \"wall\")"
                    )));
                }
            };
            if let Some(p) = hole_prob {
                spec.hole_prob = p;
            }
            let intr = default_intrinsics(width, height)?;
            synth_generate(&spec, &intr, frames, seed, &out)?;
            println!("wrote {frames} frames to {}", out.display());
            Ok(())
        }
        Cmd::Reconstruct { dataset, checkpoint, out, stride, report, seed, config } => {
            let _ = seed; // reconstruction is deterministic
            let mut tcfg = TrainConfig::train_defaults();
            let mut pcfg = PipelineConfig::default();
            apply_config(config.as_ref(), &mut tcfg, &mut pcfg)?;
            if let Some(s) = stride {
                pcfg.stride = s;
            }
            let bundle = NetworkBundle::load(&checkpoint)?;
            let reader = DatasetReader::open(&dataset)?;
            let keyframes = select_keyframes(reader.count, tcfg.keyframe_fraction);
            let (map, reports) = reconstruct_online(reader, &keyframes, &bundle, &pcfg)?;
            save_map(&map, &out)?;
            if let Some(path) = report {
                write_report_csv(&path, &reports)?;
            }
            println!("map: {} surfels from {} keyframes", map.len(), reports.len());
            Ok(())
        }
        Cmd::Render {
            map, checkpoint, pose_file, intrinsics, out, baseline, step, seed, config,
        } => {
            let _ = seed;
            let mut tcfg = TrainConfig::train_defaults();
            let mut pcfg = PipelineConfig::default();
            apply_config(config.as_ref(), &mut tcfg, &mut pcfg)?;
            let map = load_map(&map)?;
            let bundle = NetworkBundle::load(&checkpoint)?;
            let intr = read_intrinsics_file(&intrinsics)?;
            let pose = read_pose(&pose_file)?;
            let img = match baseline.as_deref() {
                None => render_image(&map, &bundle, &intr, &pose, &pcfg.render)?,
                Some("dense") => {
                    render_image_dense_baseline(&map, &bundle, &intr, &pose, &pcfg.render, step)?
                }
                Some(other) => {
                    return Err(Error::Domain(format!(
                        "unknown baseline {other:?} (expected \"dense\")"
                    )));
                }
            };
            write_rgb_png(&out, &img)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Train { dataset, out, init_checkpoint, iterations, log, seed, config } => {
            let mut tcfg = TrainConfig::train_defaults();
            let mut pcfg = PipelineConfig::default();
            apply_config(config.as_ref(), &mut tcfg, &mut pcfg)?;
            tcfg.seed = seed;
            if let Some(i) = iterations {
                tcfg.iterations = i;
            }
            let frames = load_all_frames(&dataset)?;
            let mut bundle = match init_checkpoint {
                Some(path) => NetworkBundle::load(&path)?,
                None => NetworkBundle::init(NetConfig::default(), seed),
            };
            let logs = train_scene(&frames, &mut bundle, &tcfg, &pcfg)?;
            bundle.save(&out)?;
            if let Some(path) = log {
                write_train_log_csv(&path, &logs)?;
            }
            if let Some(last) = logs.last() {
                println!("final loss {:.6} after {} steps", last.l, logs.len());
            }
            Ok(())
        }
        Cmd::Finetune {
            dataset, checkpoint, map, out_checkpoint, out_map, iterations, log, seed, config,
        } => {
            let mut tcfg = TrainConfig::finetune_defaults();
            let mut pcfg = PipelineConfig::default();
            apply_config(config.as_ref(), &mut tcfg, &mut pcfg)?;
            tcfg.seed = seed;
            if let Some(i) = iterations {
                tcfg.iterations = i;
            }
            let frames = load_all_frames(&dataset)?;
            let keyframes = select_keyframes(frames.len(), tcfg.keyframe_fraction);
            let heldout = heldout_split(frames.len(), &keyframes);
            let heldin: Vec<Frame> = frames
                .iter()
                .filter(|f| !heldout.contains(&f.index))
                .cloned()
                .collect();
            let mut map = load_map(&map)?;
            let mut bundle = NetworkBundle::load(&checkpoint)?;
            let logs = finetune_scene(&mut map, &mut bundle, &heldin, &tcfg, &pcfg)?;
            save_map(&map, &out_map)?;
            bundle.save(&out_checkpoint)?;
            if let Some(path) = log {
                write_train_log_csv(&path, &logs)?;
            }
            println!("fine-tuned {} steps on {} held-in views", logs.len(), heldin.len());
            Ok(())
        }
        Cmd::Eval { map, checkpoint, dataset, split, metrics, seed, config } => {
            let _ = seed;
            let mut tcfg = TrainConfig::train_defaults();
            let mut pcfg = PipelineConfig::default();
            apply_config(config.as_ref(), &mut tcfg, &mut pcfg)?;
            let map = load_map(&map)?;
            let bundle = NetworkBundle::load(&checkpoint)?;
            let frames = load_all_frames(&dataset)?;
            let keyframes = select_keyframes(frames.len(), tcfg.keyframe_fraction);
            let picked: Vec<Frame> = match split.as_str() {
                "all" => frames,
                "keyframes" => frames
                    .into_iter()
                    .filter(|f| keyframes.contains(&f.index))
                    .collect(),
                "heldout" => {
                    let heldout = heldout_split(frames.len(), &keyframes);
                    frames
                        .into_iter()
                        .filter(|f| heldout.contains(&f.index))
                        .collect()
                }
                other => {
                    return Err(Error::Domain(format!(
                        "unknown split {other:?} (expected heldout, keyframes, or all)"
                    )));
                }
            };
            if picked.is_empty() {
                return Err(Error::Domain(format!("split {split:?} selected no frames")));
            }
            let rows = eval_views(&map, &bundle, &picked, &pcfg.render)?;
            let mut text = String::from("frame_index,psnr,ssim\n");
            for r in &rows {
                text.push_str(&format!("{},{:.4},{:.6}\n", r.frame_index, r.psnr, r.ssim));
            }
            std::fs::write(&metrics, text)
                .map_err(|e| Error::io(metrics.display().to_string(), e))?;
            let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
            println!("mean PSNR {:.4} dB over {} views", mean, rows.len());
            Ok(())
        }
        Cmd::Stats { report, plot } => {
            let text = std::fs::read_to_string(&report)
                .map_err(|e| Error::io(report.display().to_string(), e))?;
            let mut lines = text.lines();
            let header = lines.next().unwrap_or("");
            if header != "frame_index,merged,inserted,total_surfels,bytes,ms" {
                return Err(Error::Format(format!(
                    "{}: unexpected header {header:?}",
                    report.display()
                )));
            }
            let mut total = Vec::new();
            let mut inserted = Vec::new();
            let mut ms = Vec::new();
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(Error::Format(format!(
                        "{}: bad row {line:?}",
                        report.display()
                    )));
                }
                let num = |s: &str| -> Result<f64> {
                    s.parse()
                        .map_err(|_| Error::Format(format!("{}: bad number {s:?}", report.display())))
                };
                inserted.push(num(f[2])?);
                total.push(num(f[3])?);
                ms.push(num(f[5])?);
            }
            write_line_plot(
                &plot,
                &[("total_surfels", &total), ("inserted", &inserted)],
                640,
                400,
            )?;
            let mean_ms = ms.iter().sum::<f64>() / ms.len().max(1) as f64;
            println!(
                "keyframes: {}  final surfels: {}  mean integrate ms: {:.3}",
                total.len(),
                total.last().copied().unwrap_or(0.0),
                mean_ms
            );
            println!("wrote {}", plot.display());
            Ok(())
        }
    }
}
