mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use output::{sidecar_manifest, Manifest, OutputSet, Timings};
use probslam::ba::{read_problem, write_problem};
use probslam::dataset::{read_detections, read_tum_trajectory, write_detections, write_tum_trajectory, DEFAULT_MAX_DT};
use probslam::eval::{ate, rpe, MetricSummary, SUMMARY_CSV_HEADER};
use probslam::pipeline::{run_comparison, solve_frames, FrameResult, PipelineOptions, WeightSource};
use probslam::probmap::{build_map, render_pgm, GaussianWeightModel};
use probslam::simulator::{generate, Initialization, SceneConfig};

/// Probabilistic down-weighting of dynamic observations in pose estimation.
#[derive(Parser)]
#[command(name = "probslam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its dataset files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the confidence map of one detection frame as a PGM image.
    Probmap {
        #[arg(long)]
        detections: PathBuf,
        /// Timestamp of the frame, in seconds.
        #[arg(long)]
        frame: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
    },
    /// Solve a bundle adjustment problem and write the camera trajectory.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        /// Weight observations with maps built from these detections.
        #[arg(long, conflicts_with = "uniform_weights")]
        detections: Option<PathBuf>,
        /// Replace every observation weight with 1.
        #[arg(long)]
        uniform_weights: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
    },
    /// Compare an estimated trajectory with a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Allow a scale factor in the alignment.
        #[arg(long)]
        scale: bool,
        #[arg(long, default_value_t = 1)]
        rpe_delta: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
        /// Output directory for the CSV files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scene, solve it with detection and uniform weights, and compare.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Probmap { detections, frame, out, max_dt } => probmap(&detections, frame, &out, max_dt),
        Command::Solve { problem, detections, uniform_weights, out, max_dt } => {
            solve(&problem, detections.as_deref(), uniform_weights, &out, max_dt)
        }
        Command::Eval { reference, est, scale, rpe_delta, max_dt, out } => {
            eval(&reference, &est, scale, rpe_delta, max_dt, &out)
        }
        Command::Pipeline { config, out } => pipeline(&config, &out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_config(path: &Path) -> Result<SceneConfig> {
    SceneConfig::parse(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn config_json(config: &SceneConfig) -> Value {
    serde_json::to_value(config).expect("config serializes")
}

fn simulate(config_path: &Path, out: &Path) -> Result<()> {
    let config = read_config(config_path)?;
    let mut timings = Timings::default();
    let scene = timings.time("simulate", || generate(&config))?;
    let mut files = OutputSet::default();
    timings.time("serialize", || {
        files.add("ground_truth", out.join("groundtruth.txt"), write_tum_trajectory(&scene.ground_truth()));
        files.add("detections", out.join("detections.jsonl"), write_detections(&scene.detection_frames()));
        files.add("problem", out.join("problem.txt"), write_problem(&scene.problem(Initialization::PreviousFrame)));
        files.add("config", out.join("config.txt"), config.to_config_text());
    });
    let manifest = Manifest::new("simulate")
        .seed(config.seed)
        .config(config_json(&config))
        .input("config", config_path)
        .results(json!({
            "frames": scene.frames.len(),
            "landmarks": scene.landmarks.len(),
            "dynamic_observations": scene.dynamic_observation_count(),
            "contaminated": scene.contaminated,
        }));
    files.commit(&manifest, out.join("manifest.json"), &timings)
}

fn probmap(detections: &Path, frame: f64, out: &Path, max_dt: f64) -> Result<()> {
    let frames = read_detections(&read_text(detections)?).with_context(|| format!("parsing {}", detections.display()))?;
    let (index, det) = frames
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.timestamp - frame).abs().total_cmp(&(b.1.timestamp - frame).abs()))
        .filter(|(_, f)| (f.timestamp - frame).abs() <= max_dt)
        .ok_or_else(|| anyhow!("no detection frame within {max_dt} s of t = {frame}"))?;
    let model = GaussianWeightModel::default();
    let mut timings = Timings::default();
    let map = timings.time("probmap", || build_map(&det.detections, det.width, det.height, &model))?;
    let mut files = OutputSet::default();
    files.add("map", out.to_path_buf(), render_pgm(&map));
    let manifest = Manifest::new("probmap")
        .config(json!({ "frame": frame, "max_dt": max_dt, "peak": model.peak(), "floor": model.floor() }))
        .input("detections", detections)
        .results(json!({
            "frame_index": index,
            "timestamp": det.timestamp,
            "width": map.width(),
            "height": map.height(),
            "detections": det.detections.len(),
        }));
    files.commit(&manifest, sidecar_manifest(out), &timings)
}

fn frame_json(f: &FrameResult) -> Value {
    json!({
        "frame_id": f.frame_id,
        "timestamp": f.timestamp,
        "detection_frame": f.detection_frame,
        "iterations": f.report.iterations,
        "initial_cost": f.report.initial_cost,
        "final_cost": f.report.final_cost,
        "converged": f.report.converged,
        "termination": format!("{:?}", f.report.termination),
        "skipped_observations": f.report.skipped_observations,
    })
}

fn solve(problem_path: &Path, detections: Option<&Path>, uniform: bool, out: &Path, max_dt: f64) -> Result<()> {
    let problem = read_problem(&read_text(problem_path)?).with_context(|| format!("parsing {}", problem_path.display()))?;
    let frames = match detections {
        Some(p) => Some(read_detections(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let weights = match (&frames, uniform) {
        (Some(f), _) => WeightSource::Detections(f),
        (None, true) => WeightSource::Uniform,
        (None, false) => WeightSource::AsGiven,
    };
    let options = PipelineOptions { max_dt, ..PipelineOptions::default() };
    let result = solve_frames(&problem, weights, &options)?;
    let mut timings = Timings::default();
    timings.record("probmap", result.timings.probmap_ms);
    timings.record("solve", result.timings.solve_ms);

    let mut files = OutputSet::default();
    files.add("trajectory", out.to_path_buf(), write_tum_trajectory(&result.trajectory()));
    let mut manifest = Manifest::new("solve")
        .config(json!({
            "weights": match weights {
                WeightSource::Detections(_) => "detections",
                WeightSource::Uniform => "uniform",
                WeightSource::AsGiven => "as_given",
            },
            "max_dt": max_dt,
            "max_iterations": options.solve.max_iterations,
        }))
        .input("problem", problem_path);
    if let Some(p) = detections {
        manifest = manifest.input("detections", p);
    }
    let manifest = manifest.results(json!({
        "frames": result.frames.iter().map(frame_json).collect::<Vec<_>>(),
    }));
    files.commit(&manifest, sidecar_manifest(out), &timings)
}

fn summary_json(s: &MetricSummary) -> Value {
    json!({ "n": s.n, "rmse": s.rmse, "mean": s.mean, "median": s.median, "std": s.std, "min": s.min, "max": s.max })
}

fn eval(reference: &Path, est: &Path, scale: bool, delta: usize, max_dt: f64, out: &Path) -> Result<()> {
    let r = read_tum_trajectory(&read_text(reference)?).with_context(|| format!("parsing {}", reference.display()))?;
    let e = read_tum_trajectory(&read_text(est)?).with_context(|| format!("parsing {}", est.display()))?;
    let mut timings = Timings::default();
    let a = timings.time("ate", || ate(&r, &e, max_dt, scale))?;
    let p = timings.time("rpe", || rpe(&r, &e, delta, max_dt))?;

    let mut files = OutputSet::default();
    files.add("ate", out.join("ate.csv"), a.series.to_csv());
    files.add("rpe_translation", out.join("rpe_trans.csv"), p.translation.0.to_csv());
    files.add("rpe_rotation", out.join("rpe_rot.csv"), p.rotation.0.to_csv());
    let summary = format!(
        "{SUMMARY_CSV_HEADER}\n{}\n{}\n{}\n",
        a.summary.csv_row("ate"),
        p.translation.1.csv_row("rpe_trans"),
        p.rotation.1.csv_row("rpe_rot"),
    );
    files.add("summary", out.join("summary.csv"), summary);
    let manifest = Manifest::new("eval")
        .config(json!({ "scale": scale, "rpe_delta": delta, "max_dt": max_dt }))
        .input("reference", reference)
        .input("estimate", est)
        .results(json!({
            "alignment_scale": a.alignment.scale,
            "ate": summary_json(&a.summary),
            "rpe_trans": summary_json(&p.translation.1),
            "rpe_rot": summary_json(&p.rotation.1),
        }));
    files.commit(&manifest, out.join("manifest.json"), &timings)
}

fn pipeline(config_path: &Path, out: &Path) -> Result<()> {
    let config = read_config(config_path)?;
    let mut timings = Timings::default();
    let scene = timings.time("simulate", || generate(&config))?;
    let options = PipelineOptions::default();
    let cmp = run_comparison(&scene, &options)?;
    if !cmp.improvement().is_finite() {
        bail!("comparison produced a non-finite improvement");
    }
    for (name, m) in [("weighted", &cmp.weighted), ("uniform", &cmp.uniform)] {
        timings.record(&format!("{name}_probmap"), m.output.timings.probmap_ms);
        timings.record(&format!("{name}_solve"), m.output.timings.solve_ms);
    }

    let mut files = OutputSet::default();
    files.add("comparison", out.join("comparison.csv"), cmp.to_csv());
    files.add("ground_truth", out.join("groundtruth.txt"), write_tum_trajectory(&cmp.ground_truth));
    files.add("weighted", out.join("estimate_weighted.txt"), write_tum_trajectory(&cmp.weighted.output.trajectory()));
    files.add("uniform", out.join("estimate_uniform.txt"), write_tum_trajectory(&cmp.uniform.output.trajectory()));
    let method = |m: &probslam::pipeline::MethodResult| {
        json!({
            "ate": summary_json(&m.ate.summary),
            "rpe_trans": summary_json(&m.rpe.translation.1),
            "rpe_rot": summary_json(&m.rpe.rotation.1),
        })
    };
    let manifest = Manifest::new("pipeline")
        .seed(config.seed)
        .config(config_json(&config))
        .input("config", config_path)
        .results(json!({
            "weighted": method(&cmp.weighted),
            "uniform": method(&cmp.uniform),
            "improvement": cmp.improvement(),
        }));
    files.commit(&manifest, out.join("manifest.json"), &timings)
}
