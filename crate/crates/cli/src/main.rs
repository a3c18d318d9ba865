//! Command-line driver: dataset generation, staged training, evaluation,
//! the gradient and MMD verification suites, and CSV-to-SVG plotting.
//!
//! Exit codes: 0 success, 1 contract or validation failure, 2 I/O failure.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xmpose_core::checks;
use xmpose_core::pipeline::{
    self, load_checkpoint, ExperimentConfig, OutPaths, PipelineError,
};
use xmpose_core::scene::{read_dataset, window_origin, TaskMode};

#[derive(Parser)]
#[command(
    name = "xmpose",
    about = "Cross-modal pose transfer at desk scale: train on synthetic depth, infer on color",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (key = value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (the XMP_OUT env var also overrides it).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads for data generation (1 = bit-exact reference mode).
    #[arg(long)]
    threads: Option<usize>,
    /// Disable the feature-mapping loss (ablation).
    #[arg(long)]
    no_fm: bool,
    /// Disable the MMD loss (ablation).
    #[arg(long)]
    no_mmd: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Ok(out) = std::env::var("XMP_OUT") {
            if !out.is_empty() {
                cfg.out_dir = out;
            }
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads.max(1);
        }
        if self.no_fm {
            cfg.fm_on = false;
        }
        if self.no_mmd {
            cfg.mmd_on = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic, paired and test dataset files.
    GenData(ConfigArgs),
    /// Run the staged training schedule and write checkpoints + training log.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split and write the metrics CSV.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to evaluate (default: <out_dir>/checkpoint.xmpw).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Lightweight inference demo: run the color stream on one test record.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to load (default: <out_dir>/checkpoint.xmpw).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test-record index to run.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Verify reverse-mode gradients of the joint objective against central
    /// finite differences.
    Gradcheck(ConfigArgs),
    /// Run the MMD property battery (plus gradient-routing check).
    Mmdcheck(ConfigArgs),
    /// Render a CSV produced by `train` or `eval` to an SVG figure.
    Plot {
        /// Input CSV: a metrics.csv (PCK curves) or trainlog.csv (loss curves).
        #[arg(long)]
        input: PathBuf,
        /// Output SVG path (default: input with .svg extension).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are contract failures: exit 1, not clap's 2.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                PipelineError::Io { .. } => 2,
                PipelineError::Scene(xmpose_core::scene::SceneError::Io { .. }) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenData(args) => {
            let cfg = args.load()?;
            let paths = pipeline::run_gen_data(&cfg)?;
            println!(
                "wrote {} ({} records), {} ({}), {} ({})",
                paths.synth.display(),
                cfg.synth_count,
                paths.pairs.display(),
                cfg.pair_count,
                paths.test.display(),
                cfg.test_count
            );
            Ok(())
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = pipeline::run_train(&cfg)?;
            let paths = OutPaths::new(&cfg.out_dir);
            let last = out.log.rows.last();
            println!(
                "trained {} steps in {:.1}s (final total loss {})",
                out.log.rows.len(),
                out.log.wall_secs,
                last.map(|r| r.total.to_string()).unwrap_or_default()
            );
            println!(
                "wrote {} and {}",
                paths.checkpoint.display(),
                paths.trainlog.display()
            );
            Ok(())
        }
        Command::Eval { config, checkpoint } => {
            let cfg = config.load()?;
            let paths = OutPaths::new(&cfg.out_dir);
            let ck = checkpoint.unwrap_or(paths.checkpoint.clone());
            let report = pipeline::run_eval(&cfg, &ck)?;
            print!("{}", summarize(&report));
            println!("wrote {}", paths.metrics.display());
            Ok(())
        }
        Command::Infer {
            config,
            checkpoint,
            index,
        } => {
            let cfg = config.load()?;
            let paths = OutPaths::new(&cfg.out_dir);
            let ck_path = checkpoint.unwrap_or(paths.checkpoint.clone());
            let ck = load_checkpoint(&ck_path)?;
            let run_cfg = match &ck.config_text {
                Some(text) => ExperimentConfig::parse(text)?,
                None => cfg.clone(),
            };
            let nets = xmpose_core::networks::Nets::new(ck.spec, ck.params);
            let test = read_dataset(&paths.test)?;
            let Some(record) = test.records.get(index) else {
                return Err(PipelineError::DatasetMismatch(format!(
                    "test split has {} records, index {index} is out of range",
                    test.records.len()
                )));
            };
            let color = record.color.as_ref().expect("test records carry color");
            let vector = pipeline::infer_pose_vector(&nets, run_cfg.fm_on, color)?;
            println!("pose_vector = {vector:?}");
            if run_cfg.mode == TaskMode::Object {
                let scene = run_cfg.scene_config();
                let intr = scene.intrinsics();
                let truth = record.pose();
                let (left, top) = window_origin(&truth, &intr, run_cfg.window)?;
                let wintr = intr.for_window(left, top, run_cfg.window);
                let inf = pipeline::infer_object(
                    &nets,
                    run_cfg.fm_on,
                    color,
                    &scene.nominal_model().corners,
                    &wintr,
                )?;
                println!(
                    "recovered pose: t = {:?}, rotation error to truth = {:.4} rad, translation error = {:.4} m",
                    [
                        inf.pose.translation.x,
                        inf.pose.translation.y,
                        inf.pose.translation.z
                    ],
                    inf.pose.rotation_angle_to(&truth),
                    inf.pose.translation_distance_to(&truth),
                );
            }
            Ok(())
        }
        Command::Gradcheck(args) => {
            let cfg = args.load()?;
            let report = checks::gradient_check(&cfg, 10, 4);
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err(PipelineError::Config("gradient check failed".into()))
            }
        }
        Command::Mmdcheck(args) => {
            let cfg = args.load()?;
            let mut report = checks::mmd_check();
            report.items.extend(checks::mmd_routing_check(&cfg, 5).items);
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err(PipelineError::Config("MMD check failed".into()))
            }
        }
        Command::Plot { input, output } => {
            let out = output.unwrap_or_else(|| input.with_extension("svg"));
            let text = std::fs::read_to_string(&input).map_err(|e| PipelineError::Io {
                path: input.display().to_string(),
                source: e,
            })?;
            let svg = plot_csv(&input, &text)?;
            std::fs::write(&out, svg).map_err(|e| PipelineError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            println!("plotted {} -> {}", input.display(), out.display());
            Ok(())
        }
    }
}

fn summarize(report: &pipeline::EvalReport) -> String {
    let mut s = String::new();
    for row in &report.rows {
        s.push_str(&format!(
            "{} (threshold {}): {:.4}\n",
            row.metric, row.threshold, row.value
        ));
    }
    s
}

/// Build the right figure for a pipeline CSV: PCK curves from a metrics file,
/// loss curves from a training log.
fn plot_csv(path: &Path, text: &str) -> Result<String, PipelineError> {
    let header = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .unwrap_or_default();
    let bad = |reason: &str| PipelineError::Malformed {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };

    if header.starts_with("metric,") {
        // PCK rows from a metrics CSV.
        let mut pck = plot::Series {
            label: "color stream".into(),
            points: vec![],
        };
        let mut upper = plot::Series {
            label: "depth upper bound".into(),
            points: vec![],
        };
        for line in text.lines().skip_while(|l| *l != header).skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                continue;
            }
            let t: f64 = cols[1].parse().map_err(|_| bad("bad threshold column"))?;
            let v: f64 = cols[5].parse().map_err(|_| bad("bad value column"))?;
            match cols[0] {
                "pck" => pck.points.push((t, v)),
                "pck_depth_upper" => upper.points.push((t, v)),
                _ => {}
            }
        }
        if pck.points.is_empty() {
            return Err(bad("no pck rows found (object-mode metrics have no curve)"));
        }
        let mut series = vec![pck];
        if !upper.points.is_empty() {
            series.push(upper);
        }
        return Ok(plot::render_svg(&plot::PlotSpec {
            title: "3D PCK".into(),
            x_label: "threshold (mm)".into(),
            y_label: "fraction of joints".into(),
            log_y: false,
            series,
        }));
    }

    if header.starts_with("stage,") {
        let mut series: Vec<plot::Series> = vec![];
        let mut offset = 0.0f64;
        let mut last_stage = String::new();
        for line in text.lines().skip_while(|l| *l != header).skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                continue;
            }
            let stage = cols[0].to_string();
            let step: f64 = cols[1].parse().map_err(|_| bad("bad step column"))?;
            let total: f64 = cols[5].parse().map_err(|_| bad("bad loss column"))?;
            if stage != last_stage {
                offset += series
                    .last()
                    .and_then(|s| s.points.last().map(|p| p.0))
                    .unwrap_or(0.0);
                series.push(plot::Series {
                    label: stage.clone(),
                    points: vec![],
                });
                last_stage = stage;
            }
            if let Some(s) = series.last_mut() {
                s.points.push((offset + step, total));
            }
        }
        if series.is_empty() {
            return Err(bad("no training rows found"));
        }
        return Ok(plot::render_svg(&plot::PlotSpec {
            title: "training loss".into(),
            x_label: "step".into(),
            y_label: "loss (log scale)".into(),
            log_y: true,
            series,
        }));
    }

    Err(bad("unrecognized CSV header"))
}
