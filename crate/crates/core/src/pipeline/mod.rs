//! End-to-end orchestration: dataset generation, the staged training
//! schedule, inference, and evaluation, all keyed off one experiment config.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use eval::{evaluate, infer_object, infer_pose_vector, EvalReport, MetricRow};
pub use train::{
    stage_joint_train, stage_pretrain_color, stage_pretrain_depth, train_all, Stage, TrainLog,
    TrainOutput, TrainState,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AdError;
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::networks::{NetError, Nets};
use crate::optim::OptimError;
use crate::scene::{build_datasets, read_dataset, write_dataset, Dataset, SceneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Malformed { path: String, reason: String },
    #[error("non-finite loss in stage {stage} at step {step}; last good parameters kept")]
    NonFiniteLoss { stage: &'static str, step: u64 },
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Canonical artifact locations under the experiment's output directory.
pub struct OutPaths {
    pub dir: PathBuf,
    pub synth: PathBuf,
    pub pairs: PathBuf,
    pub test: PathBuf,
    pub checkpoint_pretrain_depth: PathBuf,
    pub checkpoint_pretrain_color: PathBuf,
    pub checkpoint: PathBuf,
    pub checkpoint_aborted: PathBuf,
    pub trainlog: PathBuf,
    pub metrics: PathBuf,
}

impl OutPaths {
    pub fn new(out_dir: &str) -> OutPaths {
        let dir = PathBuf::from(out_dir);
        OutPaths {
            synth: dir.join("synth.xmpd"),
            pairs: dir.join("pairs.xmpd"),
            test: dir.join("test.xmpd"),
            checkpoint_pretrain_depth: dir.join("checkpoint_pretrain_depth.xmpw"),
            checkpoint_pretrain_color: dir.join("checkpoint_pretrain_color.xmpw"),
            checkpoint: dir.join("checkpoint.xmpw"),
            checkpoint_aborted: dir.join("checkpoint_aborted.xmpw"),
            trainlog: dir.join("trainlog.csv"),
            metrics: dir.join("metrics.csv"),
            dir,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Generate and write the three dataset files.
pub fn run_gen_data(cfg: &ExperimentConfig) -> Result<OutPaths> {
    cfg.validate()?;
    let paths = OutPaths::new(&cfg.out_dir);
    std::fs::create_dir_all(&paths.dir).map_err(|e| io_err(&paths.dir, e))?;
    let sets = build_datasets(
        &cfg.scene_config(),
        cfg.synth_count,
        cfg.pair_count,
        cfg.test_count,
        cfg.master_seed,
        cfg.threads,
    )?;
    write_dataset(&sets.synth, &paths.synth)?;
    write_dataset(&sets.pairs, &paths.pairs)?;
    write_dataset(&sets.test, &paths.test)?;
    Ok(paths)
}

/// Load datasets, run the staged schedule, write stage checkpoints, the
/// final checkpoint (with optimizer state and config) and the training log.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let paths = OutPaths::new(&cfg.out_dir);
    let synth = read_dataset(&paths.synth)?;
    let pairs = read_dataset(&paths.pairs)?;
    check_dataset_matches(cfg, &synth)?;

    let out = match train_all(cfg, &synth, &pairs) {
        Ok(out) => out,
        Err(e @ PipelineError::NonFiniteLoss { .. }) => {
            // Training aborted; the stage restored its last good parameters.
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    let config_text = cfg.to_text();
    save_checkpoint(
        &Checkpoint {
            spec: out.state.nets.spec.clone(),
            params: out.after_depth.clone(),
            adam: None,
            config_text: Some(config_text.clone()),
        },
        &paths.checkpoint_pretrain_depth,
    )?;
    save_checkpoint(
        &Checkpoint {
            spec: out.state.nets.spec.clone(),
            params: out.after_color.clone(),
            adam: None,
            config_text: Some(config_text.clone()),
        },
        &paths.checkpoint_pretrain_color,
    )?;
    save_checkpoint(
        &Checkpoint {
            spec: out.state.nets.spec.clone(),
            params: out.state.nets.params.clone(),
            adam: Some(out.state.adam.clone()),
            config_text: Some(config_text),
        },
        &paths.checkpoint,
    )?;
    std::fs::write(&paths.trainlog, out.log.to_csv()).map_err(|e| io_err(&paths.trainlog, e))?;
    Ok(out)
}

fn check_dataset_matches(cfg: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    if ds.window != cfg.window {
        return Err(PipelineError::DatasetMismatch(format!(
            "dataset window {} does not match config window {}",
            ds.window, cfg.window
        )));
    }
    if ds.mode != cfg.mode {
        return Err(PipelineError::DatasetMismatch(format!(
            "dataset mode {} does not match config mode {}",
            ds.mode.tag(),
            cfg.mode.tag()
        )));
    }
    Ok(())
}

/// Load a checkpoint (preferring its embedded config), evaluate on the test
/// split, and write the metrics CSV.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint_path: &Path) -> Result<EvalReport> {
    let ck = load_checkpoint(checkpoint_path)?;
    // The checkpoint's embedded config describes the run that produced it;
    // it wins over the caller's config for everything but file locations.
    let eval_cfg = match &ck.config_text {
        Some(text) => {
            let mut c = ExperimentConfig::parse(text)?;
            c.out_dir = cfg.out_dir.clone();
            c
        }
        None => cfg.clone(),
    };
    let paths = OutPaths::new(&eval_cfg.out_dir);
    let test = read_dataset(&paths.test)?;
    check_dataset_matches(&eval_cfg, &test)?;
    let nets = Nets::new(ck.spec, ck.params);
    let report = evaluate(&eval_cfg, &nets, &test)?;
    std::fs::write(&paths.metrics, report.to_csv()).map_err(|e| io_err(&paths.metrics, e))?;
    Ok(report)
}
