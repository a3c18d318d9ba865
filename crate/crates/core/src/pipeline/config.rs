//! Experiment configuration: one `key = value` per line, `#` comments.
//! Every artifact the pipeline writes embeds the producing config verbatim.

use std::fmt::Write as _;

use crate::losses::{Ablation, LossWeights};
use crate::networks::{Activation, HeadMode, NetSpec};
use crate::optim::AdamHyper;
use crate::scene::{
    ClutterSpec, GapSpec, HandSpec, PoseRanges, SceneConfig, StyleSpec, TaskMode,
};

use super::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub mode: TaskMode,
    pub out_dir: String,
    pub threads: usize,

    // datasets
    pub synth_count: usize,
    pub pair_count: usize,
    pub test_count: usize,
    pub image_size: usize,
    pub window: usize,
    pub focal: f64,
    pub depth_max: f64,
    pub extents: [f64; 3],
    pub object_stud: bool,
    pub dist_range: (f64, f64),
    pub inplane_deg: (f64, f64),
    pub lateral_frac: f64,
    pub scale_aug: f64,

    // sensor gap
    pub gap: GapSpec,

    // background clutter
    pub clutter_boxes: (usize, usize),
    pub clutter_depth: (f64, f64),

    // networks
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub residual_blocks_g: usize,
    pub bottleneck_dim: usize,

    // loss
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub fm_on: bool,
    pub mmd_on: bool,

    // training
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_depth_epochs: usize,
    pub pretrain_color_epochs: usize,
    pub joint_epochs: usize,

    // evaluation
    pub tau_px: f64,
    pub add_kappa: f64,
    pub pck_thresholds: Vec<f64>,
    pub wrist_align: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 42,
            mode: TaskMode::Object,
            out_dir: "out".into(),
            threads: 1,
            synth_count: 2000,
            pair_count: 500,
            test_count: 300,
            image_size: 64,
            window: 32,
            focal: 140.0,
            depth_max: 3.0,
            extents: [0.10, 0.08, 0.06],
            object_stud: true,
            dist_range: (0.65, 1.15),
            inplane_deg: (-45.0, 45.0),
            lateral_frac: 0.05,
            scale_aug: 0.10,
            gap: GapSpec::default(),
            clutter_boxes: (4, 9),
            clutter_depth: (1.3, 2.8),
            hidden_dims: vec![64],
            feature_dim: 64,
            activation: Activation::Tanh,
            residual_blocks_g: 2,
            bottleneck_dim: 8,
            beta: 0.02,
            gamma: 0.01,
            sigma: 1.0,
            fm_on: true,
            mmd_on: true,
            batch_size: 128,
            learning_rate: 1e-4,
            pretrain_depth_epochs: 20,
            pretrain_color_epochs: 20,
            joint_epochs: 50,
            tau_px: 5.0,
            add_kappa: 0.1,
            pck_thresholds: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0],
            wrist_align: true,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for the hand task: same architecture, smaller
    /// budgets (the articulated toy converges faster).
    pub fn default_hand() -> ExperimentConfig {
        ExperimentConfig {
            mode: TaskMode::Hand,
            synth_count: 1000,
            pair_count: 300,
            test_count: 150,
            pretrain_depth_epochs: 10,
            pretrain_color_epochs: 10,
            joint_epochs: 25,
            ..ExperimentConfig::default()
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            fm_on: self.fm_on,
            mmd_on: self.mmd_on,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            alpha: self.learning_rate,
            ..AdamHyper::default()
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            mode: self.mode,
            image_size: self.image_size,
            window: self.window,
            focal: self.focal,
            depth_max: self.depth_max,
            extents: self.extents,
            object_stud: self.object_stud,
            ranges: PoseRanges {
                distance: self.dist_range,
                inplane_deg: self.inplane_deg,
                lateral_frac: self.lateral_frac,
            },
            gap: self.gap,
            style: StyleSpec::default(),
            clutter: ClutterSpec {
                min_boxes: self.clutter_boxes.0,
                max_boxes: self.clutter_boxes.1,
                depth: self.clutter_depth,
                ..ClutterSpec::default()
            },
            hand: HandSpec::default(),
            scale_aug: self.scale_aug,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            input_dim: self.window * self.window,
            color_channels: 3,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            activation: self.activation,
            residual_blocks_g: self.residual_blocks_g,
            head_mode: match self.mode {
                TaskMode::Object => HeadMode::ObjectCorners,
                TaskMode::Hand => HeadMode::HandJoints,
            },
            bottleneck_dim: Some(self.bottleneck_dim),
            hand_joints: crate::scene::HAND_JOINTS,
        }
    }

    /// Canonical text form: every key, fixed order, `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_list_f =
            |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let fmt_list_u =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "mode = {}", self.mode.tag());
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "synth_count = {}", self.synth_count);
        let _ = writeln!(s, "pair_count = {}", self.pair_count);
        let _ = writeln!(s, "test_count = {}", self.test_count);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "focal = {}", self.focal);
        let _ = writeln!(s, "depth_max = {}", self.depth_max);
        let _ = writeln!(s, "extent_x = {}", self.extents[0]);
        let _ = writeln!(s, "extent_y = {}", self.extents[1]);
        let _ = writeln!(s, "extent_z = {}", self.extents[2]);
        let _ = writeln!(s, "object_stud = {}", self.object_stud);
        let _ = writeln!(s, "dist_min = {}", self.dist_range.0);
        let _ = writeln!(s, "dist_max = {}", self.dist_range.1);
        let _ = writeln!(s, "inplane_min_deg = {}", self.inplane_deg.0);
        let _ = writeln!(s, "inplane_max_deg = {}", self.inplane_deg.1);
        let _ = writeln!(s, "lateral_frac = {}", self.lateral_frac);
        let _ = writeln!(s, "scale_aug = {}", self.scale_aug);
        let _ = writeln!(s, "gap_noise_sigma = {}", self.gap.noise_sigma);
        let _ = writeln!(s, "gap_quant_step = {}", self.gap.quant_step);
        let _ = writeln!(s, "gap_edge_thresh = {}", self.gap.edge_thresh);
        let _ = writeln!(s, "gap_erode_prob = {}", self.gap.erode_prob);
        let _ = writeln!(s, "gap_radial_gain = {}", self.gap.radial_gain);
        let _ = writeln!(s, "clutter_min_boxes = {}", self.clutter_boxes.0);
        let _ = writeln!(s, "clutter_max_boxes = {}", self.clutter_boxes.1);
        let _ = writeln!(s, "clutter_depth_min = {}", self.clutter_depth.0);
        let _ = writeln!(s, "clutter_depth_max = {}", self.clutter_depth.1);
        let _ = writeln!(s, "hidden_dims = {}", fmt_list_u(&self.hidden_dims));
        let _ = writeln!(s, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(
            s,
            "activation = {}",
            match self.activation {
                Activation::Relu => "relu",
                Activation::Tanh => "tanh",
            }
        );
        let _ = writeln!(s, "residual_blocks_g = {}", self.residual_blocks_g);
        let _ = writeln!(s, "bottleneck_dim = {}", self.bottleneck_dim);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "fm_on = {}", self.fm_on);
        let _ = writeln!(s, "mmd_on = {}", self.mmd_on);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "pretrain_depth_epochs = {}", self.pretrain_depth_epochs);
        let _ = writeln!(s, "pretrain_color_epochs = {}", self.pretrain_color_epochs);
        let _ = writeln!(s, "joint_epochs = {}", self.joint_epochs);
        let _ = writeln!(s, "tau_px = {}", self.tau_px);
        let _ = writeln!(s, "add_kappa = {}", self.add_kappa);
        let _ = writeln!(s, "pck_thresholds = {}", fmt_list_f(&self.pck_thresholds));
        let _ = writeln!(s, "wrist_align = {}", self.wrist_align);
        s
    }

    /// Parse config text. Unknown keys are errors; omitted keys keep the
    /// mode's defaults (the `mode` line, if present, selects those defaults
    /// regardless of its position).
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let entries: Vec<(usize, String, String)> = text
            .lines()
            .enumerate()
            .filter_map(|(ln, raw)| {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    return None;
                }
                Some(match line.split_once('=') {
                    Some((k, v)) => Ok((ln + 1, k.trim().to_string(), v.trim().to_string())),
                    None => Err(PipelineError::Config(format!(
                        "line {}: expected `key = value`, got `{raw}`",
                        ln + 1
                    ))),
                })
            })
            .collect::<Result<_>>()?;

        let mut cfg = match entries.iter().find(|(_, k, _)| k == "mode") {
            Some((ln, _, v)) => match v.as_str() {
                "object" => ExperimentConfig::default(),
                "hand" => ExperimentConfig::default_hand(),
                other => {
                    return Err(PipelineError::Config(format!(
                        "line {ln}: unknown mode `{other}` (object | hand)"
                    )))
                }
            },
            None => ExperimentConfig::default(),
        };

        for (ln, key, value) in entries {
            cfg.apply(&key, &value)
                .map_err(|e| PipelineError::Config(format!("line {ln}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("bad value `{v}` for key `{key}`"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(format!("bad boolean `{v}` for key `{key}`")),
            }
        }
        match key {
            "master_seed" => self.master_seed = num(key, value)?,
            "mode" => {} // handled up front to pick defaults
            "out_dir" => self.out_dir = value.to_string(),
            "threads" => self.threads = num(key, value)?,
            "synth_count" => self.synth_count = num(key, value)?,
            "pair_count" => self.pair_count = num(key, value)?,
            "test_count" => self.test_count = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "focal" => self.focal = num(key, value)?,
            "depth_max" => self.depth_max = num(key, value)?,
            "extent_x" => self.extents[0] = num(key, value)?,
            "extent_y" => self.extents[1] = num(key, value)?,
            "extent_z" => self.extents[2] = num(key, value)?,
            "object_stud" => self.object_stud = flag(key, value)?,
            "dist_min" => self.dist_range.0 = num(key, value)?,
            "dist_max" => self.dist_range.1 = num(key, value)?,
            "inplane_min_deg" => self.inplane_deg.0 = num(key, value)?,
            "inplane_max_deg" => self.inplane_deg.1 = num(key, value)?,
            "lateral_frac" => self.lateral_frac = num(key, value)?,
            "scale_aug" => self.scale_aug = num(key, value)?,
            "gap_noise_sigma" => self.gap.noise_sigma = num(key, value)?,
            "gap_quant_step" => self.gap.quant_step = num(key, value)?,
            "gap_edge_thresh" => self.gap.edge_thresh = num(key, value)?,
            "gap_erode_prob" => self.gap.erode_prob = num(key, value)?,
            "gap_radial_gain" => self.gap.radial_gain = num(key, value)?,
            "clutter_min_boxes" => self.clutter_boxes.0 = num(key, value)?,
            "clutter_max_boxes" => self.clutter_boxes.1 = num(key, value)?,
            "clutter_depth_min" => self.clutter_depth.0 = num(key, value)?,
            "clutter_depth_max" => self.clutter_depth.1 = num(key, value)?,
            "hidden_dims" => {
                self.hidden_dims = value
                    .split(',')
                    .map(|v| num("hidden_dims", v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "feature_dim" => self.feature_dim = num(key, value)?,
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(format!("unknown activation `{value}`")),
                }
            }
            "residual_blocks_g" => self.residual_blocks_g = num(key, value)?,
            "bottleneck_dim" => self.bottleneck_dim = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "fm_on" => self.fm_on = flag(key, value)?,
            "mmd_on" => self.mmd_on = flag(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "pretrain_depth_epochs" => self.pretrain_depth_epochs = num(key, value)?,
            "pretrain_color_epochs" => self.pretrain_color_epochs = num(key, value)?,
            "joint_epochs" => self.joint_epochs = num(key, value)?,
            "tau_px" => self.tau_px = num(key, value)?,
            "add_kappa" => self.add_kappa = num(key, value)?,
            "pck_thresholds" => {
                self.pck_thresholds = value
                    .split(',')
                    .map(|v| num("pck_thresholds", v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "wrist_align" => self.wrist_align = flag(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if self.synth_count == 0 || self.pair_count == 0 || self.test_count == 0 {
            return Err(PipelineError::Config(
                "dataset sizes must all be >= 1".into(),
            ));
        }
        self.scene_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.net_spec()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.loss_weights()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.adam_hyper()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_preserves_the_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 7;
        cfg.beta = 0.05;
        cfg.hidden_dims = vec![32, 16];
        cfg.fm_on = false;
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hand_mode_picks_hand_defaults() {
        let cfg = ExperimentConfig::parse("mode = hand\n").unwrap();
        assert_eq!(cfg.mode, TaskMode::Hand);
        assert_eq!(cfg.synth_count, 1000);
        // Overrides still apply on top of hand defaults.
        let cfg = ExperimentConfig::parse("synth_count = 123\nmode = hand\n").unwrap();
        assert_eq!(cfg.synth_count, 123);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse("# a comment\n\nbeta = 0.5 # trailing\n").unwrap();
        assert_eq!(cfg.beta, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(ExperimentConfig::parse("no_such_key = 1\n").is_err());
        assert!(ExperimentConfig::parse("beta = banana\n").is_err());
        assert!(ExperimentConfig::parse("beta 0.5\n").is_err());
        assert!(ExperimentConfig::parse("batch_size = 0\n").is_err());
    }

    #[test]
    fn paper_defaults_are_wired() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.beta, 0.02);
        assert_eq!(cfg.gamma, 0.01);
        assert_eq!(cfg.sigma, 1.0);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.dist_range, (0.65, 1.15));
        assert_eq!(cfg.inplane_deg, (-45.0, 45.0));
    }
}
