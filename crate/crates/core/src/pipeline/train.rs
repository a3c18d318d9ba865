//! The staged training schedule: depth-stream pretraining, color-stream
//! pretraining through a disposable depth decoder, then joint training of
//! all four networks against the weighted objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, Tensor};
use crate::losses::{pose_loss, total_loss, BatchTriple};
use crate::networks::{ModelParams, Nets};
use crate::optim::{adam_step, AdamState, CollectionMask};
use crate::scene::{sample_seed, Dataset, DatasetKind};

use super::config::ExperimentConfig;
use super::{PipelineError, Result};

/// Seed streams reserved by the trainer (data generation uses 1..=3).
pub const STREAM_TRAIN: u64 = 4;
pub const STREAM_INIT: u64 = 5;
pub const STREAM_DECODER: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PretrainDepth,
    PretrainColor,
    Joint,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::PretrainDepth => "pretrain_depth",
            Stage::PretrainColor => "pretrain_color",
            Stage::Joint => "joint",
        }
    }
}

/// One optimization step's loss values. Inactive terms are absent, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub stage: Stage,
    pub step: u64,
    pub pose: Option<f64>,
    pub fm: Option<f64>,
    pub mmd: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub rows: Vec<TrainRow>,
    pub wall_secs: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# seed = {}\n", self.seed));
        s.push_str(&format!("# wall_secs = {:.3}\n", self.wall_secs));
        s.push_str("stage,step,loss_pose,loss_fm,loss_mmd,loss_total\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.stage.tag(),
                r.step,
                opt(r.pose),
                opt(r.fm),
                opt(r.mmd),
                r.total
            ));
        }
        s
    }
}

/// Cycling index stream over a dataset, reshuffled on every wrap.
struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> BatchCycler {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        BatchCycler { order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn synth_batch(ds: &Dataset, idx: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
    idx.iter()
        .map(|i| {
            let r = &ds.records[*i];
            (r.depth.clone(), r.label.clone().expect("synth record labeled"))
        })
        .collect()
}

fn pair_batch(ds: &Dataset, idx: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
    idx.iter()
        .map(|i| {
            let r = &ds.records[*i];
            (
                r.color.clone().expect("pair record has color"),
                r.depth.clone(),
            )
        })
        .collect()
}

fn check_dataset(ds: &Dataset, kind: DatasetKind, what: &str) -> Result<()> {
    if ds.kind != kind {
        return Err(PipelineError::DatasetMismatch(format!(
            "{what}: expected a {kind:?} dataset, got {:?}",
            ds.kind
        )));
    }
    if ds.records.is_empty() {
        return Err(PipelineError::DatasetMismatch(format!(
            "{what}: dataset is empty"
        )));
    }
    Ok(())
}

pub struct TrainState {
    pub nets: Nets,
    pub adam: AdamState,
}

/// Stage 1: fit the depth extractor and pose head on the synthetic set with
/// the pose loss only. The color extractor and mapping network stay bitwise
/// untouched.
pub fn stage_pretrain_depth(
    cfg: &ExperimentConfig,
    synth: &Dataset,
    state: &mut TrainState,
    log: &mut TrainLog,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_dataset(synth, DatasetKind::Synth, "pretrain_depth")?;
    let mut idx: Vec<usize> = (0..synth.records.len()).collect();
    let mut step = 0u64;
    for _epoch in 0..cfg.pretrain_depth_epochs {
        let snapshot = state.nets.params.clone();
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let batch = synth_batch(synth, chunk);
            let bound = state.nets.bind();
            let loss = pose_loss(&state.nets, &bound, &batch)?.scale(1.0 / batch.len() as f64);
            if !loss.value().is_finite() {
                state.nets.params = snapshot;
                return Err(PipelineError::NonFiniteLoss {
                    stage: Stage::PretrainDepth.tag(),
                    step,
                });
            }
            let grads = bound.gradients(&loss)?;
            adam_step(
                &mut state.nets.params,
                &bound,
                &grads,
                &mut state.adam,
                CollectionMask::DEPTH_STAGE,
            )?;
            step += 1;
            log.rows.push(TrainRow {
                stage: Stage::PretrainDepth,
                step,
                pose: Some(loss.value()),
                fm: None,
                mmd: None,
                total: loss.value(),
            });
        }
    }
    Ok(())
}

/// Stage 2: fit the color extractor by regressing the paired depth window
/// from the color window through a disposable linear decoder. The decoder is
/// optimized locally and discarded; only the color extractor's parameters
/// survive the stage.
pub fn stage_pretrain_color(
    cfg: &ExperimentConfig,
    pairs: &Dataset,
    state: &mut TrainState,
    log: &mut TrainLog,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_dataset(pairs, DatasetKind::Pairs, "pretrain_color")?;
    let spec = &state.nets.spec;
    let (d, out_dim) = (spec.feature_dim, spec.input_dim);

    // Disposable decoder: one linear layer feature -> depth window, in the
    // same gain parameterization as the networks.
    let gain = crate::networks::WEIGHT_GAIN;
    let mut dec_rng =
        ChaCha8Rng::seed_from_u64(sample_seed(cfg.master_seed, STREAM_DECODER, 0));
    let bound_w = 1.0 / (d as f64).sqrt();
    let mut dec_w: Vec<f64> = (0..out_dim * d)
        .map(|_| dec_rng.random_range(-bound_w..bound_w) / gain)
        .collect();
    let mut dec_b = vec![0.0; out_dim];
    let mut m_w = vec![0.0; dec_w.len()];
    let mut v_w = vec![0.0; dec_w.len()];
    let mut m_b = vec![0.0; dec_b.len()];
    let mut v_b = vec![0.0; dec_b.len()];
    let mut dec_t = 0i32;
    let h = cfg.adam_hyper();

    let mut idx: Vec<usize> = (0..pairs.records.len()).collect();
    let mut step = 0u64;
    for _epoch in 0..cfg.pretrain_color_epochs {
        let snapshot = state.nets.params.clone();
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let batch = pair_batch(pairs, chunk);
            let n = batch.len();
            let bound = state.nets.bind();

            // Batched color windows and depth targets, column per sample.
            let mut xc = vec![0.0; spec.color_input_dim() * n];
            let mut xd = vec![0.0; out_dim * n];
            for (j, (c, dep)) in batch.iter().enumerate() {
                for (i, v) in c.iter().enumerate() {
                    xc[i * n + j] = *v;
                }
                for (i, v) in dep.iter().enumerate() {
                    xd[i * n + j] = *v;
                }
            }
            let xc = Tensor::matrix(spec.color_input_dim(), n, xc);
            let target = Tensor::matrix(out_dim, n, xd);

            let w_leaf = Tensor::leaf(vec![out_dim, d], dec_w.clone());
            let b_leaf = Tensor::leaf(vec![out_dim], dec_b.clone());
            let feat = state.nets.f_color(&bound, &xc)?;
            let pred = w_leaf
                .scale(gain)
                .matmul(&feat)?
                .add(&b_leaf.scale(gain).repeat_cols(n)?)?;
            let loss = pred
                .sub(&target)?
                .square()
                .sum()?
                .scale(1.0 / n as f64);
            if !loss.value().is_finite() {
                state.nets.params = snapshot;
                return Err(PipelineError::NonFiniteLoss {
                    stage: Stage::PretrainColor.tag(),
                    step,
                });
            }

            let mut leaves = bound.all_leaves();
            leaves.push(&w_leaf);
            leaves.push(&b_leaf);
            let grads = backward(&loss, &leaves)?;
            adam_step(
                &mut state.nets.params,
                &bound,
                &grads,
                &mut state.adam,
                CollectionMask::COLOR_STAGE,
            )?;

            // Local ADAM step for the decoder tensors.
            dec_t += 1;
            let bc1 = 1.0 - h.beta1.powi(dec_t);
            let bc2 = 1.0 - h.beta2.powi(dec_t);
            for (params, m, v, leaf) in [
                (&mut dec_w, &mut m_w, &mut v_w, &w_leaf),
                (&mut dec_b, &mut m_b, &mut v_b, &b_leaf),
            ] {
                let g = grads.get(leaf);
                for k in 0..params.len() {
                    m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
                    v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
                    params[k] -= h.alpha * (m[k] / bc1) / ((v[k] / bc2).sqrt() + h.eps_hat);
                }
            }

            step += 1;
            log.rows.push(TrainRow {
                stage: Stage::PretrainColor,
                step,
                pose: None,
                fm: None,
                mmd: None,
                total: loss.value(),
            });
        }
    }
    Ok(())
}

/// Stage 3: joint training of all networks against the weighted objective.
/// Each step draws one synthetic minibatch and one pair minibatch. With the
/// feature-mapping term ablated, the color extractor and mapping network are
/// masked out of the update entirely (inference then bypasses the mapping).
pub fn stage_joint_train(
    cfg: &ExperimentConfig,
    synth: &Dataset,
    pairs: &Dataset,
    state: &mut TrainState,
    log: &mut TrainLog,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_dataset(synth, DatasetKind::Synth, "joint")?;
    check_dataset(pairs, DatasetKind::Pairs, "joint")?;
    let weights = cfg.loss_weights();
    let ablation = cfg.ablation();
    let mask = CollectionMask {
        f_depth: true,
        head: true,
        f_color: ablation.fm_on,
        map_g: ablation.fm_on,
    };
    let pair_size = cfg.batch_size.min(pairs.records.len());

    let mut synth_idx: Vec<usize> = (0..synth.records.len()).collect();
    let mut pair_stream = BatchCycler::new(pairs.records.len(), rng);
    let mut step = 0u64;
    for _epoch in 0..cfg.joint_epochs {
        let snapshot = state.nets.params.clone();
        synth_idx.shuffle(rng);
        for chunk in synth_idx.chunks(cfg.batch_size) {
            let batch = BatchTriple {
                synth: synth_batch(synth, chunk),
                pairs: pair_batch(pairs, &pair_stream.next_batch(pair_size, rng)),
            };
            let bound = state.nets.bind();
            let terms = match total_loss(&state.nets, &bound, &batch, &weights, ablation) {
                Ok(t) => t,
                Err(crate::losses::LossError::Ad(crate::autodiff::AdError::NonFinite {
                    ..
                })) => {
                    state.nets.params = snapshot;
                    return Err(PipelineError::NonFiniteLoss {
                        stage: Stage::Joint.tag(),
                        step,
                    });
                }
                Err(e) => return Err(e.into()),
            };
            let grads = bound.gradients(&terms.total)?;
            adam_step(&mut state.nets.params, &bound, &grads, &mut state.adam, mask)?;
            step += 1;
            log.rows.push(TrainRow {
                stage: Stage::Joint,
                step,
                pose: Some(terms.pose),
                fm: terms.fm,
                mmd: terms.mmd,
                total: terms.total.value(),
            });
        }
    }
    Ok(())
}

/// Parameter snapshots around each stage, for stage-isolation checks and
/// stage checkpoints.
pub struct TrainOutput {
    pub state: TrainState,
    pub log: TrainLog,
    pub init_params: ModelParams,
    pub after_depth: ModelParams,
    pub after_color: ModelParams,
}

/// Run the full three-stage schedule on in-memory datasets.
pub fn train_all(cfg: &ExperimentConfig, synth: &Dataset, pairs: &Dataset) -> Result<TrainOutput> {
    let start = std::time::Instant::now();
    let nets = Nets::init(cfg.net_spec(), sample_seed(cfg.master_seed, STREAM_INIT, 0))?;
    let adam = AdamState::new(&nets.params, cfg.adam_hyper())?;
    let mut state = TrainState { nets, adam };
    let mut log = TrainLog {
        seed: cfg.master_seed,
        rows: Vec::new(),
        wall_secs: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.master_seed, STREAM_TRAIN, 0));

    let init_params = state.nets.params.clone();
    stage_pretrain_depth(cfg, synth, &mut state, &mut log, &mut rng)?;
    let after_depth = state.nets.params.clone();
    stage_pretrain_color(cfg, pairs, &mut state, &mut log, &mut rng)?;
    let after_color = state.nets.params.clone();
    stage_joint_train(cfg, synth, pairs, &mut state, &mut log, &mut rng)?;
    log.wall_secs = start.elapsed().as_secs_f64();

    Ok(TrainOutput {
        state,
        log,
        init_params,
        after_depth,
        after_color,
    })
}
