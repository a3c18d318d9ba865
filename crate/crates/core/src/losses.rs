//! The three training loss terms and their weighted combination.
//!
//! `pose_loss` and `feature_map_loss` are written as sums over the batch they
//! are given, exactly like the set-sum definitions they implement;
//! [`total_loss`] divides them by their batch sizes so the term weights stay
//! meaningful at any batch size. The MMD term is the biased V-statistic in
//! kernel form (diagonal terms included, no U-statistic correction) and is
//! intrinsically normalized by the set sizes.

use thiserror::Error;

use crate::autodiff::{AdError, Tensor};
use crate::networks::{Bound, NetError, Nets};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{term}: batch must be non-empty")]
    EmptyBatch { term: &'static str },
    #[error("label has {got} values but the head produces {want}")]
    LabelDim { got: usize, want: usize },
    #[error("window has {got} values but the network expects {want}")]
    WindowDim { got: usize, want: usize },
    #[error("rbf kernel: widths differ ({0} vs {1})")]
    KernelWidth(usize, usize),
    #[error("invalid loss weights: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Term weights and kernel bandwidth. Defaults: beta 0.02, gamma 0.01,
/// sigma 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.02,
            gamma: 0.01,
            sigma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(LossError::BadWeights(format!(
                "beta and gamma must be >= 0, got beta={}, gamma={}",
                self.beta, self.gamma
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(LossError::BadWeights(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Ablation switches for the two transfer terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub fm_on: bool,
    pub mmd_on: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            fm_on: true,
            mmd_on: true,
        }
    }
}

impl Ablation {
    pub fn tag(&self) -> &'static str {
        match (self.fm_on, self.mmd_on) {
            (true, true) => "full",
            (false, true) => "no_fm",
            (true, false) => "no_mmd",
            (false, false) => "pose_only",
        }
    }
}

/// One joint-training step's worth of data: a labeled synthetic-depth batch
/// and an unlabeled (color, real-depth) pair batch.
#[derive(Debug, Clone, Default)]
pub struct BatchTriple {
    /// (depth window, pose label) from the synthetic set.
    pub synth: Vec<(Vec<f64>, Vec<f64>)>,
    /// (color window, real depth window) pairs.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Stack samples as columns of a `[dim, batch]` matrix.
fn batch_matrix<'a>(
    samples: impl ExactSizeIterator<Item = &'a Vec<f64>>,
    dim: usize,
    term: &'static str,
) -> Result<Tensor> {
    let n = samples.len();
    if n == 0 {
        return Err(LossError::EmptyBatch { term });
    }
    let mut data = vec![0.0; dim * n];
    for (j, s) in samples.enumerate() {
        if s.len() != dim {
            return Err(LossError::WindowDim {
                got: s.len(),
                want: dim,
            });
        }
        for (i, v) in s.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Ok(Tensor::matrix(dim, n, data))
}

/// Pose loss over a labeled synthetic-depth batch: the sum over samples of
/// the squared error between the head's prediction and the label.
pub fn pose_loss(nets: &Nets, bound: &Bound, synth: &[(Vec<f64>, Vec<f64>)]) -> Result<Tensor> {
    if synth.is_empty() {
        return Err(LossError::EmptyBatch { term: "pose_loss" });
    }
    let out_dim = nets.spec.head_output_dim();
    for (_, label) in synth {
        if label.len() != out_dim {
            return Err(LossError::LabelDim {
                got: label.len(),
                want: out_dim,
            });
        }
    }
    let x = batch_matrix(synth.iter().map(|(w, _)| w), nets.spec.input_dim, "pose_loss")?;
    let y = batch_matrix(synth.iter().map(|(_, l)| l), out_dim, "pose_loss")?;
    let feat = nets.f_depth(bound, &x)?;
    let pred = nets.h_pose(bound, &feat, nets.spec.head_mode)?;
    Ok(pred.sub(&y)?.square().sum()?)
}

/// Feature-mapping loss over a pair batch: the sum over pairs of the squared
/// distance between the mapped color feature and the depth feature.
pub fn feature_map_loss(
    nets: &Nets,
    bound: &Bound,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Tensor> {
    if pairs.is_empty() {
        return Err(LossError::EmptyBatch {
            term: "feature_map_loss",
        });
    }
    let xc = batch_matrix(
        pairs.iter().map(|(c, _)| c),
        nets.spec.color_input_dim(),
        "feature_map_loss",
    )?;
    let xd = batch_matrix(
        pairs.iter().map(|(_, d)| d),
        nets.spec.input_dim,
        "feature_map_loss",
    )?;
    let mapped = nets.g_map(bound, &nets.f_color(bound, &xc)?)?;
    let depth_feat = nets.f_depth(bound, &xd)?;
    Ok(mapped.sub(&depth_feat)?.square().sum()?)
}

/// RBF kernel `exp(-||x - y||^2 / (2 sigma^2))`. Always in (0, 1].
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(LossError::KernelWidth(x.len(), y.len()));
    }
    if !(sigma > 0.0) {
        return Err(LossError::BadWeights(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

/// Squared MMD between the column sets of two feature matrices `[d, n]` and
/// `[d, m]`, as the biased kernel-form V-statistic:
/// `mean(K_aa) - 2 mean(K_ab) + mean(K_bb)`.
pub fn mmd_from_features(feat_a: &Tensor, feat_b: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(LossError::BadWeights(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let c = -1.0 / (2.0 * sigma * sigma);
    let k_aa = feat_a.pairwise_sqdist(feat_a)?.scale(c).exp().mean()?;
    let k_ab = feat_a.pairwise_sqdist(feat_b)?.scale(c).exp().mean()?;
    let k_bb = feat_b.pairwise_sqdist(feat_b)?.scale(c).exp().mean()?;
    // (aa - 2 ab) + bb: cancels term-by-term to exactly 0 on identical sets.
    Ok(k_aa.sub(&k_ab.scale(2.0))?.add(&k_bb)?)
}

/// MMD between depth features of real depth windows (the depth halves of the
/// pair set) and of synthetic depth windows, both extracted with the current
/// depth extractor. Only the depth extractor participates, so the term can
/// route gradients nowhere else.
pub fn mmd_loss(
    nets: &Nets,
    bound: &Bound,
    real_depth: &[Vec<f64>],
    synth_depth: &[Vec<f64>],
    sigma: f64,
) -> Result<Tensor> {
    let xr = batch_matrix(real_depth.iter(), nets.spec.input_dim, "mmd_loss")?;
    let xs = batch_matrix(synth_depth.iter(), nets.spec.input_dim, "mmd_loss")?;
    let fr = nets.f_depth(bound, &xr)?;
    let fs = nets.f_depth(bound, &xs)?;
    mmd_from_features(&fr, &fs, sigma)
}

/// Plain-value MMD between two raw sample sets (no networks involved); the
/// evaluation-only entry point, sharing the graph code path.
pub fn mmd_vstat(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(LossError::EmptyBatch { term: "mmd_vstat" });
    }
    let d = a[0].len();
    let fa = batch_matrix(a.iter(), d, "mmd_vstat")?;
    let fb = batch_matrix(b.iter(), d, "mmd_vstat")?;
    Ok(mmd_from_features(&fa, &fb, sigma)?.value())
}

/// The weighted combination of already-evaluated term values; `None` means
/// the term is ablated away.
pub fn weighted_total(pose: f64, fm: Option<f64>, mmd: Option<f64>, w: &LossWeights) -> f64 {
    let mut total = pose;
    if let Some(fm) = fm {
        total += w.beta * fm;
    }
    if let Some(mmd) = mmd {
        total += w.gamma * mmd;
    }
    total
}

/// The joint objective and its per-term values for one step.
pub struct TotalLoss {
    /// Graph node of the full weighted objective.
    pub total: Tensor,
    /// Pose term (batch mean).
    pub pose: f64,
    /// Feature-mapping term (batch mean); None when ablated.
    pub fm: Option<f64>,
    /// MMD term; None when ablated.
    pub mmd: Option<f64>,
}

/// Joint objective: mean pose loss, plus `beta` times the mean feature-mapping
/// loss when `fm_on`, plus `gamma` times the minibatch MMD when `mmd_on`.
pub fn total_loss(
    nets: &Nets,
    bound: &Bound,
    batch: &BatchTriple,
    w: &LossWeights,
    ablation: Ablation,
) -> Result<TotalLoss> {
    w.validate()?;
    let pose = pose_loss(nets, bound, &batch.synth)?.scale(1.0 / batch.synth.len() as f64);
    let pose_val = pose.value();
    let mut total = pose;

    let mut fm_val = None;
    if ablation.fm_on {
        let fm =
            feature_map_loss(nets, bound, &batch.pairs)?.scale(1.0 / batch.pairs.len() as f64);
        fm_val = Some(fm.value());
        total = total.add(&fm.scale(w.beta))?;
    }

    let mut mmd_val = None;
    if ablation.mmd_on {
        let real_depth: Vec<Vec<f64>> = batch.pairs.iter().map(|(_, d)| d.clone()).collect();
        let synth_depth: Vec<Vec<f64>> = batch.synth.iter().map(|(s, _)| s.clone()).collect();
        let mmd = mmd_loss(nets, bound, &real_depth, &synth_depth, w.sigma)?;
        mmd_val = Some(mmd.value());
        total = total.add(&mmd.scale(w.gamma))?;
    }

    total.check_finite("total loss")?;
    Ok(TotalLoss {
        total,
        pose: pose_val,
        fm: fm_val,
        mmd: mmd_val,
    })
}
