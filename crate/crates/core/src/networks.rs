//! The four networks of the transfer architecture: a depth feature extractor,
//! a color feature extractor, a residual feature-mapping network, and a pose
//! head, all as small fully-connected stacks over flattened windows.
//!
//! Parameters live outside the graph as plain buffers ([`ModelParams`]); each
//! forward pass binds them into fresh graph leaves ([`Nets::bind`]) so the
//! define-by-run graph can be rebuilt every step.

use std::cell::Cell;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{backward, AdError, Gradients, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input has {got} values but the network expects {want}")]
    InputDim { got: usize, want: usize },
    #[error("head is configured for {configured} but was called in {requested} mode")]
    HeadModeMismatch {
        configured: &'static str,
        requested: &'static str,
    },
    #[error("invalid net spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    ObjectCorners,
    HandJoints,
}

impl HeadMode {
    pub fn tag(self) -> &'static str {
        match self {
            HeadMode::ObjectCorners => "object_corners",
            HeadMode::HandJoints => "hand_joints",
        }
    }
}

/// Sizes and switches for all four networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    /// Flattened depth window size (window * window).
    pub input_dim: usize,
    /// Channel count of the color stream (color input is channels * input_dim).
    pub color_channels: usize,
    pub hidden_dims: Vec<usize>,
    /// Shared feature width of both extractors; the mapping network is
    /// feature_dim -> feature_dim.
    pub feature_dim: usize,
    pub activation: Activation,
    pub residual_blocks_g: usize,
    pub head_mode: HeadMode,
    /// Width of the low-rank pose-prior layer inside the hand head.
    pub bottleneck_dim: Option<usize>,
    /// Joint count in hand mode (head output is 3 * hand_joints).
    pub hand_joints: usize,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.color_channels == 0 {
            return Err(NetError::BadSpec("all dims must be >= 1".into()));
        }
        if self.hidden_dims.iter().any(|d| *d == 0) {
            return Err(NetError::BadSpec("hidden dims must be >= 1".into()));
        }
        if self.residual_blocks_g == 0 {
            return Err(NetError::BadSpec("residual_blocks_g must be >= 1".into()));
        }
        if self.head_mode == HeadMode::HandJoints {
            if self.hand_joints == 0 {
                return Err(NetError::BadSpec("hand_joints must be >= 1".into()));
            }
            if self.bottleneck_dim == Some(0) {
                return Err(NetError::BadSpec("bottleneck_dim must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn color_input_dim(&self) -> usize {
        self.color_channels * self.input_dim
    }

    /// Pose-vector length produced by the head.
    pub fn head_output_dim(&self) -> usize {
        match self.head_mode {
            HeadMode::ObjectCorners => 16,
            HeadMode::HandJoints => 3 * self.hand_joints,
        }
    }

    fn bottleneck(&self) -> usize {
        self.bottleneck_dim.unwrap_or(8)
    }

    /// Layer widths of the depth extractor, input first.
    fn depth_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }

    fn color_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.color_input_dim()];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }
}

/// Gain of the layer parameterization: stored parameters are optimized at
/// unit scale and multiplied by this constant in every forward pass, so one
/// optimizer step moves the effective weights by `gain * alpha`. This is how
/// the reference learning rate stays meaningful at desk scale; the effective
/// initialization is still the fan-in-scaled uniform scheme.
pub const WEIGHT_GAIN: f64 = 20.0;

/// A named parameter buffer, stored in pre-gain (unit-scale) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    /// Set the effective (post-gain) values this tensor contributes to the
    /// forward pass.
    pub fn set_effective(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.data.len());
        for (d, v) in self.data.iter_mut().zip(values) {
            *d = v / WEIGHT_GAIN;
        }
    }

    /// Effective (post-gain) values.
    pub fn effective(&self) -> Vec<f64> {
        self.data.iter().map(|v| v * WEIGHT_GAIN).collect()
    }
}

impl ParamTensor {
    fn zeros(name: &str, shape: Vec<usize>) -> ParamTensor {
        let n = shape.iter().product();
        ParamTensor {
            name: name.to_string(),
            shape,
            data: vec![0.0; n],
        }
    }

    /// Fan-in-scaled uniform effective init, stored pre-gain.
    fn uniform(name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> ParamTensor {
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..n)
            .map(|_| rng.random_range(-bound..bound) / WEIGHT_GAIN)
            .collect();
        ParamTensor {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

/// One network's parameters, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Collection {
    pub params: Vec<ParamTensor>,
}

impl Collection {
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// Which of the four networks the transfer architecture is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    FDepth,
    FColor,
    MapG,
    Head,
}

pub const ALL_NETS: [Net; 4] = [Net::FDepth, Net::FColor, Net::MapG, Net::Head];

impl Net {
    pub fn tag(self) -> &'static str {
        match self {
            Net::FDepth => "f_depth",
            Net::FColor => "f_color",
            Net::MapG => "g",
            Net::Head => "h",
        }
    }
}

/// Parameter collections for the depth extractor, color extractor, mapping
/// network and pose head.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub f_depth: Collection,
    pub f_color: Collection,
    pub map_g: Collection,
    pub head: Collection,
}

impl ModelParams {
    pub fn collection(&self, net: Net) -> &Collection {
        match net {
            Net::FDepth => &self.f_depth,
            Net::FColor => &self.f_color,
            Net::MapG => &self.map_g,
            Net::Head => &self.head,
        }
    }

    pub fn collection_mut(&mut self, net: Net) -> &mut Collection {
        match net {
            Net::FDepth => &mut self.f_depth,
            Net::FColor => &mut self.f_color,
            Net::MapG => &mut self.map_g,
            Net::Head => &mut self.head,
        }
    }
}

/// Fan-in-scaled uniform weights, zero biases, reproducible from the seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = |dims: &[usize], prefix: &str, rng: &mut ChaCha8Rng| -> Collection {
        let mut params = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            params.push(ParamTensor::uniform(
                &format!("{prefix}.layer{l}.weight"),
                vec![fan_out, fan_in],
                fan_in,
                rng,
            ));
            params.push(ParamTensor::zeros(
                &format!("{prefix}.layer{l}.bias"),
                vec![fan_out],
            ));
        }
        Collection { params }
    };

    let f_depth = mlp(&spec.depth_dims(), "f_depth", &mut rng);
    let f_color = mlp(&spec.color_dims(), "f_color", &mut rng);

    let d = spec.feature_dim;
    let mut g_params = Vec::new();
    for b in 0..spec.residual_blocks_g {
        g_params.push(ParamTensor::uniform(
            &format!("g.block{b}.w1"),
            vec![d, d],
            d,
            &mut rng,
        ));
        g_params.push(ParamTensor::zeros(&format!("g.block{b}.b1"), vec![d]));
        // Zero output layer: the mapping network starts as the identity, so
        // the feature-mapping term cannot drag the depth features toward an
        // arbitrary random mapping early in joint training.
        g_params.push(ParamTensor::zeros(&format!("g.block{b}.w2"), vec![d, d]));
        g_params.push(ParamTensor::zeros(&format!("g.block{b}.b2"), vec![d]));
    }
    let map_g = Collection { params: g_params };

    let head = match spec.head_mode {
        HeadMode::ObjectCorners => Collection {
            params: vec![
                ParamTensor::uniform("h.weight", vec![16, d], d, &mut rng),
                ParamTensor::zeros("h.bias", vec![16]),
            ],
        },
        HeadMode::HandJoints => {
            let b = spec.bottleneck();
            let out = spec.head_output_dim();
            Collection {
                params: vec![
                    ParamTensor::uniform("h.bottleneck.weight", vec![b, d], d, &mut rng),
                    ParamTensor::zeros("h.bottleneck.bias", vec![b]),
                    ParamTensor::uniform("h.expand.weight", vec![out, b], b, &mut rng),
                    ParamTensor::zeros("h.expand.bias", vec![out]),
                ],
            }
        }
    };

    Ok(ModelParams {
        f_depth,
        f_color,
        map_g,
        head,
    })
}

/// Graph leaves for one forward/backward pass, laid out like [`ModelParams`].
pub struct Bound {
    pub f_depth: Vec<Tensor>,
    pub f_color: Vec<Tensor>,
    pub map_g: Vec<Tensor>,
    pub head: Vec<Tensor>,
}

impl Bound {
    pub fn leaves(&self, net: Net) -> &[Tensor] {
        match net {
            Net::FDepth => &self.f_depth,
            Net::FColor => &self.f_color,
            Net::MapG => &self.map_g,
            Net::Head => &self.head,
        }
    }

    pub fn all_leaves(&self) -> Vec<&Tensor> {
        ALL_NETS
            .iter()
            .flat_map(|net| self.leaves(*net).iter())
            .collect()
    }

    /// Reverse-mode gradients of `loss` for every bound parameter.
    pub fn gradients(&self, loss: &Tensor) -> Result<Gradients> {
        Ok(backward(loss, &self.all_leaves())?)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ForwardCounts {
    pub f_depth: u64,
    pub f_color: u64,
    pub g_map: u64,
    pub h_pose: u64,
}

/// Network bundle: spec, parameters, and per-network call counters (the
/// counters let tests assert which streams an operation touched).
pub struct Nets {
    pub spec: NetSpec,
    pub params: ModelParams,
    f_depth_calls: Cell<u64>,
    f_color_calls: Cell<u64>,
    g_calls: Cell<u64>,
    h_calls: Cell<u64>,
}

impl Nets {
    pub fn new(spec: NetSpec, params: ModelParams) -> Nets {
        Nets {
            spec,
            params,
            f_depth_calls: Cell::new(0),
            f_color_calls: Cell::new(0),
            g_calls: Cell::new(0),
            h_calls: Cell::new(0),
        }
    }

    pub fn init(spec: NetSpec, seed: u64) -> Result<Nets> {
        let params = init_params(&spec, seed)?;
        Ok(Nets::new(spec, params))
    }

    pub fn counts(&self) -> ForwardCounts {
        ForwardCounts {
            f_depth: self.f_depth_calls.get(),
            f_color: self.f_color_calls.get(),
            g_map: self.g_calls.get(),
            h_pose: self.h_calls.get(),
        }
    }

    pub fn reset_counts(&self) {
        self.f_depth_calls.set(0);
        self.f_color_calls.set(0);
        self.g_calls.set(0);
        self.h_calls.set(0);
    }

    /// Bind the current parameter values into fresh graph leaves.
    pub fn bind(&self) -> Bound {
        let to_leaves = |c: &Collection| {
            c.params
                .iter()
                .map(|p| Tensor::leaf(p.shape.clone(), p.data.clone()))
                .collect()
        };
        Bound {
            f_depth: to_leaves(&self.params.f_depth),
            f_color: to_leaves(&self.params.f_color),
            map_g: to_leaves(&self.params.map_g),
            head: to_leaves(&self.params.head),
        }
    }

    fn check_input(&self, x: &Tensor, want: usize, what: &'static str) -> Result<()> {
        let got = match x.shape() {
            [n] => *n,
            [n, _] => *n,
            _ => 0,
        };
        if got != want {
            return Err(NetError::InputDim { got, want });
        }
        let _ = what;
        Ok(())
    }

    /// `y = W x + b` with the gain parameterization applied to both tensors,
    /// for a single column `[k]` or a batch `[k, B]`.
    fn affine(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
        let wx = w.scale(WEIGHT_GAIN).matmul(x)?;
        let bias = b.scale(WEIGHT_GAIN);
        let bias = match x.shape() {
            [_, cols] => bias.repeat_cols(*cols)?,
            _ => bias,
        };
        Ok(wx.add(&bias)?)
    }

    fn activate(&self, x: &Tensor) -> Tensor {
        match self.spec.activation {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }

    fn mlp_forward(&self, leaves: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let layers = leaves.len() / 2;
        let mut h = x.clone();
        for l in 0..layers {
            let w = &leaves[2 * l];
            let b = &leaves[2 * l + 1];
            h = Self::affine(w, b, &h)?;
            if l + 1 < layers {
                h = self.activate(&h);
            }
        }
        Ok(h)
    }

    /// Depth feature extractor. Input: normalized depth window, flat `[input_dim]`
    /// or batched `[input_dim, B]`.
    pub fn f_depth(&self, bound: &Bound, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, self.spec.input_dim, "f_depth")?;
        self.f_depth_calls.set(self.f_depth_calls.get() + 1);
        self.mlp_forward(&bound.f_depth, x)
    }

    /// Color feature extractor. Input: normalized color window, flat
    /// `[channels * input_dim]` or batched.
    pub fn f_color(&self, bound: &Bound, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, self.spec.color_input_dim(), "f_color")?;
        self.f_color_calls.set(self.f_color_calls.get() + 1);
        self.mlp_forward(&bound.f_color, x)
    }

    /// Feature mapping network: residual blocks `x + W2 act(W1 x + b1) + b2`.
    pub fn g_map(&self, bound: &Bound, feature: &Tensor) -> Result<Tensor> {
        self.check_input(feature, self.spec.feature_dim, "g_map")?;
        self.g_calls.set(self.g_calls.get() + 1);
        let mut h = feature.clone();
        for block in bound.map_g.chunks(4) {
            let (w1, b1, w2, b2) = (&block[0], &block[1], &block[2], &block[3]);
            let inner = self.activate(&Self::affine(w1, b1, &h)?);
            let branch = Self::affine(w2, b2, &inner)?;
            h = h.add(&branch)?;
        }
        Ok(h)
    }

    /// Fixed output gain of the pose head. The head is trained in a
    /// normalized space and scaled to output units (window pixels for corner
    /// projections, meters at hand scale for joints); without this the unit
    /// learning-rate budget cannot cover pixel-scale targets. Folding the
    /// gain into the weights gives the identical single-layer function.
    pub fn head_output_gain(&self) -> f64 {
        match self.spec.head_mode {
            HeadMode::ObjectCorners => (self.spec.input_dim as f64).sqrt() / 2.0,
            HeadMode::HandJoints => 0.1,
        }
    }

    /// Pose head. Object mode: one linear layer with 16 outputs (the window
    /// coordinates of the 8 box corners). Hand mode: linear bottleneck then
    /// linear expansion to 3 values per joint.
    pub fn h_pose(&self, bound: &Bound, feature: &Tensor, mode: HeadMode) -> Result<Tensor> {
        if mode != self.spec.head_mode {
            return Err(NetError::HeadModeMismatch {
                configured: self.spec.head_mode.tag(),
                requested: mode.tag(),
            });
        }
        self.check_input(feature, self.spec.feature_dim, "h_pose")?;
        self.h_calls.set(self.h_calls.get() + 1);
        let raw = match self.spec.head_mode {
            HeadMode::ObjectCorners => Self::affine(&bound.head[0], &bound.head[1], feature)?,
            HeadMode::HandJoints => {
                let z = Self::affine(&bound.head[0], &bound.head[1], feature)?;
                Self::affine(&bound.head[2], &bound.head[3], &z)?
            }
        };
        Ok(raw.scale(self.head_output_gain()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            input_dim: 16,
            color_channels: 3,
            hidden_dims: vec![8],
            feature_dim: 6,
            activation: Activation::Relu,
            residual_blocks_g: 2,
            head_mode: HeadMode::ObjectCorners,
            bottleneck_dim: None,
            hand_joints: 6,
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_feature() {
        let spec = tiny_spec();
        let mut nets = Nets::init(spec, 1).unwrap();
        // Zero the last layer of the depth extractor.
        let n = nets.params.f_depth.params.len();
        for p in &mut nets.params.f_depth.params[n - 2..] {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let bound = nets.bind();
        let x = Tensor::vector(&vec![0.0; 16]);
        let feat = nets.f_depth(&bound, &x).unwrap();
        assert!(feat.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forwards_are_deterministic() {
        let spec = tiny_spec();
        let nets = Nets::init(spec, 3).unwrap();
        let bound = nets.bind();
        let x: Vec<f64> = (0..16).map(|i| (i as f64) / 16.0 - 0.5).collect();
        let a = nets.f_depth(&bound, &Tensor::vector(&x)).unwrap();
        let b = nets.f_depth(&bound, &Tensor::vector(&x)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn depth_forward_respects_lipschitz_bound() {
        // Perturbing one input coordinate by eps moves the output by at most
        // eps times the product of layer spectral norms; bound the spectral
        // norms by Frobenius norms computed from the weights.
        let spec = tiny_spec();
        let nets = Nets::init(spec, 5).unwrap();
        let bound = nets.bind();
        let mut lip = 1.0;
        for p in &nets.params.f_depth.params {
            if p.shape.len() == 2 {
                lip *= p.effective().iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64) / 5.0 - 0.4).collect();
        let base = nets.f_depth(&bound, &Tensor::vector(&x)).unwrap();
        let eps = 1e-6;
        let mut xp = x.clone();
        xp[3] += eps;
        let pert = nets.f_depth(&bound, &Tensor::vector(&xp)).unwrap();
        let delta: f64 = base
            .data()
            .iter()
            .zip(pert.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(
            delta <= lip * eps * (1.0 + 1e-9),
            "delta {delta} exceeds bound {}",
            lip * eps
        );
    }

    #[test]
    fn color_forward_checks_input_dim() {
        let nets = Nets::init(tiny_spec(), 2).unwrap();
        let bound = nets.bind();
        let err = nets.f_color(&bound, &Tensor::vector(&vec![0.0; 16])).unwrap_err();
        assert!(matches!(err, NetError::InputDim { got: 16, want: 48 }));
        assert!(nets
            .f_color(&bound, &Tensor::vector(&vec![0.1; 48]))
            .is_ok());
    }

    #[test]
    fn g_with_zero_blocks_is_identity() {
        let mut nets = Nets::init(tiny_spec(), 4).unwrap();
        for p in &mut nets.params.map_g.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let bound = nets.bind();
        let feat: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let out = nets.g_map(&bound, &Tensor::vector(&feat)).unwrap();
        assert_eq!(out.data(), feat.as_slice(), "residual skip must be exact");
    }

    #[test]
    fn one_block_g_matches_hand_computation() {
        let spec = NetSpec {
            input_dim: 4,
            color_channels: 1,
            hidden_dims: vec![],
            feature_dim: 2,
            activation: Activation::Tanh,
            residual_blocks_g: 1,
            head_mode: HeadMode::ObjectCorners,
            bottleneck_dim: None,
            hand_joints: 6,
        };
        let mut nets = Nets::init(spec, 0).unwrap();
        let w1 = [0.5, -0.25, 1.0, 0.75];
        let w2 = [-0.3, 0.6, 0.2, -0.1];
        nets.params.map_g.params[0].set_effective(&w1);
        nets.params.map_g.params[1].set_effective(&[0.0, 0.0]);
        nets.params.map_g.params[2].set_effective(&w2);
        nets.params.map_g.params[3].set_effective(&[0.0, 0.0]);
        let bound = nets.bind();
        let x = [0.4, -0.9];
        let out = nets.g_map(&bound, &Tensor::vector(&x)).unwrap();

        let h0 = (w1[0] * x[0] + w1[1] * x[1]).tanh();
        let h1 = (w1[2] * x[0] + w1[3] * x[1]).tanh();
        let want = [
            x[0] + w2[0] * h0 + w2[1] * h1,
            x[1] + w2[2] * h0 + w2[3] * h1,
        ];
        for (o, w) in out.data().iter().zip(&want) {
            assert!((o - w).abs() <= 1e-15, "got {o}, want {w}");
        }
    }

    #[test]
    fn head_shapes_by_mode() {
        let nets = Nets::init(tiny_spec(), 6).unwrap();
        let bound = nets.bind();
        let feat = Tensor::vector(&vec![0.2; 6]);
        let y = nets.h_pose(&bound, &feat, HeadMode::ObjectCorners).unwrap();
        assert_eq!(y.len(), 16);
        assert!(nets.h_pose(&bound, &feat, HeadMode::HandJoints).is_err());

        let mut hand = tiny_spec();
        hand.head_mode = HeadMode::HandJoints;
        hand.bottleneck_dim = Some(3);
        hand.hand_joints = 7;
        let nets = Nets::init(hand, 6).unwrap();
        let bound = nets.bind();
        let y = nets.h_pose(&bound, &feat, HeadMode::HandJoints).unwrap();
        assert_eq!(y.len(), 21);
    }

    #[test]
    fn zero_head_gives_zero_vector() {
        let mut nets = Nets::init(tiny_spec(), 7).unwrap();
        for p in &mut nets.params.head.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let bound = nets.bind();
        let y = nets
            .h_pose(&bound, &Tensor::vector(&vec![0.5; 6]), HeadMode::ObjectCorners)
            .unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_head_rank_bounded_by_bottleneck() {
        let mut spec = tiny_spec();
        spec.feature_dim = 10;
        spec.head_mode = HeadMode::HandJoints;
        spec.bottleneck_dim = Some(4);
        spec.hand_joints = 7;
        let nets = Nets::init(spec, 9).unwrap();
        // Numerical rank of the composed linear map W2 * W1 (21 x 10).
        let w1 = nets.params.head.params[0].effective();
        let w2 = nets.params.head.params[2].effective();
        let composed = nalgebra::DMatrix::<f64>::from_fn(21, 10, |r, c| {
            (0..4).map(|k| w2[r * 4 + k] * w1[k * 10 + c]).sum::<f64>()
        });
        let svd = composed.svd(false, false);
        let max_sv: f64 = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * max_sv)
            .count();
        assert!(rank <= 4, "rank {rank} exceeds bottleneck 4");
    }

    #[test]
    fn init_is_reproducible_and_seed_sensitive() {
        let a = init_params(&tiny_spec(), 42).unwrap();
        let b = init_params(&tiny_spec(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&tiny_spec(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_stddev_matches_fan_in_target() {
        let mut spec = tiny_spec();
        spec.input_dim = 64;
        spec.hidden_dims = vec![64];
        spec.feature_dim = 64;
        let params = init_params(&spec, 11).unwrap();
        let w = &params.f_depth.params[0]; // 64 x 64
        assert_eq!(w.shape, vec![64, 64]);
        let eff = w.effective();
        let n = eff.len() as f64;
        let mean: f64 = eff.iter().sum::<f64>() / n;
        let var: f64 = eff.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        // U(-a, a) with a = 1/sqrt(fan_in) has stddev a / sqrt(3).
        let target = 1.0 / (64.0f64).sqrt() / (3.0f64).sqrt();
        assert!(
            (std - target).abs() / target < 0.2,
            "std {std} vs target {target}"
        );
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let spec = tiny_spec();
        let nets = Nets::init(spec, 13).unwrap();
        let bound = nets.bind();
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|s| (0..16).map(|i| ((s * 16 + i) as f64).sin()).collect())
            .collect();
        // Batch matrix is column-per-sample.
        let mut data = vec![0.0; 16 * 3];
        for (j, x) in xs.iter().enumerate() {
            for (i, v) in x.iter().enumerate() {
                data[i * 3 + j] = *v;
            }
        }
        let batch = Tensor::matrix(16, 3, data);
        let fb = nets.f_depth(&bound, &batch).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let f = nets.f_depth(&bound, &Tensor::vector(x)).unwrap();
            for i in 0..6 {
                let b = fb.data()[i * 3 + j];
                assert!((b - f.data()[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn call_counters_track_forwards() {
        let nets = Nets::init(tiny_spec(), 15).unwrap();
        let bound = nets.bind();
        let feat = Tensor::vector(&vec![0.1; 6]);
        nets.g_map(&bound, &feat).unwrap();
        nets.g_map(&bound, &feat).unwrap();
        let counts = nets.counts();
        assert_eq!(counts.g_map, 2);
        assert_eq!(counts.f_depth, 0);
    }
}
