//! ADAM stepping for the four parameter collections.
//!
//! One optimizer state spans all collections; the staged schedule picks which
//! collections a step may touch through a [`CollectionMask`], so pretraining
//! stages leave the others bitwise untouched.

use thiserror::Error;

use crate::autodiff::Gradients;
use crate::networks::{Bound, ModelParams, Net, ALL_NETS};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {path}")]
    NonFiniteGradient { path: String },
    #[error("invalid optimizer hyperparameters: {0}")]
    BadHyper(String),
    #[error("optimizer state does not match parameter shapes at {path}")]
    ShapeDrift { path: String },
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Learning rate and moment decay rates. Defaults: alpha 1e-4, beta1 0.9,
/// beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(OptimError::BadHyper(format!("alpha must be > 0, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(OptimError::BadHyper(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps_hat > 0.0) {
            return Err(OptimError::BadHyper(format!(
                "eps_hat must be > 0, got {}",
                self.eps_hat
            )));
        }
        Ok(())
    }
}

/// Which collections a step may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectionMask {
    pub f_depth: bool,
    pub f_color: bool,
    pub map_g: bool,
    pub head: bool,
}

impl CollectionMask {
    pub const ALL: CollectionMask = CollectionMask {
        f_depth: true,
        f_color: true,
        map_g: true,
        head: true,
    };

    pub const DEPTH_STAGE: CollectionMask = CollectionMask {
        f_depth: true,
        f_color: false,
        map_g: false,
        head: true,
    };

    pub const COLOR_STAGE: CollectionMask = CollectionMask {
        f_depth: false,
        f_color: true,
        map_g: false,
        head: false,
    };

    pub fn active(&self, net: Net) -> bool {
        match net {
            Net::FDepth => self.f_depth,
            Net::FColor => self.f_color,
            Net::MapG => self.map_g,
            Net::Head => self.head,
        }
    }
}

/// First/second moment buffers laid out like the parameter collections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub f_depth: Vec<Vec<f64>>,
    pub f_color: Vec<Vec<f64>>,
    pub map_g: Vec<Vec<f64>>,
    pub head: Vec<Vec<f64>>,
}

impl Moments {
    fn zeros_like(params: &ModelParams) -> Moments {
        let z = |c: &crate::networks::Collection| {
            c.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
        };
        Moments {
            f_depth: z(&params.f_depth),
            f_color: z(&params.f_color),
            map_g: z(&params.map_g),
            head: z(&params.head),
        }
    }

    pub fn collection(&self, net: Net) -> &Vec<Vec<f64>> {
        match net {
            Net::FDepth => &self.f_depth,
            Net::FColor => &self.f_color,
            Net::MapG => &self.map_g,
            Net::Head => &self.head,
        }
    }

    fn collection_mut(&mut self, net: Net) -> &mut Vec<Vec<f64>> {
        match net {
            Net::FDepth => &mut self.f_depth,
            Net::FColor => &mut self.f_color,
            Net::MapG => &mut self.map_g,
            Net::Head => &mut self.head,
        }
    }
}

/// ADAM state shared across all collections.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub hyper: AdamHyper,
    pub m: Moments,
    pub v: Moments,
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Result<AdamState> {
        hyper.validate()?;
        Ok(AdamState {
            step_count: 0,
            hyper,
            m: Moments::zeros_like(params),
            v: Moments::zeros_like(params),
        })
    }
}

/// One bias-corrected ADAM step over the masked collections:
/// `p <- p - alpha * m_hat / (sqrt(v_hat) + eps)`.
///
/// Gradients are looked up through the bound leaves that produced them. A
/// non-finite gradient anywhere in an active collection aborts the step
/// before any parameter or moment is touched.
pub fn adam_step(
    params: &mut ModelParams,
    bound: &Bound,
    grads: &Gradients,
    state: &mut AdamState,
    mask: CollectionMask,
) -> Result<()> {
    // Validate before mutating.
    for net in ALL_NETS {
        if !mask.active(net) {
            continue;
        }
        let collection = params.collection(net);
        for (i, p) in collection.params.iter().enumerate() {
            let g = grads.get(&bound.leaves(net)[i]);
            if g.len() != p.data.len() {
                return Err(OptimError::ShapeDrift {
                    path: p.name.clone(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    path: p.name.clone(),
                });
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let AdamHyper {
        alpha,
        beta1,
        beta2,
        eps_hat,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for net in ALL_NETS {
        if !mask.active(net) {
            continue;
        }
        let collection = params.collection_mut(net);
        let m_c = state.m.collection_mut(net);
        let v_c = state.v.collection_mut(net);
        for (i, p) in collection.params.iter_mut().enumerate() {
            let g = grads.get(&bound.leaves(net)[i]);
            let m = &mut m_c[i];
            let v = &mut v_c[i];
            for k in 0..p.data.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p.data[k] -= alpha * m_hat / (v_hat.sqrt() + eps_hat);
            }
        }
    }
    Ok(())
}
