//! Cross-modal pose transfer at desk scale.
//!
//! A pose estimator is trained on synthetic depth windows only, then made
//! usable on pseudo-color windows by (a) learning a color-to-depth feature
//! mapping from unlabeled image pairs and (b) aligning real and synthetic
//! depth feature distributions with an MMD penalty. Everything runs on one
//! core over a generated toy scene with a controllable sensor gap.

pub mod autodiff;
pub mod checks;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod pnp;
pub mod scene;
pub mod networks;

pub use autodiff::Tensor;
