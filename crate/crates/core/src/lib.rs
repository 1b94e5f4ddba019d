//! Desk-scale contrastive touch-to-touch pretraining laboratory.
//!
//! Two simulated tactile sensors (a photometric "gel" sensor and a depth
//! "membrane" sensor) observe identical grasps of parametric 2-d tools. The
//! paired frames train a shared embedding with a symmetric InfoNCE loss, and
//! the evaluation side measures what that buys: linear/pose probes within and
//! across sensors, cross-sensor retrieval, 2-d projections, and a simulated
//! insertion gate.
//!
//! Numeric code is generic over the [`scalar::Scalar`] precision; the
//! pipeline runs at f32 with f64 accumulation while gradient checks and test
//! oracles rerun the same ops at f64. See the type aliases below.

pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod eval;
pub mod sdf;
pub mod sensorsim;
pub mod model;
pub mod params;
pub mod pretrain;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use scalar::Scalar;

/// Pipeline storage precision.
pub type Real = f32;
/// Tensor at pipeline precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Tensor at checking precision.
pub type Tensor64 = tensor::Tensor<f64>;
/// Tape at pipeline precision.
pub type Tape32 = autodiff::Tape<f32>;
/// Tape at checking precision.
pub type Tape64 = autodiff::Tape<f64>;
