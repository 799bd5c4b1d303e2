//! Bias-free regression under target transformation.
//!
//! Training a regressor on `T(y)` with MSE and predicting `T^-1(f)` is
//! systematically biased whenever `T^-1` is non-linear. This crate implements
//! the transformed-MSE baseline, the TranSUN bias-learning branch, the wider
//! GTS family, the exact oracles those models should converge to, the
//! evaluation metrics and the post-hoc correction baselines.

pub mod ad;
pub mod dataset;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod posthoc;
pub mod regressor;
pub mod rng;
pub mod synth;
pub mod transform;

pub use dataset::Dataset;
pub use loss::{KappaKind, PointLoss};
pub use regressor::{train, Optimizer, Prediction, RegressorSpec, Scheme, TrainError, TrainedRegressor};
pub use rng::RngStream;
pub use synth::DistributionSpec;
pub use transform::TargetTransform;
