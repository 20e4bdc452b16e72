//! Hybrid classical-quantum classification heads over frozen features,
//! with from-scratch state-vector and density-matrix simulators, calibrated
//! noise channels and circuit gradients.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod circuit;
pub mod config;
pub mod data;
pub mod error;
pub mod gradient;
pub mod model;
pub mod noise;
pub mod state;
pub mod train;

pub use backend::{Backend, BitstringCounts, NoisePolicy, ShotConfig};
pub use circuit::{CircuitShape, ParamMatrix, ParameterizedCircuit, Template};
pub use data::FeatureDataset;
pub use error::{QtlError, Result};
pub use gradient::{GradientMethod, SpsaConfig};
pub use model::{Checkpoint, HybridModel, ModelVariant, VariantKind};
pub use noise::{ChannelParams, DeviceCalibration, KrausChannel};
pub use state::{DensityMatrix, QuantumState, Statevector};
pub use train::{Metrics, RunReport, TrainConfig};
