//! DnCNN and FFDNet channel denoisers on a small CPU tensor engine.
//!
//! LS channel estimates are laid out as two-channel `M x (K+1)` images and a
//! residual network removes the estimation noise. The crate contains the
//! forward and backward kernels, the Adam training loop with early stopping,
//! dataset generation and binary persistence.

pub mod data;
pub mod error;
pub mod estimator;
pub mod image;
pub mod io;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use data::{generate_dataset, Dataset, DatasetSpec, Split, SplitSizes};
pub use error::{CnnError, Result};
pub use estimator::CnnEstimator;
pub use layers::Mode;
pub use network::{dncnn_forward, ffdnet_forward, loss_and_grads, Arch, NetworkWeights};
pub use tensor::{Real, Tensor, Tensor4};
pub use train::{train, NetSpec, TrainConfig, TrainLog};
