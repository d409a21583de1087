//! The inpainting engine: FFC layers with exact analytic gradients, a small
//! encoder-decoder inpainter trained with masked reconstruction loss, and a
//! training-free harmonic inpainting oracle.

pub mod classical;
pub mod fft;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use classical::{classical_inpaint, ClassicalInpainter};
pub use layers::{spectral_transform, FfcBlock, FfcLayer, SpectralLayer};
pub use model::{Arch, InpainterModel};
pub use tensor::Tensor4;
pub use train::{
    evaluate_loss, masked_l1_loss, train, AugmentConfig, TrainBatch, TrainConfig, TrainSample,
};
