//! Minimal dense-network machinery: row-major 2-D tensors backed by gemm,
//! dense layers with exact reverse-mode gradients, Adam, Gaussian
//! reparameterization, KL and InfoNCE losses, and positional encoding.
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient-check tests instantiate the same code at `f64` for sharp
//! finite-difference tolerances.

mod adam;
mod dense;
mod losses;
mod tensor;

pub use adam::AdamState;
pub use dense::{Activation, DenseLayer, DenseNet, ForwardCache, NetGrads};
pub use losses::{
    gaussian_kl, gaussian_kl_grads, infonce_loss, mi_bounds, posenc_batch, posenc_dim,
    positional_encode, reparameterize, tempered_softmax, GaussianPosterior, InfoNce, MiEstimate,
    LOG_VAR_CLAMP, POSENC_FREQS,
};
pub use tensor::{Scalar, Tensor2D};
