//! Blendshape facial animation toolkit.
//!
//! The pipeline covered by this crate:
//!
//! 1. **Blendshape construction** — transfer the deformation of each
//!    source blendshape onto a target template mesh ([`transfer`]).
//! 2. **Coefficient fitting** — convert vertex-motion sequences into
//!    smooth blendshape-coefficient sequences by solving a box- and
//!    velocity-constrained QP ([`qp`]).
//! 3. **Generation** — train and sample a speech-conditioned 1D
//!    diffusion model over coefficient sequences, including masked
//!    editing ([`denoiser`], [`diffusion`]).
//! 4. **Evaluation** — distribution-distance metrics over sequences
//!    (multimodality, Frechet distance, Wasserstein inception distance)
//!    backed by a VAE feature extractor ([`metrics`], [`vae`]).
//!
//! Supporting layers: dense f64 tensors with a reverse-mode autodiff
//! tape ([`tensor`], [`autodiff`]), small symmetric linear algebra
//! ([`linalg`]), a deterministic counter-based RNG ([`rng`]), OBJ mesh
//! I/O ([`mesh`]), WAV/log-mel audio features ([`audio`]), and the BTSR
//! binary tensor format ([`btsr`]).

pub mod audio;
pub mod autodiff;
pub mod btsr;
pub mod coeffs;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod lp;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod optim;
#[cfg(any(test, feature = "test-oracles"))]
pub mod oracle;
pub mod qp;
pub mod rng;
pub mod tensor;
pub mod transfer;
pub mod vae;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
