//! Joint restoration and multiphase segmentation of gray and vector-valued
//! images.
//!
//! The model couples a restoration fidelity `μ Φ(f, Ag)` (denoising,
//! deblurring, inpainting through an observation mask `ω`) with a
//! piecewise-constant segmentation of the restored image `g`:
//!
//! ```text
//! E(u, c, g) = μ Σ_j ∫ ω (f_j − A g_j)² + λ Σ_i Σ_j ∫ ω (g_j − c_{i,j})² u_i + Σ_i ∫ |∇u_i|
//! ```
//!
//! subject to `u(x)` lying on the unit simplex. [`driver::run`] minimizes it
//! by alternating exact `g` and `c` updates with an ADMM solve for `u`.
//!
//! ```no_run
//! use segres_core::{corrupt, driver, metrics, ModelParams, ObservationMask};
//!
//! let scene = corrupt::make_scene(corrupt::SceneKind::Shapes2, 128, 1).unwrap();
//! let noisy = corrupt::add_gaussian_noise(&scene.image, 0.05, 7).unwrap();
//! let omega = ObservationMask::full(128, 128);
//! let result = driver::run(&noisy, &omega, &ModelParams { lambda: 4.0, ..Default::default() }).unwrap();
//! let sa = metrics::segmentation_accuracy(&result.labels, &scene.truth).unwrap();
//! println!("SA = {sa:.2}");
//! ```

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
// Strided plane indexing reads clearer with explicit index loops.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cluster;
pub mod corrupt;
pub mod driver;
pub mod error;
pub mod metrics;
pub mod operators;
pub mod restore;
pub mod segment;
pub mod types;

pub use error::{Result, SegError};
pub use types::{
    binarize, Codebook, Fidelity, ImageField, Kernel, LabelMap, Membership, ModelParams, ObservationMask, OperatorKind,
    Validate, Violation,
};
