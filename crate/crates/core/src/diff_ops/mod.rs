//! Constrained, label-preserving augmentation stages with analytic
//! vector-Jacobian products, the clip layer, and the composed pipeline.

mod blur;
mod clip;
mod compose;
mod stages;

pub use blur::{gaussian_blur, gaussian_blur_adjoint, gaussian_kernel};
pub use clip::{clip_vjp, clip_with_penalty, ClipConfig, DEFAULT_GAMMA};
pub use compose::{compose, vjp, AugmentParams, Composed, Gradients, ParamGrads, Stage, StageConfig, Tape};
pub use stages::{
    highpass, highpass_vjp, phi_bg, phi_bg_vjp, phi_blur, phi_blur_vjp, phi_detail, phi_detail_vjp,
    phi_lighting, phi_lighting_vjp, LightingGrads,
};
