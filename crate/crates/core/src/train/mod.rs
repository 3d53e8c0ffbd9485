//! Losses, analytic gradients, Adam and the two training stages.

use thiserror::Error;

use crate::control::ControlError;
use crate::discovery::DiscoveryError;
use crate::flow::FlowError;
use crate::render::RenderError;
use crate::scene::SceneError;

mod adam;
mod backward;
mod deform;
mod gradcheck;
mod loss;
mod params;
mod stage;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_LR};
pub use backward::{
    render_backward, render_for_training, training_config, GaussianGrad, TrainingRender,
};
pub use deform::{deform_backward, deform_forward, DeformGroup, Deformed};
pub use gradcheck::{
    check_gradient, gradcheck, gradcheck_with_loss, relative_error, BlockError, GradCheckComponent,
    GradCheckReport, DEFAULT_GRADCHECK_STEP, GRADCHECK_FLOOR,
};
pub use loss::*;
pub use params::{perturb_scene, GaussianBlock, GaussianParams, Perturbation, PARAMS_PER_GAUSSIAN};
pub use stage::*;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("image {width}x{height} is smaller than the {min}x{min} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("no valid pixels for the flow loss")]
    NoValidPixels,
    #[error("parameter vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training diverged: {0}")]
    Degenerate(String),
    #[error("cluster {cluster} has {samples} trajectory samples for {frames} frames")]
    MissingTrajectory {
        cluster: usize,
        samples: usize,
        frames: usize,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
