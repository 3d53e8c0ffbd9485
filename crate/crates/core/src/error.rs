use thiserror::Error;

use crate::control::ControlError;
use crate::discovery::DiscoveryError;
use crate::flow::FlowError;
use crate::render::RenderError;
use crate::scene::SceneError;
use crate::train::TrainError;

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
