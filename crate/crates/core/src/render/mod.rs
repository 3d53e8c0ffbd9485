//! Projection of 3D Gaussians to image-plane splats and tile-based
//! front-to-back alpha compositing.

mod image;
mod project;
mod raster;

use thiserror::Error;

pub use image::{decode_png, encode_png_rgb8, mse, psnr, read_pfm, write_pfm, RgbImage};
pub use project::{
    alpha_at, invert_cov2d, project_covariance, project_gaussian, project_parts,
    projection_jacobian, Splat2D, COV2D_DILATION, MAX_ALPHA, NEAR_PLANE, SUPPORT_SIGMAS,
};
pub use raster::{
    bin_splats, project_scene, rasterize, rasterize_naive, render, render_gaussian_flow,
    render_with, render_with_flow, sort_splats, splat_displacements, Contribution, RenderBuffers,
    RenderConfig, COVERAGE_EPS,
};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot render an empty scene")]
    EmptyScene,
    #[error("scenes differ in Gaussian count ({reference} vs {other})")]
    CountMismatch { reference: usize, other: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image format error: {0}")]
    Format(String),
}

impl RenderBuffers {
    pub fn color_image(&self) -> RgbImage {
        RgbImage::new(self.width, self.height, self.color.clone())
    }
}
