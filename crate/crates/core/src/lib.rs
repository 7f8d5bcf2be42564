//! Incomplete-polygon stimulus generation and closure measurement.
//!
//! The crate renders regular polygons whose sides have their middle portion
//! hidden, organizes them into a full factorial train/test design, and scores
//! any classifier's predictions on that design as accuracy curves over
//! removal level and side count.
//!
//! Geometry and rasterization are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`, which the dataset pipeline uses.

pub mod baseline;
pub mod dataset;
pub mod geometry;
pub mod protocol;
pub mod raster;
pub mod scalar;

use thiserror::Error;

pub use baseline::{BaselineError, TemplateModel};
pub use dataset::{
    DatasetConfig, DatasetError, DatasetManifest, Position, Split, StimulusRecord,
};
pub use geometry::{Background, GeometryError, RotationScheme, REMOVAL_LEVELS};
pub use protocol::{ClosureReport, PredictionSet, ProtocolError};
pub use raster::{CanvasConfig, GrayImage, RasterError, StimulusImage};
pub use scalar::Scalar;

pub type Point = geometry::Point2<f64>;
pub type Segment = geometry::Segment<f64>;
pub type PolygonSpec = geometry::PolygonSpec<f64>;

pub type Point32 = geometry::Point2<f32>;
pub type Segment32 = geometry::Segment<f32>;
pub type PolygonSpec32 = geometry::PolygonSpec<f32>;

/// Any failure from the crate's pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl Error {
    /// True when the failure came from the filesystem rather than from
    /// invalid content.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Dataset(e) => e.is_io(),
            Error::Protocol(e) => e.is_io(),
            Error::Baseline(e) => e.is_io(),
            Error::Geometry(_) | Error::Raster(_) => false,
        }
    }
}
