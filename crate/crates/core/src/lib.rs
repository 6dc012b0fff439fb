//! Table structure recognition toolkit: structure-aware anchors,
//! cost-sensitive losses, annotation ingest, COCO-style evaluation and
//! grid reconstruction from row/column/spanning-cell detections.

pub mod anchors;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod loss;
pub mod structure;

pub use geometry::BBox;
pub use ingest::{Category, DetectionRecord};

use thiserror::Error;

/// Any library failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Anchor(#[from] anchors::AnchorError),
    #[error(transparent)]
    Loss(#[from] loss::LossError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Structure(#[from] structure::StructureError),
}
