//! Salient object detection on aligned RGB + thermal image pairs.
//!
//! An image pair is over-segmented with SLIC on the joint `[L, a, b, t]`
//! raster. Superpixels become nodes of one shared graph; each modality weights
//! its edges by feature similarity. Saliency comes from two rounds of
//! multi-task manifold ranking, which learns a reliability weight per
//! modality and ties the modality rankings together with a consistency
//! penalty:
//!
//! 1. rank against each image side's superpixels (background queries) and
//!    combine the four complemented rankings;
//! 2. take the most salient superpixels as foreground queries, rank again,
//!    and fuse the modalities by their learned weights.
//!
//! The [`metrics`] module scores maps against ground truth with PR curves,
//! adaptive-threshold F-measure and MAE.

pub mod error;
pub mod graph;
pub mod imageio;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod ranking;
pub mod raster;
pub mod superpixel;

pub use error::{Error, Result};
pub use imageio::{load_ground_truth, load_manifest, load_pair, AlignedImagePair, Challenge, DatasetRecord, GroundTruth};
pub use pipeline::{detect, detect_with, PipelineParams, SaliencyMap};
pub use raster::Plane;
