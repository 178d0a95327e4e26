//! Event-camera motion segmentation by iterative contrast maximization.
//!
//! The pipeline estimates a dominant motion for an event slice by
//! maximizing the variance of the image of warped events, scores every
//! event by the magnitude of the objective's first variation with respect
//! to its coordinates, thresholds those scores to split the slice into a
//! motion cluster and residuals, and repeats on the residuals until only
//! noise remains.

pub mod error;
pub mod event;
pub mod imageio;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod segment;
pub mod synth;
pub mod variation;
pub mod warp;

pub use error::{Error, Result};
pub use event::{Event, EventSlice, SensorGeometry};
pub use segment::{ClusterResult, ClustersFile, SegmentationConfig, SegmentationOutput};
pub use warp::{MotionModel, WarpKind};
