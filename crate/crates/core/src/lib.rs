//! Two-stage tracker for 4D panoptic LiDAR segmentation.
//!
//! Stage 1 tracks per-frame box detections with a Kalman filter and a
//! two-tier association scheme; stage 2 maps the tracked boxes back onto
//! per-point panoptic labels with temporally consistent instance ids.

pub mod association;
pub mod config;
pub mod classes;
pub mod geometry;
pub mod motion;
pub mod tracker;
pub mod kittiio;
pub mod metrics;
pub mod pipeline;
pub mod pointlabel;
pub mod spatial;
pub mod synth;
