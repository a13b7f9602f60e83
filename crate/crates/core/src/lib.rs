//! Obstacle-approach warnings for assistive guidance.
//!
//! The pipeline converts frames to grayscale, builds image pyramids, tracks
//! Shi-Tomasi corners with weighted pyramidal Lucas-Kanade flow, fuses the
//! trajectories with detections and depth maps from pluggable backends, and
//! speaks a warning when an object approaches inside the left, center or
//! right third of the view.
//!
//! [`sim`] renders scripted scenes with exact ground truth so the whole chain
//! can be tested without video files or neural networks.

pub mod features;
pub mod flow;
pub mod guidance;
pub mod imgproc;
pub mod perception;
pub mod pipeline;
pub mod sim;
