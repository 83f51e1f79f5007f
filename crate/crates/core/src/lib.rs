//! Dynamic-point refinement for feature-based visual odometry.
//!
//! The crate scores tracked keypoints against a semantic mask, the ground
//! plane, their temporal motion and the image border, removes the ones that are
//! likely dynamic or unreliable, refines the camera pose over the survivors and
//! evaluates the resulting trajectory (APE/RPE after Umeyama alignment) and the
//! filter itself (confusion metrics).
//!
//! Modules:
//! - [`geometry`]: poses, pinhole camera, planes, horizon line.
//! - [`masks`]: detection post-processing into a per-pixel [`masks::SegMask`].
//! - [`filter`]: multi-stage point scoring and outlier selection.
//! - [`pose`]: robust pose refinement and the keyframe rule.
//! - [`runtime`]: frame pipeline, timing model and adaptive quality.
//! - [`eval`]: trajectory metrics, confusion metrics, improvement reports.
//! - [`synth`]: labeled synthetic scenes for end-to-end checks.
//! - [`io`]: the plain-text point, outlier and label formats.
//! - [`par`]: the data-parallel execution policy shared by all kernels.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod masks;
pub mod par;
pub mod pose;
pub mod runtime;
pub mod synth;

pub use geometry::{CameraIntrinsics, Plane, Pose, SimilarityTransform, Vec2, Vec3};
pub use par::Exec;
