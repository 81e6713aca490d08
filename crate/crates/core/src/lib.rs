//! Sequence-level adversarial garment textures.
//!
//! This crate implements the full pipeline for optimizing printable garment
//! textures that suppress person-detector confidence across whole rendered
//! walking sequences rather than individual frames:
//!
//! * [`texture_param`] — palette extraction (dual-domain K-means), print-gamut
//!   locking, and control-point parameterization of a source texture.
//! * [`texture_gen`] — differentiable generator mapping control points to a
//!   palette-constrained texture via Gumbel-softmax mixing, with an analytic
//!   gradient back to the control points.
//! * [`sim`] — capsule body model, keyframe walk synthesis, and a fast cloth
//!   surrogate driven by physical material parameters.
//! * [`render`] — pinhole rasterizer with per-frame sparse pixel→texel
//!   Jacobians, procedural backgrounds, and scene sampling.
//! * [`detect`] — a contrast-based toy person detector (differentiable w.r.t.
//!   pixels), IoU/frame-loss utilities, and detection-log ingestion.
//! * [`optim`] — sequence-weighted loss, control-point repulsion loss, and the
//!   expectation-over-transformation attack loop (Adam, checkpoints, history).
//! * [`eval`] — sequence attack metrics (SeqASR, tail confidence, neutralized
//!   detection rate) and report/plot emission.
//! * [`smoke`] — a self-contained desk-scale scene used by tests and demos.
//!
//! Everything is deterministic given the seeds recorded in configs and
//! parameter files; re-running any stage with identical inputs reproduces its
//! outputs bit for bit.

pub mod detect;
pub mod error;
pub mod eval;
pub mod geom;
pub mod optim;
pub mod render;
pub mod sim;
pub mod smoke;
pub mod texture_gen;
pub mod texture_param;
pub mod util;

pub use error::{Error, Result};
