//! Desk-scale training lab for transient-event perception.
//!
//! The pipeline trains a tiny decoder model to answer questions about
//! sparse, short-lived events planted in synthetic frame-feature sequences:
//!
//! 1. [`synthworld`] generates labeled sequences with oracle event ground
//!    truth, template captions, and closed-form QA.
//! 2. [`keyabsent`] scores frames against pooled keyword embeddings, detects
//!    keyframes at strict local maxima of the similarity trace, and builds
//!    degraded twins in which keyframes are replaced by their predecessors.
//! 3. [`tinymodel`] is a small pre-norm decoder with hand-rolled reverse-mode
//!    differentiation ([`graph`]), per-block hidden-state taps and seeded
//!    dropout masks.
//! 4. [`contrastive`] supplies the three intermediate-layer InfoNCE losses
//!    over end-of-segment states plus the combined SFT objective.
//! 5. [`compgrpo`] implements comparative group-relative policy optimization:
//!    paired original/degraded sampling, comparative rewards, an EMA
//!    baseline, the refeed gate, and the clipped group-wise update.
//! 6. [`harness`] orchestrates SFT and RL runs, evaluation, ablations,
//!    checkpointing, and JSON-lines metrics.
//!
//! Everything is deterministic in `(config, seed)`: random streams are
//! derived functionally per purpose via [`rng`], so checkpoint resume is
//! bit-exact by construction.

pub mod ablate;
pub mod compgrpo;
pub mod config;
pub mod contrastive;
pub mod error;
pub mod fdcheck;
pub mod graph;
pub mod harness;
pub mod keyabsent;
pub mod metrics;
pub mod rng;
pub mod synthworld;
pub mod tinymodel;
pub mod vocab;

pub use error::{Error, Result};
