//! Cross-team dataset curation and evaluation.
//!
//! The crate covers every step needed to check how well an image classifier
//! transfers between independently collected datasets ("teams"):
//!
//! 1. [`catalog`]: scan a `<root>/<team>/<class>/<file>` tree into records
//!    with normalized labels, format, resolution, capture device and hash.
//! 2. [`phash`]: 64-bit DCT perceptual hashes and the shared bicubic kernel.
//! 3. [`dedup`]: group identical hashes and keep one representative.
//! 4. [`normalize`]: square resize + center crop, JPEG re-encode.
//! 5. [`splits`]: train-on-one-team (TOTO) and leave-one-team-out (LOTO)
//!    manifests.
//! 6. [`baseline`]: histogram features + linear softmax reference classifier.
//! 7. [`metrics`]: accuracy, validation-test gap, cross-team matrices,
//!    correlations.
//! 8. [`report`]: tables, SVG heatmaps and learning-curve files.
//! 9. [`synthgen`]: synthetic multi-team datasets with controllable shift.
//!
//! [`pipeline`] chains the stages through file artifacts in a work directory.
//!
//! Data-parallel stages go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (default) and plain iterators otherwise.
//! Outputs never depend on the worker count.

pub mod baseline;
pub mod catalog;
pub mod config;
pub mod dedup;
mod error;
pub mod fixtures;
pub mod metrics;
pub mod normalize;
pub mod par;
pub mod phash;
pub mod pipeline;
pub mod report;
pub mod splits;
pub mod synthgen;

pub use error::{Error, Result};
