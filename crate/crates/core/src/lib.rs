//! Multi-event video-text retrieval over precomputed embeddings.
//!
//! A video is described by several captions, one per event. The crate
//! covers the pipeline downstream of frozen encoders:
//!
//! - [`corpus`]: embedding files, manifests, and a seeded synthetic corpus.
//! - [`keyevents`]: K-Medoids selection of representative frames.
//! - [`similarity`]: average / max / mean-pool video-text scoring.
//! - [`loss`]: the multi-positive contrastive loss with dynamic weighting.
//! - [`trainer`]: gradient descent on a shared linear projection head.
//! - [`eval`]: Recall@k (Average / One-Hit / All-Hit), median rank, subset
//!   bins, and the caption-collapse statistic.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod keyevents;
pub mod loss;
pub mod similarity;
pub mod trainer;

pub use error::{Error, FormatErrorKind, Result};
