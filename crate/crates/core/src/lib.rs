//! Memory-bounded online continual learning over precomputed embeddings.
//!
//! Learners consume a class-incremental stream one example at a time after
//! an offline initialization on a pre-train class subset:
//!
//! - [`slda`]: streaming linear discriminant analysis
//! - [`replay_softmax`]: softmax head with raw-embedding replay
//! - [`remind`]: product-quantized replay feeding a small trainable head
//!
//! [`experiment`] wires data, split, stream, learners and metrics together.

mod binio;
pub mod error;
pub mod experiment;
pub mod feature_io;
pub mod learner;
pub mod metrics;
pub mod offline_linear;
pub mod pq;
pub mod remind;
pub mod replay;
pub mod replay_softmax;
pub mod slda;
pub mod stream;

pub use error::{Error, Result};
pub use learner::{Classifier, OnlineLearner};
