//! Threat-hunting engine for IoT network-flow records.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`tape`], [`optim`] and [`rng`] form a small dense kernel with
//!   reverse-mode differentiation and a seeded, platform-independent RNG.
//! * [`model`] is the transformer-encoder classifier: encoder blocks over the
//!   feature vector treated as a sequence, global average pooling and a dense
//!   softmax head.
//! * [`gan`] trains one generator/discriminator pair per minority class and
//!   rebalances a training set with synthetic rows.
//! * [`data`] ingests the Edge-IIoT CSV and runs the clean / select / encode /
//!   split / standardize recipe, producing on-disk dataset bundles.
//! * [`metrics`] builds confusion matrices and classification reports.
//! * [`gradcheck`] runs finite-difference checks over every differentiable
//!   layer and a tiny end-to-end classifier.

pub mod data;
pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use data::{LabelCodec, LabeledDataset, SplitSpec, StandardizationStats};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, EvaluationReport, TrainingHistory};
pub use model::{Classifier, ModelConfig};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Number of classes in the Edge-IIoT task.
pub const NUM_CLASSES: usize = 15;
/// Encoded feature width of the Edge-IIoT task.
pub const FEATURE_DIM: usize = 95;
