//! Near-optimal glimpse sequences by sequential Bayesian experimental design, and
//! partially supervised training of a hard visual-attention network.
//!
//! The numeric core ([`tensor`], [`posterior::AdamState`]) is generic over [`Scalar`];
//! the pipeline modules work in `f64` and use the aliases exported here.

pub mod attention;
pub mod boed;
pub mod completion;
pub mod error;
pub mod io;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use world::{build_world, sample_dataset, FiniteWorld, LabeledDataset, Split, WorldConfig};

pub use tensor::{DesignGrid, GlimpseGeometry, GlimpseLocation};

pub type Image = tensor::Image<f64>;
pub type Patch = tensor::Patch<f64>;
pub type Categorical = tensor::Categorical<f64>;
pub type GlimpseHistory = tensor::GlimpseHistory<f64>;
pub type MaskedEmbedding = tensor::MaskedEmbedding<f64>;
pub type AdamState = posterior::AdamState<f64>;
