//! Images, glimpse geometry, categorical distributions and masked embeddings.

mod categorical;
mod embedding;
mod glimpse;
mod image;

pub use categorical::{argmax, entropy, entropy_of, log_softmax, log_sum_exp, softmax, Categorical};
pub use embedding::{masked_embedding, MaskedEmbedding};
pub use glimpse::{fovea, fovea_multi, DesignGrid, GlimpseGeometry, GlimpseHistory, GlimpseLocation, Patch};
pub use image::Image;
