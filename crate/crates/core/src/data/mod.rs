//! Datasets, corruption operators and the tensor file format.

pub mod corrupt;
pub mod images;
pub mod manifold;
pub mod tnsr;

pub use corrupt::{corrupt, corrupt_batch, CorruptionSpec};
pub use images::{gen_procedural_images, to_image_space, to_model_space, ImageDataset, Latent};
pub use manifold::{sample_manifold, sample_manifold_with, ManifoldSample};
