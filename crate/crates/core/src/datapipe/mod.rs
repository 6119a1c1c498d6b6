//! Dataset ingestion, landmark-driven cropping and alignment, augmentation,
//! and the class-balancing samplers used during training.

mod attributes;
mod augment;
mod crop;
mod examples;
mod manifest;
mod parts;
mod sampler;

pub use attributes::{attribute_index, ATTRIBUTES, NUM_ATTRIBUTES};
pub use augment::{augment, AugmentConfig, AugmentParams};
pub use crop::{
    align_face, crop_part, load_image, SimilarityTransform, ALIGNED_SIZE, CANONICAL_LEFT_EYE, CANONICAL_RIGHT_EYE,
};
pub use examples::{aligned_examples, part_examples, Example, TrainingData};
pub(crate) use examples::load_with_landmarks;
pub use manifest::{read_manifest, write_manifest, LabeledSample, Split};
pub use parts::{fit_windows, EyePoints, PartDefinition, PartTable, Window};
pub use sampler::{BinaryBalancer, QueueSet};

/// A pixel-space landmark `(x, y)`.
pub type Landmark = [f32; 2];
