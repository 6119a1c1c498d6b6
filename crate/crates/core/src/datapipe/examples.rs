use super::attributes::attribute_index;
use super::crop::{align_face, crop_part, load_image};
use super::manifest::{LabeledSample, Split};
use super::parts::{EyePoints, PartDefinition};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A network input with its labels, in the network's own attribute order.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T = f32> {
    pub input: Tensor<T>,
    pub labels: Vec<u8>,
}

/// Train and dev examples for one network.
#[derive(Clone, Debug, Default)]
pub struct TrainingData<T = f32> {
    pub train: Vec<Example<T>>,
    pub dev: Vec<Example<T>>,
}

impl<T: Real> TrainingData<T> {
    pub fn num_attrs(&self) -> Option<usize> {
        self.train.first().map(|e| e.labels.len())
    }
}

pub(crate) fn load_with_landmarks(sample: &LabeledSample) -> Result<(Tensor, LabeledSample)> {
    let image = load_image(&sample.image_ref)?;
    let (h, w, _) = image.dims3()?;
    let mut s = sample.clone();
    s.clamp_landmarks(w, h);
    Ok((image, s))
}

/// Part crops of every sample in `split`, labelled with the part's attributes.
pub fn part_examples(samples: &[LabeledSample], part: &PartDefinition, split: Split) -> Result<Vec<Example>> {
    let attrs = part.attribute_indices();
    samples
        .iter()
        .filter(|s| s.split == split)
        .map(|s| {
            let (image, s) = load_with_landmarks(s)?;
            let input = crop_part(&image, &s.landmarks, part)?;
            Ok(Example { input, labels: attrs.iter().map(|&a| s.labels[a]).collect() })
        })
        .collect()
}

/// Aligned full faces of every sample in `split`, labelled with one attribute.
pub fn aligned_examples(
    samples: &[LabeledSample],
    eyes: &EyePoints,
    attribute: &str,
    split: Split,
) -> Result<Vec<Example>> {
    let a = attribute_index(attribute).ok_or_else(|| Error::Data(format!("unknown attribute {attribute}")))?;
    samples
        .iter()
        .filter(|s| s.split == split)
        .map(|s| {
            let (image, s) = load_with_landmarks(s)?;
            let (input, _) = align_face(&image, &s.landmarks, eyes)?;
            Ok(Example { input, labels: vec![s.labels[a]] })
        })
        .collect()
}
