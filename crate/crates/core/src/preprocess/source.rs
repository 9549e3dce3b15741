use std::borrow::Cow;

use super::{augment, to_features, AugmentConfig};
use crate::learner::{LabeledSample, SampleSource};
use crate::preprocess::RawImage;
use crate::rng::derive_seed;

/// Training images that are re-augmented every epoch, plus a fixed
/// (unaugmented) validation split. Images must already be prepared to the
/// target size.
#[derive(Debug, Clone)]
pub struct ImageSource {
    train: Vec<(RawImage, usize)>,
    plain_train: Vec<LabeledSample>,
    validation: Vec<LabeledSample>,
    augment: AugmentConfig,
    seed: u64,
}

impl ImageSource {
    pub fn new(train: Vec<(RawImage, usize)>, validation: &[(RawImage, usize)], augment: AugmentConfig, seed: u64) -> Self {
        let plain_train = train.iter().map(|(img, l)| LabeledSample::new(to_features(img), *l)).collect();
        let validation = validation.iter().map(|(img, l)| LabeledSample::new(to_features(img), *l)).collect();
        Self { train, plain_train, validation, augment, seed }
    }

    pub fn train_images(&self) -> &[(RawImage, usize)] {
        &self.train
    }
}

impl SampleSource for ImageSource {
    fn training(&self, epoch: u32) -> Cow<'_, [LabeledSample]> {
        if self.augment.is_identity() {
            return Cow::Borrowed(&self.plain_train);
        }
        Cow::Owned(
            self.train
                .iter()
                .enumerate()
                .map(|(i, (img, label))| {
                    let seed = derive_seed(self.seed, &[u64::from(epoch), i as u64]);
                    LabeledSample::new(to_features(&augment(img, &self.augment, seed)), *label)
                })
                .collect(),
        )
    }

    fn validation(&self) -> &[LabeledSample] {
        &self.validation
    }

    fn training_len(&self) -> usize {
        self.train.len()
    }
}
