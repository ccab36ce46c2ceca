//! Shared fixtures for the criterion benches.

use styleprior::ndiff::Tensor;
use styleprior::sprites::make_dataset;
use styleprior::stylegen::{GeneratorConfig, StyleGenerator};

/// Generator with the shipped reference layout, randomly initialized.
pub fn compact_generator() -> StyleGenerator {
    StyleGenerator::new(GeneratorConfig::compact(), 0).expect("valid config")
}

/// One 32×32 sprite.
pub fn sprite() -> Tensor {
    make_dataset(1, 0, 32).expect("n > 0").remove(0).image
}
