//! Frozen feature maps used inside the reconstruction objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndiff::{Graph, Tensor, Var};
use crate::stylegen::LEAKY_SLOPE;

/// Seed of the extractor the optimizer descends on.
pub const OPTIMIZATION_SEED: u64 = 0xA11CE;
/// Seed of the held-out extractor used for reporting, so that evaluation is
/// never done on the exact features that were optimized.
pub const EVALUATION_SEED: u64 = 0xB0B;

const WIDTHS: [usize; 3] = [16, 32, 32];

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    PixelIdentity,
    RandomConv { seed: u64, layers: Vec<(Tensor, Tensor)> },
}

/// Feature map φ. Either raw pixels, or raw pixels concatenated with the
/// activations of three fixed random stride-2 convolutions; each block is
/// divided by its element count so blocks weigh equally in an L1 distance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    resolution: usize,
    channels: usize,
    kind: Kind,
}

impl FeatureExtractor {
    pub fn pixel_identity(channels: usize, resolution: usize) -> Self {
        FeatureExtractor {
            resolution,
            channels,
            kind: Kind::PixelIdentity,
        }
    }

    pub fn random_conv(channels: usize, resolution: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = channels;
        let mut layers = Vec::with_capacity(WIDTHS.len());
        for &cout in &WIDTHS {
            let fan_in = (cin * 9) as f64;
            let kernel = Tensor::randn(vec![cout, cin, 3, 3], (2.0 / fan_in).sqrt(), &mut rng);
            let bias = Tensor::randn(vec![cout], 0.1, &mut rng);
            layers.push((kernel, bias));
            cin = cout;
        }
        FeatureExtractor {
            resolution,
            channels,
            kind: Kind::RandomConv { seed, layers },
        }
    }

    /// The same feature map applied at another input resolution.
    pub fn at_resolution(&self, resolution: usize) -> Self {
        FeatureExtractor {
            resolution,
            ..self.clone()
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.kind {
            Kind::PixelIdentity => None,
            Kind::RandomConv { seed, .. } => Some(*seed),
        }
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.channels, self.resolution, self.resolution] {
            return Err(Error::dim(
                "features",
                format!(
                    "image {shape:?}, extractor expects [{}, {}, {}]",
                    self.channels, self.resolution, self.resolution
                ),
            ));
        }
        Ok(())
    }

    /// Recorded feature vector of `image`.
    pub fn features_var(&self, g: &mut Graph, image: Var) -> Result<Var> {
        self.check(g.value(image).shape())?;
        match &self.kind {
            Kind::PixelIdentity => g.concat(&[image]),
            Kind::RandomConv { layers, .. } => {
                let n0 = g.value(image).len() as f64;
                let mut blocks = vec![g.scale(image, 1.0 / n0)?];
                let mut h = image;
                for (kernel, bias) in layers {
                    let k = g.constant(kernel.clone());
                    let b = g.constant(bias.clone());
                    h = g.conv2d_strided(h, k, b, 2, 1)?;
                    h = g.leaky_relu(h, LEAKY_SLOPE)?;
                    let n = g.value(h).len() as f64;
                    blocks.push(g.scale(h, 1.0 / n)?);
                }
                g.concat(&blocks)
            }
        }
    }

    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(image.clone());
        let f = self.features_var(&mut g, v)?;
        Ok(g.value(f).clone())
    }

    /// `mean |φ(a) - φ(b)|`.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        self.features(a)?.l1_distance(&self.features(b)?)
    }
}
