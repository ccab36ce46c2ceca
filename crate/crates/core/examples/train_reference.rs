//! Retrains the shipped reference checkpoint.
//!
//! `cargo run --release -p styleprior --example train_reference [out.ckpt]`

use std::path::PathBuf;
use std::time::Instant;

use styleprior::glotrain::{save_checkpoint, train_glo_with, Checkpoint, TrainConfig};
use styleprior::invert::{FeatureExtractor, OPTIMIZATION_SEED};
use styleprior::sprites::make_dataset;
use styleprior::stylegen::{GeneratorConfig, StyleGenerator};

fn main() -> styleprior::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("assets/reference.ckpt"), PathBuf::from);
    let images: Vec<_> = make_dataset(500, 1, 32)?.into_iter().map(|s| s.image).collect();
    let gen = StyleGenerator::new(GeneratorConfig::compact(), 7)?;
    let phi = FeatureExtractor::random_conv(3, 32, OPTIMIZATION_SEED);
    let cfg = TrainConfig {
        param_lr: 1e-2,
        latent_lr: 1e-1,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let trained = train_glo_with(&images, gen, &phi, &cfg, |epoch, loss| {
        eprintln!("epoch {epoch:>3}  loss {loss:.4e}  {:.0}s", t.elapsed().as_secs_f64());
    })?;
    save_checkpoint(
        &out,
        &Checkpoint {
            generator: trained.generator,
            codes: trained.codes,
            loss_history: trained.loss_history,
        },
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
