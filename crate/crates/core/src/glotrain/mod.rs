//! Non-adversarial training of the style generator by Generative Latent
//! Optimization: every training image owns a code on the `sqrt(d)` sphere,
//! and codes and generator parameters descend the same reconstruction loss.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::invert::FeatureExtractor;
use crate::ndiff::{Adam, Graph, Tensor, Update, Var};
use crate::parallel::map_jobs;
use crate::stylegen::StyleGenerator;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub param_lr: f64,
    pub latent_lr: f64,
    /// Chance per batch of swapping a suffix of layer codes between two
    /// batch members.
    pub mixing_prob: f64,
    pub seed: u64,
    /// Worker threads for per-image gradients; results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 16,
            param_lr: 1e-3,
            latent_lr: 1e-2,
            mixing_prob: 0.5,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        for (name, lr) in [("param_lr", self.param_lr), ("latent_lr", self.latent_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mixing_prob) {
            return Err(Error::invalid(format!(
                "mixing_prob must lie in [0, 1], got {}",
                self.mixing_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub generator: StyleGenerator,
    /// One global code per training image, in dataset order.
    pub codes: Vec<Vec<f64>>,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

fn project_to_sphere(z: &mut [f64]) {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        let r = (z.len() as f64).sqrt() / norm;
        z.iter_mut().for_each(|v| *v *= r);
    }
}

/// Seeded normal codes projected onto the `sqrt(d)` sphere.
pub fn initial_codes(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            project_to_sphere(&mut z);
            z
        })
        .collect()
}

/// Which training code feeds each style layer of one batch member.
#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerSources(Vec<usize>);

struct ItemGrad {
    loss: f64,
    params: Vec<Vec<f64>>,
    /// Gradient w.r.t. each distinct source code, `(image index, grad)`.
    codes: Vec<(usize, Vec<f64>)>,
}

fn item_gradient(
    gen: &StyleGenerator,
    phi: &FeatureExtractor,
    codes: &[Vec<f64>],
    sources: &LayerSources,
    target: &Tensor,
    weight: f64,
) -> Result<ItemGrad> {
    let mut g = Graph::new();
    let p = gen.bind(&mut g, true);
    let mut distinct: Vec<(usize, Var)> = Vec::new();
    let layer_vars: Vec<Var> = sources
        .0
        .iter()
        .map(|&src| match distinct.iter().find(|(i, _)| *i == src) {
            Some(&(_, v)) => v,
            None => {
                let v = g.param(Tensor::vector(codes[src].clone()));
                distinct.push((src, v));
                v
            }
        })
        .collect();
    let image = gen.synthesize_var(&mut g, &p, &layer_vars)?;
    let f = phi.features_var(&mut g, image)?;
    let t = g.constant(target.clone());
    let l1 = g.l1_loss(f, t)?;
    let loss = g.value(l1).item();
    let scaled = g.scale(l1, weight)?;
    let mut grads = g.backward(scaled)?;
    let params = p
        .0
        .iter()
        .zip(gen.params())
        .map(|(&v, np)| grads.take(v).unwrap_or_else(|| vec![0.0; np.value.len()]))
        .collect();
    let d = gen.latent_dim();
    let codes = distinct
        .into_iter()
        .map(|(i, v)| (i, grads.take(v).unwrap_or_else(|| vec![0.0; d])))
        .collect();
    Ok(ItemGrad {
        loss,
        params,
        codes,
    })
}

/// Per-member layer sources for one batch, with at most one mixing swap.
fn batch_sources<R: Rng>(
    batch: &[usize],
    layers: usize,
    mixing_prob: f64,
    rng: &mut R,
) -> Vec<LayerSources> {
    let mut sources: Vec<LayerSources> = batch.iter().map(|&i| LayerSources(vec![i; layers])).collect();
    if mixing_prob > 0.0 && batch.len() >= 2 && layers >= 2 && rng.random_bool(mixing_prob) {
        let a = rng.random_range(0..batch.len());
        let b = (a + rng.random_range(1..batch.len())) % batch.len();
        let crossover = rng.random_range(1..layers);
        for l in crossover..layers {
            sources[a].0[l] = batch[b];
            sources[b].0[l] = batch[a];
        }
    }
    sources
}

/// GLO training with a progress callback invoked after every epoch with
/// `(epoch, mean loss)`.
pub fn train_glo_with(
    dataset: &[Tensor],
    mut generator: StyleGenerator,
    phi: &FeatureExtractor,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let targets: Vec<Tensor> = dataset.iter().map(|img| phi.features(img)).collect::<Result<_>>()?;
    let n = dataset.len();
    let d = generator.latent_dim();
    let layers = generator.style_layers();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut codes = initial_codes(n, d, rng.random());
    let mut param_adam = Adam::new(config.param_lr);
    let mut code_adams: Vec<Adam> = (0..n).map(|_| Adam::new(config.latent_lr)).collect();
    let param_names: Vec<String> = generator.params().iter().map(|p| p.name.clone()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let sources = batch_sources(batch, layers, config.mixing_prob, &mut rng);
            let weight = 1.0 / batch.len() as f64;
            let members: Vec<(usize, &LayerSources)> = batch.iter().copied().zip(&sources).collect();
            let grads = map_jobs(&members, config.jobs, |_, &(img, src)| {
                item_gradient(&generator, phi, &codes, src, &targets[img], weight)
            })
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch },
                other => other,
            })?;

            let mut param_grad: Vec<Vec<f64>> =
                generator.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
            let mut code_grad: Vec<Option<Vec<f64>>> = vec![None; n];
            for item in &grads {
                epoch_loss += item.loss;
                for (acc, gr) in param_grad.iter_mut().zip(&item.params) {
                    acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
                for (i, gr) in &item.codes {
                    let acc = code_grad[*i].get_or_insert_with(|| vec![0.0; d]);
                    acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }

            let mut updates: Vec<Update<'_>> = generator
                .params_mut()
                .iter_mut()
                .zip(&param_grad)
                .zip(&param_names)
                .map(|((p, grad), name)| Update {
                    name,
                    value: p.value.data_mut(),
                    grad,
                })
                .collect();
            param_adam.step(&mut updates).map_err(|_| Error::Divergence { epoch })?;
            for (i, grad) in code_grad.iter().enumerate() {
                if let Some(grad) = grad {
                    let mut up = [Update {
                        name: "code",
                        value: &mut codes[i],
                        grad,
                    }];
                    code_adams[i].step(&mut up).map_err(|_| Error::Divergence { epoch })?;
                    project_to_sphere(&mut codes[i]);
                }
            }
        }
        let mean = epoch_loss / n as f64;
        history.push(mean);
        on_epoch(epoch, mean);
    }

    Ok(TrainOutcome {
        generator,
        codes,
        loss_history: history,
    })
}

pub fn train_glo(
    dataset: &[Tensor],
    generator: StyleGenerator,
    phi: &FeatureExtractor,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_glo_with(dataset, generator, phi, config, |_, _| {})
}

/// Reconstruction loss of every training pair under its stored global code.
pub fn reconstruct_train_set(
    gen: &StyleGenerator,
    codes: &[Vec<f64>],
    dataset: &[Tensor],
    phi: &FeatureExtractor,
) -> Result<Vec<f64>> {
    if codes.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} codes for {} images",
            codes.len(),
            dataset.len()
        )));
    }
    codes
        .iter()
        .zip(dataset)
        .map(|(z, img)| phi.distance(&gen.synthesize_global(z)?, img))
        .collect()
}

/// True when no `window`-epoch span ends higher than it started.
pub fn trend_non_increasing(history: &[f64], window: usize) -> bool {
    window == 0 || history.windows(window + 1).all(|w| w[window] <= w[0])
}
