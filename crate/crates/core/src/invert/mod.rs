//! Latent optimization: find the code whose generated image best matches a
//! target under `||φ(G(code)) - φ(I)||_1`, with the generator frozen.

mod features;

use std::fmt;
use std::str::FromStr;

pub use features::{FeatureExtractor, EVALUATION_SEED, OPTIMIZATION_SEED};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::ndiff::{Adam, Graph, Tensor, Update, Var};
use crate::parallel::map_jobs;
use crate::stylegen::{LatentCode, PerLayerCodes, StyleGenerator};

/// Where the free variables of the inversion live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Optimize the noise `s` through the mapping network.
    Noise,
    /// Optimize one post-mapping `z` shared by all layers.
    Global,
    /// Optimize an independent `z_l` for every layer.
    PerLayer,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Noise, Strategy::Global, Strategy::PerLayer];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Noise => "noise",
            Strategy::Global => "global",
            Strategy::PerLayer => "per-layer",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Strategy::Noise),
            "global" => Ok(Strategy::Global),
            "per-layer" => Ok(Strategy::PerLayer),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected noise, global or per-layer)"
            ))),
        }
    }
}

/// Codes start at zero and the objective uses the L1 metric; neither is
/// configurable.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub strategy: Strategy,
    pub lr: f64,
    pub iterations: usize,
    /// Record the best-so-far loss every this many iterations (the first and
    /// last iteration are always recorded).
    pub record_every: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            strategy: Strategy::PerLayer,
            lr: 0.001,
            iterations: 1000,
            record_every: 10,
        }
    }
}

impl InversionConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        InversionConfig {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Best code found (not necessarily the last iterate).
    pub code: LatentCode,
    /// `(iteration, best loss so far)`; non-increasing.
    pub loss_curve: Vec<(usize, f64)>,
    pub image: Tensor,
    /// Objective at `code`, re-evaluated.
    pub loss: f64,
}

impl InversionResult {
    /// Loss curve as `iteration,loss` CSV.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (it, loss) in &self.loss_curve {
            out.push_str(&format!("{it},{}\n", fmt_f64(*loss)));
        }
        out
    }
}

/// Objective evaluated on the recorded generator output; returns a scalar.
pub type Objective<'a> = dyn Fn(&mut Graph, Var) -> Result<Var> + Sync + 'a;

fn zero_code(gen: &StyleGenerator, strategy: Strategy) -> LatentCode {
    let d = gen.latent_dim();
    match strategy {
        Strategy::Noise => LatentCode::Noise(vec![0.0; d]),
        Strategy::Global => LatentCode::Global(vec![0.0; d]),
        Strategy::PerLayer => LatentCode::PerLayer(PerLayerCodes::zeros(gen.style_layers(), d)),
    }
}

struct Evaluation {
    loss: f64,
    grads: Vec<Vec<f64>>,
}

/// Records `G(code)` with the code's free vectors as gradient leaves and
/// returns the objective and its gradient w.r.t. those vectors.
fn evaluate(
    gen: &StyleGenerator,
    code: &LatentCode,
    objective: &Objective<'_>,
    want_grad: bool,
) -> Result<Evaluation> {
    let mut g = Graph::new();
    let p = gen.bind(&mut g, false);
    let layers = gen.style_layers();
    let (leaves, codes): (Vec<Var>, Vec<Var>) = match code {
        LatentCode::Noise(s) => {
            let sv = g.leaf(Tensor::vector(s.clone()), want_grad);
            let z = gen.map_var(&mut g, &p, sv)?;
            (vec![sv], vec![z; layers])
        }
        LatentCode::Global(z) => {
            let zv = g.leaf(Tensor::vector(z.clone()), want_grad);
            (vec![zv], vec![zv; layers])
        }
        LatentCode::PerLayer(c) => {
            let vs: Vec<Var> = c
                .layers()
                .iter()
                .map(|z| g.leaf(Tensor::vector(z.clone()), want_grad))
                .collect();
            (vs.clone(), vs)
        }
    };
    let image = gen.synthesize_var(&mut g, &p, &codes)?;
    let loss_var = objective(&mut g, image)?;
    let loss = g.value(loss_var).item();
    if !want_grad {
        return Ok(Evaluation {
            loss,
            grads: Vec::new(),
        });
    }
    let d = gen.latent_dim();
    let grads = g.backward(loss_var)?;
    Ok(Evaluation {
        loss,
        grads: leaves.iter().map(|&v| grads.get_or_zeros(v, d)).collect(),
    })
}

fn code_vectors_mut(code: &mut LatentCode) -> Vec<&mut Vec<f64>> {
    match code {
        LatentCode::Noise(v) | LatentCode::Global(v) => vec![v],
        LatentCode::PerLayer(c) => c.0.iter_mut().collect(),
    }
}

/// Adam descent on an arbitrary objective of the generated image, starting
/// from the zero code of the configured strategy, with best-iterate
/// tracking.
pub fn optimize_latent(
    gen: &StyleGenerator,
    objective: &Objective<'_>,
    config: &InversionConfig,
) -> Result<InversionResult> {
    config.validate()?;
    let mut code = zero_code(gen, config.strategy);
    let mut best: Option<(f64, LatentCode)> = None;
    let mut curve = Vec::new();
    let mut adam = Adam::new(config.lr);
    let names: Vec<String> = (0..code_vectors_mut(&mut code).len())
        .map(|i| format!("latent.{i}"))
        .collect();

    for it in 0..config.iterations {
        let last = it + 1 == config.iterations;
        let eval = evaluate(gen, &code, objective, !last).map_err(|e| match e {
            Error::NonFinite { .. } => Error::InversionNaN { iteration: it },
            other => other,
        })?;
        if !eval.loss.is_finite() {
            return Err(Error::InversionNaN { iteration: it });
        }
        if best.as_ref().is_none_or(|(b, _)| eval.loss < *b) {
            best = Some((eval.loss, code.clone()));
        }
        let best_loss = best.as_ref().map(|(b, _)| *b).expect("set above");
        if it % config.record_every == 0 || last {
            curve.push((it, best_loss));
        }
        if last {
            break;
        }
        let mut updates: Vec<Update<'_>> = code_vectors_mut(&mut code)
            .into_iter()
            .zip(&eval.grads)
            .zip(&names)
            .map(|((value, grad), name)| Update {
                name,
                value: value.as_mut_slice(),
                grad,
            })
            .collect();
        adam.step(&mut updates).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::InversionNaN { iteration: it },
            other => other,
        })?;
    }

    let (_, code) = best.expect("at least one iteration");
    let loss = evaluate(gen, &code, objective, false)?.loss;
    let image = gen.synthesize_code(&code)?;
    Ok(InversionResult {
        code,
        loss_curve: curve,
        image,
        loss,
    })
}

/// Value of `||φ(G(code)) - φ(I)||_1` (mean over feature entries).
pub fn reconstruction_loss(
    gen: &StyleGenerator,
    code: &LatentCode,
    target: &Tensor,
    phi: &FeatureExtractor,
) -> Result<f64> {
    let image = gen.synthesize_code(code)?;
    phi.distance(&image, target)
}

/// Inverts `gen` on `image`.
pub fn invert(
    gen: &StyleGenerator,
    image: &Tensor,
    phi: &FeatureExtractor,
    config: &InversionConfig,
) -> Result<InversionResult> {
    let target = phi.features(image)?;
    let objective = |g: &mut Graph, out: Var| -> Result<Var> {
        let f = phi.features_var(g, out)?;
        let t = g.constant(target.clone());
        g.l1_loss(f, t)
    };
    optimize_latent(gen, &objective, config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageReconstruction {
    /// Final objective under the optimization features.
    pub loss: f64,
    /// Distance of the reconstruction under the held-out features.
    pub eval_loss: f64,
    pub result: InversionResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionSummary {
    pub per_image: Vec<ImageReconstruction>,
    pub mean_loss: f64,
    pub mean_eval_loss: f64,
}

/// Inverts every image and aggregates. `jobs` bounds the number of worker
/// threads; results are identical for any value.
pub fn evaluate_reconstruction(
    gen: &StyleGenerator,
    images: &[Tensor],
    phi: &FeatureExtractor,
    phi_eval: &FeatureExtractor,
    config: &InversionConfig,
    jobs: usize,
) -> Result<ReconstructionSummary> {
    let per_image = map_jobs(images, jobs, |_, img| {
        let result = invert(gen, img, phi, config)?;
        let eval_loss = phi_eval.distance(&result.image, img)?;
        Ok(ImageReconstruction {
            loss: result.loss,
            eval_loss,
            result,
        })
    })?;
    let n = per_image.len().max(1) as f64;
    let mean_loss = per_image.iter().map(|r| r.loss).sum::<f64>() / n;
    let mean_eval_loss = per_image.iter().map(|r| r.eval_loss).sum::<f64>() / n;
    Ok(ReconstructionSummary {
        per_image,
        mean_loss,
        mean_eval_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stylegen::{replicate, GeneratorConfig};

    fn small_gen(seed: u64) -> StyleGenerator {
        StyleGenerator::new(
            GeneratorConfig {
                latent_dim: 6,
                mapping_depth: 2,
                base_resolution: 4,
                channels: vec![6, 4],
                out_channels: 3,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_rejected() {
        let gen = small_gen(1);
        let img = gen.synthesize_global(&[0.1; 6]).unwrap();
        let phi = FeatureExtractor::pixel_identity(3, 8);
        let cfg = InversionConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(invert(&gen, &img, &phi, &cfg).is_err());
    }

    #[test]
    fn one_iteration_returns_zero_init_loss() {
        let gen = small_gen(2);
        let img = gen.synthesize_global(&[0.7; 6]).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 3);
        for strategy in Strategy::ALL {
            let cfg = InversionConfig {
                strategy,
                iterations: 1,
                ..Default::default()
            };
            let r = invert(&gen, &img, &phi, &cfg).unwrap();
            let zero = zero_code(&gen, strategy);
            let l0 = reconstruction_loss(&gen, &zero, &img, &phi).unwrap();
            assert_eq!(r.code, zero);
            assert_eq!(r.loss_curve, vec![(0, l0)]);
            assert_eq!(r.loss, l0);
        }
    }

    #[test]
    fn best_so_far_curve_is_monotone_and_final_loss_reevaluates() {
        let gen = small_gen(4);
        let img = gen.synthesize(&replicate(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.2], 4)).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 5);
        let cfg = InversionConfig {
            strategy: Strategy::PerLayer,
            lr: 0.01,
            iterations: 120,
            record_every: 7,
        };
        let r = invert(&gen, &img, &phi, &cfg).unwrap();
        assert!(r.loss_curve.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(r.loss_curve.first().unwrap().0, 0);
        assert_eq!(r.loss_curve.last().unwrap().0, 119);
        // 0, 7, ..., 119
        assert_eq!(r.loss_curve.len(), 18);
        assert_eq!(r.loss, reconstruction_loss(&gen, &r.code, &img, &phi).unwrap());
        assert_eq!(r.loss, r.loss_curve.last().unwrap().1);
        assert!(r.loss < r.loss_curve[0].1);
        assert_eq!(r.image, gen.synthesize_code(&r.code).unwrap());
    }

    #[test]
    fn inversion_is_deterministic() {
        let gen = small_gen(6);
        let img = gen.synthesize_global(&[0.5; 6]).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 7);
        let cfg = InversionConfig {
            strategy: Strategy::Noise,
            iterations: 30,
            ..Default::default()
        };
        assert_eq!(
            invert(&gen, &img, &phi, &cfg).unwrap(),
            invert(&gen, &img, &phi, &cfg).unwrap()
        );
    }

    #[test]
    fn per_layer_with_tied_layers_matches_global_objective() {
        let gen = small_gen(8);
        let img = gen.synthesize_global(&[0.2, 0.1, -0.3, 0.4, 0.0, -0.1]).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 9);
        let z = vec![0.05, -0.1, 0.2, 0.3, -0.2, 0.1];
        let global = reconstruction_loss(&gen, &LatentCode::Global(z.clone()), &img, &phi).unwrap();
        let tied = LatentCode::PerLayer(replicate(&z, gen.style_layers()));
        assert_eq!(global, reconstruction_loss(&gen, &tied, &img, &phi).unwrap());
    }

    #[test]
    fn evaluation_summary_singleton_and_jobs_invariance() {
        let gen = small_gen(10);
        let imgs: Vec<Tensor> = (0..3)
            .map(|i| gen.synthesize_global(&[0.1 * i as f64; 6]).unwrap())
            .collect();
        let phi = FeatureExtractor::random_conv(3, 8, 1);
        let phi_eval = FeatureExtractor::random_conv(3, 8, 2);
        let cfg = InversionConfig {
            iterations: 15,
            ..Default::default()
        };
        let one = evaluate_reconstruction(&gen, &imgs[..1], &phi, &phi_eval, &cfg, 1).unwrap();
        assert_eq!(one.mean_loss, one.per_image[0].loss);
        let seq = evaluate_reconstruction(&gen, &imgs, &phi, &phi_eval, &cfg, 1).unwrap();
        let par = evaluate_reconstruction(&gen, &imgs, &phi, &phi_eval, &cfg, 3).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn strategy_parse_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("perlayer".parse::<Strategy>().is_err());
    }
}
