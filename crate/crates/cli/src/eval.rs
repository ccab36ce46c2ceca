//! Fixed-seed evaluation suite: strategy ordering, inpainting and
//! super-resolution tables.

use anyhow::Result;

use styleprior::invert::{
    evaluate_reconstruction, FeatureExtractor, InversionConfig, ReconstructionSummary, Strategy,
    EVALUATION_SEED, OPTIMIZATION_SEED,
};
use styleprior::io::{fmt_f64, Csv};
use styleprior::ndiff::{downsample_avg, Tensor};
use styleprior::parallel::map_jobs;
use styleprior::priors::{
    baseline_meanfill, baseline_upsample, inpaint, sr_residual, super_resolve, MaskSpec, SrSpec,
    UpsampleMode,
};
use styleprior::sprites::make_dataset;
use styleprior::stylegen::{PerLayerCodes, StyleGenerator};

/// Held-out sprites rendered at the generator's resolution.
pub struct EvalSuite {
    pub images: Vec<Tensor>,
    phi: FeatureExtractor,
    phi_eval: FeatureExtractor,
}

impl EvalSuite {
    pub fn new(gen: &StyleGenerator, n: usize, seed: u64) -> Result<Self> {
        let r = gen.resolution();
        Ok(Self::from_images(
            make_dataset(n, seed, r)?.into_iter().map(|s| s.image).collect(),
            r,
        ))
    }

    pub fn from_images(images: Vec<Tensor>, resolution: usize) -> Self {
        EvalSuite {
            images,
            phi: FeatureExtractor::random_conv(3, resolution, OPTIMIZATION_SEED),
            phi_eval: FeatureExtractor::random_conv(3, resolution, EVALUATION_SEED),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub struct StrategyTable {
    pub rows: Vec<(Strategy, ReconstructionSummary)>,
}

impl StrategyTable {
    pub fn mean_loss(&self, strategy: Strategy) -> Option<f64> {
        self.rows.iter().find(|(s, _)| *s == strategy).map(|(_, r)| r.mean_loss)
    }

    /// `PerLayer < Global < Noise` in mean final loss.
    pub fn ordered(&self) -> bool {
        match (
            self.mean_loss(Strategy::PerLayer),
            self.mean_loss(Strategy::Global),
            self.mean_loss(Strategy::Noise),
        ) {
            (Some(p), Some(g), Some(n)) => p < g && g < n,
            _ => false,
        }
    }

    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["strategy", "mean_loss", "mean_eval_loss"]);
        for (s, r) in &self.rows {
            csv.row(&[s.to_string(), fmt_f64(r.mean_loss), fmt_f64(r.mean_eval_loss)]);
        }
        csv
    }

    pub fn per_image_csv(&self) -> Csv {
        let mut csv = Csv::new(&["image", "strategy", "loss", "eval_loss"]);
        for (s, r) in &self.rows {
            for (i, p) in r.per_image.iter().enumerate() {
                csv.row(&[i.to_string(), s.to_string(), fmt_f64(p.loss), fmt_f64(p.eval_loss)]);
            }
        }
        csv
    }

    pub fn text(&self) -> String {
        let mut out = String::from("Reconstruction error by code placement\n");
        out.push_str(&format!("{:<10} {:>16} {:>16}\n", "strategy", "loss", "held-out loss"));
        for (s, r) in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>16} {:>16}\n",
                s.to_string(),
                fmt_f64(r.mean_loss),
                fmt_f64(r.mean_eval_loss)
            ));
        }
        out.push_str(&format!(
            "ordering per-layer < global < noise: {}\n",
            if self.ordered() { "holds" } else { "violated" }
        ));
        out
    }
}

pub fn strategy_table(
    gen: &StyleGenerator,
    suite: &EvalSuite,
    config: &InversionConfig,
    jobs: usize,
) -> Result<StrategyTable> {
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let cfg = InversionConfig {
            strategy,
            ..config.clone()
        };
        let summary = evaluate_reconstruction(gen, &suite.images, &suite.phi, &suite.phi_eval, &cfg, jobs)?;
        rows.push((strategy, summary));
    }
    Ok(StrategyTable { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintRow {
    pub generator: f64,
    pub raw: f64,
    pub meanfill: f64,
    /// Observed pixels of the output equal the input bit for bit.
    pub observed_kept: bool,
}

pub struct InpaintingTable {
    pub rows: Vec<InpaintRow>,
}

impl InpaintingTable {
    pub fn mean_generator(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.generator))
    }

    pub fn mean_meanfill(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.meanfill))
    }

    /// Fraction of images where the generator prior beats mean-fill.
    pub fn win_rate(&self) -> f64 {
        mean(self.rows.iter().map(|r| f64::from(u8::from(r.generator < r.meanfill))))
    }

    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["image", "generator_error", "raw_error", "meanfill_error", "observed_kept"]);
        for (i, r) in self.rows.iter().enumerate() {
            csv.row(&[
                i.to_string(),
                fmt_f64(r.generator),
                fmt_f64(r.raw),
                fmt_f64(r.meanfill),
                r.observed_kept.to_string(),
            ]);
        }
        csv
    }

    pub fn text(&self) -> String {
        format!(
            "Inpainting error (L1 over missing pixels)\n{:<10} {:>16}\n{:<10} {:>16}\n{:<10} {:>16}\ngenerator wins on {:.0}% of images\n",
            "method",
            "mean error",
            "generator",
            fmt_f64(self.mean_generator()),
            "mean-fill",
            fmt_f64(self.mean_meanfill()),
            100.0 * self.win_rate()
        )
    }
}

/// Image `i` gets a hole drawn with seed `mask_seed + i`.
pub fn inpainting_table(
    gen: &StyleGenerator,
    suite: &EvalSuite,
    mask_seed: u64,
    config: &InversionConfig,
    jobs: usize,
) -> Result<InpaintingTable> {
    let r = gen.resolution();
    let rows = map_jobs(&suite.images, jobs, |i, truth| {
        let mask = MaskSpec::square_hole(r, mask_seed.wrapping_add(i as u64))?;
        let corrupted = mask.apply(truth)?;
        let res = inpaint(gen, &corrupted, &mask, &suite.phi, config)?;
        let meanfill = baseline_meanfill(&corrupted, &mask)?;
        let m = mask.broadcast(3);
        let observed_kept = m
            .data()
            .iter()
            .zip(res.output.data().iter().zip(truth.data()))
            .all(|(&w, (o, t))| w == 0.0 || o == t);
        Ok(InpaintRow {
            generator: mask.missing_error(&res.output, truth)?,
            raw: mask.missing_error(res.raw_output(), truth)?,
            meanfill: mask.missing_error(&meanfill, truth)?,
            observed_kept,
        })
    })?;
    Ok(InpaintingTable { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrRow {
    pub generator: f64,
    pub nearest: f64,
    pub bilinear: f64,
    pub residual: f64,
    /// Consistency residual of the zero-code image.
    pub zero_residual: f64,
}

pub struct SrTable {
    pub factor: usize,
    pub rows: Vec<SrRow>,
}

impl SrTable {
    pub fn means(&self) -> [f64; 3] {
        [
            mean(self.rows.iter().map(|r| r.generator)),
            mean(self.rows.iter().map(|r| r.nearest)),
            mean(self.rows.iter().map(|r| r.bilinear)),
        ]
    }

    pub fn residual_always_lower(&self) -> bool {
        self.rows.iter().all(|r| r.residual < r.zero_residual)
    }

    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&[
            "image",
            "generator_error",
            "nearest_error",
            "bilinear_error",
            "residual",
            "zero_code_residual",
        ]);
        for (i, r) in self.rows.iter().enumerate() {
            csv.row(&[
                i.to_string(),
                fmt_f64(r.generator),
                fmt_f64(r.nearest),
                fmt_f64(r.bilinear),
                fmt_f64(r.residual),
                fmt_f64(r.zero_residual),
            ]);
        }
        csv
    }

    pub fn text(&self) -> String {
        let [g, n, b] = self.means();
        format!(
            "Super-resolution error (x{}, full-resolution L1)\n{:<10} {:>16}\n{:<10} {:>16}\n{:<10} {:>16}\n{:<10} {:>16}\nresidual below zero-code residual on every image: {}\n",
            self.factor,
            "method",
            "mean error",
            "generator",
            fmt_f64(g),
            "nearest",
            fmt_f64(n),
            "bilinear",
            fmt_f64(b),
            if self.residual_always_lower() { "yes" } else { "no" }
        )
    }
}

pub fn sr_table(
    gen: &StyleGenerator,
    suite: &EvalSuite,
    factor: usize,
    config: &InversionConfig,
    jobs: usize,
) -> Result<SrTable> {
    let spec = SrSpec { factor };
    spec.validate(gen.resolution())?;
    let zero = gen.synthesize(&PerLayerCodes::zeros(gen.style_layers(), gen.latent_dim()))?;
    let rows = map_jobs(&suite.images, jobs, |_, truth| {
        let lr = downsample_avg(truth, factor)?;
        let res = super_resolve(gen, &lr, &spec, &suite.phi, config)?;
        Ok(SrRow {
            generator: res.output().l1_distance(truth)?,
            nearest: baseline_upsample(&lr, factor, UpsampleMode::Nearest)?.l1_distance(truth)?,
            bilinear: baseline_upsample(&lr, factor, UpsampleMode::Bilinear)?.l1_distance(truth)?,
            residual: res.residual,
            zero_residual: sr_residual(&zero, &lr, factor)?,
        })
    })?;
    Ok(SrTable { factor, rows })
}
