//! The generator as an image prior: inpainting behind a binary mask and
//! super-resolution through a block-average downsampler, plus the naive
//! baselines they are measured against.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::invert::{optimize_latent, FeatureExtractor, InversionConfig, InversionResult};
use crate::ndiff::{downsample_avg, Graph, Tensor, Var};
use crate::stylegen::StyleGenerator;

/// Binary observation mask `[1, R, R]`: 1 = observed, 0 = missing.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    mask: Tensor,
}

impl MaskSpec {
    pub fn new(mask: Tensor) -> Result<Self> {
        let s = mask.shape();
        if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
            return Err(Error::dim("mask", format!("expected [1, R, R], got {s:?}")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        if mask.data().iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateMask);
        }
        Ok(MaskSpec { mask })
    }

    pub fn all_observed(resolution: usize) -> Self {
        MaskSpec {
            mask: Tensor::full(vec![1, resolution, resolution], 1.0),
        }
    }

    /// Missing square of side `R/4` at a seeded position.
    pub fn square_hole(resolution: usize, seed: u64) -> Result<Self> {
        let side = resolution / 4;
        if side == 0 {
            return Err(Error::invalid(format!("resolution {resolution} too small for a hole")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top = rng.random_range(0..=resolution - side);
        let left = rng.random_range(0..=resolution - side);
        let mut mask = Tensor::full(vec![1, resolution, resolution], 1.0);
        for y in top..top + side {
            mask.data_mut()[y * resolution + left..y * resolution + left + side].fill(0.0);
        }
        Ok(MaskSpec { mask })
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn resolution(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn missing_count(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 0.0).count()
    }

    /// The mask repeated over `channels`.
    pub fn broadcast(&self, channels: usize) -> Tensor {
        let plane = self.mask.data();
        let data = (0..channels).flat_map(|_| plane.iter().copied()).collect();
        let r = self.resolution();
        Tensor::from_parts(vec![channels, r, r], data)
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.len() != 3 || s[1] != self.resolution() || s[2] != self.resolution() {
            return Err(Error::dim(
                "mask",
                format!("image {s:?} vs mask resolution {}", self.resolution()),
            ));
        }
        Ok(())
    }

    /// `m ⊙ image`.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let m = self.broadcast(image.shape()[0]);
        let data = image.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_parts(image.shape().to_vec(), data))
    }

    /// Observed pixels from `observed`, the rest from `fill`.
    pub fn composite(&self, observed: &Tensor, fill: &Tensor) -> Result<Tensor> {
        self.check_image(observed)?;
        if observed.shape() != fill.shape() {
            return Err(Error::dim("composite", "image shapes differ"));
        }
        let m = self.broadcast(observed.shape()[0]);
        let data = m
            .data()
            .iter()
            .zip(observed.data().iter().zip(fill.data()))
            .map(|(&k, (&o, &f))| if k == 1.0 { o } else { f })
            .collect();
        Ok(Tensor::from_parts(observed.shape().to_vec(), data))
    }

    /// Mean absolute error over the missing pixels (all channels).
    pub fn missing_error(&self, output: &Tensor, truth: &Tensor) -> Result<f64> {
        self.check_image(output)?;
        if output.shape() != truth.shape() {
            return Err(Error::dim("missing_error", "image shapes differ"));
        }
        let m = self.broadcast(output.shape()[0]);
        let (mut sum, mut n) = (0.0, 0usize);
        for ((&k, &a), &b) in m.data().iter().zip(output.data()).zip(truth.data()) {
            if k == 0.0 {
                sum += (a - b).abs();
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintResult {
    pub inversion: InversionResult,
    /// Observed pixels of the input, generated pixels elsewhere.
    pub output: Tensor,
}

impl InpaintResult {
    /// `G(z*)` before compositing.
    pub fn raw_output(&self) -> &Tensor {
        &self.inversion.image
    }
}

/// Minimizes `||φ(m ⊙ G(z)) - φ(m ⊙ I)||_1` and composites the result.
pub fn inpaint(
    gen: &StyleGenerator,
    corrupted: &Tensor,
    mask: &MaskSpec,
    phi: &FeatureExtractor,
    config: &InversionConfig,
) -> Result<InpaintResult> {
    let m = mask.broadcast(corrupted.shape().first().copied().unwrap_or(0));
    let target = phi.features(&mask.apply(corrupted)?)?;
    let objective = |g: &mut Graph, out: Var| -> Result<Var> {
        let mv = g.constant(m.clone());
        let masked = g.mul(out, mv)?;
        let f = phi.features_var(g, masked)?;
        let t = g.constant(target.clone());
        g.l1_loss(f, t)
    };
    let inversion = optimize_latent(gen, &objective, config)?;
    let output = mask.composite(corrupted, &inversion.image)?;
    Ok(InpaintResult { inversion, output })
}

/// Missing pixels replaced by the per-channel mean of the observed ones.
pub fn baseline_meanfill(corrupted: &Tensor, mask: &MaskSpec) -> Result<Tensor> {
    mask.check_image(corrupted)?;
    let c = corrupted.shape()[0];
    let plane = mask.resolution() * mask.resolution();
    let m = mask.mask().data();
    let observed = plane - mask.missing_count();
    let mut fill = corrupted.clone();
    for ch in 0..c {
        let px = &corrupted.data()[ch * plane..(ch + 1) * plane];
        let mean = px.iter().zip(m).filter(|(_, &k)| k == 1.0).map(|(v, _)| v).sum::<f64>()
            / observed as f64;
        fill.data_mut()[ch * plane..(ch + 1) * plane].fill(mean);
    }
    mask.composite(corrupted, &fill)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrSpec {
    pub factor: usize,
}

impl Default for SrSpec {
    fn default() -> Self {
        SrSpec { factor: 4 }
    }
}

impl SrSpec {
    pub fn validate(&self, resolution: usize) -> Result<()> {
        if self.factor == 0 || resolution % self.factor != 0 {
            return Err(Error::dim(
                "super_resolve",
                format!("factor {} does not divide resolution {resolution}", self.factor),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrResult {
    pub inversion: InversionResult,
    /// `mean |D_k(output) - lr|`.
    pub residual: f64,
}

impl SrResult {
    pub fn output(&self) -> &Tensor {
        &self.inversion.image
    }
}

/// `mean |D_k(image) - lr|`.
pub fn sr_residual(image: &Tensor, lr: &Tensor, factor: usize) -> Result<f64> {
    downsample_avg(image, factor)?.l1_distance(lr)
}

/// Minimizes `||φ(D_k(G(z))) - φ(lr)||_1`, with φ applied at the low
/// resolution.
pub fn super_resolve(
    gen: &StyleGenerator,
    lr: &Tensor,
    spec: &SrSpec,
    phi: &FeatureExtractor,
    config: &InversionConfig,
) -> Result<SrResult> {
    let r = gen.resolution();
    spec.validate(r)?;
    let k = spec.factor;
    let low = r / k;
    let s = lr.shape();
    if s.len() != 3 || s[1] != low || s[2] != low {
        return Err(Error::dim(
            "super_resolve",
            format!("low-resolution input {s:?}, expected {low}×{low} for factor {k}"),
        ));
    }
    let phi_low = phi.at_resolution(low);
    let target = phi_low.features(lr)?;
    let objective = |g: &mut Graph, out: Var| -> Result<Var> {
        let down = if k == 1 { out } else { g.downsample_avg(out, k)? };
        let f = phi_low.features_var(g, down)?;
        let t = g.constant(target.clone());
        g.l1_loss(f, t)
    };
    let inversion = optimize_latent(gen, &objective, config)?;
    let residual = sr_residual(&inversion.image, lr, k)?;
    Ok(SrResult {
        inversion,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(Error::invalid(format!("unknown upsampling mode `{other}`"))),
        }
    }
}

/// Interpolation upsampling by `k`. Bilinear samples at pixel centers
/// (half-pixel offset) with edge clamping.
pub fn baseline_upsample(lr: &Tensor, k: usize, mode: UpsampleMode) -> Result<Tensor> {
    let s = lr.shape();
    if s.len() != 3 || k == 0 {
        return Err(Error::dim("baseline_upsample", format!("input {s:?}, factor {k}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h * k, w * k);
    let src = lr.data();
    let mut out = vec![0.0; c * oh * ow];
    // Source coordinate of an output pixel center, clamped to the input grid.
    let coord = |o: usize, n: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) / k as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, x - i0 as f64)
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                out[ch * oh * ow + y * ow + x] = match mode {
                    UpsampleMode::Nearest => plane[(y / k) * w + x / k],
                    UpsampleMode::Bilinear => {
                        let (y0, y1, fy) = coord(y, h);
                        let (x0, x1, fx) = coord(x, w);
                        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                        top * (1.0 - fy) + bot * fy
                    }
                };
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invert::{invert, Strategy};
    use crate::stylegen::{replicate, GeneratorConfig};

    fn small_gen() -> StyleGenerator {
        StyleGenerator::new(
            GeneratorConfig {
                latent_dim: 6,
                mapping_depth: 2,
                base_resolution: 4,
                channels: vec![6, 4],
                out_channels: 3,
            },
            5,
        )
        .unwrap()
    }

    fn cfg(iterations: usize) -> InversionConfig {
        InversionConfig {
            strategy: Strategy::PerLayer,
            lr: 0.02,
            iterations,
            record_every: 5,
        }
    }

    fn ramp(c: usize, r: usize) -> Tensor {
        let n = c * r * r;
        Tensor::new(vec![c, r, r], (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn mask_validation() {
        assert!(matches!(
            MaskSpec::new(Tensor::zeros(vec![1, 4, 4])),
            Err(Error::DegenerateMask)
        ));
        assert!(MaskSpec::new(Tensor::full(vec![1, 4, 4], 0.5)).is_err());
        assert!(MaskSpec::new(Tensor::full(vec![3, 4, 4], 1.0)).is_err());
        let m = MaskSpec::square_hole(32, 3).unwrap();
        assert_eq!(m.missing_count(), 64);
        assert_eq!(m, MaskSpec::square_hole(32, 3).unwrap());
        assert_ne!(m, MaskSpec::square_hole(32, 4).unwrap());
    }

    #[test]
    fn hole_is_one_contiguous_square() {
        for seed in 0..20 {
            let m = MaskSpec::square_hole(16, seed).unwrap();
            let holes: Vec<(usize, usize)> = (0..256)
                .filter(|&i| m.mask().data()[i] == 0.0)
                .map(|i| (i / 16, i % 16))
                .collect();
            let (y0, x0) = holes[0];
            assert!(holes.iter().all(|&(y, x)| (y0..y0 + 4).contains(&y) && (x0..x0 + 4).contains(&x)));
        }
    }

    #[test]
    fn meanfill_baseline() {
        let img = ramp(3, 8);
        let full = MaskSpec::all_observed(8);
        assert_eq!(baseline_meanfill(&img, &full).unwrap(), img);
        let m = MaskSpec::square_hole(8, 1).unwrap();
        let c = Tensor::full(vec![3, 8, 8], 0.25);
        assert_eq!(baseline_meanfill(&c, &m).unwrap(), c);
        let a = baseline_meanfill(&img, &m).unwrap();
        assert_eq!(a, baseline_meanfill(&img, &m).unwrap());
        // Observed pixels untouched.
        assert_eq!(m.composite(&img, &a).unwrap(), a);
        assert_eq!(m.apply(&a).unwrap(), m.apply(&img).unwrap());
    }

    #[test]
    fn upsample_baselines() {
        let img = ramp(3, 4);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            assert_eq!(baseline_upsample(&img, 1, mode).unwrap(), img);
            let c = Tensor::full(vec![3, 4, 4], -0.3);
            let up = baseline_upsample(&c, 4, mode).unwrap();
            assert!(up.data().iter().all(|&v| (v + 0.3).abs() < 1e-15));
            assert_eq!(up.shape(), &[3, 16, 16]);
        }
        let one = Tensor::new(vec![1, 1, 1], vec![0.7]).unwrap();
        let up = baseline_upsample(&one, 5, UpsampleMode::Nearest).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.7));
        // Linear ramp along x is reproduced in the interior by bilinear.
        let row = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let up = baseline_upsample(&row, 2, UpsampleMode::Bilinear).unwrap();
        assert_eq!(&up.data()[..6], &[0.0, 0.25, 0.75, 1.25, 1.75, 2.0]);
        assert_eq!(up.data()[..6], up.data()[6..]);
        // Both baselines are consistent with the block-average downsampler
        // for nearest, and approximately for bilinear.
        let n = baseline_upsample(&img, 2, UpsampleMode::Nearest).unwrap();
        assert_eq!(downsample_avg(&n, 2).unwrap(), img);
    }

    #[test]
    fn all_ones_mask_matches_plain_inversion() {
        let gen = small_gen();
        let img = gen.synthesize(&replicate(&[0.3, -0.1, 0.5, 0.2, 0.0, -0.4], 4)).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 1);
        let a = inpaint(&gen, &img, &MaskSpec::all_observed(8), &phi, &cfg(15)).unwrap();
        let b = invert(&gen, &img, &phi, &cfg(15)).unwrap();
        assert_eq!(a.inversion, b);
        assert_eq!(a.output, img);
    }

    #[test]
    fn inpainting_keeps_observed_pixels() {
        let gen = small_gen();
        let img = ramp(3, 8);
        let m = MaskSpec::square_hole(8, 2).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 1);
        let r = inpaint(&gen, &img, &m, &phi, &cfg(10)).unwrap();
        assert_eq!(m.apply(&r.output).unwrap(), m.apply(&img).unwrap());
        let hole = m.missing_error(&r.output, &img).unwrap();
        assert_eq!(hole, m.missing_error(r.raw_output(), &img).unwrap());
    }

    #[test]
    fn unit_factor_sr_matches_plain_inversion() {
        let gen = small_gen();
        let img = gen.synthesize(&replicate(&[0.1, 0.1, -0.5, 0.2, 0.3, 0.0], 4)).unwrap();
        let phi = FeatureExtractor::random_conv(3, 8, 1);
        let a = super_resolve(&gen, &img, &SrSpec { factor: 1 }, &phi, &cfg(15)).unwrap();
        let b = invert(&gen, &img, &phi, &cfg(15)).unwrap();
        assert_eq!(a.inversion, b);
    }

    #[test]
    fn sr_input_checks_and_residual() {
        let gen = small_gen();
        let phi = FeatureExtractor::random_conv(3, 8, 1);
        let wrong = Tensor::zeros(vec![3, 4, 4]);
        assert!(super_resolve(&gen, &wrong, &SrSpec { factor: 4 }, &phi, &cfg(2)).is_err());
        assert!(super_resolve(&gen, &wrong, &SrSpec { factor: 3 }, &phi, &cfg(2)).is_err());

        let truth = gen.synthesize(&replicate(&[0.6, -0.3, 0.1, 0.4, -0.2, 0.5], 4)).unwrap();
        let lr = downsample_avg(&truth, 2).unwrap();
        let r = super_resolve(&gen, &lr, &SrSpec { factor: 2 }, &phi, &cfg(60)).unwrap();
        let zero = gen.synthesize_global(&[0.0; 6]).unwrap();
        assert!(r.residual < sr_residual(&zero, &lr, 2).unwrap());
        assert_eq!(r.residual, sr_residual(r.output(), &lr, 2).unwrap());
    }
}
