//! Still-image animation by latent arithmetic. Each source frame is
//! inverted; the mean code is the source identity and the per-frame
//! deviations are the motion, which is added to a target identity code.

use crate::error::{Error, Result};
use crate::invert::{invert, FeatureExtractor, InversionConfig};
use crate::io::{fmt_f64, Csv};
use crate::ndiff::Tensor;
use crate::parallel::map_jobs;
use crate::sprites::{estimate_factors, pearson, GridIdentity, Identity};
use crate::stylegen::{replicate, LatentCode, PerLayerCodes, StyleGenerator};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    frames: Vec<PerLayerCodes>,
    identity: PerLayerCodes,
    deltas: Vec<PerLayerCodes>,
}

impl LatentTrajectory {
    /// Identity = per-coordinate mean of the frames, deltas = frame − identity.
    pub fn from_codes(frames: Vec<PerLayerCodes>) -> Result<Self> {
        let identity = PerLayerCodes::mean(&frames)?;
        let deltas = frames.iter().map(|z| z.zip_with(&identity, |a, b| a - b)).collect();
        Ok(LatentTrajectory {
            frames,
            identity,
            deltas,
        })
    }

    pub fn frames(&self) -> &[PerLayerCodes] {
        &self.frames
    }

    pub fn identity(&self) -> &PerLayerCodes {
        &self.identity
    }

    pub fn deltas(&self) -> &[PerLayerCodes] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Any inverted code as one code per style layer.
pub fn per_layer(gen: &StyleGenerator, code: &LatentCode) -> Result<PerLayerCodes> {
    Ok(match code {
        LatentCode::PerLayer(c) => c.clone(),
        LatentCode::Global(z) => replicate(z, gen.style_layers()),
        LatentCode::Noise(s) => replicate(&gen.map(s)?, gen.style_layers()),
    })
}

fn invert_all(
    gen: &StyleGenerator,
    images: &[Tensor],
    phi: &FeatureExtractor,
    config: &InversionConfig,
    jobs: usize,
) -> Result<Vec<PerLayerCodes>> {
    map_jobs(images, jobs, |i, img| {
        invert(gen, img, phi, config)
            .and_then(|r| per_layer(gen, &r.code))
            .map_err(|e| Error::Frame {
                frame: i,
                source: Box::new(e),
            })
    })
}

/// Inverts every source frame (per-layer codes unless `config` says
/// otherwise; global and noise codes are lifted to every layer).
pub fn build_trajectory(
    gen: &StyleGenerator,
    frames: &[Tensor],
    phi: &FeatureExtractor,
    config: &InversionConfig,
    jobs: usize,
) -> Result<LatentTrajectory> {
    if frames.is_empty() {
        return Err(Error::invalid("source video has no frames"));
    }
    LatentTrajectory::from_codes(invert_all(gen, frames, phi, config, jobs)?)
}

/// Code of a single still, or the mean code of several.
pub fn target_identity(
    gen: &StyleGenerator,
    targets: &[Tensor],
    phi: &FeatureExtractor,
    config: &InversionConfig,
    jobs: usize,
) -> Result<PerLayerCodes> {
    if targets.is_empty() {
        return Err(Error::invalid("no target image given"));
    }
    PerLayerCodes::mean(&invert_all(gen, targets, phi, config, jobs)?)
}

/// Centered moving average over `window` frames; near the ends the window
/// is clipped to the available frames.
pub fn smooth(deltas: &[PerLayerCodes], window: usize) -> Result<Vec<PerLayerCodes>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd and positive, got {window}")));
    }
    let half = window / 2;
    let n = deltas.len();
    (0..n)
        .map(|i| PerLayerCodes::mean(&deltas[i.saturating_sub(half)..(i + half + 1).min(n)]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferConfig {
    /// Multiplier on the motion deltas.
    pub pose_scale: f64,
    /// Rescale every delta to `pose_scale ×` the median delta norm.
    pub normalize: bool,
    /// Moving-average window (odd).
    pub window: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            pose_scale: 1.0,
            normalize: false,
            window: 5,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pose_scale >= 0.0 && self.pose_scale.is_finite()) {
            return Err(Error::invalid(format!("pose scale must be ≥ 0, got {}", self.pose_scale)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid(format!("window must be odd and positive, got {}", self.window)));
        }
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// `target + scale(dz_i)` for every delta. Smoothing is not applied here.
pub fn transfer(
    target: &PerLayerCodes,
    deltas: &[PerLayerCodes],
    config: &TransferConfig,
) -> Result<Vec<PerLayerCodes>> {
    config.validate()?;
    let alpha = config.pose_scale;
    let reference = median(deltas.iter().map(PerLayerCodes::norm).collect());
    deltas
        .iter()
        .map(|dz| {
            if dz.len() != target.len() || dz.dim() != target.dim() {
                return Err(Error::dim("transfer", "delta and target code shapes differ"));
            }
            let factor = if config.normalize {
                let n = dz.norm();
                if n > 0.0 {
                    alpha * reference / n
                } else {
                    0.0
                }
            } else {
                alpha
            };
            Ok(target.zip_with(dz, |t, d| t + factor * d))
        })
        .collect()
}

/// Smoothed source motion on top of `target`.
pub fn reanimate_codes(
    trajectory: &LatentTrajectory,
    target: &PerLayerCodes,
    config: &TransferConfig,
) -> Result<Vec<PerLayerCodes>> {
    config.validate()?;
    transfer(target, &smooth(trajectory.deltas(), config.window)?, config)
}

pub fn render_video(gen: &StyleGenerator, codes: &[PerLayerCodes], jobs: usize) -> Result<Vec<Tensor>> {
    map_jobs(codes, jobs, |_, c| gen.synthesize(c))
}

/// Mean distance between consecutive codes.
pub fn mean_step_distance(codes: &[PerLayerCodes]) -> f64 {
    if codes.len() < 2 {
        return 0.0;
    }
    let total: f64 = codes
        .windows(2)
        .map(|w| w[1].zip_with(&w[0], |a, b| a - b).norm())
        .sum();
    total / (codes.len() - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fidelity {
    pub pose_r_x: f64,
    pub pose_r_y: f64,
    /// Set when one of the x sequences is constant; `pose_r_x` is then 0.
    pub degenerate_x: bool,
    pub degenerate_y: bool,
    pub identity_accuracy: f64,
}

/// Pose correlation between source and output (estimated sprite factors)
/// and the fraction of output frames whose estimated identity is the grid
/// identity nearest to `target`.
pub fn reanimation_fidelity(
    source: &[Tensor],
    output: &[Tensor],
    target: &Identity,
) -> Result<Fidelity> {
    if source.len() != output.len() || source.is_empty() {
        return Err(Error::invalid(format!(
            "{} source frames vs {} output frames",
            source.len(),
            output.len()
        )));
    }
    if source.iter().chain(output).any(|f| f.shape() != source[0].shape()) {
        return Err(Error::dim("reanimation_fidelity", "frame resolutions differ"));
    }
    let est = |frames: &[Tensor]| frames.iter().map(estimate_factors).collect::<Result<Vec<_>>>();
    let (src, out) = (est(source)?, est(output)?);
    let xs = |f: &[crate::sprites::Factors]| f.iter().map(|f| f.pose.x).collect::<Vec<_>>();
    let ys = |f: &[crate::sprites::Factors]| f.iter().map(|f| f.pose.y).collect::<Vec<_>>();
    let rx = pearson(&xs(&src), &xs(&out));
    let ry = pearson(&ys(&src), &ys(&out));
    let want = GridIdentity::nearest(target);
    let hits = out
        .iter()
        .filter(|f| GridIdentity::nearest(&f.identity) == want)
        .count();
    Ok(Fidelity {
        pose_r_x: rx.unwrap_or(0.0),
        pose_r_y: ry.unwrap_or(0.0),
        degenerate_x: rx.is_none(),
        degenerate_y: ry.is_none(),
        identity_accuracy: hits as f64 / out.len() as f64,
    })
}

/// `frame,layer,coordinate,value` rows.
pub fn codes_csv(codes: &[PerLayerCodes]) -> Csv {
    let mut csv = Csv::new(&["frame", "layer", "coordinate", "value"]);
    for (f, c) in codes.iter().enumerate() {
        for (l, z) in c.layers().iter().enumerate() {
            for (i, v) in z.iter().enumerate() {
                csv.row(&[f.to_string(), l.to_string(), i.to_string(), fmt_f64(*v)]);
            }
        }
    }
    csv
}
