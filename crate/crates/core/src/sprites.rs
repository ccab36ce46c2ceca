//! Procedural sprites with known identity and pose factors.
//!
//! A sprite is a saturated colored disk, square or triangle on a neutral gray
//! background (value 0 in `[-1, 1]`). Identity = (shape, hue, size), pose =
//! (x, y, rotation). Rendering is 4×4 supersampled.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{quantize, read_png, write_atomic, write_png};
use crate::ndiff::Tensor;

pub const SIZE_RANGE: (f64, f64) = (0.2, 0.4);
pub const POSITION_RANGE: (f64, f64) = (0.25, 0.75);
const SUPERSAMPLE: usize = 4;
/// Values per factor dimension in the estimation grid.
pub const GRID_STEPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Identity {
    pub shape: ShapeKind,
    /// In `[0, 1)`.
    pub hue: f64,
    /// Diameter as a fraction of the image side, in `[0.2, 0.4]`.
    pub size: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Center as fractions of the image side, each in `[0.25, 0.75]`.
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`. Has no effect on a disk.
    pub rotation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factors {
    pub identity: Identity,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpriteSample {
    pub image: Tensor,
    pub factors: Factors,
}

impl Factors {
    pub fn validate(&self) -> Result<()> {
        let Identity { hue, size, .. } = self.identity;
        let Pose { x, y, rotation } = self.pose;
        let in_pos = |v: f64| (POSITION_RANGE.0..=POSITION_RANGE.1).contains(&v);
        if !(0.0..1.0).contains(&hue) {
            return Err(Error::invalid(format!("hue {hue} outside [0, 1)")));
        }
        if !(SIZE_RANGE.0..=SIZE_RANGE.1).contains(&size) {
            return Err(Error::invalid(format!("size {size} outside [0.2, 0.4]")));
        }
        if !in_pos(x) || !in_pos(y) {
            return Err(Error::invalid(format!("position ({x}, {y}) outside [0.25, 0.75]")));
        }
        if !(0.0..TAU).contains(&rotation) {
            return Err(Error::invalid(format!("rotation {rotation} outside [0, 2π)")));
        }
        Ok(())
    }
}

/// Fully saturated HSV color mapped to `[-1, 1]`.
pub fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let sector = h.floor() as usize % 6;
    let f = h - h.floor();
    let (r, g, b) = match sector {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    [2.0 * r - 1.0, 2.0 * g - 1.0, 2.0 * b - 1.0]
}

struct Geometry {
    shape: ShapeKind,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    radius: f64,
}

impl Geometry {
    fn new(f: &Factors) -> Self {
        Geometry {
            shape: f.identity.shape,
            cx: f.pose.x,
            cy: f.pose.y,
            cos: f.pose.rotation.cos(),
            sin: f.pose.rotation.sin(),
            radius: f.identity.size / 2.0,
        }
    }

    /// Radius of a circle enclosing the shape.
    fn extent(&self) -> f64 {
        match self.shape {
            ShapeKind::Disk => self.radius,
            ShapeKind::Square => self.radius * std::f64::consts::SQRT_2,
            ShapeKind::Triangle => self.radius * 1.2,
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        // Into the shape frame (rotate by -rotation).
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        let r = self.radius;
        match self.shape {
            ShapeKind::Disk => u * u + v * v <= r * r,
            ShapeKind::Square => u.abs() <= r && v.abs() <= r,
            ShapeKind::Triangle => {
                // Equilateral, circumradius 1.2 r, apex towards -v.
                let inradius = 0.6 * r;
                (0..3).all(|k| {
                    let a = -PI / 2.0 + TAU * k as f64 / 3.0;
                    u * a.cos() + v * a.sin() <= inradius
                })
            }
        }
    }
}

/// Renders a sprite at `resolution × resolution`.
pub fn render(factors: &Factors, resolution: usize) -> Result<Tensor> {
    factors.validate()?;
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let geom = Geometry::new(factors);
    let color = hue_to_rgb(factors.identity.hue);
    let r = resolution as f64;
    let plane = resolution * resolution;
    let mut data = vec![0.0; 3 * plane];
    let ext = geom.extent() * r + 1.0;
    let lo = |c: f64| ((c * r - ext).floor().max(0.0)) as usize;
    let hi = |c: f64| ((c * r + ext).ceil().min(r)) as usize;
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for py in lo(geom.cy)..hi(geom.cy) {
        for px in lo(geom.cx)..hi(geom.cx) {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let ux = (px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / r;
                    let uy = (py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / r;
                    if geom.contains(ux, uy) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cov = hits as f64 * inv;
                for (c, col) in color.iter().enumerate() {
                    data[c * plane + py * resolution + px] = cov * col;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![3, resolution, resolution], data))
}

pub fn sample_factors_with<R: Rng + ?Sized>(rng: &mut R) -> Factors {
    let shape = ShapeKind::ALL[rng.random_range(0..3)];
    let hue = rng.random_range(0.0..1.0);
    let size = rng.random_range(SIZE_RANGE.0..=SIZE_RANGE.1);
    let x = rng.random_range(POSITION_RANGE.0..=POSITION_RANGE.1);
    let y = rng.random_range(POSITION_RANGE.0..=POSITION_RANGE.1);
    let rotation = rng.random_range(0.0..TAU);
    Factors {
        identity: Identity { shape, hue, size },
        pose: Pose { x, y, rotation },
    }
}

/// Uniform factors, deterministic per seed.
pub fn sample_factors(seed: u64) -> Factors {
    sample_factors_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// `n` i.i.d. samples drawn from one seeded stream.
pub fn make_dataset(n: usize, seed: u64, resolution: usize) -> Result<Vec<SpriteSample>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let factors = sample_factors_with(&mut rng);
            Ok(SpriteSample {
                image: render(&factors, resolution)?,
                factors,
            })
        })
        .collect()
}

/// `mean + amplitude · sin(2π (t / period) + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub mean: f64,
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl Wave {
    pub fn constant(value: f64) -> Self {
        Wave {
            mean: value,
            amplitude: 0.0,
            period: 1.0,
            phase: 0.0,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.mean + self.amplitude * (TAU * t as f64 / self.period + self.phase).sin()
    }
}

/// Pose as a function of the frame index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePath {
    pub x: Wave,
    pub y: Wave,
    pub rotation_start: f64,
    /// Radians per frame.
    pub rotation_rate: f64,
}

impl PosePath {
    pub fn constant(pose: Pose) -> Self {
        PosePath {
            x: Wave::constant(pose.x),
            y: Wave::constant(pose.y),
            rotation_start: pose.rotation,
            rotation_rate: 0.0,
        }
    }

    pub fn at(&self, t: usize) -> Pose {
        Pose {
            x: self.x.at(t),
            y: self.y.at(t),
            rotation: (self.rotation_start + self.rotation_rate * t as f64).rem_euclid(TAU),
        }
    }
}

/// `frames` renders of one identity following `path`.
pub fn make_trajectory(
    identity: Identity,
    path: &PosePath,
    frames: usize,
    resolution: usize,
) -> Result<Vec<SpriteSample>> {
    if frames <= 1 {
        return Err(Error::invalid("a trajectory needs at least 2 frames"));
    }
    (0..frames)
        .map(|t| {
            let factors = Factors {
                identity,
                pose: path.at(t),
            };
            Ok(SpriteSample {
                image: render(&factors, resolution)?,
                factors,
            })
        })
        .collect()
}

/// Grid values of one factor dimension.
pub fn grid_values(dim: FactorDim) -> [f64; GRID_STEPS] {
    let n = GRID_STEPS as f64;
    std::array::from_fn(|i| {
        let i = i as f64;
        match dim {
            FactorDim::Hue => i / n,
            FactorDim::Size => SIZE_RANGE.0 + (SIZE_RANGE.1 - SIZE_RANGE.0) * i / (n - 1.0),
            FactorDim::Position => {
                POSITION_RANGE.0 + (POSITION_RANGE.1 - POSITION_RANGE.0) * i / (n - 1.0)
            }
            FactorDim::Rotation => TAU * i / n,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorDim {
    Hue,
    Size,
    Position,
    Rotation,
}

/// Identity snapped to the estimation grid: (shape, hue index, size index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridIdentity {
    pub shape: ShapeKind,
    pub hue: usize,
    pub size: usize,
}

fn nearest_index(values: &[f64], v: f64, circular: Option<f64>) -> usize {
    let dist = |a: f64| match circular {
        Some(period) => {
            let d = (a - v).rem_euclid(period);
            d.min(period - d)
        }
        None => (a - v).abs(),
    };
    let mut best = 0;
    for (i, &a) in values.iter().enumerate() {
        if dist(a) < dist(values[best]) {
            best = i;
        }
    }
    best
}

impl GridIdentity {
    /// Nearest grid identity (hue distance is circular).
    pub fn nearest(id: &Identity) -> Self {
        GridIdentity {
            shape: id.shape,
            hue: nearest_index(&grid_values(FactorDim::Hue), id.hue, Some(1.0)),
            size: nearest_index(&grid_values(FactorDim::Size), id.size, None),
        }
    }
}

/// Every grid render, quantized to 8 bits, at one resolution.
struct FactorGrid {
    factors: Vec<Factors>,
    pixels: Vec<u8>,
    stride: usize,
}

impl FactorGrid {
    fn build(resolution: usize) -> Result<Self> {
        let hues = grid_values(FactorDim::Hue);
        let sizes = grid_values(FactorDim::Size);
        let pos = grid_values(FactorDim::Position);
        let rots = grid_values(FactorDim::Rotation);
        let stride = 3 * resolution * resolution;
        let mut factors = Vec::new();
        let mut pixels = Vec::new();
        for shape in ShapeKind::ALL {
            for &hue in &hues {
                for &size in &sizes {
                    for &x in &pos {
                        for &y in &pos {
                            for (ri, &rotation) in rots.iter().enumerate() {
                                // Rotated disks duplicate rotation 0 and would
                                // lose every tie to it anyway.
                                if shape == ShapeKind::Disk && ri > 0 {
                                    continue;
                                }
                                let f = Factors {
                                    identity: Identity { shape, hue, size },
                                    pose: Pose { x, y, rotation },
                                };
                                pixels.extend(render(&f, resolution)?.data().iter().map(|&v| quantize(v)));
                                factors.push(f);
                            }
                        }
                    }
                }
            }
        }
        Ok(FactorGrid {
            factors,
            pixels,
            stride,
        })
    }

    fn shared(resolution: usize) -> Result<Arc<FactorGrid>> {
        static GRIDS: OnceLock<Mutex<HashMap<usize, Arc<FactorGrid>>>> = OnceLock::new();
        let mut map = GRIDS
            .get_or_init(Default::default)
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        if let Some(g) = map.get(&resolution) {
            return Ok(g.clone());
        }
        let grid = Arc::new(FactorGrid::build(resolution)?);
        map.insert(resolution, grid.clone());
        Ok(grid)
    }

    fn nearest(&self, query: &[u8]) -> usize {
        let mut best = (u32::MAX, 0);
        for (i, cand) in self.pixels.chunks_exact(self.stride).enumerate() {
            let d: u32 = cand
                .iter()
                .zip(query)
                .map(|(&a, &b)| a.abs_diff(b) as u32)
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Brute-force nearest neighbour (pixel L1 on 8-bit quantized images) over
/// the rendered factor grid. Ties go to the first grid index. A blank gray
/// image lands on whichever grid sprite covers the least color mass, always
/// the same one.
pub fn estimate_factors(image: &Tensor) -> Result<Factors> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 || s[1] != s[2] {
        return Err(Error::dim("estimate_factors", format!("image shape {s:?}")));
    }
    let grid = FactorGrid::shared(s[1])?;
    let query: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    Ok(grid.factors[grid.nearest(&query)])
}

const MANIFEST: &str = "manifest.txt";

/// Writes `sample_NNNNN.png` files plus `manifest.txt` with one line per
/// sample: `filename shape hue size x y rotation`, 6 decimals.
pub fn export_dataset(dir: &Path, samples: &[SpriteSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i:05}.png");
        write_png(&dir.join(&name), &s.image)?;
        let Factors { identity, pose } = s.factors;
        manifest.push_str(&format!(
            "{name} {} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            identity.shape, identity.hue, identity.size, pose.x, pose.y, pose.rotation
        ));
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Reads a directory written by [`export_dataset`]. Images come back
/// 8-bit quantized; factors carry the manifest's 6-decimal precision.
pub fn import_dataset(dir: &Path) -> Result<Vec<SpriteSample>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::invalid(format!("manifest line {}: {what}", lineno + 1));
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad("bad number"));
        let factors = Factors {
            identity: Identity {
                shape: cols[1].parse()?,
                hue: num(2)?,
                size: num(3)?,
            },
            pose: Pose {
                x: num(4)?,
                y: num(5)?,
                rotation: num(6)?,
            },
        };
        let image = read_png(&dir.join(cols[0]))?;
        out.push(SpriteSample { image, factors });
    }
    Ok(out)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if n < 2 || constant(&a[..n]) || constant(&b[..n]) {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
