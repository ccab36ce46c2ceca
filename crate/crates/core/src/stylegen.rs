//! Miniature style-based generator.
//!
//! A mapping network turns a noise vector `s` into a latent `z`; the
//! synthesis network starts from a learned constant, and every convolution is
//! followed by AdaIN whose per-channel scale and offset are a linear
//! projection of that layer's latent code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndiff::{Graph, Tensor, Var, ADAIN_EPS};

pub const LEAKY_SLOPE: f64 = 0.2;
const CONVS_PER_STAGE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub mapping_depth: usize,
    pub base_resolution: usize,
    /// Channel width of each resolution stage, coarsest first.
    pub channels: Vec<usize>,
    pub out_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 32,
            mapping_depth: 4,
            base_resolution: 4,
            channels: vec![64, 64, 32, 16],
            out_channels: 3,
        }
    }
}

impl GeneratorConfig {
    /// Narrower variant of the default used for the shipped reference
    /// checkpoint; same resolution and number of style layers.
    pub fn compact() -> Self {
        GeneratorConfig {
            channels: vec![32, 32, 16, 16],
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn final_resolution(&self) -> usize {
        self.base_resolution << (self.stages().saturating_sub(1))
    }

    /// Number of AdaIN sites, i.e. of per-layer codes.
    pub fn style_layers(&self) -> usize {
        CONVS_PER_STAGE * self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.mapping_depth == 0
            || self.base_resolution == 0
            || self.out_channels == 0
            || self.channels.is_empty()
            || self.channels.contains(&0)
        {
            return Err(Error::invalid(format!(
                "generator config has a zero dimension: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(c_in, c_out)` of the convolution feeding AdaIN site `layer`.
    pub fn layer_channels(&self, layer: usize) -> (usize, usize) {
        let stage = layer / CONVS_PER_STAGE;
        let cout = self.channels[stage];
        let cin = if layer % CONVS_PER_STAGE != 0 {
            cout
        } else if stage == 0 {
            self.channels[0]
        } else {
            self.channels[stage - 1]
        };
        (cin, cout)
    }

    /// Names and shapes of all parameters, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.latent_dim;
        let mut shapes = Vec::new();
        for i in 0..self.mapping_depth {
            shapes.push((format!("mapping.{i}.weight"), vec![d, d]));
            shapes.push((format!("mapping.{i}.bias"), vec![d]));
        }
        let b = self.base_resolution;
        shapes.push(("c0".to_string(), vec![self.channels[0], b, b]));
        for l in 0..self.style_layers() {
            let (cin, cout) = self.layer_channels(l);
            shapes.push((format!("conv.{l}.kernel"), vec![cout, cin, 3, 3]));
            shapes.push((format!("conv.{l}.bias"), vec![cout]));
            shapes.push((format!("style.{l}.weight"), vec![2 * cout, d]));
            shapes.push((format!("style.{l}.bias"), vec![2 * cout]));
        }
        let last = *self.channels.last().expect("validated");
        shapes.push(("to_rgb.kernel".to_string(), vec![self.out_channels, last, 1, 1]));
        shapes.push(("to_rgb.bias".to_string(), vec![self.out_channels]));
        shapes
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let d = self.latent_dim;
        let mapping = self.mapping_depth * (d * d + d);
        let c0 = self.channels[0] * self.base_resolution * self.base_resolution;
        let layers: usize = (0..self.style_layers())
            .map(|l| {
                let (cin, cout) = self.layer_channels(l);
                (cin * cout * 9 + cout) + (2 * cout * d + 2 * cout)
            })
            .sum();
        let last = *self.channels.last().expect("validated");
        mapping + c0 + layers + self.out_channels * (last + 1)
    }
}

/// Per-layer latent codes `z_1..z_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerLayerCodes(pub Vec<Vec<f64>>);

impl PerLayerCodes {
    pub fn zeros(layers: usize, dim: usize) -> Self {
        PerLayerCodes(vec![vec![0.0; dim]; layers])
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    /// Coordinate-wise map over two equally shaped stacks.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        PerLayerCodes(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PerLayerCodes(
            self.0
                .iter()
                .map(|l| l.iter().map(|v| f(*v)).collect())
                .collect(),
        )
    }

    /// Euclidean norm over all layers.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Arithmetic mean of equally shaped stacks.
    pub fn mean(codes: &[PerLayerCodes]) -> Result<PerLayerCodes> {
        let first = codes
            .first()
            .ok_or_else(|| Error::invalid("mean of an empty code list"))?;
        // Running mean: exact when every stack is identical.
        let mut acc = first.clone();
        for (i, c) in codes.iter().enumerate().skip(1) {
            if c.len() != first.len() || c.dim() != first.dim() {
                return Err(Error::dim("mean", "code stacks differ in shape"));
            }
            let k = (i + 1) as f64;
            acc = acc.zip_with(c, |m, x| m + (x - m) / k);
        }
        Ok(acc)
    }
}

/// The free variable of inversion, in one of three placements.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentCode {
    /// Noise vector `s`, passed through the mapping network.
    Noise(Vec<f64>),
    /// Post-mapping `z`, shared by every layer.
    Global(Vec<f64>),
    /// Independent `z_l` per layer.
    PerLayer(PerLayerCodes),
}

impl LatentCode {
    pub fn is_finite(&self) -> bool {
        match self {
            LatentCode::Noise(v) | LatentCode::Global(v) => v.iter().all(|x| x.is_finite()),
            LatentCode::PerLayer(c) => c.0.iter().flatten().all(|x| x.is_finite()),
        }
    }
}

/// `L` copies of a global code.
pub fn replicate(z: &[f64], layers: usize) -> PerLayerCodes {
    PerLayerCodes(vec![z.to_vec(); layers])
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleGenerator {
    config: GeneratorConfig,
    params: Vec<NamedTensor>,
}

/// Graph handles for every generator parameter, in storage order.
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

struct Layout {
    mapping_depth: usize,
}

impl Layout {
    fn mapping(&self, i: usize) -> (usize, usize) {
        (2 * i, 2 * i + 1)
    }
    fn c0(&self) -> usize {
        2 * self.mapping_depth
    }
    /// (kernel, bias, style weight, style bias)
    fn layer(&self, l: usize) -> [usize; 4] {
        let base = self.c0() + 1 + 4 * l;
        [base, base + 1, base + 2, base + 3]
    }
    fn to_rgb(&self, layers: usize) -> (usize, usize) {
        let base = self.c0() + 1 + 4 * layers;
        (base, base + 1)
    }
}

impl StyleGenerator {
    /// Seeded random initialization. Style projections start near the
    /// identity AdaIN (scale ≈ 1, offset ≈ 0).
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.latent_dim as f64;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let mut params = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let value = if name.starts_with("mapping.") && name.ends_with("weight") {
                Tensor::randn(shape, gain / d.sqrt(), &mut rng)
            } else if name == "c0" {
                Tensor::randn(shape, 1.0, &mut rng)
            } else if name.starts_with("conv.") && name.ends_with("kernel") {
                let fan_in = (shape[1] * 9) as f64;
                Tensor::randn(shape, gain / fan_in.sqrt(), &mut rng)
            } else if name.starts_with("style.") && name.ends_with("weight") {
                Tensor::randn(shape, 0.2 / d.sqrt(), &mut rng)
            } else if name.starts_with("style.") && name.ends_with("bias") {
                let c = shape[0] / 2;
                let mut t = Tensor::zeros(shape);
                t.data_mut()[..c].fill(1.0);
                t
            } else if name == "to_rgb.kernel" {
                let fan_in = shape[1] as f64;
                Tensor::randn(shape, 1.0 / fan_in.sqrt(), &mut rng)
            } else {
                Tensor::zeros(shape)
            };
            params.push(NamedTensor { name, value });
        }
        Ok(StyleGenerator { config, params })
    }

    /// Rebuilds a generator from stored parameters, checking names and shapes
    /// against the configuration.
    pub fn from_params(config: GeneratorConfig, params: Vec<NamedTensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(StyleGenerator { config, params })
    }

    /// Replaces every mapping layer with the identity map (zero bias).
    pub fn with_identity_mapping(mut self) -> Self {
        let d = self.config.latent_dim;
        let layout = self.layout();
        for i in 0..self.config.mapping_depth {
            let (w, b) = layout.mapping(i);
            let wt = self.params[w].value.data_mut();
            wt.fill(0.0);
            for k in 0..d {
                wt[k * d + k] = 1.0;
            }
            self.params[b].value.data_mut().fill(0.0);
        }
        self
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn style_layers(&self) -> usize {
        self.config.style_layers()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn resolution(&self) -> usize {
        self.config.final_resolution()
    }

    fn layout(&self) -> Layout {
        Layout {
            mapping_depth: self.config.mapping_depth,
        }
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> ParamVars {
        ParamVars(
            self.params
                .iter()
                .map(|p| g.leaf(p.value.clone(), requires_grad))
                .collect(),
        )
    }

    /// Recorded mapping network `z = M(s)`. Leaky ReLU between layers, none
    /// after the last.
    pub fn map_var(&self, g: &mut Graph, p: &ParamVars, s: Var) -> Result<Var> {
        if g.value(s).len() != self.latent_dim() {
            return Err(Error::dim(
                "map",
                format!("noise has {} entries, latent_dim is {}", g.value(s).len(), self.latent_dim()),
            ));
        }
        let layout = self.layout();
        let mut h = s;
        for i in 0..self.config.mapping_depth {
            let (w, b) = layout.mapping(i);
            h = g.linear(h, p.0[w], p.0[b])?;
            if i + 1 < self.config.mapping_depth {
                h = g.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    /// Recorded synthesis network. `codes` holds one handle per style layer.
    pub fn synthesize_var(&self, g: &mut Graph, p: &ParamVars, codes: &[Var]) -> Result<Var> {
        let layers = self.style_layers();
        if codes.len() != layers {
            return Err(Error::dim(
                "synthesize",
                format!("got {} codes for {layers} style layers", codes.len()),
            ));
        }
        for &c in codes {
            if g.value(c).len() != self.latent_dim() {
                return Err(Error::dim(
                    "synthesize",
                    format!("code of length {} for latent_dim {}", g.value(c).len(), self.latent_dim()),
                ));
            }
        }
        let layout = self.layout();
        let mut h = p.0[layout.c0()];
        for (l, &code) in codes.iter().enumerate() {
            if l > 0 && l % CONVS_PER_STAGE == 0 {
                h = g.upsample2x(h)?;
            }
            let [k, kb, sw, sb] = layout.layer(l);
            h = g.conv2d(h, p.0[k], p.0[kb], 1)?;
            let style = g.linear(code, p.0[sw], p.0[sb])?;
            let c = self.config.layer_channels(l).1;
            let scale = g.narrow(style, 0, c)?;
            let bias = g.narrow(style, c, c)?;
            h = g.adain(h, scale, bias, ADAIN_EPS)?;
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let (rk, rb) = layout.to_rgb(layers);
        let rgb = g.conv2d(h, p.0[rk], p.0[rb], 0)?;
        g.tanh(rgb)
    }

    pub fn map(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let sv = g.constant(Tensor::vector(s.to_vec()));
        let z = self.map_var(&mut g, &p, sv)?;
        Ok(g.value(z).data().to_vec())
    }

    pub fn synthesize(&self, codes: &PerLayerCodes) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let vars: Vec<Var> = codes
            .layers()
            .iter()
            .map(|z| g.constant(Tensor::vector(z.clone())))
            .collect();
        let out = self.synthesize_var(&mut g, &p, &vars)?;
        Ok(g.value(out).clone())
    }

    pub fn synthesize_global(&self, z: &[f64]) -> Result<Tensor> {
        self.synthesize(&replicate(z, self.style_layers()))
    }

    /// `G(M(s))` with the mapped code shared by all layers.
    pub fn generate(&self, s: &[f64]) -> Result<Tensor> {
        let z = self.map(s)?;
        self.synthesize_global(&z)
    }

    pub fn synthesize_code(&self, code: &LatentCode) -> Result<Tensor> {
        match code {
            LatentCode::Noise(s) => self.generate(s),
            LatentCode::Global(z) => self.synthesize_global(z),
            LatentCode::PerLayer(c) => self.synthesize(c),
        }
    }

    /// Layers `1..=crossover` from `codes_a`, the rest from `codes_b`.
    pub fn style_mix(
        &self,
        codes_a: &PerLayerCodes,
        codes_b: &PerLayerCodes,
        crossover: usize,
    ) -> Result<Tensor> {
        let layers = self.style_layers();
        if crossover > layers {
            return Err(Error::invalid(format!(
                "crossover {crossover} outside 0..={layers}"
            )));
        }
        if codes_a.len() != layers || codes_b.len() != layers {
            return Err(Error::dim("style_mix", "code stacks must have one code per layer"));
        }
        let mixed = codes_a.layers()[..crossover]
            .iter()
            .chain(&codes_b.layers()[crossover..])
            .cloned()
            .collect();
        self.synthesize(&PerLayerCodes(mixed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::check_gradients;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: 4,
            mapping_depth: 2,
            base_resolution: 2,
            channels: vec![4, 3],
            out_channels: 3,
        }
    }

    fn noise(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn default_config_shape() {
        let c = GeneratorConfig::default();
        assert_eq!(c.final_resolution(), 32);
        assert_eq!(c.style_layers(), 8);
        assert_eq!(GeneratorConfig::compact().style_layers(), 8);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [GeneratorConfig::default(), GeneratorConfig::compact(), tiny()] {
            let gen = StyleGenerator::new(cfg.clone(), 0).unwrap();
            let counted: usize = gen.params().iter().map(|p| p.value.len()).sum();
            assert_eq!(counted, cfg.parameter_count());
        }
        // Hand count for the tiny config:
        // mapping 2*(16+4)=40, c0 4*2*2=16,
        // layer0 4->4: 144+4 + 32+8, layer1 4->4: same,
        // layer2 4->3: 108+3 + 24+6, layer3 3->3: 81+3 + 24+6, to_rgb 3*3+3.
        assert_eq!(tiny().parameter_count(), 40 + 16 + 2 * 188 + 141 + 114 + 12);
    }

    #[test]
    fn map_is_deterministic_and_identity_for_degenerate_config() {
        let gen = StyleGenerator::new(tiny(), 1).unwrap();
        let s = noise(4, 2);
        assert_eq!(gen.map(&s).unwrap(), gen.map(&s).unwrap());
        let cfg = GeneratorConfig {
            mapping_depth: 1,
            ..tiny()
        };
        let ident = StyleGenerator::new(cfg, 1).unwrap().with_identity_mapping();
        assert_eq!(ident.map(&s).unwrap(), s);
        assert!(gen.map(&[0.0; 3]).is_err());
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let gen = StyleGenerator::new(tiny(), 3).unwrap();
        let s = Tensor::vector(noise(4, 4));
        for k in 0..4 {
            let e = check_gradients(
                |g, sv| {
                    let p = gen.bind(g, false);
                    let z = gen.map_var(g, &p, sv)?;
                    g.narrow(z, k, 1)
                },
                &s,
                1e-6,
            )
            .unwrap();
            assert!(e < 1e-5, "component {k}: {e}");
        }
    }

    #[test]
    fn replicate_and_synthesize_global_agree() {
        let gen = StyleGenerator::new(tiny(), 5).unwrap();
        let z = noise(4, 6);
        assert_eq!(replicate(&z, 1).0, vec![z.clone()]);
        let a = gen.synthesize(&replicate(&z, gen.style_layers())).unwrap();
        assert_eq!(a, gen.synthesize_global(&z).unwrap());
        let mut perturbed = replicate(&z, gen.style_layers());
        perturbed.0[2][0] += 0.5;
        assert_ne!(gen.synthesize(&perturbed).unwrap(), a);
    }

    #[test]
    fn generate_is_map_then_synthesize() {
        let gen = StyleGenerator::new(tiny(), 7).unwrap();
        let s = noise(4, 8);
        let z = gen.map(&s).unwrap();
        let composed = gen.synthesize(&replicate(&z, gen.style_layers())).unwrap();
        assert_eq!(gen.generate(&s).unwrap(), composed);
        assert_eq!(gen.generate(&s).unwrap(), gen.generate(&s).unwrap());
    }

    #[test]
    fn output_shape_and_range() {
        let gen = StyleGenerator::new(tiny(), 9).unwrap();
        let zero = PerLayerCodes::zeros(gen.style_layers(), 4);
        let a = gen.synthesize(&zero).unwrap();
        assert_eq!(a, gen.synthesize(&zero).unwrap());
        assert_eq!(a.shape(), &[3, 4, 4]);
        let big = zero.map(|_| 40.0);
        let b = gen.synthesize(&big).unwrap();
        assert!(b.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_code_count_is_rejected() {
        let gen = StyleGenerator::new(tiny(), 9).unwrap();
        assert!(gen.synthesize(&PerLayerCodes::zeros(3, 4)).is_err());
        assert!(gen.synthesize(&PerLayerCodes::zeros(4, 5)).is_err());
    }

    #[test]
    fn style_mix_endpoints() {
        let gen = StyleGenerator::new(tiny(), 10).unwrap();
        let l = gen.style_layers();
        let a = replicate(&noise(4, 11), l);
        let b = replicate(&noise(4, 12), l);
        assert_eq!(gen.style_mix(&a, &b, l).unwrap(), gen.synthesize(&a).unwrap());
        assert_eq!(gen.style_mix(&a, &b, 0).unwrap(), gen.synthesize(&b).unwrap());
        for c in 0..=l {
            assert_eq!(gen.style_mix(&a, &a, c).unwrap(), gen.synthesize(&a).unwrap());
        }
        assert!(gen.style_mix(&a, &b, l + 1).is_err());
    }

    #[test]
    fn from_params_validates_manifest() {
        let gen = StyleGenerator::new(tiny(), 13).unwrap();
        let rebuilt = StyleGenerator::from_params(tiny(), gen.params().to_vec()).unwrap();
        assert_eq!(rebuilt, gen);
        let mut bad = gen.params().to_vec();
        bad.swap(0, 1);
        assert!(StyleGenerator::from_params(tiny(), bad).is_err());
    }
}
