//! Dense networks for the four roles: stochastic mappings, encoders and
//! discriminators over data or latent codes.
//!
//! A mapping receives its latent code through conditional feature
//! normalization: at every hidden layer listed in `injection_depths` the
//! pre-activation is standardized per sample and then scaled and shifted by
//! `gamma = f(z)` and `beta = g(z)`, both linear in `z`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Tanh,
    Sigmoid,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenActivation {
    Relu,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    None,
    FeatureNorm,
    ConditionalFeatureNorm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPort {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Inputs concatenated in this order along the feature axis.
    pub input_dims: Vec<InputPort>,
    /// Width of the conditioning code; 0 for unconditioned networks.
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub injection_depths: BTreeSet<usize>,
    pub norm_mode: NormMode,
}

impl NetworkSpec {
    pub fn input_width(&self) -> usize {
        self.input_dims.iter().map(|p| p.width).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() || self.input_dims.iter().any(|p| p.width == 0) {
            return Err(Error::Config("network inputs must have positive widths".into()));
        }
        if self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if let Some(&d) = self.injection_depths.iter().next_back() {
            if d >= self.hidden_widths.len() {
                return Err(Error::Config(format!(
                    "injection depth {d} outside 0..{}",
                    self.hidden_widths.len()
                )));
            }
        }
        let conditional = self.norm_mode == NormMode::ConditionalFeatureNorm;
        if conditional != !self.injection_depths.is_empty() {
            return Err(Error::Config(
                "injection depths must be non-empty exactly when norm_mode is conditional-feature-norm".into(),
            ));
        }
        if conditional != (self.latent_dim > 0) {
            return Err(Error::Config(
                "a latent input requires conditional-feature-norm and vice versa".into(),
            ));
        }
        Ok(())
    }
}

/// Parameter names of the scale/shift maps conditioning hidden layer `layer`.
///
/// Scale is `z · W_gamma + b_gamma` (bias initialized to 1, weights to 0),
/// shift is `z · W_beta + b_beta` (all zeros), so a fresh layer behaves as
/// plain feature normalization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionalNorm {
    pub gamma_w: String,
    pub gamma_b: String,
    pub beta_w: String,
    pub beta_b: String,
}

impl ConditionalNorm {
    pub fn for_layer(layer: usize) -> Self {
        ConditionalNorm {
            gamma_w: format!("h{layer}.gamma.w"),
            gamma_b: format!("h{layer}.gamma.b"),
            beta_w: format!("h{layer}.beta.w"),
            beta_b: format!("h{layer}.beta.b"),
        }
    }

    fn apply(&self, tape: &mut Tape, p: &BoundParams, h: Var, z: Var) -> Result<Var> {
        let gamma = tape.matmul(z, p.var(&self.gamma_w))?;
        let gamma = tape.add(gamma, p.var(&self.gamma_b))?;
        let beta = tape.matmul(z, p.var(&self.beta_w))?;
        let beta = tape.add(beta, p.var(&self.beta_b))?;
        let scaled = tape.mul(h, gamma)?;
        tape.add(scaled, beta)
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    rng.fill_gaussian(t.data_mut());
    t.data_mut().iter_mut().for_each(|v| *v *= std);
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

/// A network whose parameters have been recorded on a tape.
pub struct BoundNetwork<'a> {
    pub net: &'a Network,
    pub params: BoundParams,
}

impl Network {
    /// Weights ~ N(0, 0.02²), biases 0, conditional scale 1 and shift 0.
    pub fn build(spec: NetworkSpec, rng: &mut Rng) -> Result<Network> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut fan_in = spec.input_width();
        for (i, &w) in spec.hidden_widths.iter().enumerate() {
            params.insert(format!("h{i}.w"), gaussian_matrix(rng, fan_in, w, INIT_STD));
            params.insert(format!("h{i}.b"), Tensor::zeros(&[w]));
            if spec.injection_depths.contains(&i) {
                let cn = ConditionalNorm::for_layer(i);
                params.insert(cn.gamma_w, Tensor::zeros(&[spec.latent_dim, w]));
                params.insert(cn.gamma_b, Tensor::full(&[w], 1.0));
                params.insert(cn.beta_w, Tensor::zeros(&[spec.latent_dim, w]));
                params.insert(cn.beta_b, Tensor::zeros(&[w]));
            }
            fan_in = w;
        }
        params.insert("out.w", gaussian_matrix(rng, fan_in, spec.output_dim, INIT_STD));
        params.insert("out.b", Tensor::zeros(&[spec.output_dim]));
        Ok(Network { spec, params })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork<'_> {
        BoundNetwork {
            net: self,
            params: self.params.bind(tape),
        }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundNetwork<'_> {
        BoundNetwork {
            net: self,
            params: self.params.bind_frozen(tape),
        }
    }

    /// Untracked forward pass on concrete tensors.
    pub fn predict(&self, inputs: &[&Tensor], z: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
        let zv = z.map(|t| tape.constant(t));
        let out = bound.forward(&mut tape, &xs, zv)?;
        Ok(tape.tensor(out))
    }
}

impl BoundNetwork<'_> {
    pub fn forward(&self, tape: &mut Tape, inputs: &[Var], z: Option<Var>) -> Result<Var> {
        let spec = &self.net.spec;
        if inputs.len() != spec.input_dims.len() {
            return Err(Error::Invalid(format!(
                "network expects {} inputs, got {}",
                spec.input_dims.len(),
                inputs.len()
            )));
        }
        let batch = tape.shape(inputs[0]).first().copied().unwrap_or(0);
        for (port, &x) in spec.input_dims.iter().zip(inputs) {
            let shape = tape.shape(x);
            if shape.len() != 2 || shape[1] != port.width {
                return Err(Error::DimMismatch {
                    what: format!("width of input `{}`", port.name),
                    expected: port.width,
                    found: shape.get(1).copied().unwrap_or(0),
                });
            }
            if shape[0] != batch {
                return Err(Error::DimMismatch {
                    what: format!("batch size of input `{}`", port.name),
                    expected: batch,
                    found: shape[0],
                });
            }
        }
        match (spec.latent_dim, z) {
            (0, Some(_)) => return Err(Error::Invalid("latent code supplied to a deterministic network".into())),
            (d, None) if d > 0 => return Err(Error::Invalid("stochastic network requires a latent code".into())),
            (d, Some(zv)) => {
                let shape = tape.shape(zv);
                if shape.len() != 2 || shape[1] != d || shape[0] != batch {
                    return Err(Error::DimMismatch {
                        what: "latent code width".into(),
                        expected: d,
                        found: shape.get(1).copied().unwrap_or(0),
                    });
                }
            }
            _ => {}
        }

        let mut h = inputs[0];
        for &x in &inputs[1..] {
            h = tape.concat(h, x)?;
        }
        let p = &self.params;
        for i in 0..spec.hidden_widths.len() {
            h = tape.matmul(h, p.var(&format!("h{i}.w")))?;
            h = tape.add(h, p.var(&format!("h{i}.b")))?;
            match spec.norm_mode {
                NormMode::None => {}
                NormMode::FeatureNorm => h = tape.feature_normalize(h)?,
                NormMode::ConditionalFeatureNorm => {
                    h = tape.feature_normalize(h)?;
                    if spec.injection_depths.contains(&i) {
                        let zv = z.expect("checked above");
                        h = ConditionalNorm::for_layer(i).apply(tape, p, h, zv)?;
                    }
                }
            }
            h = match spec.hidden_activation {
                HiddenActivation::Relu => tape.relu(h),
                HiddenActivation::LeakyRelu => tape.leaky_relu(h),
            };
        }
        h = tape.matmul(h, p.var("out.w"))?;
        h = tape.add(h, p.var("out.b"))?;
        Ok(match spec.output_activation {
            OutputActivation::Tanh => tape.tanh(h),
            OutputActivation::Sigmoid => tape.sigmoid(h),
            OutputActivation::Linear => h,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Cyclegan,
    StochCyclegan,
    AugCyclegan,
}

impl Variant {
    pub fn is_stochastic(self) -> bool {
        self != Variant::Cyclegan
    }
}

/// Where mappings receive their latent code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    AllLayers,
    LastLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub gen_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub latent_disc_hidden: Vec<usize>,
    pub injection: Injection,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            gen_hidden: vec![32, 32, 32],
            enc_hidden: vec![32, 32],
            disc_hidden: vec![32, 32],
            latent_disc_hidden: vec![32, 32],
            injection: Injection::AllLayers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub dim_a: usize,
    pub dim_b: usize,
    pub dim_za: usize,
    pub dim_zb: usize,
}

fn port(name: &str, width: usize) -> InputPort {
    InputPort {
        name: name.to_string(),
        width,
    }
}

fn mapping_spec(src: usize, dst: usize, latent: usize, arch: &ArchConfig) -> NetworkSpec {
    let depth = arch.gen_hidden.len();
    let injection_depths: BTreeSet<usize> = if latent == 0 || depth == 0 {
        BTreeSet::new()
    } else {
        match arch.injection {
            Injection::AllLayers => (0..depth).collect(),
            Injection::LastLayer => BTreeSet::from([depth - 1]),
        }
    };
    let norm_mode = if injection_depths.is_empty() {
        NormMode::FeatureNorm
    } else {
        NormMode::ConditionalFeatureNorm
    };
    NetworkSpec {
        input_dims: vec![port("x", src)],
        latent_dim: if injection_depths.is_empty() { 0 } else { latent },
        hidden_widths: arch.gen_hidden.clone(),
        output_dim: dst,
        hidden_activation: HiddenActivation::Relu,
        output_activation: OutputActivation::Tanh,
        injection_depths,
        norm_mode,
    }
}

fn encoder_spec(dims: &ModelDims, out: usize, arch: &ArchConfig) -> NetworkSpec {
    NetworkSpec {
        input_dims: vec![port("a", dims.dim_a), port("b", dims.dim_b)],
        latent_dim: 0,
        hidden_widths: arch.enc_hidden.clone(),
        output_dim: out,
        hidden_activation: HiddenActivation::Relu,
        output_activation: OutputActivation::Linear,
        injection_depths: BTreeSet::new(),
        norm_mode: NormMode::None,
    }
}

fn disc_spec(width: usize, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec {
        input_dims: vec![port("x", width)],
        latent_dim: 0,
        hidden_widths: hidden.to_vec(),
        output_dim: 1,
        hidden_activation: HiddenActivation::LeakyRelu,
        output_activation: OutputActivation::Sigmoid,
        injection_depths: BTreeSet::new(),
        norm_mode: NormMode::None,
    }
}

/// The networks of one model variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub variant: Variant,
    pub dims: ModelDims,
    pub f_ab: Network,
    pub g_ba: Network,
    pub e_a: Option<Network>,
    pub e_b: Option<Network>,
    pub d_a: Network,
    pub d_b: Network,
    pub d_za: Option<Network>,
    pub d_zb: Option<Network>,
}

pub const GENERATOR_ROLES: [&str; 4] = ["f_ab", "g_ba", "e_a", "e_b"];
pub const DISCRIMINATOR_ROLES: [&str; 4] = ["d_a", "d_b", "d_za", "d_zb"];

impl ModelBundle {
    pub fn build(variant: Variant, dims: ModelDims, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let (za, zb) = if variant.is_stochastic() {
            if dims.dim_za == 0 || dims.dim_zb == 0 {
                return Err(Error::Config("stochastic variants need positive latent dims".into()));
            }
            (dims.dim_za, dims.dim_zb)
        } else {
            (0, 0)
        };
        let dims = ModelDims {
            dim_za: za,
            dim_zb: zb,
            ..dims
        };
        let aug = variant == Variant::AugCyclegan;
        let f_ab = Network::build(mapping_spec(dims.dim_a, dims.dim_b, zb, arch), rng)?;
        let g_ba = Network::build(mapping_spec(dims.dim_b, dims.dim_a, za, arch), rng)?;
        let e_a = aug.then(|| Network::build(encoder_spec(&dims, za, arch), rng)).transpose()?;
        let e_b = aug.then(|| Network::build(encoder_spec(&dims, zb, arch), rng)).transpose()?;
        let d_a = Network::build(disc_spec(dims.dim_a, &arch.disc_hidden), rng)?;
        let d_b = Network::build(disc_spec(dims.dim_b, &arch.disc_hidden), rng)?;
        let d_za = aug
            .then(|| Network::build(disc_spec(za, &arch.latent_disc_hidden), rng))
            .transpose()?;
        let d_zb = aug
            .then(|| Network::build(disc_spec(zb, &arch.latent_disc_hidden), rng))
            .transpose()?;
        Ok(ModelBundle {
            variant,
            dims,
            f_ab,
            g_ba,
            e_a,
            e_b,
            d_a,
            d_b,
            d_za,
            d_zb,
        })
    }

    pub fn network(&self, role: &str) -> Option<&Network> {
        match role {
            "f_ab" => Some(&self.f_ab),
            "g_ba" => Some(&self.g_ba),
            "e_a" => self.e_a.as_ref(),
            "e_b" => self.e_b.as_ref(),
            "d_a" => Some(&self.d_a),
            "d_b" => Some(&self.d_b),
            "d_za" => self.d_za.as_ref(),
            "d_zb" => self.d_zb.as_ref(),
            _ => None,
        }
    }

    pub fn network_mut(&mut self, role: &str) -> Option<&mut Network> {
        match role {
            "f_ab" => Some(&mut self.f_ab),
            "g_ba" => Some(&mut self.g_ba),
            "e_a" => self.e_a.as_mut(),
            "e_b" => self.e_b.as_mut(),
            "d_a" => Some(&mut self.d_a),
            "d_b" => Some(&mut self.d_b),
            "d_za" => self.d_za.as_mut(),
            "d_zb" => self.d_zb.as_mut(),
            _ => None,
        }
    }

    /// Present networks as `(role, network)` in fixed role order.
    pub fn networks(&self) -> Vec<(&'static str, &Network)> {
        GENERATOR_ROLES
            .iter()
            .chain(DISCRIMINATOR_ROLES.iter())
            .filter_map(|&r| self.network(r).map(|n| (r, n)))
            .collect()
    }

    /// All parameters of a role group flattened under `role/name` keys.
    pub fn collect_params(&self, roles: &[&str]) -> ParamStore {
        let mut out = ParamStore::new();
        for &role in roles {
            if let Some(net) = self.network(role) {
                for (name, t) in net.params.iter() {
                    out.insert(format!("{role}/{name}"), t.clone());
                }
            }
        }
        out
    }

    /// Writes back a flattened store produced by [`Self::collect_params`].
    pub fn scatter_params(&mut self, store: &ParamStore) -> Result<()> {
        for (key, t) in store.iter() {
            let (role, name) = key
                .split_once('/')
                .ok_or_else(|| Error::Invalid(format!("parameter key `{key}` has no role prefix")))?;
            let net = self
                .network_mut(role)
                .ok_or_else(|| Error::Invalid(format!("unknown network role `{role}`")))?;
            net.params.assign(name, t.clone())?;
        }
        Ok(())
    }

    pub fn all_params(&self) -> ParamStore {
        let roles: Vec<&str> = GENERATOR_ROLES.iter().chain(DISCRIMINATOR_ROLES.iter()).copied().collect();
        self.collect_params(&roles)
    }

    /// `F_AB(a, z_b)`: samples in B for a batch of A inputs.
    pub fn map_ab(&self, a: &Tensor, z_b: Option<&Tensor>) -> Result<Tensor> {
        self.f_ab.predict(&[a], z_b)
    }

    /// `G_BA(b, z_a)`.
    pub fn map_ba(&self, b: &Tensor, z_a: Option<&Tensor>) -> Result<Tensor> {
        self.g_ba.predict(&[b], z_a)
    }
}

/// Checks that `x` and `y` have the same number of rows before encoding.
pub fn encode(e: &Network, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::DimMismatch {
            what: "encoder batch alignment".into(),
            expected: a.rows(),
            found: b.rows(),
        });
    }
    e.predict(&[a, b], None)
}

pub fn discriminate(d: &Network, x: &Tensor) -> Result<Tensor> {
    d.predict(&[x], None)
}
