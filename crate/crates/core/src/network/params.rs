//! Named parameter storage and the deterministic initializer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NetConfig, UpMode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ALPHA: &str = "suppress.alpha";
pub const ETA: &str = "boundary.eta";

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±gain·sqrt(3 / fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
    Const(f64),
    /// 3×3 per-channel `[-1, 0, 1]` along x.
    DiffX,
    /// 3×3 per-channel `[-1, 0, 1]` along y.
    DiffY,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn conv(&mut self, prefix: &str, k: usize, ci: usize, co: usize, gain: f64) {
        self.push(
            format!("{prefix}.w"),
            &[k, k, ci, co],
            Init::FanIn {
                fan_in: k * k * ci,
                gain,
            },
        );
        self.push(format!("{prefix}.b"), &[co], Init::Zeros);
    }

    fn zero_conv(&mut self, prefix: &str, k: usize, ci: usize, co: usize) {
        self.push(format!("{prefix}.w"), &[k, k, ci, co], Init::Zeros);
        self.push(format!("{prefix}.b"), &[co], Init::Zeros);
    }

    fn depthwise(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.w"), &[3, 3, c], Init::FanIn { fan_in: 9, gain: 1.0 });
        self.push(format!("{prefix}.b"), &[c], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.g"), &[c], Init::Ones);
        self.push(format!("{prefix}.b"), &[c], Init::Zeros);
    }

    /// Depthwise 3×3 → pointwise → norm → ReLU.
    fn separable(&mut self, prefix: &str, ci: usize, co: usize) {
        self.depthwise(&format!("{prefix}.dw"), ci);
        self.conv(&format!("{prefix}.pw"), 1, ci, co, RELU_GAIN);
        self.norm(&format!("{prefix}.norm"), co);
    }

    fn attention(&mut self, prefix: &str, c: usize, hidden: usize) {
        self.conv(&format!("{prefix}.ca1"), 1, c, hidden, RELU_GAIN);
        self.zero_conv(&format!("{prefix}.ca2"), 1, hidden, c);
        self.zero_conv(&format!("{prefix}.sa"), 3, c, 1);
    }

    fn up(&mut self, prefix: &str, mode: UpMode, factor: usize, ci: usize, co: usize) {
        match mode {
            UpMode::NearestConv => self.conv(prefix, 3, ci, co, 1.0),
            UpMode::Transposed => self.conv(prefix, factor, ci, co, factor as f64),
        }
    }
}

/// The full parameter layout of a configuration, in initialization order.
pub fn param_layout(config: &NetConfig) -> Vec<ParamSpec> {
    let cr = config.full_channels;
    let mut l = Layout(Vec::new());
    l.conv("stem.conv", 3, 3, cr, RELU_GAIN);
    l.norm("stem.norm", cr);
    let s0 = config.pooled_scales[0];
    let cp0 = config.pooled_channels[0];
    l.conv("pool_stem.conv", s0, cr, cp0, RELU_GAIN);
    l.norm("pool_stem.norm", cp0);
    l.conv("artifact.conv1", 3, cr, cr, RELU_GAIN);
    l.conv("artifact.conv2", 1, cr, 1, 1.0);
    l.push(ALPHA.into(), &[1], Init::Const(config.suppression_strength_init));
    l.push(ETA.into(), &[1], Init::Const(config.boundary_gain_init));

    for stage in 0..config.num_stages {
        let cp = config.pooled_channels[stage];
        let cin = config.block_in_channels(stage);
        let cu = config.branch_concat_channels(stage);
        let s = config.pooled_scales[stage];
        let p = format!("stage{stage}");
        if stage > 0 {
            let prev_s = config.pooled_scales[stage - 1];
            let prev_c = config.pooled_channels[stage - 1];
            if s > prev_s {
                l.conv(&format!("{p}.resize"), s / prev_s, prev_c, prev_c, RELU_GAIN);
                l.norm(&format!("{p}.resize_norm"), prev_c);
            } else if s < prev_s {
                l.up(&format!("{p}.resize"), config.up_mode, prev_s / s, prev_c, prev_c);
            }
        }
        l.conv(&format!("{p}.down"), 1, cr, cp, 1.0);
        for &d in &config.dilation_rates {
            l.separable(&format!("{p}.ms.d{d}"), cin, cp);
        }
        l.separable(&format!("{p}.ms.single"), cin, cu);
        l.attention(&format!("{p}.ms"), cu, config.attention_hidden(cu));
        l.conv(&format!("{p}.ms.proj"), 1, cu, cp, 1.0);
        l.conv(&format!("{p}.delta.proj"), 1, cp, cr, 1.0);
        l.up(&format!("{p}.delta.up"), config.up_mode, s, cr, cr);
        l.push(format!("{p}.edge.dx"), &[3, 3, cp], Init::DiffX);
        l.push(format!("{p}.edge.dy"), &[3, 3, cp], Init::DiffY);
        l.conv(&format!("{p}.edge.pw"), 1, 2 * cp, cp, RELU_GAIN);
        l.conv(&format!("{p}.edge.proj"), 1, cp, cr, 1.0);
        l.up(&format!("{p}.edge.up"), config.up_mode, s, cr, cr);
    }

    l.separable("dec.sep", cr, cr);
    l.attention("dec", cr, config.attention_hidden(cr));
    l.conv("dec.out", 1, cr, 1, 1.0);

    let cl = *config.pooled_channels.last().unwrap();
    l.conv("latent.fc1", 1, cl, cl, RELU_GAIN);
    l.conv("latent.fc2", 1, cl, config.latent_dim, 1.0);
    l.0
}

/// Named parameter tensors. Names are unique and keep insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter name `{name}`")));
        }
        let idx = self.values.len();
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        self.values.push(value);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index_of(name)
            .map(|i| &self.values[i])
            .ok_or_else(|| Error::Param(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.values[i]),
            None => Err(Error::Param(format!("missing parameter `{name}`"))),
        }
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.values[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Scalar value of a single-element parameter such as `suppress.alpha`.
    pub fn scalar(&self, name: &str) -> Result<T> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(Error::Param(format!("`{name}` is not a scalar")));
        }
        Ok(t.data()[0])
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = T::zero());
                n += 1;
            }
        }
        n
    }

    /// Re-imposes box constraints: the suppression strength stays in `[0, 1]`.
    pub fn clamp_constrained(&mut self) {
        if let Ok(a) = self.get_mut(ALPHA) {
            for v in a.data_mut() {
                *v = v.max(T::zero()).min(T::one());
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Deterministic initialization: identical `(config, seed)` gives bit-identical parameters.
pub fn init_params<T: Scalar>(config: &NetConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for spec in param_layout(config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::FanIn { fan_in, gain } => {
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
            }
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Const(v) => vec![T::lit(v); n],
            Init::DiffX | Init::DiffY => {
                let c = spec.shape[2];
                let mut w = vec![T::zero(); n];
                for ch in 0..c {
                    let (a, b) = if spec.init == Init::DiffX {
                        ((1 * 3) * c + ch, (1 * 3 + 2) * c + ch)
                    } else {
                        ((0 * 3 + 1) * c + ch, (2 * 3 + 1) * c + ch)
                    };
                    w[a] = -T::one();
                    w[b] = T::one();
                }
                w
            }
        };
        params.insert(spec.name, Tensor::from_vec(&spec.shape, data)?)?;
    }
    Ok(params)
}
