//! Network descriptions.
//!
//! A [`NetworkSpec`] is an ordered list of [`LayerSpec`]s over a fixed input
//! shape and input domain `[-D, D]^N0`. Layers refer to their tensors by name;
//! a [`Network`] pairs a spec with the resolved [`Weights`].
//!
//! Feature maps are laid out `(channels, height, width)`; dense layers accept
//! any feature shape whose element count matches `in`. Dense weights are
//! `(out, in)` and convolution weights `(out_ch, in_ch / groups, p, p)`, both
//! row-major.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Named tensors of a network.
pub type Weights = BTreeMap<String, Tensor>;

/// Pointwise nonlinearities. Each is 1-Lipschitz and maps 0 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "lowercase"))]
pub enum ActivationKind {
    #[default]
    Relu,
    Relu6,
    Tanh,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Relu6 => x.clamp(0.0, 6.0),
            Self::Tanh => math::tanh(x),
            Self::Identity => x,
        }
    }

    /// `σ(c·x) = c·σ(x)` for every `c > 0`.
    pub fn is_positively_homogeneous(self) -> bool {
        matches!(self, Self::Relu | Self::Identity)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Relu6 => "relu6",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Dense {
    #[cfg_attr(feature = "serde", serde(rename = "in"))]
    pub in_features: usize,
    #[cfg_attr(feature = "serde", serde(rename = "out"))]
    pub out_features: usize,
    pub has_bias: bool,
    pub weight: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub bias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub stride: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub padding: usize,
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub groups: usize,
    pub weight: String,
}

#[cfg(feature = "serde")]
fn one() -> usize {
    1
}

impl Conv2d {
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch / self.groups.max(1), self.kernel, self.kernel]
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.groups > 1
    }

    /// Spatial output extent for an input extent, `None` if the kernel does
    /// not fit.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Shortcut {
    #[default]
    Identity,
    Conv2d(Conv2d),
}

/// Two-convolution residual block: `σ(W2 σ(W1 f) + W_s f)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ResBlock18 {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    #[cfg_attr(feature = "serde", serde(default))]
    pub shortcut: Shortcut,
    #[cfg_attr(feature = "serde", serde(default))]
    pub activation: ActivationKind,
}

/// Three-convolution bottleneck: `σ(W3 σ(W2 σ(W1 f)) + W_s f)`, with the
/// outer `σ` dropped when `final_activation` is false (inverted residual).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Bottleneck {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    #[cfg_attr(feature = "serde", serde(default))]
    pub shortcut: Shortcut,
    pub final_activation: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub activation: ActivationKind,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(tag = "type", rename_all = "snake_case"))]
pub enum LayerSpec {
    Dense(Dense),
    Conv2d(Conv2d),
    Activation {
        kind: ActivationKind,
    },
    #[cfg_attr(feature = "serde", serde(rename = "resblock18"))]
    ResBlock18(ResBlock18),
    Bottleneck(Bottleneck),
    Flatten,
    #[cfg_attr(feature = "serde", serde(rename = "avgpool"))]
    AvgPool {
        window: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Dense(_) => "dense",
            Self::Conv2d(_) => "conv2d",
            Self::Activation { .. } => "activation",
            Self::ResBlock18(_) => "resblock18",
            Self::Bottleneck(_) => "bottleneck",
            Self::Flatten => "flatten",
            Self::AvgPool { .. } => "avgpool",
        }
    }

    /// Convolutions carried by this layer, shortcut last.
    pub fn convolutions(&self) -> Vec<&Conv2d> {
        fn shortcut(s: &Shortcut) -> Option<&Conv2d> {
            match s {
                Shortcut::Identity => None,
                Shortcut::Conv2d(c) => Some(c),
            }
        }
        match self {
            Self::Conv2d(c) => vec![c],
            Self::ResBlock18(b) => {
                let mut v = vec![&b.conv1, &b.conv2];
                v.extend(shortcut(&b.shortcut));
                v
            }
            Self::Bottleneck(b) => {
                let mut v = vec![&b.conv1, &b.conv2, &b.conv3];
                v.extend(shortcut(&b.shortcut));
                v
            }
            _ => Vec::new(),
        }
    }

    /// Names of the quantizable weight tensors (biases excluded).
    pub fn weight_refs(&self) -> Vec<&str> {
        match self {
            Self::Dense(d) => vec![d.weight.as_str()],
            _ => self.convolutions().into_iter().map(|c| c.weight.as_str()).collect(),
        }
    }
}

/// A structural problem found by validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending layer index, `None` for network-level problems.
    pub layer: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(i) => write!(f, "layer {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NetworkSpec {
    pub version: u32,
    pub input_shape: Vec<usize>,
    /// Half-width `D` of the input domain `[-D, D]^N0`.
    #[cfg_attr(feature = "serde", serde(rename = "domain_D", default = "default_domain"))]
    pub domain_d: f64,
    pub layers: Vec<LayerSpec>,
}

#[cfg(feature = "serde")]
fn default_domain() -> f64 {
    1.0
}

pub const FORMAT_VERSION: u32 = 1;

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { version: FORMAT_VERSION, input_shape, domain_d: 1.0, layers }
    }

    pub fn with_domain(mut self, d: f64) -> Self {
        self.domain_d = d;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// True if any dense layer carries a bias.
    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Dense(d) if d.has_bias))
    }

    /// Shapes flowing between layers: entry `i` is the input of layer `i`,
    /// the last entry is the network output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let (shapes, violations) = self.trace();
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(shapes.into_iter().map(|s| s.unwrap_or_default()).collect())
    }

    /// Structural checks: extents, group divisibility and the shape chain.
    pub fn validate(&self) -> Vec<Violation> {
        self.trace().1
    }

    fn trace(&self) -> (Vec<Option<Vec<usize>>>, Vec<Violation>) {
        let mut violations = Vec::new();
        let mut net = |message: String| violations.push(Violation { layer: None, message });
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            net(format!("input shape {:?} must have positive extents", self.input_shape));
        }
        if !(self.domain_d > 0.0 && self.domain_d.is_finite()) {
            net(format!("domain_D must be positive and finite, got {}", self.domain_d));
        }

        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut current = Some(self.input_shape.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(current.clone());
            let mut bad = |message: String| violations.push(Violation { layer: Some(i), message });
            current = trace_layer(layer, current.as_deref(), &mut bad);
        }
        shapes.push(current);
        (shapes, violations)
    }
}

fn trace_layer(layer: &LayerSpec, input: Option<&[usize]>, bad: &mut impl FnMut(String)) -> Option<Vec<usize>> {
    match layer {
        LayerSpec::Dense(d) => {
            if d.in_features == 0 || d.out_features == 0 {
                bad("dense extents must be positive".into());
            }
            if d.has_bias != d.bias.is_some() {
                bad(format!(
                    "has_bias is {} but bias reference is {}",
                    d.has_bias,
                    if d.bias.is_some() { "present" } else { "absent" }
                ));
            }
            if let Some(s) = input {
                let n: usize = s.iter().product();
                if n != d.in_features {
                    bad(format!(
                        "shape chain broken: dense expects {} inputs, previous layer yields {s:?}",
                        d.in_features
                    ));
                }
            }
            Some(vec![d.out_features])
        }
        LayerSpec::Conv2d(c) => trace_conv(c, input, "conv2d", bad),
        LayerSpec::Activation { .. } => input.map(<[usize]>::to_vec),
        LayerSpec::Flatten => input.map(|s| vec![s.iter().product()]),
        LayerSpec::AvgPool { window } => {
            if *window == 0 {
                bad("avgpool window must be positive".into());
                return None;
            }
            match input? {
                &[c, h, w] if h >= *window && w >= *window => Some(vec![c, h / window, w / window]),
                s => {
                    bad(format!("avgpool window {window} does not fit input {s:?}"));
                    None
                }
            }
        }
        LayerSpec::ResBlock18(b) => {
            let mid = trace_conv(&b.conv1, input, "conv1", bad);
            let out = trace_conv(&b.conv2, mid.as_deref(), "conv2", bad);
            check_shortcut(&b.shortcut, input, out.as_deref(), bad);
            out
        }
        LayerSpec::Bottleneck(b) => {
            let m1 = trace_conv(&b.conv1, input, "conv1", bad);
            let m2 = trace_conv(&b.conv2, m1.as_deref(), "conv2", bad);
            let out = trace_conv(&b.conv3, m2.as_deref(), "conv3", bad);
            check_shortcut(&b.shortcut, input, out.as_deref(), bad);
            out
        }
    }
}

fn trace_conv(c: &Conv2d, input: Option<&[usize]>, what: &str, bad: &mut impl FnMut(String)) -> Option<Vec<usize>> {
    let mut ok = true;
    if c.in_ch == 0 || c.out_ch == 0 || c.kernel == 0 || c.stride == 0 {
        bad(format!("{what}: channels, kernel and stride must be positive"));
        ok = false;
    }
    if c.groups == 0 || !c.in_ch.is_multiple_of(c.groups) || !c.out_ch.is_multiple_of(c.groups) {
        bad(format!("{what}: groups={} must divide in_ch={} and out_ch={}", c.groups, c.in_ch, c.out_ch));
        ok = false;
    }
    let s = input?;
    let &[ch, h, w] = s else {
        bad(format!("{what}: expects a (channels, height, width) input, got {s:?}"));
        return None;
    };
    if ch != c.in_ch {
        bad(format!("shape chain broken: {what} expects {} channels, got {ch}", c.in_ch));
    }
    match (c.output_extent(h), c.output_extent(w)) {
        (Some(oh), Some(ow)) if ok => Some(vec![c.out_ch, oh, ow]),
        (Some(_), Some(_)) => None,
        _ => {
            bad(format!("{what}: kernel {} does not fit input {h}x{w}", c.kernel));
            None
        }
    }
}

fn check_shortcut(s: &Shortcut, input: Option<&[usize]>, main: Option<&[usize]>, bad: &mut impl FnMut(String)) {
    let side = match s {
        Shortcut::Identity => input.map(<[usize]>::to_vec),
        Shortcut::Conv2d(c) => trace_conv(c, input, "shortcut", bad),
    };
    if let (Some(side), Some(main)) = (side, main) {
        if side != main {
            bad(format!("shortcut output {side:?} differs from main branch output {main:?}"));
        }
    }
}

/// A spec together with its resolved tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: Weights,
}

impl Network {
    /// Pairs a spec with its tensors, failing with every violation found.
    pub fn new(spec: NetworkSpec, weights: Weights) -> Result<Self> {
        let net = Self { spec, weights };
        let violations = net.validate();
        if violations.is_empty() {
            Ok(net)
        } else {
            Err(Error::Invalid(violations))
        }
    }

    /// Structural checks plus tensor resolution and tensor shapes.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = self.spec.validate();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let mut expect = |name: &str, shape: Vec<usize>| match self.weights.get(name) {
                None => {
                    violations.push(Violation { layer: Some(i), message: format!("tensor `{name}` does not resolve") })
                }
                Some(t) if t.shape() != shape.as_slice() => violations.push(Violation {
                    layer: Some(i),
                    message: format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape()),
                }),
                Some(_) => {}
            };
            match layer {
                LayerSpec::Dense(d) => {
                    expect(&d.weight, vec![d.out_features, d.in_features]);
                    if let Some(b) = &d.bias {
                        expect(b, vec![d.out_features]);
                    }
                }
                other => {
                    for c in other.convolutions() {
                        if c.groups > 0 {
                            expect(&c.weight, c.weight_shape());
                        }
                    }
                }
            }
        }
        violations
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.weights.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Distinct quantizable weight tensor names, in first-use order.
    pub fn weight_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for layer in &self.spec.layers {
            for name in layer.weight_refs() {
                if seen.insert(name) {
                    out.push(name.to_string());
                }
            }
        }
        out
    }

    /// Same architecture, different tensors.
    pub fn with_weights(&self, weights: Weights) -> Result<Self> {
        Self::new(self.spec.clone(), weights)
    }

    /// `‖θ − θ'‖∞` over the quantizable weights of two networks sharing a spec.
    pub fn weight_distance(&self, other: &Network) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::Precondition("networks have different architectures".into()));
        }
        let mut d = 0.0f64;
        for name in self.weight_names() {
            d = d.max(self.tensor(&name)?.max_abs_diff(other.tensor(&name)?)?);
        }
        Ok(d)
    }
}

/// Uniform `±1/√fan_in` initialization of every tensor a spec references.
pub fn random_weights(spec: &NetworkSpec, seed: u64) -> Result<Weights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Weights::new();
    let mut fill = |name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
        if weights.contains_key(name) {
            return Ok(());
        }
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        weights.insert(name.to_string(), Tensor::new(shape, data)?);
        Ok::<_, Error>(())
    };
    for layer in &spec.layers {
        match layer {
            LayerSpec::Dense(d) => {
                fill(&d.weight, vec![d.out_features, d.in_features], d.in_features, &mut rng)?;
                if let Some(b) = &d.bias {
                    fill(b, vec![d.out_features], d.in_features, &mut rng)?;
                }
            }
            other => {
                for c in other.convolutions() {
                    let fan_in = c.in_ch / c.groups.max(1) * c.kernel * c.kernel;
                    fill(&c.weight, c.weight_shape(), fan_in, &mut rng)?;
                }
            }
        }
    }
    Ok(weights)
}

/// Built-in MNIST-shaped MLPs (784 inputs, 10 outputs).
pub const BUILTIN_MLPS: [(&str, &[usize]); 4] = [
    ("mlp5", &[1024, 512, 256, 128]),
    ("mlp7", &[1024, 512, 256, 128, 64, 32]),
    ("mlp9", &[1024, 512, 256, 128, 128, 64, 64, 32]),
    ("mlp11", &[1024, 512, 512, 256, 256, 128, 128, 64, 64, 32]),
];

/// One of the built-in MLPs: dense layers separated by ReLU, logits output.
///
/// Tensors are named `fc{i}.weight` / `fc{i}.bias` (1-based).
pub fn builtin_architecture(name: &str, with_bias: bool) -> Result<NetworkSpec> {
    let (_, hidden) =
        BUILTIN_MLPS.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownArchitecture(name.to_string()))?;
    Ok(mlp_spec(784, hidden, 10, ActivationKind::Relu, with_bias))
}

/// Dense chain `inputs → hidden… → outputs` with `activation` between layers.
pub fn mlp_spec(
    inputs: usize,
    hidden: &[usize],
    outputs: usize,
    activation: ActivationKind,
    with_bias: bool,
) -> NetworkSpec {
    let widths: Vec<usize> = core::iter::once(inputs).chain(hidden.iter().copied()).chain([outputs]).collect();
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        if i > 0 {
            layers.push(LayerSpec::Activation { kind: activation });
        }
        layers.push(LayerSpec::Dense(Dense {
            in_features: w[0],
            out_features: w[1],
            has_bias: with_bias,
            weight: format!("fc{}.weight", i + 1),
            bias: with_bias.then(|| format!("fc{}.bias", i + 1)),
        }));
    }
    NetworkSpec::new(vec![inputs], layers)
}
