//! Reference forward pass, input sampling and empirical error estimation.
//!
//! Evaluation goes through an [`Engine`], a flat execution plan built once per
//! network that borrows the weights. Feature maps are flat `(C, H, W)`
//! buffers.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::model::{ActivationKind, LayerSpec, Network, Shortcut};
use crate::norms::{block_geometries, block_parts};
use crate::tensor::{matvec_into, Tensor};

/// A weight tensor's linear map, bound to its input extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearOp {
    Dense { rows: usize, cols: usize },
    Conv(ConvGeometry),
}

impl LinearOp {
    pub fn input_len(&self) -> usize {
        match self {
            Self::Dense { cols, .. } => *cols,
            Self::Conv(g) => g.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Self::Dense { rows, .. } => *rows,
            Self::Conv(g) => g.output_len(),
        }
    }

    pub fn apply(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense { rows, cols } => {
                let mut out = vec![0.0; *rows];
                matvec_into(w, *cols, x, &mut out);
                out
            }
            Self::Conv(g) => g.forward(w, x),
        }
    }

    /// Accumulates the gradient of `⟨grad_out, W x⟩` with respect to `W`.
    pub fn accumulate_weight_grad(&self, x: &[f64], grad_out: &[f64], grad_w: &mut [f64]) {
        match self {
            Self::Dense { cols, .. } => {
                for (i, &g) in grad_out.iter().enumerate() {
                    if g != 0.0 {
                        for (gw, &xj) in grad_w[i * cols..(i + 1) * cols].iter_mut().zip(x) {
                            *gw += g * xj;
                        }
                    }
                }
            }
            Self::Conv(g) => g.accumulate_weight_grad(x, grad_out, grad_w),
        }
    }
}

#[derive(Debug, Clone)]
struct Linear<'a> {
    name: &'a str,
    op: LinearOp,
    w: &'a [f64],
}

impl Linear<'_> {
    fn run(&self, x: &[f64], visit: &mut impl FnMut(&str, LinearOp, &[f64])) -> Vec<f64> {
        visit(self.name, self.op, x);
        self.op.apply(self.w, x)
    }
}

#[derive(Debug, Clone)]
enum Step<'a> {
    Linear { linear: Linear<'a>, bias: Option<&'a [f64]> },
    Activation(ActivationKind),
    AvgPool { channels: usize, h: usize, w: usize, window: usize },
    Block { main: Vec<Linear<'a>>, shortcut: Option<Linear<'a>>, activation: ActivationKind, final_activation: bool },
}

/// Execution plan of a network.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    steps: Vec<Step<'a>>,
    input_len: usize,
    output_shape: Vec<usize>,
    /// Layers before the first weight tensor are all flattening.
    first_is_raw: bool,
}

impl<'a> Engine<'a> {
    pub fn new(net: &'a Network) -> Result<Self> {
        let shapes = net.spec.shapes()?;
        let weight = |name: &'a str, len: usize| -> Result<&'a [f64]> {
            let t = net.tensor(name)?;
            if t.len() != len {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "tensor `{name}` has {} elements, expected {len}",
                    t.len()
                )));
            }
            Ok(t.data())
        };
        let conv = |c: &'a crate::model::Conv2d, g: ConvGeometry| -> Result<Linear<'a>> {
            Ok(Linear { name: &c.weight, op: LinearOp::Conv(g), w: weight(&c.weight, g.weight_len())? })
        };

        let mut steps = Vec::with_capacity(net.spec.layers.len());
        let mut first_is_raw = true;
        let mut seen_linear = false;
        for (i, layer) in net.spec.layers.iter().enumerate() {
            let input = &shapes[i];
            match layer {
                LayerSpec::Flatten => {}
                LayerSpec::Activation { .. } | LayerSpec::AvgPool { .. } if !seen_linear => first_is_raw = false,
                _ => {}
            }
            match layer {
                LayerSpec::Dense(d) => {
                    let op = LinearOp::Dense { rows: d.out_features, cols: d.in_features };
                    let linear = Linear { name: &d.weight, op, w: weight(&d.weight, d.out_features * d.in_features)? };
                    let bias = d.bias.as_deref().map(|b| weight(b, d.out_features)).transpose()?;
                    steps.push(Step::Linear { linear, bias });
                    seen_linear = true;
                }
                LayerSpec::Conv2d(c) => {
                    let g = ConvGeometry::new(c, input[1], input[2])?;
                    steps.push(Step::Linear { linear: conv(c, g)?, bias: None });
                    seen_linear = true;
                }
                LayerSpec::Activation { kind } => steps.push(Step::Activation(*kind)),
                LayerSpec::Flatten => {}
                LayerSpec::AvgPool { window } => {
                    steps.push(Step::AvgPool { channels: input[0], h: input[1], w: input[2], window: *window })
                }
                LayerSpec::ResBlock18(_) | LayerSpec::Bottleneck(_) => {
                    let (convs, sc) = block_parts(layer);
                    let (geoms, side) = block_geometries(&convs, sc, input)?;
                    let main = convs.iter().zip(&geoms).map(|(c, g)| conv(c, *g)).collect::<Result<Vec<_>>>()?;
                    let shortcut = match (sc, side) {
                        (Shortcut::Conv2d(c), Some(g)) => Some(conv(c, g)?),
                        _ => None,
                    };
                    let (activation, final_activation) = match layer {
                        LayerSpec::ResBlock18(b) => (b.activation, true),
                        LayerSpec::Bottleneck(b) => (b.activation, b.final_activation),
                        _ => unreachable!(),
                    };
                    steps.push(Step::Block { main, shortcut, activation, final_activation });
                    if !seen_linear {
                        first_is_raw = false;
                    }
                    seen_linear = true;
                }
            }
        }
        Ok(Self {
            steps,
            input_len: net.spec.input_len(),
            output_shape: shapes.last().cloned().unwrap_or_default(),
            first_is_raw,
        })
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Forward pass over a flat input.
    pub fn run(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run_visiting(x, |_, _, _| {})
    }

    /// Forward pass that reports the input of every weight use.
    pub fn run_visiting(&self, x: &[f64], mut visit: impl FnMut(&str, LinearOp, &[f64])) -> Result<Vec<f64>> {
        if x.len() != self.input_len {
            return Err(Error::ShapeMismatch(alloc::format!(
                "input has {} elements, network expects {}",
                x.len(),
                self.input_len
            )));
        }
        let mut y = x.to_vec();
        for step in &self.steps {
            y = match step {
                Step::Linear { linear, bias } => {
                    let mut out = linear.run(&y, &mut visit);
                    if let Some(b) = bias {
                        out.iter_mut().zip(*b).for_each(|(o, b)| *o += b);
                    }
                    out
                }
                Step::Activation(kind) => {
                    y.iter_mut().for_each(|v| *v = kind.apply(*v));
                    y
                }
                Step::AvgPool { channels, h, w, window } => avg_pool(&y, *channels, *h, *w, *window),
                Step::Block { main, shortcut, activation, final_activation } => {
                    let mut z = y.clone();
                    let last = main.len() - 1;
                    for (k, linear) in main.iter().enumerate() {
                        z = linear.run(&z, &mut visit);
                        if k < last {
                            z.iter_mut().for_each(|v| *v = activation.apply(*v));
                        }
                    }
                    let side = match shortcut {
                        Some(s) => s.run(&y, &mut visit),
                        None => y,
                    };
                    z.iter_mut().zip(&side).for_each(|(a, b)| *a += b);
                    if *final_activation {
                        z.iter_mut().for_each(|v| *v = activation.apply(*v));
                    }
                    z
                }
            };
        }
        Ok(y)
    }
}

fn avg_pool(x: &[f64], channels: usize, h: usize, w: usize, window: usize) -> Vec<f64> {
    let (oh, ow) = (h / window, w / window);
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for di in 0..window {
                    let row = (c * h + i * window + di) * w + j * window;
                    s += x[row..row + window].iter().sum::<f64>();
                }
                out[(c * oh + i) * ow + j] = s * scale;
            }
        }
    }
    out
}

/// `R_θ(x)` for one input shaped like the network input.
pub fn forward(net: &Network, x: &Tensor) -> Result<Tensor> {
    if x.shape() != net.spec.input_shape.as_slice() && x.shape() != [net.spec.input_len()] {
        return Err(Error::ShapeMismatch(alloc::format!(
            "input shape {:?} does not match network input {:?}",
            x.shape(),
            net.spec.input_shape
        )));
    }
    let engine = Engine::new(net)?;
    Tensor::new(engine.output_shape.clone(), engine.run(x.data())?)
}

/// Uniform samples on `[-D, D]^N0` from a seeded stream. Sample `k` is the
/// same for every `count > k`, so estimates over growing counts are nested.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub domain: f64,
    pub input_len: usize,
    pub seed: u64,
    pub count: usize,
}

pub const DEFAULT_SAMPLES: usize = 128;

impl Sampler {
    pub fn new(domain: f64, input_len: usize, seed: u64, count: usize) -> Self {
        Self { domain, input_len, seed, count }
    }

    pub fn samples(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.domain;
        (0..self.count).map(move |_| (0..self.input_len).map(|_| rng.random_range(-d..=d)).collect())
    }
}

/// Rows of the first stage's weight difference turned into cube corners.
pub const BOOST_ROWS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalError {
    /// `max ‖R_θ(x) − R_θ'(x)‖∞` over the evaluated inputs; a lower bound on
    /// the supremum over the domain.
    pub value: f64,
    /// Index of the maximizing input: sampler order first, then boost inputs.
    pub argmax: usize,
    pub evaluated: usize,
    pub boosted: usize,
}

/// Sampled sup-norm deviation between two networks of one architecture.
///
/// With `boost`, and when the first weight layer sees the raw input, the
/// inputs `±D·sign(row)` of the heaviest rows of the first-stage weight
/// difference are added; for a single linear layer these attain the exact
/// supremum.
pub fn empirical_sup_error(
    theta: &Network,
    theta_q: &Network,
    sampler: &Sampler,
    boost: bool,
) -> Result<EmpiricalError> {
    if theta.spec != theta_q.spec {
        return Err(Error::Precondition("networks have different architectures".into()));
    }
    let a = Engine::new(theta)?;
    let b = Engine::new(theta_q)?;
    let boost_inputs = if boost { boost_inputs(&a, &b, sampler.domain) } else { Vec::new() };
    let mut best = EmpiricalError { value: 0.0, argmax: 0, evaluated: 0, boosted: boost_inputs.len() };
    for (k, x) in sampler.samples().chain(boost_inputs).enumerate() {
        let (ya, yb) = (a.run(&x)?, b.run(&x)?);
        let dev = ya.iter().zip(&yb).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        if dev > best.value {
            best.value = dev;
            best.argmax = k;
        }
        best.evaluated += 1;
    }
    Ok(best)
}

fn boost_inputs(a: &Engine<'_>, b: &Engine<'_>, domain: f64) -> Vec<Vec<f64>> {
    if !a.first_is_raw {
        return Vec::new();
    }
    let (Some(Step::Linear { linear: la, .. }), Some(Step::Linear { linear: lb, .. })) =
        (a.steps.first(), b.steps.first())
    else {
        return Vec::new();
    };
    let diff: Vec<f64> = la.w.iter().zip(lb.w).map(|(p, q)| p - q).collect();
    let n = la.op.input_len();
    let rows = la.op.output_len();
    let mut sums = vec![0.0; rows];
    let mut signs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    match la.op {
        LinearOp::Dense { cols, .. } => {
            for (i, row) in diff.chunks(cols).enumerate() {
                sums[i] = row.iter().map(|v| v.abs()).sum();
                signs[i] = row.iter().enumerate().map(|(j, v)| (j, *v)).collect();
            }
        }
        LinearOp::Conv(g) => g.for_each_tap(|o, i, w| {
            sums[o] += diff[w].abs();
            signs[o].push((i, diff[w]));
        }),
    }
    let mut order: Vec<usize> = (0..rows).filter(|&i| sums[i] > 0.0).collect();
    order.sort_by(|&i, &j| sums[j].total_cmp(&sums[i]).then(i.cmp(&j)));
    let mut out = Vec::new();
    for &row in order.iter().take(BOOST_ROWS) {
        let mut x = vec![domain; n];
        for &(j, v) in &signs[row] {
            x[j] = if v < 0.0 { -domain } else { domain };
        }
        let neg = x.iter().map(|v| -v).collect();
        out.push(x);
        out.push(neg);
    }
    out
}

/// Inputs (flattened) with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_shape: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<u16>>,
}

impl Dataset {
    pub fn new(input_shape: Vec<usize>, inputs: Vec<Vec<f64>>, labels: Option<Vec<u16>>) -> Result<Self> {
        let n: usize = input_shape.iter().product();
        if let Some(bad) = inputs.iter().find(|x| x.len() != n) {
            return Err(Error::DataLength { len: bad.len(), shape: input_shape });
        }
        if let Some(l) = &labels {
            if l.len() != inputs.len() {
                return Err(Error::ShapeMismatch(alloc::format!("{} labels for {} inputs", l.len(), inputs.len())));
            }
        }
        Ok(Self { input_shape, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if *v > y[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data.labels.as_ref().ok_or(Error::Unlabeled)?;
    if data.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let engine = Engine::new(net)?;
    let classes = engine.output_len();
    if let Some(l) = labels.iter().find(|&&l| usize::from(l) >= classes) {
        return Err(Error::Precondition(alloc::format!("label {l} is out of range for {classes} outputs")));
    }
    let mut correct = 0usize;
    for (x, &label) in data.inputs.iter().zip(labels) {
        if argmax(&engine.run(x)?) == usize::from(label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
