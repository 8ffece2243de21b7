//! Post-training weight quantization and cross-layer equalization.
//!
//! Weights are quantized per tensor onto the symmetric grid `η·ℤ` with
//! `η = max|w| / (2ⁿ − 1)`. Biases are never touched, so a network and its
//! quantized copy always share biases.
//!
//! `θ/η` is computed in floating point, so a weight that sits on the grid can
//! land an ulp below its integer (`0.3 / 0.1 = 2.9999999999999996`). Ratios
//! within a few ulps of an integer, or of a half-integer when rounding, are
//! snapped before flooring or rounding. The price is that the floor and round
//! error intervals hold up to that same few-ulp slack.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{Engine, LinearOp, Sampler};
use crate::math;
use crate::model::{LayerSpec, Network, Weights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "lowercase"))]
pub enum RoundingMode {
    #[default]
    Floor,
    Round,
    AdaRound,
}

impl RoundingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Floor => "floor",
            Self::Round => "round",
            Self::AdaRound => "adaround",
        }
    }
}

impl core::str::FromStr for RoundingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor" => Ok(Self::Floor),
            "round" => Ok(Self::Round),
            "adaround" => Ok(Self::AdaRound),
            other => Err(Error::Precondition(alloc::format!("unknown rounding mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdaRoundConfig {
    pub calib_count: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

impl Default for AdaRoundConfig {
    fn default() -> Self {
        Self { calib_count: 256, steps: 15, learning_rate: 1e-3, lambda: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct QuantConfig {
    pub bits: u32,
    pub mode: RoundingMode,
    pub adaround: AdaRoundConfig,
    pub seed: u64,
}

impl QuantConfig {
    pub fn new(bits: u32, mode: RoundingMode) -> Self {
        Self { bits, mode, adaround: AdaRoundConfig::default(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::Precondition("bit width must be at least 1".into()));
        }
        let a = &self.adaround;
        if self.mode == RoundingMode::AdaRound
            && !(a.calib_count > 0 && a.steps > 0 && a.learning_rate > 0.0 && a.lambda > 0.0)
        {
            return Err(Error::Precondition("adaptive rounding parameters must be positive".into()));
        }
        Ok(())
    }
}

/// `η = max|w| / (2ⁿ − 1)`; zero exactly when `w` is all zeros.
pub fn step_size(w: &Tensor, bits: u32) -> f64 {
    w.max_abs() / (math::exp2(f64::from(bits)) - 1.0)
}

fn snap_tolerance(r: f64) -> f64 {
    4.0 * f64::EPSILON * r.abs().max(1.0)
}

/// `⌊θ/η⌋` with near-integer ratios snapped.
fn floor_index(theta: f64, eta: f64) -> f64 {
    let r = theta / eta;
    let nearest = math::round(r);
    if (r - nearest).abs() <= snap_tolerance(r) {
        nearest
    } else {
        math::floor(r)
    }
}

/// `θ/η` rounded to the nearest integer, ties away from zero.
fn round_index(theta: f64, eta: f64) -> f64 {
    let r = theta / eta;
    let tol = snap_tolerance(r);
    let nearest = math::round(r);
    if (r - nearest).abs() <= tol {
        return nearest;
    }
    let lower = math::floor(r);
    if (r - (lower + 0.5)).abs() <= tol {
        return if r >= 0.0 { lower + 1.0 } else { lower };
    }
    nearest
}

fn on_grid(theta: &Tensor, eta: f64, index: impl Fn(f64, f64) -> f64) -> Tensor {
    if eta == 0.0 {
        return theta.clone();
    }
    theta.map(|t| index(t, eta) * eta).expect("grid values of finite weights are finite")
}

/// `⌊θ/η⌋·η`; the identity when `η = 0`.
pub fn quantize_floor(theta: &Tensor, eta: f64) -> Tensor {
    on_grid(theta, eta, floor_index)
}

/// `round(θ/η)·η` with ties away from zero; the identity when `η = 0`.
pub fn quantize_round(theta: &Tensor, eta: f64) -> Tensor {
    on_grid(theta, eta, round_index)
}

/// Outcome of adaptive rounding on one weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaRoundResult {
    pub weights: Tensor,
    /// Binarized offsets `h_i ∈ {0, 1}` added to `⌊θ/η⌋`.
    pub offsets: Vec<u8>,
    /// False when plain floor quantization was kept because it fit better.
    pub used_offsets: bool,
    pub calib_mse: f64,
    pub floor_mse: f64,
}

/// Adaptive rounding of one layer with its per-tensor step size.
pub fn adaround_layer(
    theta: &Tensor,
    op: LinearOp,
    calib_inputs: &[Vec<f64>],
    cfg: &QuantConfig,
) -> Result<AdaRoundResult> {
    cfg.validate()?;
    adaround_with_step(theta, op, calib_inputs, step_size(theta, cfg.bits), &cfg.adaround)
}

/// Adaptive rounding with an explicit step `η`.
///
/// Learns `σ(α_i) ∈ (0, 1)` so that `(⌊θ/η⌋ + σ(α))·η` reproduces the layer's
/// pre-bias outputs on the calibration inputs, minimizing
/// `MSE + λ·Σ(σ(α_i) − 0.5)²` with Adam. The offsets start at the fractional
/// parts of `θ/η` (clamped to `[0.01, 0.99]`) and are binarized at 0.5 at the
/// end; the floor grid point is returned instead if it fits the calibration
/// set strictly better.
pub fn adaround_with_step(
    theta: &Tensor,
    op: LinearOp,
    calib_inputs: &[Vec<f64>],
    eta: f64,
    cfg: &AdaRoundConfig,
) -> Result<AdaRoundResult> {
    if calib_inputs.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let expected_w = match op {
        LinearOp::Dense { rows, cols } => rows * cols,
        LinearOp::Conv(g) => g.weight_len(),
    };
    if theta.len() != expected_w {
        return Err(Error::ShapeMismatch(alloc::format!(
            "weight has {} elements, the layer needs {expected_w}",
            theta.len()
        )));
    }
    if let Some(x) = calib_inputs.iter().find(|x| x.len() != op.input_len()) {
        return Err(Error::ShapeMismatch(alloc::format!(
            "calibration input has {} elements, the layer takes {}",
            x.len(),
            op.input_len()
        )));
    }
    let n = theta.len();
    if eta == 0.0 {
        return Ok(AdaRoundResult {
            weights: theta.clone(),
            offsets: vec![0; n],
            used_offsets: false,
            calib_mse: 0.0,
            floor_mse: 0.0,
        });
    }

    let w = theta.data();
    let base: Vec<f64> = w.iter().map(|&t| floor_index(t, eta)).collect();
    let targets: Vec<Vec<f64>> = calib_inputs.iter().map(|x| op.apply(w, x)).collect();
    let denom = (calib_inputs.len() * op.output_len()).max(1) as f64;
    let mse = |q: &[f64]| -> f64 {
        let mut s = 0.0;
        for (x, t) in calib_inputs.iter().zip(&targets) {
            s += op.apply(q, x).iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        s / denom
    };

    let mut alpha: Vec<f64> = w
        .iter()
        .zip(&base)
        .map(|(&t, &b)| {
            let p = (t / eta - b).clamp(0.01, 0.99);
            math::ln(p / (1.0 - p))
        })
        .collect();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut grad_w = vec![0.0; n];
    let mut q = vec![0.0; n];
    for step in 1..=cfg.steps {
        let s: Vec<f64> = alpha.iter().map(|&a| math::sigmoid(a)).collect();
        for i in 0..n {
            q[i] = (base[i] + s[i]) * eta;
        }
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, t) in calib_inputs.iter().zip(&targets) {
            let y = op.apply(&q, x);
            let resid: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>();
            let g: Vec<f64> = resid.iter().map(|r| 2.0 * r / denom).collect();
            op.accumulate_weight_grad(x, &g, &mut grad_w);
        }
        loss = loss / denom + cfg.lambda * s.iter().map(|p| (p - 0.5) * (p - 0.5)).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let (c1, c2) = (1.0 - libm::pow(beta1, step as f64), 1.0 - libm::pow(beta2, step as f64));
        for i in 0..n {
            let ds = s[i] * (1.0 - s[i]);
            let g = grad_w[i] * eta * ds + cfg.lambda * 2.0 * (s[i] - 0.5) * ds;
            if !g.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            alpha[i] -= cfg.learning_rate * (m[i] / c1) / (math::sqrt(v[i] / c2) + eps);
        }
    }

    let offsets: Vec<u8> = alpha.iter().map(|&a| u8::from(math::sigmoid(a) >= 0.5)).collect();
    let binarized: Vec<f64> = base.iter().zip(&offsets).map(|(b, &h)| (b + f64::from(h)) * eta).collect();
    let floored: Vec<f64> = base.iter().map(|b| b * eta).collect();
    let (calib_mse, floor_mse) = (mse(&binarized), mse(&floored));
    let used_offsets = calib_mse <= floor_mse;
    let (data, offsets, calib_mse) =
        if used_offsets { (binarized, offsets, calib_mse) } else { (floored, vec![0; n], floor_mse) };
    Ok(AdaRoundResult {
        weights: Tensor::new(theta.shape().to_vec(), data)?,
        offsets,
        used_offsets,
        calib_mse,
        floor_mse,
    })
}

/// A quantized network together with what was done to it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub network: Network,
    pub config: QuantConfig,
    /// `‖θ − θ'‖∞` over all quantized tensors.
    pub dtheta: f64,
    /// Step size per weight tensor.
    pub steps: BTreeMap<String, f64>,
}

/// Quantizes every weight tensor of `net` (biases untouched).
///
/// Adaptive rounding calibrates each tensor on its inputs inside the
/// full-precision network, fed with `calib` or, when absent, with
/// `calib_count` uniform samples from the input domain.
pub fn quantize_network(net: &Network, cfg: &QuantConfig, calib: Option<&[Vec<f64>]>) -> Result<QuantizedNetwork> {
    cfg.validate()?;
    let names = net.weight_names();
    let mut layer_inputs: BTreeMap<String, (LinearOp, Vec<Vec<f64>>)> = BTreeMap::new();
    if cfg.mode == RoundingMode::AdaRound {
        let engine = Engine::new(net)?;
        let sampled: Vec<Vec<f64>>;
        let inputs = match calib {
            Some(c) => c,
            None => {
                let s = Sampler::new(net.spec.domain_d, net.spec.input_len(), cfg.seed, cfg.adaround.calib_count);
                sampled = s.samples().collect();
                &sampled
            }
        };
        for x in inputs.iter().take(cfg.adaround.calib_count) {
            engine.run_visiting(x, |name, op, input| {
                let entry = layer_inputs.entry(String::from(name)).or_insert_with(|| (op, Vec::new()));
                if entry.0 == op {
                    entry.1.push(input.to_vec());
                }
            })?;
        }
    }

    let mut weights: Weights = net.weights.clone();
    let mut steps = BTreeMap::new();
    let mut dtheta = 0.0f64;
    for name in names {
        let theta = net.tensor(&name)?;
        let eta = step_size(theta, cfg.bits);
        let q = match cfg.mode {
            RoundingMode::Floor => quantize_floor(theta, eta),
            RoundingMode::Round => quantize_round(theta, eta),
            RoundingMode::AdaRound => {
                let (op, inputs) = layer_inputs.get(&name).ok_or(Error::EmptyCalibration)?;
                adaround_with_step(theta, *op, inputs, eta, &cfg.adaround)?.weights
            }
        };
        dtheta = dtheta.max(theta.max_abs_diff(&q)?);
        steps.insert(name.clone(), eta);
        weights.insert(name, q);
    }
    Ok(QuantizedNetwork { network: net.with_weights(weights)?, config: *cfg, dtheta, steps })
}

/// Channel-wise scales that equalize `r1` and `r2`: `s_i = √(r1_i·r2_i)/r1_i`,
/// and 1 for a channel where either range is zero.
pub fn equalization_scales(r1: &[f64], r2: &[f64]) -> Vec<f64> {
    r1.iter().zip(r2).map(|(&a, &b)| if a > 0.0 && b > 0.0 { math::sqrt(a * b) / a } else { 1.0 }).collect()
}

/// Equalized dense pair `W1 (m×n)`, `b1 (m)`, `W2 (k×m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedPair {
    pub w1: Tensor,
    pub b1: Option<Tensor>,
    pub w2: Tensor,
    pub scales: Vec<f64>,
}

/// Rescales hidden channel `i` by `s_i` in `W1`/`b1` and by `1/s_i` in `W2`.
/// Preserves `W2·σ(W1 x + b1)` for a positively homogeneous `σ`.
pub fn cle_equalize_pair(w1: &Tensor, b1: Option<&Tensor>, w2: &Tensor) -> Result<EqualizedPair> {
    let (m, n) = (w1.rows()?, w1.cols()?);
    let k = w2.rows()?;
    if w2.cols()? != m {
        return Err(Error::ShapeMismatch(alloc::format!("W1 has {m} rows but W2 has {} columns", w2.cols()?)));
    }
    if let Some(b) = b1 {
        if b.len() != m {
            return Err(Error::ShapeMismatch(alloc::format!("bias of length {} for {m} channels", b.len())));
        }
    }
    let r1: Vec<f64> =
        (0..m).map(|i| w1.data()[i * n..(i + 1) * n].iter().fold(0.0, |a: f64, v| a.max(v.abs()))).collect();
    let r2: Vec<f64> = (0..m).map(|i| (0..k).fold(0.0, |a: f64, o| a.max(w2.data()[o * m + i].abs()))).collect();
    let scales = equalization_scales(&r1, &r2);
    let mut a = w1.data().to_vec();
    let mut c = w2.data().to_vec();
    for (i, &s) in scales.iter().enumerate() {
        a[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= s);
        (0..k).for_each(|o| c[o * m + i] /= s);
    }
    let b1 = b1.map(|b| Tensor::vector(b.data().iter().zip(&scales).map(|(v, s)| v * s).collect())).transpose()?;
    Ok(EqualizedPair { w1: Tensor::new(vec![m, n], a)?, b1, w2: Tensor::new(vec![k, m], c)?, scales })
}

/// Equalizes consecutive convolutions `W1`, `W2` over the channels between
/// them. Output channel `i` of `W1` is input channel `i` of `W2`, which with
/// groups only reaches the filters of its own group.
pub fn cle_equalize_conv_pair(
    c1: &crate::model::Conv2d,
    w1: &Tensor,
    c2: &crate::model::Conv2d,
    w2: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    if c1.out_ch != c2.in_ch || w1.shape() != c1.weight_shape().as_slice() || w2.shape() != c2.weight_shape().as_slice()
    {
        return Err(Error::ShapeMismatch("convolutions do not chain".into()));
    }
    let m = c1.out_ch;
    let per1 = w1.len() / m;
    let (cg2, kk2) = (c2.in_ch / c2.groups, c2.kernel * c2.kernel);
    let og2 = c2.out_ch / c2.groups;
    // Entries of W2 touched by input channel i.
    let taps2 = |i: usize| {
        let g = i / cg2;
        let local = i % cg2;
        (g * og2..(g + 1) * og2).flat_map(move |o| {
            let base = (o * cg2 + local) * kk2;
            base..base + kk2
        })
    };
    let r1: Vec<f64> =
        (0..m).map(|i| w1.data()[i * per1..(i + 1) * per1].iter().fold(0.0, |a: f64, v| a.max(v.abs()))).collect();
    let r2: Vec<f64> = (0..m).map(|i| taps2(i).fold(0.0, |a: f64, j| a.max(w2.data()[j].abs()))).collect();
    let scales = equalization_scales(&r1, &r2);
    let mut a = w1.data().to_vec();
    let mut c = w2.data().to_vec();
    for (i, &s) in scales.iter().enumerate() {
        a[i * per1..(i + 1) * per1].iter_mut().for_each(|v| *v *= s);
        for j in taps2(i) {
            c[j] /= s;
        }
    }
    Ok((Tensor::new(w1.shape().to_vec(), a)?, Tensor::new(w2.shape().to_vec(), c)?, scales))
}

/// Result of equalizing a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub network: Network,
    /// `(first layer index, second layer index, scales)` per equalized pair.
    pub pairs: Vec<(usize, usize, Vec<f64>)>,
    /// Pairs left alone because their activation is not positively homogeneous.
    pub skipped: Vec<(usize, usize)>,
}

/// Equalizes every `dense → σ → dense` and `conv → σ → conv` pair in order,
/// where `σ` is zero or more positively homogeneous activations. Tensors used
/// by more than one layer are left alone.
pub fn equalize_network(net: &Network) -> Result<Equalized> {
    let layers = &net.spec.layers;
    let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
    for l in layers {
        for name in l.weight_refs() {
            *uses.entry(name).or_default() += 1;
        }
    }
    let private = |name: &str| uses.get(name) == Some(&1);

    let mut weights = net.weights.clone();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..layers.len() {
        let mut j = i + 1;
        let mut homogeneous = true;
        while let Some(LayerSpec::Activation { kind }) = layers.get(j) {
            homogeneous &= kind.is_positively_homogeneous();
            j += 1;
        }
        let Some(next) = layers.get(j) else { continue };
        match (&layers[i], next) {
            (LayerSpec::Dense(a), LayerSpec::Dense(b)) if private(&a.weight) && private(&b.weight) => {
                if !homogeneous {
                    skipped.push((i, j));
                    continue;
                }
                let bias = a.bias.as_ref().map(|n| weights[n].clone());
                let eq = cle_equalize_pair(&weights[&a.weight], bias.as_ref(), &weights[&b.weight])?;
                weights.insert(a.weight.clone(), eq.w1);
                weights.insert(b.weight.clone(), eq.w2);
                if let (Some(name), Some(b1)) = (&a.bias, eq.b1) {
                    weights.insert(name.clone(), b1);
                }
                pairs.push((i, j, eq.scales));
            }
            (LayerSpec::Conv2d(a), LayerSpec::Conv2d(b)) if private(&a.weight) && private(&b.weight) => {
                if !homogeneous {
                    skipped.push((i, j));
                    continue;
                }
                let (w1, w2, scales) = cle_equalize_conv_pair(a, &weights[&a.weight], b, &weights[&b.weight])?;
                weights.insert(a.weight.clone(), w1);
                weights.insert(b.weight.clone(), w2);
                pairs.push((i, j, scales));
            }
            _ => {}
        }
    }
    Ok(Equalized { network: net.with_weights(weights)?, pairs, skipped })
}

/// Rejects equalization across an activation that would not commute with it.
pub fn check_homogeneous(kind: crate::model::ActivationKind) -> Result<()> {
    if kind.is_positively_homogeneous() {
        Ok(())
    } else {
        Err(Error::NotHomogeneous(kind.name()))
    }
}

/// Deterministic uniform calibration inputs for a network.
pub fn calibration_samples(net: &Network, count: usize, seed: u64) -> Vec<Vec<f64>> {
    Sampler::new(net.spec.domain_d, net.spec.input_len(), seed, count).samples().collect()
}
