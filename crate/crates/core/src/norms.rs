//! Per-stage ∞-operator norms and the [`NormProfile`] the bounds consume.
//!
//! A *stage* is one linear map of the network seen as
//! `y_ℓ = φ_ℓ(V_ℓ y_{ℓ−1})` with 1-Lipschitz, zero-preserving `φ_ℓ`:
//!
//! - a dense layer or a convolution is one stage;
//! - a two-convolution residual block is two stages `V1 = [W1; I]` and
//!   `V2 = [W2, S]`, where `S` is `I` or the shortcut convolution;
//! - a bottleneck adds the middle stage `diag(W2, I)`.
//!
//! Activations, flattening and average pooling become part of `φ_ℓ` and add
//! no stage. Inside a block the activation only touches the main-branch
//! coordinates; the carried copy of the block input passes through as is.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::logspace::Log10;
use crate::model::{ActivationKind, Conv2d, LayerSpec, Network, Shortcut, Weights};
use crate::tensor::Tensor;

/// Default cap on materialized matrix entries.
pub const DEFAULT_MATERIALIZE_CAP: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize), serde(rename_all = "snake_case"))]
pub enum StageKind {
    Dense,
    Conv,
    BlockEntry,
    BlockInner,
    BlockExit,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Conv => "conv",
            Self::BlockEntry => "block_entry",
            Self::BlockInner => "block_inner",
            Self::BlockExit => "block_exit",
        }
    }
}

/// Convolution facts of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConvDescriptor {
    pub kernel: usize,
    pub in_channels: usize,
    /// Most nonzeros in a row of the stage's weight difference: `p²·c_in/groups`,
    /// plus the shortcut's taps on a block exit.
    pub row_taps: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct StageNorm {
    /// ∞-operator norm of the stage matrix (bias column included when the
    /// stage carries a bias).
    pub r: f64,
    pub width_in: usize,
    pub width_out: usize,
    pub conv: Option<ConvDescriptor>,
    /// False when `r` is an upper bound rather than the exact norm.
    pub exact: bool,
    pub layer_index: usize,
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct NormProfile {
    pub stages: Vec<StageNorm>,
    pub domain: f64,
    pub has_bias: bool,
}

impl NormProfile {
    /// A profile of bare dense stages, for closed-form use and tests.
    pub fn from_norms(r: &[f64], widths_in: &[usize], width_out: usize, domain: f64, has_bias: bool) -> Self {
        assert_eq!(r.len(), widths_in.len(), "one width per stage");
        let stages = r
            .iter()
            .zip(widths_in)
            .enumerate()
            .map(|(i, (&r, &w))| StageNorm {
                r,
                width_in: w,
                width_out: widths_in.get(i + 1).copied().unwrap_or(width_out),
                conv: None,
                exact: true,
                layer_index: i,
                kind: StageKind::Dense,
            })
            .collect();
        Self { stages, domain, has_bias }
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn r(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.r).collect()
    }

    /// Largest width over inputs of every stage and the network output.
    pub fn max_width(&self) -> usize {
        let out = self.stages.last().map_or(0, |s| s.width_out);
        self.stages.iter().map(|s| s.width_in).chain([out]).max().unwrap_or(0)
    }

    pub fn sum_widths_in(&self) -> usize {
        self.stages.iter().map(|s| s.width_in).sum()
    }

    pub fn is_pure_conv(&self) -> bool {
        !self.stages.is_empty() && self.stages.iter().all(|s| s.conv.is_some())
    }

    /// `Σ row_taps` over the stages, `None` unless every stage is convolutional.
    pub fn sum_row_taps(&self) -> Option<usize> {
        self.stages.iter().map(|s| s.conv.map(|c| c.row_taps)).sum()
    }

    pub fn all_exact(&self) -> bool {
        self.stages.iter().all(|s| s.exact)
    }

    /// Elementwise max of two profiles of the same architecture, so that one
    /// `r_ℓ` dominates both networks.
    pub fn shared(&self, other: &NormProfile) -> Result<NormProfile> {
        let same_layout = self.stages.len() == other.stages.len()
            && self.has_bias == other.has_bias
            && self.stages.iter().zip(&other.stages).all(|(a, b)| {
                a.width_in == b.width_in && a.width_out == b.width_out && a.conv == b.conv && a.kind == b.kind
            });
        if !same_layout {
            return Err(Error::Precondition("norm profiles describe different architectures".into()));
        }
        let stages = self
            .stages
            .iter()
            .zip(&other.stages)
            .map(|(a, b)| StageNorm { r: a.r.max(b.r), exact: a.exact && b.exact, ..a.clone() })
            .collect();
        Ok(NormProfile { stages, domain: self.domain, has_bias: self.has_bias })
    }
}

/// Max row sum of `|W|`, with `|b_i|` added to row `i` when `include_bias`.
pub fn dense_norm(w: &Tensor, bias: Option<&Tensor>, include_bias: bool) -> Result<f64> {
    let (rows, cols) = (w.rows()?, w.cols()?);
    let bias = match bias {
        Some(b) if include_bias => {
            if b.len() != rows {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "bias of length {} for a matrix with {rows} rows",
                    b.len()
                )));
            }
            Some(b.data())
        }
        _ => None,
    };
    let mut best = 0.0f64;
    for i in 0..rows {
        let mut s: f64 = w.data()[i * cols..(i + 1) * cols].iter().map(|v| v.abs()).sum();
        if let Some(b) = bias {
            s += b[i].abs();
        }
        best = best.max(s);
    }
    Ok(best)
}

fn spatial(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [_, h, w] => Ok((h, w)),
        _ => Err(Error::Dimension { expected: 3, shape: shape.to_vec() }),
    }
}

/// Exact norm of a convolution's Toeplitz matrix for a `(C, H, W)` input.
pub fn conv_norm_implicit(conv: &Conv2d, weight: &Tensor, input_shape: &[usize]) -> Result<f64> {
    let (h, w) = spatial(input_shape)?;
    let g = ConvGeometry::new(conv, h, w)?;
    check_conv_weight(conv, weight)?;
    Ok(g.opnorm_inf(weight.data()))
}

/// The Toeplitz matrix of a convolution, refused above `cap` entries.
pub fn conv_matrix(conv: &Conv2d, weight: &Tensor, input_shape: &[usize], cap: usize) -> Result<Tensor> {
    let (h, w) = spatial(input_shape)?;
    let g = ConvGeometry::new(conv, h, w)?;
    check_conv_weight(conv, weight)?;
    g.toeplitz(weight.data(), cap)
}

fn check_conv_weight(conv: &Conv2d, weight: &Tensor) -> Result<()> {
    if weight.shape() != conv.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "convolution weight has shape {:?}, expected {:?}",
            weight.shape(),
            conv.weight_shape()
        )));
    }
    Ok(())
}

/// Stage norms of a block from its constituent norms: every stage but the
/// last is `max(1, ‖W_k‖)`, the last is `‖W_last‖ + 1` for an identity
/// shortcut and `‖W_last‖ + ‖W_s‖` otherwise.
pub fn block_stage_norms(main: &[f64], shortcut: Option<f64>) -> Vec<f64> {
    block_norms_with(main, shortcut, 1.0)
}

/// `identity` is the norm of the carried identity block: 1 for a network,
/// 0 for the difference of two networks sharing that block.
fn block_norms_with(main: &[f64], shortcut: Option<f64>, identity: f64) -> Vec<f64> {
    let (&last, inner) = main.split_last().expect("a block has at least one convolution");
    inner.iter().map(|&n| n.max(identity)).chain([last + shortcut.unwrap_or(identity)]).collect()
}

/// Geometries of a block's main convolutions and of its shortcut.
pub(crate) fn block_geometries(
    main: &[&Conv2d],
    shortcut: &Shortcut,
    input_shape: &[usize],
) -> Result<(Vec<ConvGeometry>, Option<ConvGeometry>)> {
    let (mut h, mut w) = spatial(input_shape)?;
    let mut out = Vec::with_capacity(main.len());
    for c in main {
        let g = ConvGeometry::new(c, h, w)?;
        (h, w) = (g.out_h, g.out_w);
        out.push(g);
    }
    let (h0, w0) = spatial(input_shape)?;
    let side = match shortcut {
        Shortcut::Identity => None,
        Shortcut::Conv2d(c) => Some(ConvGeometry::new(c, h0, w0)?),
    };
    Ok((out, side))
}

fn conv_weight<'a>(weights: &'a Weights, conv: &Conv2d) -> Result<&'a Tensor> {
    let t = weights.get(&conv.weight).ok_or_else(|| Error::MissingTensor(conv.weight.clone()))?;
    check_conv_weight(conv, t)?;
    Ok(t)
}

fn stages_with(net: &Network, include_bias: bool, identity: f64) -> Result<Vec<StageNorm>> {
    let shapes = net.spec.shapes()?;
    let mut stages = Vec::new();
    for (i, layer) in net.spec.layers.iter().enumerate() {
        let input = &shapes[i];
        let at = |e: Error| match e {
            Error::Layer { .. } => e,
            other => Error::Layer { layer: i, message: alloc::format!("{other}") },
        };
        match layer {
            LayerSpec::Dense(d) => {
                let w = net.tensor(&d.weight)?;
                let b = d.bias.as_ref().map(|b| net.tensor(b)).transpose()?;
                stages.push(StageNorm {
                    r: dense_norm(w, b, include_bias && d.has_bias).map_err(at)?,
                    width_in: d.in_features,
                    width_out: d.out_features,
                    conv: None,
                    exact: true,
                    layer_index: i,
                    kind: StageKind::Dense,
                });
            }
            LayerSpec::Conv2d(c) => {
                let (h, w) = spatial(input).map_err(at)?;
                let g = ConvGeometry::new(c, h, w).map_err(at)?;
                stages.push(StageNorm {
                    r: g.opnorm_inf(conv_weight(&net.weights, c)?.data()),
                    width_in: g.input_len(),
                    width_out: g.output_len(),
                    conv: Some(ConvDescriptor { kernel: c.kernel, in_channels: c.in_ch, row_taps: g.row_taps() }),
                    exact: true,
                    layer_index: i,
                    kind: StageKind::Conv,
                });
            }
            LayerSpec::ResBlock18(_) | LayerSpec::Bottleneck(_) => {
                let (main, shortcut) = block_parts(layer);
                let (geoms, side) = block_geometries(&main, shortcut, input).map_err(at)?;
                let mut norms = Vec::with_capacity(main.len());
                for (c, g) in main.iter().zip(&geoms) {
                    norms.push(g.opnorm_inf(conv_weight(&net.weights, c)?.data()));
                }
                let side_norm = match (shortcut, &side) {
                    (Shortcut::Conv2d(c), Some(g)) => Some(g.opnorm_inf(conv_weight(&net.weights, c)?.data())),
                    _ => None,
                };
                let r = block_norms_with(&norms, side_norm, identity);
                let carried = input.iter().product::<usize>();
                let last = main.len() - 1;
                for (k, (c, g)) in main.iter().zip(&geoms).enumerate() {
                    let width_in = if k == 0 { carried } else { geoms[k - 1].output_len() + carried };
                    let (width_out, row_taps, kind) = if k == last {
                        let taps = g.row_taps() + side.map_or(0, |s| s.row_taps());
                        (g.output_len(), taps, StageKind::BlockExit)
                    } else {
                        let kind = if k == 0 { StageKind::BlockEntry } else { StageKind::BlockInner };
                        (g.output_len() + carried, g.row_taps(), kind)
                    };
                    stages.push(StageNorm {
                        r: r[k],
                        width_in,
                        width_out,
                        conv: Some(ConvDescriptor { kernel: c.kernel, in_channels: c.in_ch, row_taps }),
                        exact: k != last || side.is_none(),
                        layer_index: i,
                        kind,
                    });
                }
            }
            LayerSpec::Activation { .. } | LayerSpec::Flatten | LayerSpec::AvgPool { .. } => {}
        }
    }
    Ok(stages)
}

/// Main convolutions and shortcut of a block layer.
pub(crate) fn block_parts(layer: &LayerSpec) -> (Vec<&Conv2d>, &Shortcut) {
    match layer {
        LayerSpec::ResBlock18(b) => (vec![&b.conv1, &b.conv2], &b.shortcut),
        LayerSpec::Bottleneck(b) => (vec![&b.conv1, &b.conv2, &b.conv3], &b.shortcut),
        _ => unreachable!("not a block layer"),
    }
}

/// One record per linear stage, in network order. Biased dense stages use the
/// norm of the bias-augmented matrix.
pub fn profile_of(net: &Network) -> Result<NormProfile> {
    Ok(NormProfile { stages: stages_with(net, true, 1.0)?, domain: net.spec.domain_d, has_bias: net.spec.has_bias() })
}

/// Stage norms with every bias column dropped.
pub fn bias_free_norms(net: &Network) -> Result<Vec<f64>> {
    Ok(stages_with(net, false, 1.0)?.into_iter().map(|s| s.r).collect())
}

/// Norms of the stage-wise differences `V_ℓ − V'_ℓ`. Biases and carried
/// identity blocks are shared and cancel. Block exits with a convolutional
/// shortcut use `‖ΔW‖ + ‖ΔW_s‖`.
pub fn difference_norms(a: &Network, b: &Network) -> Result<Vec<f64>> {
    if a.spec != b.spec {
        return Err(Error::Precondition("networks have different architectures".into()));
    }
    let mut diff = a.weights.clone();
    for name in a.weight_names() {
        let d = a.tensor(&name)?.sub(b.tensor(&name)?)?;
        diff.insert(name, d);
    }
    let net = Network { spec: a.spec.clone(), weights: diff };
    Ok(stages_with(&net, false, 0.0)?.into_iter().map(|s| s.r).collect())
}

/// Upper bound on `‖R_θ(x̃)‖∞` over `‖x‖∞ ≤ x_norm` for a network whose
/// stage norms (bias columns included) are `r`:
///
/// ```text
/// max( max_{ℓ=2..L} ∏_{s=ℓ}^{L} r_s ,  ∏_{s=1}^{L} r_s · max(x_norm, 1) )
/// ```
///
/// The appended constant coordinate makes `‖x̃‖∞ = max(‖x‖∞, 1)`.
pub fn output_norm_bound(r: &[f64], x_norm: f64) -> Log10 {
    let mut best = Log10::ZERO;
    let mut suffix = Log10::ONE;
    for (s, &rs) in r.iter().enumerate().rev() {
        suffix = suffix * Log10::of(rs);
        if s >= 1 {
            best = best.max(suffix);
        }
    }
    best.max(suffix * Log10::of(x_norm.max(1.0)))
}

/// A block rewritten as explicit stage matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedBlock {
    pub stages: Vec<Tensor>,
    /// Leading rows of each stage output that belong to the main branch; the
    /// activation touches only these.
    pub main_rows: Vec<usize>,
    pub activation: ActivationKind,
    pub final_activation: bool,
}

impl StagedBlock {
    /// Builds `[W1; I]`, `diag(W_k, I)`…, `[W_last, S]` from the main-branch
    /// matrices and an optional shortcut matrix (`None` means identity).
    pub fn from_matrices(
        main: &[Tensor],
        shortcut: Option<&Tensor>,
        activation: ActivationKind,
        final_activation: bool,
        cap: usize,
    ) -> Result<Self> {
        let [first, _, ..] = main else {
            return Err(Error::Precondition("a block needs at least two matrices".into()));
        };
        let n = first.cols()?;
        let mut prev = n;
        for w in main {
            if w.cols()? != prev {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "block matrix with {} columns follows an output of {prev}",
                    w.cols()?
                )));
            }
            prev = w.rows()?;
        }
        let m_last = prev;
        let side_ok = match shortcut {
            None => m_last == n,
            Some(s) => s.shape() == [m_last, n],
        };
        if !side_ok {
            return Err(Error::ShapeMismatch("shortcut does not map the block input onto its output".into()));
        }
        let mut size = 0usize;
        let mut widths = vec![n];
        for w in main {
            widths.push(w.rows()?);
        }
        let depth = main.len();
        for k in 0..depth {
            let rows = if k + 1 == depth { m_last } else { widths[k + 1] + n };
            let cols = if k == 0 { n } else { widths[k] + n };
            size = size.saturating_add(rows.saturating_mul(cols));
        }
        if size > cap {
            return Err(Error::SizeCap { size, cap });
        }

        let mut stages = Vec::with_capacity(depth);
        let mut main_rows = Vec::with_capacity(depth);
        for (k, w) in main.iter().enumerate() {
            let (wr, wc) = (w.rows()?, w.cols()?);
            let last = k + 1 == depth;
            let rows = if last { wr } else { wr + n };
            let cols = if k == 0 { n } else { wc + n };
            let mut m = vec![0.0; rows * cols];
            for i in 0..wr {
                m[i * cols..i * cols + wc].copy_from_slice(w.row(i)?);
            }
            if last {
                // Carried input meets the shortcut.
                for i in 0..wr {
                    for j in 0..n {
                        let v = match shortcut {
                            None if i == j => 1.0,
                            None => 0.0,
                            Some(s) => s.data()[i * n + j],
                        };
                        m[i * cols + (cols - n) + j] = v;
                    }
                }
            } else {
                for j in 0..n {
                    m[(wr + j) * cols + (cols - n) + j] = 1.0;
                }
            }
            stages.push(Tensor::matrix(rows, cols, m)?);
            main_rows.push(wr);
        }
        Ok(Self { stages, main_rows, activation, final_activation })
    }

    /// Evaluates the staged form with partial activations.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        let last = self.stages.len() - 1;
        for (k, v) in self.stages.iter().enumerate() {
            let cols = v.cols()?;
            if y.len() != cols {
                return Err(Error::ShapeMismatch(alloc::format!("stage {k} expects {cols} inputs, got {}", y.len())));
            }
            let mut out = vec![0.0; v.rows()?];
            crate::tensor::matvec_into(v.data(), cols, &y, &mut out);
            let touched = if k < last {
                self.main_rows[k]
            } else if self.final_activation {
                out.len()
            } else {
                0
            };
            for o in &mut out[..touched] {
                *o = self.activation.apply(*o);
            }
            y = out;
        }
        Ok(y)
    }
}

/// Materializes a block layer acting on `input_shape` (`(C, H, W)`).
pub fn materialize_block(
    layer: &LayerSpec,
    weights: &Weights,
    input_shape: &[usize],
    cap: usize,
) -> Result<StagedBlock> {
    let (activation, final_activation) = match layer {
        LayerSpec::ResBlock18(b) => (b.activation, true),
        LayerSpec::Bottleneck(b) => (b.activation, b.final_activation),
        other => {
            return Err(Error::Precondition(alloc::format!("{} is not a block layer", other.kind_name())));
        }
    };
    let (main, shortcut) = block_parts(layer);
    let (geoms, side) = block_geometries(&main, shortcut, input_shape)?;
    let mut mats = Vec::with_capacity(main.len());
    for (c, g) in main.iter().zip(&geoms) {
        mats.push(g.toeplitz(conv_weight(weights, c)?.data(), cap)?);
    }
    let side = match (shortcut, side) {
        (Shortcut::Conv2d(c), Some(g)) => Some(g.toeplitz(conv_weight(weights, c)?.data(), cap)?),
        _ => None,
    };
    StagedBlock::from_matrices(&mats, side.as_ref(), activation, final_activation, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_weights, Bottleneck, Dense, NetworkSpec, ResBlock18};
    use alloc::string::String;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn dense_norm_examples() {
        let w = m(&[&[1.0, -2.0], &[3.0, 4.0]]);
        let b = Tensor::vector(vec![1.0, -1.0]).unwrap();
        assert_eq!(dense_norm(&w, Some(&b), true).unwrap(), 8.0);
        assert_eq!(dense_norm(&w, None, false).unwrap(), 7.0);
        assert_eq!(dense_norm(&w, Some(&b), false).unwrap(), 7.0);
        let z = Tensor::zeros(vec![2, 2]);
        let b = Tensor::vector(vec![5.0, 0.0]).unwrap();
        assert_eq!(dense_norm(&z, Some(&b), true).unwrap(), 5.0);
        let short = Tensor::vector(vec![1.0]).unwrap();
        assert!(dense_norm(&w, Some(&short), true).is_err());
    }

    #[test]
    fn conv_norm_matches_toeplitz_on_all_ones() {
        let c = Conv2d { in_ch: 1, out_ch: 1, kernel: 3, stride: 1, padding: 1, groups: 1, weight: "w".into() };
        let w = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let dense = conv_matrix(&c, &w, &[1, 5, 5], usize::MAX).unwrap().opnorm_inf().unwrap();
        assert_eq!(dense, 9.0);
        assert_eq!(conv_norm_implicit(&c, &w, &[1, 5, 5]).unwrap(), dense);
        assert!(conv_norm_implicit(&c, &w, &[25]).is_err());
    }

    #[test]
    fn block_norm_consequences() {
        assert_eq!(block_stage_norms(&[2.0, 3.0], None), vec![2.0, 4.0]);
        assert_eq!(block_stage_norms(&[0.5, 3.0], None)[0], 1.0);
        assert_eq!(block_stage_norms(&[2.0, 0.5, 3.0], None), vec![2.0, 1.0, 4.0]);
        assert_eq!(block_stage_norms(&[2.0, 3.0], Some(1.5)), vec![2.0, 4.5]);
    }

    #[test]
    fn residual_stage_matrices() {
        let w1 = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let w2 = m(&[&[1.0, 0.0, -1.0], &[0.5, 0.5, 0.5]]);
        let s = StagedBlock::from_matrices(&[w1.clone(), w2.clone()], None, ActivationKind::Relu, true, 1000).unwrap();
        assert_eq!(s.stages[0].shape(), &[5, 2]);
        assert_eq!(s.stages[1].shape(), &[2, 5]);
        assert_eq!(s.stages[0].row(3).unwrap(), &[1.0, 0.0]);
        assert_eq!(s.stages[0].row(4).unwrap(), &[0.0, 1.0]);
        assert_eq!(s.stages[1].row(0).unwrap(), &[1.0, 0.0, -1.0, 1.0, 0.0]);
        assert_eq!(s.stages[1].row(1).unwrap(), &[0.5, 0.5, 0.5, 0.0, 1.0]);
        // Stage norms agree with the block consequences.
        let n1 = w1.opnorm_inf().unwrap();
        let n2 = w2.opnorm_inf().unwrap();
        assert_eq!(s.stages[0].opnorm_inf().unwrap(), n1.max(1.0));
        assert_eq!(s.stages[1].opnorm_inf().unwrap(), n2 + 1.0);
    }

    #[test]
    fn bottleneck_middle_stage_is_block_diagonal() {
        let w1 = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let w2 = m(&[&[1.0, 1.0, 1.0]]);
        let w3 = m(&[&[2.0], &[-2.0]]);
        let s = StagedBlock::from_matrices(&[w1, w2, w3], None, ActivationKind::Relu6, false, 1000).unwrap();
        let v2 = &s.stages[1];
        assert_eq!(v2.shape(), &[3, 5]);
        assert_eq!(v2.row(0).unwrap(), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(v2.row(1).unwrap(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(v2.row(2).unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.stages[2].shape(), &[2, 3]);
    }

    #[test]
    fn zero_block_passes_input_through() {
        let w1 = Tensor::zeros(vec![3, 2]);
        let w2 = Tensor::zeros(vec![2, 3]);
        let s = StagedBlock::from_matrices(&[w1, w2], None, ActivationKind::Identity, true, 1000).unwrap();
        assert_eq!(s.forward(&[-1.5, 2.0]).unwrap(), vec![-1.5, 2.0]);
    }

    #[test]
    fn materialization_cap() {
        let w = Tensor::zeros(vec![4, 4]);
        let err = StagedBlock::from_matrices(&[w.clone(), w], None, ActivationKind::Relu, true, 10).unwrap_err();
        assert!(matches!(err, Error::SizeCap { .. }));
    }

    #[test]
    fn output_norm_bound_examples() {
        assert!((output_norm_bound(&[2.0], 3.0).value().unwrap() - 6.0).abs() < 1e-12);
        assert!((output_norm_bound(&[1.0, 1.0, 1.0], 5.0).value().unwrap() - 5.0).abs() < 1e-12);
        assert!((output_norm_bound(&[0.5, 4.0, 0.5], 1.0).value().unwrap() - 2.0).abs() < 1e-12);
    }

    fn conv(in_ch: usize, out_ch: usize, name: &str) -> Conv2d {
        Conv2d { in_ch, out_ch, kernel: 3, stride: 1, padding: 1, groups: 1, weight: String::from(name) }
    }

    #[test]
    fn profile_depths() {
        let dense = |i, o, n: &str| {
            LayerSpec::Dense(Dense { in_features: i, out_features: o, has_bias: false, weight: n.into(), bias: None })
        };
        let spec = NetworkSpec::new(vec![4], vec![dense(4, 5, "a"), dense(5, 3, "b"), dense(3, 2, "c")]);
        let net = Network::new(spec.clone(), random_weights(&spec, 1).unwrap()).unwrap();
        let p = profile_of(&net).unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.max_width(), 5);
        assert_eq!(p.sum_widths_in(), 12);
        assert!(!p.is_pure_conv());

        let block = LayerSpec::ResBlock18(ResBlock18 {
            conv1: conv(2, 3, "c1"),
            conv2: conv(3, 2, "c2"),
            shortcut: Shortcut::Identity,
            activation: ActivationKind::Relu,
        });
        let spec = NetworkSpec::new(vec![2, 4, 4], vec![block]);
        let net = Network::new(spec.clone(), random_weights(&spec, 2).unwrap()).unwrap();
        let p = profile_of(&net).unwrap();
        assert_eq!(p.depth(), 2);
        assert_eq!(p.stages[0].width_in, 32);
        assert_eq!(p.stages[1].width_in, 48 + 32);
        assert_eq!(p.sum_row_taps(), Some(18 + 27));

        let bottleneck = LayerSpec::Bottleneck(Bottleneck {
            conv1: conv(2, 4, "b1"),
            conv2: Conv2d { groups: 4, ..conv(4, 4, "b2") },
            conv3: conv(4, 3, "b3"),
            shortcut: Shortcut::Conv2d(Conv2d { kernel: 1, padding: 0, ..conv(2, 3, "bs") }),
            final_activation: false,
            activation: ActivationKind::Relu6,
        });
        let spec = NetworkSpec::new(vec![2, 4, 4], vec![bottleneck]);
        let net = Network::new(spec.clone(), random_weights(&spec, 3).unwrap()).unwrap();
        let p = profile_of(&net).unwrap();
        assert_eq!(p.depth(), 3);
        assert!(!p.all_exact());
        assert_eq!(p.stages[1].conv.unwrap().row_taps, 9);
        assert_eq!(p.stages[2].conv.unwrap().row_taps, 36 + 2);
    }

    #[test]
    fn staged_block_norms_match_profile() {
        let bottleneck = LayerSpec::Bottleneck(Bottleneck {
            conv1: conv(2, 3, "b1"),
            conv2: conv(3, 3, "b2"),
            conv3: conv(3, 2, "b3"),
            shortcut: Shortcut::Identity,
            final_activation: true,
            activation: ActivationKind::Relu,
        });
        let spec = NetworkSpec::new(vec![2, 3, 3], vec![bottleneck.clone()]);
        let weights = random_weights(&spec, 9).unwrap();
        let net = Network::new(spec, weights.clone()).unwrap();
        let staged = materialize_block(&bottleneck, &weights, &[2, 3, 3], DEFAULT_MATERIALIZE_CAP).unwrap();
        let p = profile_of(&net).unwrap();
        for (v, s) in staged.stages.iter().zip(&p.stages) {
            let dense = v.opnorm_inf().unwrap();
            assert!((dense - s.r).abs() <= 1e-12 * dense.max(1.0), "{dense} vs {}", s.r);
        }
    }
}
