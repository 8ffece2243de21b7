//! Worst-case output error bounds of the form `C · ‖θ − θ'‖∞`.
//!
//! Every bound is a product of nonnegative factors and is accumulated in
//! [`Log10`] so that `r^{L−1}` never overflows. With `r = (r_1, …, r_L)` the
//! per-stage norms, `N_{ℓ−1}` the stage input widths and `D` the input domain
//! half-width:
//!
//! | bound        | constant `C`                                         |
//! |--------------|------------------------------------------------------|
//! | `prev_2023`  | `(D+1) · N · L² · r_max^{L−1}`, `N` the widest layer |
//! | `pathnorm`   | `2 · max(D,1) · L · N² · r_max^{L−1}` (an ℓ1 bound)  |
//! | `general`    | `max(D,1) · Σ N_{ℓ−1} · r_mean^{L−1}`                |
//! | `mlp_nobias` | `D · Σ N_{ℓ−1} · r_conv^{L−1}` (no biases)           |
//! | `conv`       | `D · Σ taps_ℓ · r_conv^{L−1}` (no biases, all conv)  |
//!
//! `r_mean^{L−1}` is the largest product `∏_{j=i, j≠ℓ}^{L} r_j` over
//! `1 ≤ i < ℓ ≤ L`, together with `∏_{j=2}^{L} r_j` for `ℓ = 1`;
//! `r_conv^{L−1}` is the largest leave-one-out product `∏_{k≠ℓ} r_k`.
//! Both are 1 when `L = 1`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::logspace::Log10;
use crate::model::{LayerSpec, Network};
use crate::norms::{self, NormProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BoundKind {
    General,
    MlpNoBias,
    Conv,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::General => "general",
            Self::MlpNoBias => "mlp_nobias",
            Self::Conv => "conv",
        }
    }
}

pub fn r_max(r: &[f64]) -> f64 {
    r.iter().copied().fold(0.0, f64::max)
}

/// `r_mean^{L−1}`: the largest partial product with one factor left out.
///
/// For each left-out `ℓ` the products over start indices `i < ℓ` are
/// accumulated downward from `i = ℓ−1`, so no division by a (possibly zero)
/// norm is needed. `O(L²)`.
pub fn mean_norm_power(r: &[f64]) -> Log10 {
    let l = r.len();
    if l <= 1 {
        return Log10::ONE;
    }
    let logs: Vec<Log10> = r.iter().map(|&x| Log10::of(x)).collect();
    // tail[k] = ∏_{j ≥ k} r_j (0-based), tail[l] = 1.
    let mut tail = alloc::vec![Log10::ONE; l + 1];
    for k in (0..l).rev() {
        tail[k] = tail[k + 1] * logs[k];
    }
    let mut best = tail[1];
    for left_out in 1..l {
        let mut acc = tail[left_out + 1];
        for i in (0..left_out).rev() {
            acc = acc * logs[i];
            best = best.max(acc);
        }
    }
    best
}

pub fn r_mean(r: &[f64]) -> f64 {
    root_value(mean_norm_power(r), r.len())
}

/// `r_conv^{L−1}`: the largest product of all norms but one.
pub fn conv_norm_power(r: &[f64]) -> Log10 {
    let l = r.len();
    if l <= 1 {
        return Log10::ONE;
    }
    let logs: Vec<Log10> = r.iter().map(|&x| Log10::of(x)).collect();
    let mut tail = alloc::vec![Log10::ONE; l + 1];
    for k in (0..l).rev() {
        tail[k] = tail[k + 1] * logs[k];
    }
    let mut head = Log10::ONE;
    let mut best = Log10::ZERO;
    for k in 0..l {
        best = best.max(head * tail[k + 1]);
        head = head * logs[k];
    }
    best
}

pub fn r_conv(r: &[f64]) -> f64 {
    root_value(conv_norm_power(r), r.len())
}

fn root_value(power: Log10, depth: usize) -> f64 {
    let exp = depth.saturating_sub(1) as u32;
    power.root(exp).value().unwrap_or(f64::INFINITY)
}

fn depth_power(x: f64, depth: usize) -> Log10 {
    Log10::of(x).powi(depth.saturating_sub(1) as u32)
}

/// `(D+1) · N · L² · r^{L−1}`.
pub fn prev_2023_constant(domain: f64, max_width: f64, depth: usize, r: f64) -> Log10 {
    let l = depth as f64;
    Log10::of(domain + 1.0) * Log10::of(max_width) * Log10::of(l * l) * depth_power(r, depth)
}

/// `D · Σ taps · r_conv^{L−1}`.
pub fn conv_constant(domain: f64, sum_taps: f64, depth: usize, r_conv: f64) -> Log10 {
    Log10::of(domain) * Log10::of(sum_taps) * depth_power(r_conv, depth)
}

/// `log10` of the previous bound over the convolutional bound for
/// summary parameters, as tabulated for large CNNs.
pub fn closed_form_ratio_log10(
    depth: usize,
    previous_width: f64,
    r_max: f64,
    sum_taps: f64,
    r_conv: f64,
    domain: f64,
) -> f64 {
    prev_2023_constant(domain, previous_width, depth, r_max).log10()
        - conv_constant(domain, sum_taps, depth, r_conv).log10()
}

pub fn bound_prev_2023(p: &NormProfile, dtheta: f64) -> Log10 {
    prev_2023_constant(p.domain, p.max_width() as f64, p.depth(), r_max(&p.r())) * Log10::of(dtheta)
}

pub fn bound_pathnorm(p: &NormProfile, dtheta: f64) -> Log10 {
    let n = p.max_width() as f64;
    Log10::of(2.0 * p.domain.max(1.0) * p.depth() as f64)
        * Log10::of(n).powi(2)
        * depth_power(r_max(&p.r()), p.depth())
        * Log10::of(dtheta)
}

pub fn bound_general(p: &NormProfile, dtheta: f64) -> Log10 {
    Log10::of(p.domain.max(1.0)) * Log10::of(p.sum_widths_in() as f64) * mean_norm_power(&p.r()) * Log10::of(dtheta)
}

pub fn bound_mlp_nobias(p: &NormProfile, dtheta: f64) -> Result<Log10> {
    if p.has_bias {
        return Err(Error::Precondition("the bias-free bound needs a network without biases".into()));
    }
    Ok(Log10::of(p.domain) * Log10::of(p.sum_widths_in() as f64) * conv_norm_power(&p.r()) * Log10::of(dtheta))
}

pub fn bound_conv(p: &NormProfile, dtheta: f64) -> Result<Log10> {
    if p.has_bias {
        return Err(Error::Precondition("the convolutional bound needs a network without biases".into()));
    }
    let taps = p
        .sum_row_taps()
        .ok_or_else(|| Error::Precondition("the convolutional bound needs every stage to be a convolution".into()))?;
    Ok(Log10::of(p.domain) * Log10::of(taps as f64) * conv_norm_power(&p.r()) * Log10::of(dtheta))
}

/// Per-stage terms of the layerwise error decomposition and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub terms: Vec<Log10>,
    pub total: Log10,
}

/// Splits the error of `θ'` against `θ` into one term per stage:
///
/// ```text
/// term_ℓ = (∏_{k>ℓ} ‖V_k‖) · ‖V_ℓ − V'_ℓ‖ · B_{ℓ−1}
/// ```
///
/// where `B_0 = x_norm` and `B_{ℓ−1}` bounds the output of the first `ℓ−1`
/// stages of `θ'`. Weight differences use exact per-stage operator norms.
pub fn layerwise_decomposition(theta: &Network, theta_q: &Network, x_norm: f64) -> Result<Decomposition> {
    check_shared_biases(theta, theta_q)?;
    let after = norms::bias_free_norms(theta)?;
    let diff = norms::difference_norms(theta, theta_q)?;
    let biased = theta.spec.has_bias();
    let before = if biased { norms::profile_of(theta_q)?.r() } else { norms::bias_free_norms(theta_q)? };

    let l = after.len();
    let mut tail = alloc::vec![Log10::ONE; l + 1];
    for k in (0..l).rev() {
        tail[k] = tail[k + 1] * Log10::of(after[k]);
    }
    let mut terms = Vec::with_capacity(l);
    let mut head = Log10::of(x_norm);
    for k in 0..l {
        let prefix = if k > 0 && biased { norms::output_norm_bound(&before[..k], x_norm) } else { head };
        terms.push(tail[k + 1] * Log10::of(diff[k]) * prefix);
        head = head * Log10::of(before[k]);
    }
    let total = Log10::sum(terms.iter().copied());
    Ok(Decomposition { terms, total })
}

fn check_shared_biases(a: &Network, b: &Network) -> Result<()> {
    if a.spec != b.spec {
        return Err(Error::Precondition("networks have different architectures".into()));
    }
    for layer in &a.spec.layers {
        if let LayerSpec::Dense(d) = layer {
            if let Some(name) = &d.bias {
                if a.tensor(name)? != b.tensor(name)? {
                    return Err(Error::Precondition(alloc::format!("bias `{name}` differs between the networks")));
                }
            }
        }
    }
    Ok(())
}

/// All bounds for one pair of networks (or one profile and `‖θ − θ'‖∞`).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub depth: usize,
    pub domain: f64,
    pub dtheta: f64,
    pub r_max: f64,
    pub r_mean: f64,
    pub r_conv: f64,
    pub prev_2023: Log10,
    /// Bounds the ℓ1 norm of the output difference, hence also the ℓ∞ norm.
    pub pathnorm: Log10,
    pub general: Log10,
    pub mlp_nobias: Option<Log10>,
    pub conv: Option<Log10>,
    /// Smallest applicable bound among general / mlp_nobias / conv; ties go
    /// to the more specialized one.
    pub new_bound: Log10,
    pub new_kind: BoundKind,
    /// The previous bound assumes `r ≥ 1`; set when that fails.
    pub prev_hypothesis_violated: bool,
    pub decomposition: Option<Decomposition>,
}

impl BoundReport {
    pub fn from_profile(p: &NormProfile, dtheta: f64) -> Result<Self> {
        if p.depth() == 0 {
            return Err(Error::Precondition("network has no linear stage".into()));
        }
        if !(dtheta >= 0.0 && dtheta.is_finite()) {
            return Err(Error::Precondition(alloc::format!("‖θ − θ'‖∞ must be finite and nonnegative, got {dtheta}")));
        }
        let r = p.r();
        let general = bound_general(p, dtheta);
        let mlp_nobias = bound_mlp_nobias(p, dtheta).ok();
        let conv = bound_conv(p, dtheta).ok();
        let mut new_kind = BoundKind::General;
        let mut new_bound = general;
        for (kind, b) in [(BoundKind::MlpNoBias, mlp_nobias), (BoundKind::Conv, conv)] {
            if let Some(b) = b {
                if b <= new_bound {
                    new_bound = b;
                    new_kind = kind;
                }
            }
        }
        let r_max = r_max(&r);
        Ok(Self {
            depth: p.depth(),
            domain: p.domain,
            dtheta,
            r_max,
            r_mean: r_mean(&r),
            r_conv: r_conv(&r),
            prev_2023: bound_prev_2023(p, dtheta),
            pathnorm: bound_pathnorm(p, dtheta),
            general,
            mlp_nobias,
            conv,
            new_bound,
            new_kind,
            prev_hypothesis_violated: r_max < 1.0,
            decomposition: None,
        })
    }

    /// Bounds for `θ'` against `θ` on the domain `[-domain, domain]`, with
    /// the norms shared between the two networks and the decomposition.
    pub fn for_networks(theta: &Network, theta_q: &Network, domain: f64) -> Result<Self> {
        let mut p = norms::profile_of(theta)?.shared(&norms::profile_of(theta_q)?)?;
        p.domain = domain;
        let dtheta = theta.weight_distance(theta_q)?;
        let mut report = Self::from_profile(&p, dtheta)?;
        report.decomposition = Some(layerwise_decomposition(theta, theta_q, domain)?);
        Ok(report)
    }

    pub fn bound(&self, kind: BoundKind) -> Option<Log10> {
        match kind {
            BoundKind::General => Some(self.general),
            BoundKind::MlpNoBias => self.mlp_nobias,
            BoundKind::Conv => self.conv,
        }
    }

    /// `log10(prev_2023 / new_bound)`; `‖θ − θ'‖∞` cancels.
    pub fn ratio_log10(&self) -> Result<f64> {
        if self.dtheta == 0.0 {
            return Err(Error::UndefinedRatio);
        }
        Ok(self.prev_2023.log10() - self.new_bound.log10())
    }
}
