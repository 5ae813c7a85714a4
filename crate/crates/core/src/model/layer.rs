//! Layer filters with cheap log-determinants.

use crate::conv::{conv_adjoint, conv_same, conv_tap_gradient, FilterBank};
use crate::error::{DgmrfError, Result};
use crate::grid::GridTensor;

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// One of the eight rotations/mirrors of a sequential stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orientation(u8);

impl Orientation {
    pub const ALL: [Orientation; 8] = [
        Orientation(0),
        Orientation(1),
        Orientation(2),
        Orientation(3),
        Orientation(4),
        Orientation(5),
        Orientation(6),
        Orientation(7),
    ];

    pub fn new(index: u8) -> Result<Self> {
        if index < 8 {
            Ok(Orientation(index))
        } else {
            Err(DgmrfError::InvalidArgument(format!("orientation {index} not in 0..8")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Maps an offset of the canonical stencil to this orientation.
    pub fn apply(self, dr: isize, dc: isize) -> (isize, isize) {
        let (mut r, mut c) = if self.0 >= 4 { (dr, -dc) } else { (dr, dc) };
        for _ in 0..self.0 % 4 {
            (r, c) = (c, -r);
        }
        (r, c)
    }
}

/// Canonical off-center offsets of a radius-`R` sequential stencil: the rest
/// of the center row to the right, then every full row below.
pub fn seq_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs: Vec<(isize, isize)> = (1..=r).map(|dc| (0, dc)).collect();
    for dr in 1..=r {
        for dc in -r..=r {
            offs.push((dr, dc));
        }
    }
    offs
}

/// Offsets of the five taps `a1..a5` of a plus stencil:
/// center, left, top, right, bottom.
pub const PLUS_OFFSETS: [(isize, isize); 5] = [(0, 0), (0, -1), (-1, 0), (0, 1), (1, 0)];

/// Sum over the lattice of `log |a1 + 2 sqrt(a3 a5) cos(pi i/(H+1)) + 2 sqrt(a2 a4) cos(pi j/(W+1))|`,
/// with square roots of negative products taken as imaginary.
///
/// This is `log |det G|` for the single-channel same convolution with a plus stencil.
pub fn logdet_plus(taps: [f64; 5], height: usize, width: usize) -> f64 {
    let [a1, a2, a3, a4, a5] = taps;
    let split = |prod: f64| {
        if prod >= 0.0 {
            (prod.sqrt(), 0.0)
        } else {
            (0.0, (-prod).sqrt())
        }
    };
    let (hr, hi) = split(a2 * a4);
    let (vr, vi) = split(a3 * a5);
    let cos_h = cosines(width);
    let cos_v = cosines(height);
    let mut acc = 0.0;
    for cv in &cos_v {
        for ch in &cos_h {
            let re = a1 + 2.0 * vr * cv + 2.0 * hr * ch;
            let im = 2.0 * vi * cv + 2.0 * hi * ch;
            acc += 0.5 * (re * re + im * im).ln();
        }
    }
    acc
}

/// `cos(pi k / (n + 1))` for `k = 1..=n`.
fn cosines(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| (std::f64::consts::PI * k as f64 / (n as f64 + 1.0)).cos())
        .collect()
}

/// Log-determinant of a sequential filter layer: `N log a1`.
pub fn logdet_seq(center: f64, n: usize) -> f64 {
    n as f64 * center.abs().ln()
}

/// Plus stencil, either reparameterized so every eigenvalue is real and
/// positive or held at fixed taps.
#[derive(Debug, Clone, PartialEq)]
pub enum PlusFilter {
    /// Unconstrained `rho1..rho6`.
    Reparam([f64; 6]),
    /// Fixed `a1..a5`, not trained.
    Fixed([f64; 5]),
}

impl PlusFilter {
    /// Identity-centred start: `a1 = 1`, off-center taps zero, plus offsets.
    pub fn near_identity(noise: [f64; 6]) -> Self {
        let base = softplus_inv(0.5);
        PlusFilter::Reparam([base + noise[0], base + noise[1], noise[2], noise[3], noise[4], noise[5]])
    }

    /// Signed square roots `(sqrt(a2 a4), sqrt(a3 a5))` of the reparameterization.
    fn roots(rho: &[f64; 6]) -> (f64, f64) {
        (
            softplus(rho[0]) * rho[2].tanh() / 2.0,
            softplus(rho[1]) * rho[4].tanh() / 2.0,
        )
    }

    pub fn taps(&self) -> [f64; 5] {
        match self {
            PlusFilter::Fixed(t) => *t,
            PlusFilter::Reparam(rho) => {
                let a1 = softplus(rho[0]) + softplus(rho[1]);
                let (p, q) = Self::roots(rho);
                let (e4, e6) = ((rho[3] / 2.0).exp(), (rho[5] / 2.0).exp());
                [a1, p / e4, q / e6, p * e4, q * e6]
            }
        }
    }

    /// Smallest eigenvalue factor over an `H x W` lattice (real part for fixed taps).
    pub fn min_eigenvalue(&self, height: usize, width: usize) -> f64 {
        let (a1, p, q) = match self {
            PlusFilter::Reparam(rho) => {
                let (p, q) = Self::roots(rho);
                (softplus(rho[0]) + softplus(rho[1]), p.abs(), q.abs())
            }
            PlusFilter::Fixed(t) => (t[0], (t[1] * t[3]).max(0.0).sqrt(), (t[2] * t[4]).max(0.0).sqrt()),
        };
        let ch = (std::f64::consts::PI / (width as f64 + 1.0)).cos();
        let cv = (std::f64::consts::PI / (height as f64 + 1.0)).cos();
        a1 - 2.0 * q * cv - 2.0 * p * ch
    }

    pub fn logdet(&self, height: usize, width: usize) -> f64 {
        match self {
            PlusFilter::Fixed(t) => logdet_plus(*t, height, width),
            PlusFilter::Reparam(rho) => {
                // signed roots keep the sum smooth where a2 a4 or a3 a5 vanish
                let a1 = softplus(rho[0]) + softplus(rho[1]);
                let (p, q) = Self::roots(rho);
                let cos_h = cosines(width);
                let cos_v = cosines(height);
                let mut acc = 0.0;
                for cv in &cos_v {
                    for ch in &cos_h {
                        acc += (a1 + 2.0 * q * cv + 2.0 * p * ch).ln();
                    }
                }
                acc
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            PlusFilter::Reparam(_) => 6,
            PlusFilter::Fixed(_) => 0,
        }
    }

    fn logdet_grad(&self, height: usize, width: usize) -> Vec<f64> {
        let PlusFilter::Reparam(rho) = self else {
            return Vec::new();
        };
        let (sp1, sp2) = (softplus(rho[0]), softplus(rho[1]));
        let (t3, t5) = (rho[2].tanh(), rho[4].tanh());
        let a1 = sp1 + sp2;
        let (p, q) = (sp1 * t3 / 2.0, sp2 * t5 / 2.0);
        let (mut d_a1, mut d_p, mut d_q) = (0.0, 0.0, 0.0);
        let cos_h = cosines(width);
        let cos_v = cosines(height);
        for cv in &cos_v {
            for ch in &cos_h {
                let inv = 1.0 / (a1 + 2.0 * q * cv + 2.0 * p * ch);
                d_a1 += inv;
                d_p += 2.0 * ch * inv;
                d_q += 2.0 * cv * inv;
            }
        }
        let (s1, s2) = (sigmoid(rho[0]), sigmoid(rho[1]));
        vec![
            d_a1 * s1 + d_p * s1 * t3 / 2.0,
            d_a1 * s2 + d_q * s2 * t5 / 2.0,
            d_p * sp1 * (1.0 - t3 * t3) / 2.0,
            0.0,
            d_q * sp2 * (1.0 - t5 * t5) / 2.0,
            0.0,
        ]
    }

    /// Chains tap gradients `d/da1..d/da5` to the trainable parameters.
    fn chain(&self, g: [f64; 5]) -> Vec<f64> {
        let PlusFilter::Reparam(rho) = self else {
            return Vec::new();
        };
        let (sp1, sp2) = (softplus(rho[0]), softplus(rho[1]));
        let (t3, t5) = (rho[2].tanh(), rho[4].tanh());
        let (s1, s2) = (sigmoid(rho[0]), sigmoid(rho[1]));
        let (e4, e6) = ((rho[3] / 2.0).exp(), (rho[5] / 2.0).exp());
        let [ga1, ga2, ga3, ga4, ga5] = g;
        // a2 = p/e4, a4 = p*e4; a3 = q/e6, a5 = q*e6
        let d_p = ga2 / e4 + ga4 * e4;
        let d_q = ga3 / e6 + ga5 * e6;
        let p = sp1 * t3 / 2.0;
        let q = sp2 * t5 / 2.0;
        vec![
            ga1 * s1 + d_p * s1 * t3 / 2.0,
            ga1 * s2 + d_q * s2 * t5 / 2.0,
            d_p * sp1 * (1.0 - t3 * t3) / 2.0,
            (-ga2 * p / e4 + ga4 * p * e4) / 2.0,
            d_q * sp2 * (1.0 - t5 * t5) / 2.0,
            (-ga3 * q / e6 + ga5 * q * e6) / 2.0,
        ]
    }
}

/// Sequential (masked) stencil of radius 1, 2 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqFilter {
    pub radius: usize,
    /// Log of the center tap.
    pub log_center: f64,
    /// Off-center taps in [`seq_offsets`] order.
    pub taps: Vec<f64>,
    pub orientation: Orientation,
}

impl SeqFilter {
    pub fn new(radius: usize, log_center: f64, taps: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if !(1..=3).contains(&radius) {
            return Err(DgmrfError::InvalidArgument(format!("seq radius {radius} not in 1..=3")));
        }
        let expected = 2 * radius * radius + 2 * radius;
        if taps.len() != expected {
            return Err(DgmrfError::Dimension(format!(
                "seq filter of radius {radius} has {expected} off-center taps, got {}",
                taps.len()
            )));
        }
        Ok(SeqFilter {
            radius,
            log_center,
            taps,
            orientation,
        })
    }

    pub fn center(&self) -> f64 {
        self.log_center.exp()
    }

    pub fn logdet(&self, n: usize) -> f64 {
        n as f64 * self.log_center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagFilter {
    Plus(PlusFilter),
    Seq(SeqFilter),
}

impl DiagFilter {
    pub fn radius(&self) -> usize {
        match self {
            DiagFilter::Plus(_) => 1,
            DiagFilter::Seq(s) => s.radius,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            DiagFilter::Plus(p) => p.param_count(),
            DiagFilter::Seq(s) => 1 + s.taps.len(),
        }
    }

    fn params(&self, out: &mut Vec<f64>) {
        match self {
            DiagFilter::Plus(PlusFilter::Reparam(rho)) => out.extend_from_slice(rho),
            DiagFilter::Plus(PlusFilter::Fixed(_)) => {}
            DiagFilter::Seq(s) => {
                out.push(s.log_center);
                out.extend_from_slice(&s.taps);
            }
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            DiagFilter::Plus(PlusFilter::Reparam(rho)) => rho.copy_from_slice(p),
            DiagFilter::Plus(PlusFilter::Fixed(_)) => {}
            DiagFilter::Seq(s) => {
                s.log_center = p[0];
                s.taps.copy_from_slice(&p[1..]);
            }
        }
    }

    /// Writes the stencil into block `(c, c)` of a bank.
    fn write(&self, bank: &mut FilterBank, c: usize) {
        match self {
            DiagFilter::Plus(p) => {
                for (t, (dr, dc)) in p.taps().iter().zip(PLUS_OFFSETS) {
                    bank.set(c, c, dr, dc, *t);
                }
            }
            DiagFilter::Seq(s) => {
                bank.set(c, c, 0, 0, s.center());
                for (t, (dr, dc)) in s.taps.iter().zip(seq_offsets(s.radius)) {
                    let (r, cc) = s.orientation.apply(dr, dc);
                    bank.set(c, c, r, cc, *t);
                }
            }
        }
    }

    fn chain(&self, bank_grad: &FilterBank, c: usize) -> Vec<f64> {
        match self {
            DiagFilter::Plus(p) => {
                let g = PLUS_OFFSETS.map(|(dr, dc)| bank_grad.get(c, c, dr, dc));
                p.chain(g)
            }
            DiagFilter::Seq(s) => {
                let mut out = vec![bank_grad.get(c, c, 0, 0) * s.center()];
                for (dr, dc) in seq_offsets(s.radius) {
                    let (r, cc) = s.orientation.apply(dr, dc);
                    out.push(bank_grad.get(c, c, r, cc));
                }
                out
            }
        }
    }

    pub fn logdet(&self, height: usize, width: usize) -> f64 {
        match self {
            DiagFilter::Plus(p) => p.logdet(height, width),
            DiagFilter::Seq(s) => s.logdet(height * width),
        }
    }

    fn logdet_grad(&self, height: usize, width: usize) -> Vec<f64> {
        match self {
            DiagFilter::Plus(p) => p.logdet_grad(height, width),
            DiagFilter::Seq(s) => {
                let mut g = vec![0.0; 1 + s.taps.len()];
                g[0] = (height * width) as f64;
                g
            }
        }
    }
}

/// Below-diagonal block of a multichannel layer, with free taps.
#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagBlock {
    pub out_channel: usize,
    pub in_channel: usize,
    /// Row-major `(2R+1)^2` taps.
    pub taps: Vec<f64>,
}

/// Parametric ReLU with slope `alpha = exp(log_alpha)` for negative inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRelu {
    pub log_alpha: f64,
}

impl PRelu {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    #[inline]
    pub fn apply(&self, h: f64) -> f64 {
        if h >= 0.0 {
            h
        } else {
            self.alpha() * h
        }
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        if z >= 0.0 {
            z
        } else {
            z / self.alpha()
        }
    }

    /// Derivative; the subgradient at 0 is the positive-branch slope.
    #[inline]
    pub fn derivative(&self, h: f64) -> f64 {
        if h >= 0.0 {
            1.0
        } else {
            self.alpha()
        }
    }
}

/// One DGMRF layer: `Z_l = psi(conv(Z_{l-1}, w_l) + b_l)`.
///
/// The bank is lower block triangular with respect to `channel_order`: block
/// `(i, j)` may be non-zero only when `i` comes no earlier than `j` in the order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub diag: Vec<DiagFilter>,
    pub off_diag: Vec<OffDiagBlock>,
    pub bias: Vec<f64>,
    pub bias_trainable: bool,
    pub activation: Option<PRelu>,
    pub channel_order: Vec<usize>,
}

/// Forward results of one layer kept for gradients.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: GridTensor,
    pub pre_activation: GridTensor,
}

impl Layer {
    /// Single-channel layer with the given filter and zero bias.
    pub fn single(filter: DiagFilter) -> Self {
        Layer {
            diag: vec![filter],
            off_diag: Vec::new(),
            bias: vec![0.0],
            bias_trainable: false,
            activation: None,
            channel_order: vec![0],
        }
    }

    pub fn identity(channels: usize) -> Self {
        Layer {
            diag: vec![DiagFilter::Plus(PlusFilter::Fixed([1.0, 0.0, 0.0, 0.0, 0.0])); channels],
            off_diag: Vec::new(),
            bias: vec![0.0; channels],
            bias_trainable: false,
            activation: None,
            channel_order: (0..channels).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.diag.len()
    }

    pub fn radius(&self) -> usize {
        self.diag.iter().map(DiagFilter::radius).max().unwrap_or(0)
    }

    pub fn is_linear(&self) -> bool {
        self.activation.is_none()
    }

    /// Checks channel counts, the channel order and the triangular pattern.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if c == 0 || self.bias.len() != c || self.channel_order.len() != c {
            return Err(DgmrfError::Dimension("layer channel counts disagree".into()));
        }
        let mut seen = vec![false; c];
        for &o in &self.channel_order {
            if o >= c || seen[o] {
                return Err(DgmrfError::InvalidArgument("channel order is not a permutation".into()));
            }
            seen[o] = true;
        }
        let k = 2 * self.radius() + 1;
        for b in &self.off_diag {
            if b.out_channel >= c || b.in_channel >= c {
                return Err(DgmrfError::Dimension("off-diagonal block channel out of range".into()));
            }
            if self.rank(b.out_channel) <= self.rank(b.in_channel) {
                return Err(DgmrfError::InvalidArgument(format!(
                    "block ({}, {}) breaks the block-triangular structure",
                    b.out_channel, b.in_channel
                )));
            }
            if b.taps.len() != k * k {
                return Err(DgmrfError::Dimension("off-diagonal block has wrong tap count".into()));
            }
        }
        if let Some(a) = &self.activation {
            if !a.log_alpha.is_finite() {
                return Err(DgmrfError::InvalidArgument("PReLU slope must be positive".into()));
            }
        }
        Ok(())
    }

    fn rank(&self, channel: usize) -> usize {
        self.channel_order
            .iter()
            .position(|&o| o == channel)
            .unwrap_or(usize::MAX)
    }

    pub fn bank(&self) -> FilterBank {
        let c = self.channels();
        let r = self.radius();
        let mut bank = FilterBank::zeros(c, r);
        for (ch, f) in self.diag.iter().enumerate() {
            f.write(&mut bank, ch);
        }
        let k = 2 * r + 1;
        for b in &self.off_diag {
            for (idx, t) in b.taps.iter().enumerate() {
                let (dr, dc) = ((idx / k) as isize - r as isize, (idx % k) as isize - r as isize);
                bank.set(b.out_channel, b.in_channel, dr, dc, *t);
            }
        }
        bank
    }

    /// `log |det G_l|`, the sum of the diagonal blocks' log-determinants.
    pub fn logdet(&self, height: usize, width: usize) -> f64 {
        self.diag.iter().map(|f| f.logdet(height, width)).sum()
    }

    pub fn param_count(&self) -> usize {
        self.diag.iter().map(DiagFilter::param_count).sum::<usize>()
            + self.off_diag.iter().map(|b| b.taps.len()).sum::<usize>()
            + if self.bias_trainable { self.bias.len() } else { 0 }
            + usize::from(self.activation.is_some())
    }

    pub fn params(&self, out: &mut Vec<f64>) {
        for f in &self.diag {
            f.params(out);
        }
        for b in &self.off_diag {
            out.extend_from_slice(&b.taps);
        }
        if self.bias_trainable {
            out.extend_from_slice(&self.bias);
        }
        if let Some(a) = &self.activation {
            out.push(a.log_alpha);
        }
    }

    /// Reads parameters in [`Layer::params`] order; returns how many were consumed.
    pub fn set_params(&mut self, p: &[f64]) -> usize {
        let mut at = 0;
        for f in &mut self.diag {
            let n = f.param_count();
            f.set_params(&p[at..at + n]);
            at += n;
        }
        for b in &mut self.off_diag {
            let n = b.taps.len();
            b.taps.copy_from_slice(&p[at..at + n]);
            at += n;
        }
        if self.bias_trainable {
            let n = self.bias.len();
            self.bias.copy_from_slice(&p[at..at + n]);
            at += n;
        }
        if let Some(a) = &mut self.activation {
            a.log_alpha = p[at];
            at += 1;
        }
        at
    }

    /// Forward pass; returns the pre-activation and the output.
    pub fn forward(&self, input: &GridTensor) -> Result<(GridTensor, GridTensor)> {
        let h = conv_same(input, &self.bank(), &self.bias)?;
        let z = match &self.activation {
            Some(a) => h.map(|v| a.apply(v)),
            None => h.clone(),
        };
        Ok((h, z))
    }

    /// Linear part only: `G_l x`.
    pub fn apply_linear(&self, x: &GridTensor) -> Result<GridTensor> {
        conv_same(x, &self.bank(), &vec![0.0; self.channels()])
    }

    pub fn apply_adjoint(&self, v: &GridTensor) -> Result<GridTensor> {
        conv_adjoint(v, &self.bank())
    }

    /// `sum_i log psi'(h_i)` for this layer's pre-activations.
    pub fn activation_log_jacobian(&self, pre_activation: &GridTensor) -> f64 {
        match &self.activation {
            Some(a) => {
                let neg = pre_activation.values().iter().filter(|&&h| h < 0.0).count();
                neg as f64 * a.log_alpha
            }
            None => 0.0,
        }
    }

    /// Vector-Jacobian product of the layer map at `trace`.
    ///
    /// Returns the input cotangent and the parameter cotangents in
    /// [`Layer::params`] order. When `jacobian_weight` is non-zero, the
    /// gradient of `jacobian_weight * sum log psi'(h)` is added to the log-slope.
    pub fn vjp(
        &self,
        trace: &LayerTrace,
        upstream: &GridTensor,
        jacobian_weight: f64,
    ) -> Result<(GridTensor, Vec<f64>)> {
        if !trace.input.same_shape(upstream) {
            return Err(DgmrfError::Dimension("cotangent shape does not match layer".into()));
        }
        let h = &trace.pre_activation;
        let (dh, d_log_alpha) = match &self.activation {
            Some(a) => {
                let alpha = a.alpha();
                let mut d_la = 0.0;
                let mut neg = 0usize;
                let dh: Vec<f64> = h
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(&hv, &u)| {
                        if hv >= 0.0 {
                            u
                        } else {
                            d_la += u * alpha * hv;
                            neg += 1;
                            u * alpha
                        }
                    })
                    .collect();
                d_la += jacobian_weight * neg as f64;
                let (hh, ww, cc) = h.shape();
                (GridTensor::from_vec(hh, ww, cc, dh)?, Some(d_la))
            }
            None => (upstream.clone(), None),
        };

        let bank = self.bank();
        let d_input = conv_adjoint(&dh, &bank)?;
        let c = self.channels();
        let off: Vec<(usize, usize)> = self.off_diag.iter().map(|b| (b.out_channel, b.in_channel)).collect();
        let tap_grad = conv_tap_gradient(&trace.input, &dh, self.radius(), |i, j| i == j || off.contains(&(i, j)))?;

        let mut grads = Vec::with_capacity(self.param_count());
        for (ch, f) in self.diag.iter().enumerate() {
            grads.extend(f.chain(&tap_grad, ch));
        }
        for b in &self.off_diag {
            grads.extend(tap_grad.filter(b.out_channel, b.in_channel).taps().iter().copied());
        }
        if self.bias_trainable {
            let mut db = vec![0.0; c];
            for (idx, v) in dh.values().iter().enumerate() {
                db[idx % c] += v;
            }
            grads.extend(db);
        }
        if let Some(d) = d_log_alpha {
            grads.push(d);
        }
        Ok((d_input, grads))
    }

    /// Gradient of [`Layer::logdet`] in [`Layer::params`] order.
    pub fn logdet_grad(&self, height: usize, width: usize) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.param_count());
        for f in &self.diag {
            g.extend(f.logdet_grad(height, width));
        }
        for b in &self.off_diag {
            g.extend(std::iter::repeat_n(0.0, b.taps.len()));
        }
        if self.bias_trainable {
            g.extend(std::iter::repeat_n(0.0, self.bias.len()));
        }
        if self.activation.is_some() {
            g.push(0.0);
        }
        g
    }
}
