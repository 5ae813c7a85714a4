//! DGMRF priors: a stack of convolutional layers `z = g(x)` with `z ~ N(0, I)`.
//!
//! A linear model is the GMRF `x ~ N(-G^{-1} b, (G^T G)^{-1})` with
//! `G = G_L ... G_1` and `b = g(0)`. Each layer's filter keeps `log |det G_l|`
//! cheap: plus stencils have a closed eigenvalue product, sequential stencils
//! are triangular under some pixel ordering, and multichannel banks are block
//! triangular so only diagonal blocks contribute.

mod layer;
pub(crate) mod manifest;

pub use layer::{
    logdet_plus, logdet_seq, seq_offsets, DiagFilter, Layer, LayerTrace, OffDiagBlock, Orientation, PRelu, PlusFilter,
    SeqFilter, PLUS_OFFSETS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::gram_diagonal_windowed;
use crate::error::{DgmrfError, Result};
use crate::grid::GridTensor;

/// Filter family used when building a model from an architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterType {
    Plus,
    Seq { radius: usize },
}

/// Architecture for randomly initialised models.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub layers: usize,
    pub filter: FilterType,
    pub channels: usize,
    pub nonlinear: bool,
    pub train_bias: bool,
    /// Fixed seq orientations, one per layer; drawn at random when `None`.
    pub orientations: Option<Vec<Orientation>>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            layers: 1,
            filter: FilterType::Plus,
            channels: 1,
            nonlinear: false,
            train_bias: true,
            orientations: None,
        }
    }
}

/// Layer-by-layer forward pass results.
#[derive(Debug, Clone)]
pub struct Forward {
    pub z: GridTensor,
    pub traces: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgmrfModel {
    layers: Vec<Layer>,
    log_sigma: f64,
    sigma_trainable: bool,
}

impl DgmrfModel {
    pub fn new(layers: Vec<Layer>, sigma: f64, sigma_trainable: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(DgmrfError::InvalidArgument("a model needs at least one layer".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DgmrfError::InvalidArgument(format!(
                "noise sd must be positive, got {sigma}"
            )));
        }
        let c = layers[0].channels();
        for l in &layers {
            l.validate()?;
            if l.channels() != c {
                return Err(DgmrfError::Dimension("all layers must share a channel count".into()));
            }
        }
        Ok(DgmrfModel {
            layers,
            log_sigma: sigma.ln(),
            sigma_trainable,
        })
    }

    /// Random near-identity initialisation.
    ///
    /// Filter parameters start at small `N(0, 0.1^2)` offsets around the
    /// identity layer and biases at zero. Channel order cycles by one position
    /// per layer.
    pub fn random(arch: &Architecture, sigma: f64, sigma_trainable: bool, seed: u64) -> Result<Self> {
        if arch.layers == 0 || arch.channels == 0 {
            return Err(DgmrfError::InvalidArgument(
                "layers and channels must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).expect("valid normal");
        let c = arch.channels;
        let mut layers = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let orientation = match &arch.orientations {
                Some(o) => *o
                    .get(l)
                    .ok_or_else(|| DgmrfError::InvalidArgument("fewer orientations than layers".into()))?,
                None => Orientation::ALL[rng.random_range(0..8)],
            };
            let diag: Vec<DiagFilter> = (0..c)
                .map(|_| match arch.filter {
                    FilterType::Plus => {
                        let n: [f64; 6] = std::array::from_fn(|_| noise.sample(&mut rng));
                        DiagFilter::Plus(PlusFilter::near_identity(n))
                    }
                    FilterType::Seq { radius } => {
                        let count = 2 * radius * radius + 2 * radius;
                        let log_center = noise.sample(&mut rng);
                        let taps = (0..count).map(|_| noise.sample(&mut rng)).collect();
                        DiagFilter::Seq(SeqFilter {
                            radius,
                            log_center,
                            taps,
                            orientation,
                        })
                    }
                })
                .collect();
            let radius = diag[0].radius();
            let k = 2 * radius + 1;
            let order: Vec<usize> = (0..c).map(|i| (i + l) % c).collect();
            let mut off_diag = Vec::new();
            for (ri, &i) in order.iter().enumerate() {
                for &j in &order[..ri] {
                    off_diag.push(OffDiagBlock {
                        out_channel: i,
                        in_channel: j,
                        taps: (0..k * k).map(|_| noise.sample(&mut rng)).collect(),
                    });
                }
            }
            layers.push(Layer {
                diag,
                off_diag,
                bias: vec![0.0; c],
                bias_trainable: arch.train_bias,
                activation: arch.nonlinear.then_some(PRelu { log_alpha: 0.0 }),
                channel_order: order,
            });
        }
        if let FilterType::Seq { radius } = arch.filter {
            if !(1..=3).contains(&radius) {
                return Err(DgmrfError::InvalidArgument(format!("seq radius {radius} not in 1..=3")));
            }
        }
        Self::new(layers, sigma, sigma_trainable)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn channels(&self) -> usize {
        self.layers[0].channels()
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn log_sigma(&self) -> f64 {
        self.log_sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.log_sigma = sigma.ln();
    }

    pub fn sigma_trainable(&self) -> bool {
        self.sigma_trainable
    }

    pub fn set_sigma_trainable(&mut self, trainable: bool) {
        self.sigma_trainable = trainable;
    }

    pub fn is_linear(&self) -> bool {
        self.layers.iter().all(Layer::is_linear)
    }

    /// Sum of layer radii: impulse responses of `G` stay within this distance.
    pub fn receptive_radius(&self) -> usize {
        self.layers.iter().map(Layer::radius).sum()
    }

    fn check_input(&self, x: &GridTensor) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(DgmrfError::Dimension(format!(
                "model expects {} channels, grid has {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// `z = g(x)`, keeping each layer's input and pre-activation.
    pub fn forward_g(&self, x: &GridTensor) -> Result<Forward> {
        self.check_input(x)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut z = x.clone();
        for layer in &self.layers {
            let (h, out) = layer.forward(&z)?;
            traces.push(LayerTrace {
                input: z,
                pre_activation: h,
            });
            z = out;
        }
        Ok(Forward { z, traces })
    }

    fn require_linear(&self, what: &str) -> Result<()> {
        if self.is_linear() {
            Ok(())
        } else {
            Err(DgmrfError::UnsupportedModel(format!("{what} requires a linear model")))
        }
    }

    /// `G x`
    pub fn apply_g(&self, x: &GridTensor) -> Result<GridTensor> {
        self.require_linear("G x")?;
        self.check_input(x)?;
        let mut z = x.clone();
        for layer in &self.layers {
            z = layer.apply_linear(&z)?;
        }
        Ok(z)
    }

    /// `G^T v`
    pub fn apply_gt(&self, v: &GridTensor) -> Result<GridTensor> {
        self.require_linear("G^T v")?;
        self.check_input(v)?;
        let mut u = v.clone();
        for layer in self.layers.iter().rev() {
            u = layer.apply_adjoint(&u)?;
        }
        Ok(u)
    }

    /// `b = g(0)` of the affine map `g(x) = G x + b`.
    pub fn model_bias(&self, height: usize, width: usize) -> Result<GridTensor> {
        self.require_linear("the bias vector b")?;
        Ok(self.forward_g(&GridTensor::zeros(height, width, self.channels()))?.z)
    }

    /// `log |det G| = sum_l log |det G_l|`.
    pub fn logdet(&self, height: usize, width: usize) -> f64 {
        self.layers.iter().map(|l| l.logdet(height, width)).sum()
    }

    /// Log prior density of `x`, including all normalising constants.
    ///
    /// For non-linear models the change-of-variables term
    /// `sum_l sum_i log psi_l'(h_{l,i})` is added.
    pub fn log_prior_density(&self, x: &GridTensor) -> Result<f64> {
        let fwd = self.forward_g(x)?;
        let n = x.len() as f64;
        let jac: f64 = self
            .layers
            .iter()
            .zip(&fwd.traces)
            .map(|(l, t)| l.activation_log_jacobian(&t.pre_activation))
            .sum();
        Ok(self.logdet(x.height(), x.width()) + jac
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * fwd.z.dot(&fwd.z))
    }

    /// `diag(G^T G)` by windowed impulse probing.
    pub fn gram_diagonal(&self, height: usize, width: usize) -> Result<Vec<f64>> {
        self.require_linear("diag(G^T G)")?;
        let r = self.receptive_radius();
        Ok(gram_diagonal_windowed(height, width, self.channels(), r, |x| {
            self.apply_g(x).expect("linear model on matching channels")
        }))
    }

    /// Inverts `g` layer by layer: PReLU inverse, then a CG solve of the
    /// normal equations of each linear map.
    pub fn inverse_g(&self, z: &GridTensor, tol: f64) -> Result<GridTensor> {
        self.check_input(z)?;
        let mut x = z.clone();
        for layer in self.layers.iter().rev() {
            let h = match &layer.activation {
                Some(a) => x.map(|v| a.invert(v)),
                None => x,
            };
            let (hh, ww, cc) = h.shape();
            let bias = GridTensor::from_vec(
                hh,
                ww,
                cc,
                (0..hh * ww).flat_map(|_| layer.bias.iter().copied()).collect(),
            )?;
            let rhs_grid = GridTensor::from_vec(
                hh,
                ww,
                cc,
                h.values().iter().zip(bias.values()).map(|(a, b)| a - b).collect(),
            )?;
            let rhs = layer.apply_adjoint(&rhs_grid)?.into_values();
            let op = |u: &[f64]| {
                let g = GridTensor::from_vec(hh, ww, cc, u.to_vec()).expect("shape");
                let gu = layer.apply_linear(&g).expect("shape");
                layer.apply_adjoint(&gu).expect("shape").into_values()
            };
            let cap = 50 * rhs.len() + 100;
            let sol = crate::cg::cg_solve(op, &rhs, tol, cap)?;
            x = GridTensor::from_vec(hh, ww, cc, sol.x)?;
        }
        Ok(x)
    }

    /// Number of trainable model parameters (filters, biases, slopes, log noise sd).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum::<usize>() + usize::from(self.sigma_trainable)
    }

    /// Trainable parameters, layer by layer, followed by `log sigma` when trainable.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.params(&mut out);
        }
        if self.sigma_trainable {
            out.push(self.log_sigma);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(DgmrfError::Dimension(format!(
                "{} parameters for a model with {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            at += l.set_params(&p[at..]);
        }
        if self.sigma_trainable {
            self.log_sigma = p[at];
        }
        Ok(())
    }
}

/// Matern-type model `tau (kappa^2 I + G)^gamma x = z` written as `gamma`
/// fixed plus layers with `a1 = 4 + kappa^2`, `a2..a5 = -1`, each scaled by
/// `tau^(1/gamma)`, followed by `layers - gamma` identity layers.
pub fn matern_layers(kappa2: f64, tau: f64, gamma: usize, layers: usize, sigma: f64) -> Result<DgmrfModel> {
    if gamma == 0 || layers < gamma {
        return Err(DgmrfError::InvalidArgument(format!(
            "need layers >= gamma >= 1, got layers {layers}, gamma {gamma}"
        )));
    }
    if kappa2 < 0.0 || tau <= 0.0 {
        return Err(DgmrfError::InvalidArgument("kappa^2 must be >= 0 and tau > 0".into()));
    }
    let s = tau.powf(1.0 / gamma as f64);
    let mut out: Vec<Layer> = (0..gamma)
        .map(|_| {
            Layer::single(DiagFilter::Plus(PlusFilter::Fixed([
                s * (4.0 + kappa2),
                -s,
                -s,
                -s,
                -s,
            ])))
        })
        .collect();
    out.extend((gamma..layers).map(|_| Layer::identity(1)));
    DgmrfModel::new(out, sigma, false)
}
