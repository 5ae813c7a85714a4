//! Lattice tensors, observation masks and datasets.
//!
//! Every field in the crate is stored row-major over `(row, column, channel)`:
//! the value at `(r, c, k)` of an `H x W x C` grid lives at index
//! `(r * W + c) * C + k` of the flat vector. All operators and the file format
//! agree on this single convention.

use crate::error::{DgmrfError, Result};

/// An `H x W x C` real-valued field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl GridTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        GridTensor {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DgmrfError::Dimension(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(DgmrfError::Dimension(format!(
                "{} values for a {height}x{width}x{channels} grid",
                values.len()
            )));
        }
        Ok(GridTensor {
            height,
            width,
            channels,
            values,
        })
    }

    /// Inverse of [`GridTensor::vectorize`].
    pub fn devectorize(height: usize, width: usize, channels: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(height, width, channels, values.to_vec())
    }

    pub fn vectorize(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of scalar entries, `H * W * C`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.values[i] = value;
    }

    pub fn same_shape(&self, other: &GridTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn dot(&self, other: &GridTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridTensor {
        GridTensor {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// Per-pixel observation indicator (`true` = observed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            observed: vec![true; height * width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            observed: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != height * width {
            return Err(DgmrfError::Dimension(format!(
                "mask of {} entries for a {height}x{width} grid",
                observed.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            observed,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, observed: bool) {
        self.observed[row * self.width + col] = observed;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    /// Number of observed pixels.
    pub fn count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Expands the pixel mask to a 0/1 weight per entry of an `H x W x C` field.
    pub fn weights(&self, channels: usize) -> Vec<f64> {
        self.observed
            .iter()
            .flat_map(|&o| std::iter::repeat_n(if o { 1.0 } else { 0.0 }, channels))
            .collect()
    }
}

/// Observations `y` (zero at missing pixels), their mask and optional covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: GridTensor,
    mask: Mask,
    covariates: Option<Covariates>,
}

/// Row-major `(H*W) x p` covariate matrix, one row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(DgmrfError::Dimension(format!(
                "covariate matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Covariates { rows, cols, values })
    }

    /// Covariates stored as an `H x W x p` grid.
    pub fn from_grid(grid: &GridTensor) -> Self {
        Covariates {
            rows: grid.height() * grid.width(),
            cols: grid.channels(),
            values: grid.values().to_vec(),
        }
    }

    pub fn to_grid(&self, height: usize, width: usize) -> Result<GridTensor> {
        GridTensor::from_vec(height, width, self.cols, self.values.clone())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// `F * beta`
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(beta).map(|(f, b)| f * b).sum())
            .collect()
    }

    /// `F^T * r`
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &ri) in r.iter().enumerate().take(self.rows) {
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.get(i, k) * ri;
            }
        }
        out
    }
}

impl Dataset {
    /// Builds a dataset, zeroing `y` at missing pixels.
    pub fn new(mut y: GridTensor, mask: Mask) -> Result<Self> {
        if mask.height() != y.height() || mask.width() != y.width() {
            return Err(DgmrfError::Dimension(format!(
                "mask {}x{} does not match observations {}x{}",
                mask.height(),
                mask.width(),
                y.height(),
                y.width()
            )));
        }
        let c = y.channels();
        for (p, &o) in mask.as_slice().iter().enumerate() {
            if !o {
                y.values_mut()[p * c..(p + 1) * c].fill(0.0);
            }
        }
        Ok(Dataset {
            y,
            mask,
            covariates: None,
        })
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Result<Self> {
        let pixels = self.y.height() * self.y.width();
        if covariates.rows() != pixels {
            return Err(DgmrfError::Dimension(format!(
                "covariates have {} rows, grid has {pixels} pixels",
                covariates.rows()
            )));
        }
        if self.y.channels() != 1 {
            return Err(DgmrfError::Dimension(
                "covariates require single-channel observations".into(),
            ));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn y(&self) -> &GridTensor {
        &self.y
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    pub fn channels(&self) -> usize {
        self.y.channels()
    }

    /// Number of observed scalar entries (observed pixels times channels).
    pub fn observed_count(&self) -> usize {
        self.mask.count() * self.y.channels()
    }

    /// Mean of the observed entries, or 0 when nothing is observed.
    pub fn observed_mean(&self) -> f64 {
        let w = self.mask.weights(self.channels());
        let n: f64 = w.iter().sum();
        if n == 0.0 {
            return 0.0;
        }
        self.y.values().iter().zip(&w).map(|(v, m)| v * m).sum::<f64>() / n
    }
}

fn pad_grid(t: &GridTensor, width: usize) -> GridTensor {
    let (h, w, c) = t.shape();
    let mut out = GridTensor::zeros(h + 2 * width, w + 2 * width, c);
    for r in 0..h {
        let src = &t.values()[r * w * c..(r + 1) * w * c];
        let start = out.index(r + width, width, 0);
        out.values_mut()[start..start + w * c].copy_from_slice(src);
    }
    out
}

/// Surrounds the dataset with a frame of missing pixels.
pub fn pad_frame(d: &Dataset, width: usize) -> Dataset {
    if width == 0 {
        return d.clone();
    }
    let y = pad_grid(d.y(), width);
    let (h, w) = (y.height(), y.width());
    let mut mask = Mask::empty(h, w);
    for r in 0..d.height() {
        for c in 0..d.width() {
            mask.set(r + width, c + width, d.mask().is_observed(r, c));
        }
    }
    let covariates = d.covariates().map(|f| {
        let grid = f.to_grid(d.height(), d.width()).expect("covariate rows match the grid");
        Covariates::from_grid(&pad_grid(&grid, width))
    });
    Dataset { y, mask, covariates }
}

/// Removes a frame of the given width; inverse of [`pad_frame`] on the field.
pub fn crop_frame(t: &GridTensor, width: usize) -> Result<GridTensor> {
    let (h, w, c) = t.shape();
    if 2 * width >= h.min(w) {
        return Err(DgmrfError::Dimension(format!(
            "cannot crop a {width}-pixel frame from a {h}x{w} grid"
        )));
    }
    let (nh, nw) = (h - 2 * width, w - 2 * width);
    let mut values = Vec::with_capacity(nh * nw * c);
    for r in width..h - width {
        let start = t.index(r, width, 0);
        values.extend_from_slice(&t.values()[start..start + nw * c]);
    }
    GridTensor::from_vec(nh, nw, c, values)
}

/// Crops a pixel mask like [`crop_frame`].
pub fn crop_mask(m: &Mask, width: usize) -> Result<Mask> {
    let (h, w) = (m.height(), m.width());
    if 2 * width >= h.min(w) {
        return Err(DgmrfError::Dimension(format!(
            "cannot crop a {width}-pixel frame from a {h}x{w} mask"
        )));
    }
    let mut observed = Vec::with_capacity((h - 2 * width) * (w - 2 * width));
    for r in width..h - width {
        for c in width..w - width {
            observed.push(m.is_observed(r, c));
        }
    }
    Mask::from_vec(h - 2 * width, w - 2 * width, observed)
}
