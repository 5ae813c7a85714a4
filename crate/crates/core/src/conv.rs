//! Multichannel same convolution with zero padding, its adjoint, and
//! impulse-probing helpers.
//!
//! A convolution here is the cross-correlation used by CNN libraries:
//! `out_i(r, c) = sum_j sum_{dr, dc} w[i][j][R + dr][R + dc] * z_j(r + dr, c + dc) + b_i`,
//! where reads outside the image are zero. With this boundary the stencil
//! operator of the second-order intrinsic GMRF is invertible.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{DgmrfError, Result};
use crate::grid::GridTensor;

/// Largest lattice (`H * W * C`) that [`assemble_dense`] will build.
pub const DENSE_GUARD: usize = 4096;

/// A single `(2R+1) x (2R+1)` stencil, indexed `[row][col]` with the center at `(R, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter2D {
    radius: usize,
    taps: Vec<f64>,
}

impl Filter2D {
    pub fn zeros(radius: usize) -> Self {
        let k = 2 * radius + 1;
        Filter2D {
            radius,
            taps: vec![0.0; k * k],
        }
    }

    pub fn identity(radius: usize) -> Self {
        let mut f = Self::zeros(radius);
        f.set(0, 0, 1.0);
        f
    }

    /// Builds a filter from a row-major square of taps with odd side.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let k = rows.len();
        if k.is_multiple_of(2) || rows.iter().any(|r| r.len() != k) {
            return Err(DgmrfError::Dimension("filter must be an odd square".into()));
        }
        Ok(Filter2D {
            radius: k / 2,
            taps: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    /// The stencil `[[0,-1,0],[-1,4,-1],[0,-1,0]]`.
    pub fn laplace_stencil() -> Self {
        Self::from_rows(&[&[0.0, -1.0, 0.0], &[-1.0, 4.0, -1.0], &[0.0, -1.0, 0.0]]).unwrap()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Tap at offset `(dr, dc)` from the center.
    pub fn get(&self, dr: isize, dc: isize) -> f64 {
        let r = self.radius as isize;
        self.taps[((dr + r) * (2 * r + 1) + dc + r) as usize]
    }

    pub fn set(&mut self, dr: isize, dc: isize, v: f64) {
        let r = self.radius as isize;
        self.taps[((dr + r) * (2 * r + 1) + dc + r) as usize] = v;
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// `C x C` filters of common radius, indexed `(out channel, in channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    channels: usize,
    radius: usize,
    taps: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(channels: usize, radius: usize) -> Self {
        let k = 2 * radius + 1;
        FilterBank {
            channels,
            radius,
            taps: vec![0.0; channels * channels * k * k],
        }
    }

    pub fn identity(channels: usize, radius: usize) -> Self {
        let mut b = Self::zeros(channels, radius);
        for c in 0..channels {
            b.set(c, c, 0, 0, 1.0);
        }
        b
    }

    pub fn single(filter: Filter2D) -> Self {
        FilterBank {
            channels: 1,
            radius: filter.radius,
            taps: filter.taps,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    fn offset(&self, out_c: usize, in_c: usize) -> usize {
        let k = self.side();
        (out_c * self.channels + in_c) * k * k
    }

    pub fn get(&self, out_c: usize, in_c: usize, dr: isize, dc: isize) -> f64 {
        let r = self.radius as isize;
        let k = self.side() as isize;
        self.taps[self.offset(out_c, in_c) + ((dr + r) * k + dc + r) as usize]
    }

    pub fn set(&mut self, out_c: usize, in_c: usize, dr: isize, dc: isize, v: f64) {
        let r = self.radius as isize;
        let k = self.side() as isize;
        let o = self.offset(out_c, in_c);
        self.taps[o + ((dr + r) * k + dc + r) as usize] = v;
    }

    pub fn filter(&self, out_c: usize, in_c: usize) -> Filter2D {
        let k = self.side();
        let o = self.offset(out_c, in_c);
        Filter2D {
            radius: self.radius,
            taps: self.taps[o..o + k * k].to_vec(),
        }
    }

    pub fn set_filter(&mut self, out_c: usize, in_c: usize, f: &Filter2D) {
        assert_eq!(f.radius, self.radius, "filter radius must match the bank");
        let k = self.side();
        let o = self.offset(out_c, in_c);
        self.taps[o..o + k * k].copy_from_slice(&f.taps);
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    fn is_zero_block(&self, out_c: usize, in_c: usize) -> bool {
        let k = self.side();
        let o = self.offset(out_c, in_c);
        self.taps[o..o + k * k].iter().all(|&t| t == 0.0)
    }
}

fn check_channels(z: &GridTensor, bank: &FilterBank) -> Result<()> {
    if z.channels() != bank.channels() {
        return Err(DgmrfError::Dimension(format!(
            "grid has {} channels, filter bank {}",
            z.channels(),
            bank.channels()
        )));
    }
    Ok(())
}

/// Clipped range of output coordinates `p` with `0 <= p + d < n`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Same convolution with zero padding plus a per-channel bias.
pub fn conv_same(z: &GridTensor, bank: &FilterBank, bias: &[f64]) -> Result<GridTensor> {
    check_channels(z, bank)?;
    if bias.len() != bank.channels() {
        return Err(DgmrfError::Dimension(format!(
            "{} biases for {} channels",
            bias.len(),
            bank.channels()
        )));
    }
    let (h, w, cc) = z.shape();
    let mut out = GridTensor::zeros(h, w, cc);
    let r = bank.radius() as isize;
    let zv = z.values();
    let ov = out.values_mut();
    for i in 0..cc {
        for j in 0..cc {
            if bank.is_zero_block(i, j) {
                continue;
            }
            for dr in -r..=r {
                let (r0, r1) = valid_range(h, dr);
                for dc in -r..=r {
                    let t = bank.get(i, j, dr, dc);
                    if t == 0.0 {
                        continue;
                    }
                    let (c0, c1) = valid_range(w, dc);
                    for row in r0..r1 {
                        let src_row = (row as isize + dr) as usize;
                        for col in c0..c1 {
                            let src_col = (col as isize + dc) as usize;
                            ov[(row * w + col) * cc + i] += t * zv[(src_row * w + src_col) * cc + j];
                        }
                    }
                }
            }
        }
        if bias[i] != 0.0 {
            for p in 0..h * w {
                ov[p * cc + i] += bias[i];
            }
        }
    }
    Ok(out)
}

/// Applies `G^T`, the transpose of the linear part of [`conv_same`].
///
/// Equivalent to same convolution with every filter rotated by 180 degrees and
/// the channel indices swapped.
pub fn conv_adjoint(v: &GridTensor, bank: &FilterBank) -> Result<GridTensor> {
    check_channels(v, bank)?;
    let (h, w, cc) = v.shape();
    let mut out = GridTensor::zeros(h, w, cc);
    let r = bank.radius() as isize;
    let vv = v.values();
    let ov = out.values_mut();
    for j in 0..cc {
        for i in 0..cc {
            if bank.is_zero_block(i, j) {
                continue;
            }
            for dr in -r..=r {
                // out_j(q) += t * v_i(q - d) for q - d inside the image
                let (r0, r1) = valid_range(h, -dr);
                for dc in -r..=r {
                    let t = bank.get(i, j, dr, dc);
                    if t == 0.0 {
                        continue;
                    }
                    let (c0, c1) = valid_range(w, -dc);
                    for row in r0..r1 {
                        let src_row = (row as isize - dr) as usize;
                        for col in c0..c1 {
                            let src_col = (col as isize - dc) as usize;
                            ov[(row * w + col) * cc + j] += t * vv[(src_row * w + src_col) * cc + i];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Contracts an output cotangent with the input to give the gradient of
/// `<upstream, conv_same(input, bank)>` with respect to every tap.
///
/// Only blocks where `active(i, j)` holds are computed; the rest stay zero.
pub fn conv_tap_gradient(
    input: &GridTensor,
    upstream: &GridTensor,
    radius: usize,
    active: impl Fn(usize, usize) -> bool,
) -> Result<FilterBank> {
    if !input.same_shape(upstream) {
        return Err(DgmrfError::Dimension("input and cotangent shapes differ".into()));
    }
    let (h, w, cc) = input.shape();
    let mut g = FilterBank::zeros(cc, radius);
    let r = radius as isize;
    let iv = input.values();
    let uv = upstream.values();
    for i in 0..cc {
        for j in 0..cc {
            if !active(i, j) {
                continue;
            }
            for dr in -r..=r {
                let (r0, r1) = valid_range(h, dr);
                for dc in -r..=r {
                    let (c0, c1) = valid_range(w, dc);
                    let mut acc = 0.0;
                    for row in r0..r1 {
                        let src_row = (row as isize + dr) as usize;
                        for col in c0..c1 {
                            let src_col = (col as isize + dc) as usize;
                            acc += uv[(row * w + col) * cc + i] * iv[(src_row * w + src_col) * cc + j];
                        }
                    }
                    g.set(i, j, dr, dc, acc);
                }
            }
        }
    }
    Ok(g)
}

/// Assembles the dense `N x N` matrix of a linear grid operator by applying it
/// to every canonical basis grid. Refuses lattices above [`DENSE_GUARD`].
pub fn assemble_dense<F>(op: F, height: usize, width: usize, channels: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&GridTensor) -> GridTensor,
{
    let n = height * width * channels;
    if n > DENSE_GUARD {
        return Err(DgmrfError::InvalidArgument(format!(
            "dense assembly of {n} unknowns exceeds the guard of {DENSE_GUARD}"
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut basis = GridTensor::zeros(height, width, channels);
    for j in 0..n {
        basis.values_mut()[j] = 1.0;
        let col = op(&basis);
        basis.values_mut()[j] = 0.0;
        for (i, v) in col.values().iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Diagonal of `G^T G` for a linear operator whose impulse responses are
/// supported within `radius` pixels, computed by probing each unit vector
/// on a clipped window around its pixel.
///
/// `op` is applied to window-sized grids, so it must act by convolution
/// (translation-equivariant with zero padding) rather than assume a fixed size.
pub fn gram_diagonal_windowed<F>(height: usize, width: usize, channels: usize, radius: usize, op: F) -> Vec<f64>
where
    F: Fn(&GridTensor) -> GridTensor + Sync,
{
    let pixels: Vec<usize> = (0..height * width).collect();
    let per_pixel: Vec<Vec<f64>> = pixels
        .par_iter()
        .map(|&p| {
            let (row, col) = (p / width, p % width);
            let r0 = row.saturating_sub(radius);
            let r1 = (row + radius + 1).min(height);
            let c0 = col.saturating_sub(radius);
            let c1 = (col + radius + 1).min(width);
            let mut probe = GridTensor::zeros(r1 - r0, c1 - c0, channels);
            (0..channels)
                .map(|k| {
                    probe.set(row - r0, col - c0, k, 1.0);
                    let resp = op(&probe);
                    probe.set(row - r0, col - c0, k, 0.0);
                    resp.values().iter().map(|v| v * v).sum()
                })
                .collect()
        })
        .collect();
    per_pixel.into_iter().flatten().collect()
}

/// Exact `O(N^2)` diagonal of `G^T G` using full-size impulses; validation fallback.
pub fn gram_diagonal_exact<F>(height: usize, width: usize, channels: usize, op: F) -> Vec<f64>
where
    F: Fn(&GridTensor) -> GridTensor + Sync,
{
    let n = height * width * channels;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = GridTensor::zeros(height, width, channels);
            e.values_mut()[i] = 1.0;
            op(&e).values().iter().map(|v| v * v).sum()
        })
        .collect()
}
