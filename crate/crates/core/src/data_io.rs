//! Grid text format, checkpoints, CSV conversion and synthetic toy data.
//!
//! A grid file is a header line `H W C` followed by one line per grid row
//! holding `W * C` values in canonical order. `NaN` marks a missing value; a
//! pixel with any `NaN` channel is missing.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cg::{cg_solve, default_max_iter, DEFAULT_TOLERANCE};
use crate::conv::{conv_same, Filter2D, FilterBank};
use crate::error::{DgmrfError, Result};
use crate::grid::{Covariates, Dataset, GridTensor, Mask};
use crate::model::manifest::{parse_manifest, Tokens};
use crate::model::DgmrfModel;
use crate::vi::VariationalParams;

/// Formats with 17 significant digits so parsing recovers the exact value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> DgmrfError {
    DgmrfError::Parse {
        line,
        message: message.into(),
    }
}

/// Serializes a grid, writing `NaN` at pixels the mask marks missing.
pub fn format_grid(t: &GridTensor, mask: Option<&Mask>) -> String {
    let (h, w, c) = t.shape();
    let mut out = format!("{h} {w} {c}\n");
    for r in 0..h {
        let mut items = Vec::with_capacity(w * c);
        for col in 0..w {
            let missing = mask.is_some_and(|m| !m.is_observed(r, col));
            for k in 0..c {
                items.push(if missing {
                    "NaN".to_string()
                } else {
                    fmt_f64(t.get(r, col, k))
                });
            }
        }
        out.push_str(&items.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a grid; missing pixels get value 0 and mask 0.
pub fn parse_grid(text: &str) -> Result<(GridTensor, Mask)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let mut t = Tokens::new(hl + 1, header);
    let (h, w, c) = (t.usize()?, t.usize()?, t.usize()?);
    t.finish()?;
    if h == 0 || w == 0 || c == 0 {
        return Err(parse_err(hl + 1, "grid dimensions must be positive"));
    }
    let total = h * w * c;
    let mut values = Vec::with_capacity(total);
    let mut last_line = hl + 1;
    for (i, line) in lines {
        last_line = i + 1;
        let mut t = Tokens::new(i + 1, line);
        let row = t.rest_f64()?;
        if values.len() + row.len() > total {
            return Err(parse_err(
                i + 1,
                format!("more than the {total} values declared in the header"),
            ));
        }
        values.extend(row);
    }
    if values.len() != total {
        return Err(parse_err(
            last_line,
            format!("expected {total} values, found {}", values.len()),
        ));
    }
    let mut mask = Mask::full(h, w);
    for p in 0..h * w {
        let px = &mut values[p * c..(p + 1) * c];
        if px.iter().any(|v| v.is_nan()) {
            px.fill(0.0);
            mask.set(p / w, p % w, false);
        }
    }
    Ok((GridTensor::from_vec(h, w, c, values)?, mask))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<(GridTensor, Mask)> {
    parse_grid(&fs::read_to_string(path)?)
}

pub fn save_grid(path: impl AsRef<Path>, t: &GridTensor, mask: Option<&Mask>) -> Result<()> {
    fs::write(path, format_grid(t, mask))?;
    Ok(())
}

/// Loads observations and, optionally, a covariate grid with one channel per covariate.
pub fn load_dataset(path: impl AsRef<Path>, covariates: Option<&Path>) -> Result<Dataset> {
    let (y, mask) = load_grid(path)?;
    let data = Dataset::new(y, mask)?;
    match covariates {
        Some(p) => {
            let (f, _) = load_grid(p)?;
            if f.height() != data.height() || f.width() != data.width() {
                return Err(DgmrfError::Dimension(
                    "covariate grid does not match the observations".into(),
                ));
            }
            data.with_covariates(Covariates::from_grid(&f))
        }
        None => Ok(data),
    }
}

/// Division by the largest absolute observed value, so observations lie in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { scale: 1.0 };

    pub fn from_data(data: &Dataset) -> Self {
        let w = data.mask().weights(data.channels());
        let m = data
            .y()
            .values()
            .iter()
            .zip(&w)
            .filter(|(_, &m)| m > 0.0)
            .fold(0.0f64, |a, (v, _)| a.max(v.abs()));
        Normalization {
            scale: if m > 0.0 { m } else { 1.0 },
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let y = data.y().map(|v| v / self.scale);
        let out = Dataset::new(y, data.mask().clone())?;
        match data.covariates() {
            Some(f) => out.with_covariates(f.clone()),
            None => Ok(out),
        }
    }

    /// Maps a field (mean or standard deviation) back to the data scale.
    pub fn invert(&self, t: &GridTensor) -> GridTensor {
        t.map(|v| v * self.scale)
    }
}

/// Piecewise-constant offset added on one side of a grid line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Edge {
    /// Adds `amplitude` to columns `>= column`, for rows in `span` (all rows if `None`).
    Vertical {
        column: usize,
        amplitude: f64,
        span: Option<(usize, usize)>,
    },
    /// Adds `amplitude` to rows `>= row`, for columns in `span` (all columns if `None`).
    Horizontal {
        row: usize,
        amplitude: f64,
        span: Option<(usize, usize)>,
    },
}

/// Axis-aligned block of missing pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissingSpec {
    /// Fraction of pixels removed uniformly at random.
    pub fraction: f64,
    pub rects: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub height: usize,
    pub width: usize,
    pub kappa2: f64,
    pub tau: f64,
    pub gamma: usize,
    pub seed: u64,
    pub edges: Vec<Edge>,
    pub missing: MissingSpec,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            height: 160,
            width: 120,
            kappa2: 8.0 / 2500.0,
            tau: 1.0,
            gamma: 1,
            seed: 0,
            edges: Vec::new(),
            missing: MissingSpec::default(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(DgmrfError::InvalidArgument("toy grid must be non-empty".into()));
        }
        if !(self.kappa2 >= 0.0) || !(self.tau > 0.0) || self.gamma == 0 {
            return Err(DgmrfError::InvalidArgument(
                "toy data needs kappa^2 >= 0, tau > 0 and gamma >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.missing.fraction) {
            return Err(DgmrfError::InvalidArgument(
                "missing fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `x` from `tau (kappa^2 I + G)^gamma x = z`, `z ~ N(0, I)`, where `G`
/// is the zero-padded five-point Laplacian; each factor is a CG solve.
pub fn gen_matern(config: &ToyConfig) -> Result<GridTensor> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut stencil = Filter2D::laplace_stencil();
    stencil.set(0, 0, 4.0 + config.kappa2);
    let bank = FilterBank::single(stencil);
    let op = |u: &[f64]| {
        let g = GridTensor::from_vec(h, w, 1, u.to_vec()).expect("grid shape");
        conv_same(&g, &bank, &[0.0]).expect("single channel").into_values()
    };
    let mut x: Vec<f64> = z.iter().map(|v| v / config.tau).collect();
    for _ in 0..config.gamma {
        x = cg_solve(op, &x, DEFAULT_TOLERANCE, default_max_iter(h * w))?.x;
    }
    GridTensor::from_vec(h, w, 1, x)
}

fn span_range(span: Option<(usize, usize)>, n: usize) -> Result<std::ops::Range<usize>> {
    match span {
        None => Ok(0..n),
        Some((a, b)) if a < b && b <= n => Ok(a..b),
        Some((a, b)) => Err(DgmrfError::InvalidArgument(format!(
            "edge span {a}..{b} is outside 0..{n}"
        ))),
    }
}

/// Adds the offsets of every edge to the field.
pub fn add_edges(field: &GridTensor, edges: &[Edge]) -> Result<GridTensor> {
    let (h, w, c) = field.shape();
    let mut out = field.clone();
    for e in edges {
        match *e {
            Edge::Vertical {
                column,
                amplitude,
                span,
            } => {
                if column >= w {
                    return Err(DgmrfError::InvalidArgument(format!(
                        "vertical edge at column {column} of {w}"
                    )));
                }
                for r in span_range(span, h)? {
                    for col in column..w {
                        for k in 0..c {
                            out.set(r, col, k, out.get(r, col, k) + amplitude);
                        }
                    }
                }
            }
            Edge::Horizontal { row, amplitude, span } => {
                if row >= h {
                    return Err(DgmrfError::InvalidArgument(format!(
                        "horizontal edge at row {row} of {h}"
                    )));
                }
                for r in row..h {
                    for col in span_range(span, w)? {
                        for k in 0..c {
                            out.set(r, col, k, out.get(r, col, k) + amplitude);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Observation mask: `round(fraction * H * W)` pixels removed at random, then the rectangles.
pub fn missing_mask(height: usize, width: usize, spec: &MissingSpec, seed: u64) -> Result<Mask> {
    let n = height * width;
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(DgmrfError::InvalidArgument(
            "missing fraction must lie in [0, 1]".into(),
        ));
    }
    let mut mask = Mask::full(height, width);
    let count = (spec.fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in sample(&mut rng, n, count).into_vec() {
        mask.set(p / width, p % width, false);
    }
    for r in &spec.rects {
        if r.row + r.height > height || r.col + r.width > width {
            return Err(DgmrfError::InvalidArgument(format!(
                "missing block {r:?} exceeds the grid"
            )));
        }
        for i in r.row..r.row + r.height {
            for j in r.col..r.col + r.width {
                mask.set(i, j, false);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub truth: GridTensor,
    pub mask: Mask,
}

impl ToyData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.truth.clone(), self.mask.clone())
    }
}

/// Matern field plus edges, with the configured missingness.
pub fn gen_toy(config: &ToyConfig) -> Result<ToyData> {
    let field = gen_matern(config)?;
    let truth = add_edges(&field, &config.edges)?;
    let mask = missing_mask(
        config.height,
        config.width,
        &config.missing,
        config.seed.wrapping_add(1),
    )?;
    Ok(ToyData { truth, mask })
}

/// Reads `lon,lat,value` rows in row-major grid order (an empty value is
/// missing) and returns the observations with covariates `(1, lon, lat)`
/// as a three-channel grid. A non-numeric first row is treated as a header.
pub fn convert_csv(text: &str, height: usize, width: usize) -> Result<(GridTensor, Mask, GridTensor)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(f64, f64, Option<f64>)> = Vec::with_capacity(height * width);
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(line, format!("expected a number, found `{s}`")))
        };
        if i == 0 && rec[0].parse::<f64>().is_err() {
            continue;
        }
        let value = match &rec[2] {
            "" => None,
            s => Some(num(s)?).filter(|v| !v.is_nan()),
        };
        rows.push((num(&rec[0])?, num(&rec[1])?, value));
    }
    if rows.len() != height * width {
        return Err(DgmrfError::Dimension(format!(
            "{} data rows for a {height}x{width} grid",
            rows.len()
        )));
    }
    let mut y = GridTensor::zeros(height, width, 1);
    let mut mask = Mask::full(height, width);
    let mut cov = GridTensor::zeros(height, width, 3);
    for (p, (lon, lat, v)) in rows.into_iter().enumerate() {
        let (r, c) = (p / width, p % width);
        match v {
            Some(v) => y.set(r, c, 0, v),
            None => mask.set(r, c, false),
        }
        cov.set(r, c, 0, 1.0);
        cov.set(r, c, 1, lon);
        cov.set(r, c, 2, lat);
    }
    Ok((y, mask, cov))
}

/// Trained state: model, variational parameters and preprocessing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DgmrfModel,
    pub variational: VariationalParams,
    pub normalization: Normalization,
    /// Width of the missing-pixel frame added before training.
    pub frame: usize,
}

fn vector_line(name: &str, v: &[f64]) -> String {
    let mut s = format!("{name} {}", v.len());
    for x in v {
        s.push(' ');
        s.push_str(&fmt_f64(*x));
    }
    s.push('\n');
    s
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::from("dgmrf-checkpoint 1\n");
        out.push_str(&format!("normalization {}\n", fmt_f64(self.normalization.scale)));
        out.push_str(&format!("frame {}\n", self.frame));
        out.push_str(&self.model.to_manifest());
        out.push_str(&vector_line("mean", &self.variational.mean));
        out.push_str(&vector_line("log_sd", &self.variational.log_sd));
        if let Some(t) = &self.variational.trend {
            out.push_str(&vector_line("trend_mean", &t.mean));
            out.push_str(&vector_line("trend_log_sd", &t.log_sd));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let line = |i: usize| -> Result<Tokens<'_>> {
            lines
                .get(i)
                .map(|l| Tokens::new(i + 1, l))
                .ok_or_else(|| parse_err(i + 1, "unexpected end of checkpoint"))
        };
        let mut t = line(0)?;
        t.expect("dgmrf-checkpoint")?;
        if t.usize()? != 1 {
            return Err(t.err("unsupported checkpoint version"));
        }
        let mut t = line(1)?;
        t.expect("normalization")?;
        let scale = t.f64()?;
        t.finish()?;
        let mut t = line(2)?;
        t.expect("frame")?;
        let frame = t.usize()?;
        t.finish()?;
        let (model, mut i) = parse_manifest(text, 3)?;
        let mut vector = |name: &str| -> Result<Option<Vec<f64>>> {
            while i < lines.len() && lines[i].trim().is_empty() {
                i += 1;
            }
            if i >= lines.len() {
                return Ok(None);
            }
            let mut t = Tokens::new(i + 1, lines[i]);
            t.expect(name)?;
            let n = t.usize()?;
            let v = t.f64s(n)?;
            t.finish()?;
            i += 1;
            Ok(Some(v))
        };
        let mean = vector("mean")?.ok_or_else(|| parse_err(lines.len() + 1, "missing variational mean"))?;
        let log_sd = vector("log_sd")?.ok_or_else(|| parse_err(lines.len() + 1, "missing variational log sd"))?;
        let mut variational = VariationalParams::new(mean, log_sd)?;
        if let Some(tm) = vector("trend_mean")? {
            let ts = vector("trend_log_sd")?.ok_or_else(|| parse_err(lines.len() + 1, "missing trend log sd"))?;
            variational = variational.with_trend(tm, ts)?;
        }
        Ok(Checkpoint {
            model,
            variational,
            normalization: Normalization { scale },
            frame,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
