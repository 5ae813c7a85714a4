//! Flat text manifest for models.
//!
//! ```text
//! dgmrf-model 1
//! sigma <log sigma> trainable|fixed
//! layers <L>
//! layer <l> channels <C> activation none|prelu <log alpha> bias trainable|frozen <b_1..b_C> order <o_1..o_C>
//! diag <c> plus-reparam <rho_1..rho_6>
//! diag <c> plus-fixed <a_1..a_5>
//! diag <c> seq <radius> <orientation> <log center> <taps..>
//! offdiag <i> <j> <taps..>
//! end
//! ```
//!
//! Reals are written with 17 significant digits, so a save/load cycle is bit-exact.

use super::{DgmrfModel, DiagFilter, Layer, OffDiagBlock, Orientation, PRelu, PlusFilter, SeqFilter};
use crate::data_io::fmt_f64;
use crate::error::{DgmrfError, Result};

const MAGIC: &str = "dgmrf-model";

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

impl DgmrfModel {
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{MAGIC} 1\n"));
        out.push_str(&format!(
            "sigma {} {}\n",
            fmt_f64(self.log_sigma),
            if self.sigma_trainable { "trainable" } else { "fixed" }
        ));
        out.push_str(&format!("layers {}\n", self.layers.len()));
        for (l, layer) in self.layers.iter().enumerate() {
            let act = match &layer.activation {
                Some(a) => format!("prelu {}", fmt_f64(a.log_alpha)),
                None => "none".to_string(),
            };
            let order: Vec<String> = layer.channel_order.iter().map(|o| o.to_string()).collect();
            out.push_str(&format!(
                "layer {l} channels {} activation {act} bias {} {} order {}\n",
                layer.channels(),
                if layer.bias_trainable { "trainable" } else { "frozen" },
                join(&layer.bias),
                order.join(" ")
            ));
            for (c, f) in layer.diag.iter().enumerate() {
                match f {
                    DiagFilter::Plus(PlusFilter::Reparam(rho)) => {
                        out.push_str(&format!("diag {c} plus-reparam {}\n", join(rho)))
                    }
                    DiagFilter::Plus(PlusFilter::Fixed(t)) => {
                        out.push_str(&format!("diag {c} plus-fixed {}\n", join(t)))
                    }
                    DiagFilter::Seq(s) => out.push_str(&format!(
                        "diag {c} seq {} {} {} {}\n",
                        s.radius,
                        s.orientation.index(),
                        fmt_f64(s.log_center),
                        join(&s.taps)
                    )),
                }
            }
            for b in &layer.off_diag {
                out.push_str(&format!(
                    "offdiag {} {} {}\n",
                    b.out_channel,
                    b.in_channel,
                    join(&b.taps)
                ));
            }
        }
        out.push_str("end\n");
        out
    }

    /// Parses a manifest produced by [`DgmrfModel::to_manifest`].
    pub fn from_manifest(text: &str) -> Result<Self> {
        Ok(parse_manifest(text, 0)?.0)
    }
}

pub(crate) struct Tokens<'a> {
    line: usize,
    items: Vec<&'a str>,
    at: usize,
}

impl<'a> Tokens<'a> {
    pub(crate) fn new(line: usize, text: &'a str) -> Self {
        Tokens {
            line,
            items: text.split_whitespace().collect(),
            at: 0,
        }
    }

    pub(crate) fn err(&self, message: impl Into<String>) -> DgmrfError {
        DgmrfError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    pub(crate) fn word(&mut self) -> Result<&'a str> {
        let w = self
            .items
            .get(self.at)
            .copied()
            .ok_or_else(|| self.err("unexpected end of line"))?;
        self.at += 1;
        Ok(w)
    }

    pub(crate) fn expect(&mut self, word: &str) -> Result<()> {
        let w = self.word()?;
        if w != word {
            return Err(self.err(format!("expected `{word}`, found `{w}`")));
        }
        Ok(())
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| self.err(format!("expected an integer, found `{w}`")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| self.err(format!("expected a number, found `{w}`")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn rest_f64(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        while self.at < self.items.len() {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.at != self.items.len() {
            return Err(self.err("trailing tokens"));
        }
        Ok(())
    }
}

/// Parses a manifest starting at line index `start`; returns the model and
/// the index of the first line after `end`.
pub(crate) fn parse_manifest(text: &str, start: usize) -> Result<(DgmrfModel, usize)> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = start;
    let next = |i: &mut usize| -> Result<Tokens<'_>> {
        while *i < lines.len() && lines[*i].trim().is_empty() {
            *i += 1;
        }
        if *i >= lines.len() {
            return Err(DgmrfError::Parse {
                line: *i + 1,
                message: "unexpected end of manifest".into(),
            });
        }
        let t = Tokens::new(*i + 1, lines[*i]);
        *i += 1;
        Ok(t)
    };

    let mut t = next(&mut i)?;
    t.expect(MAGIC)?;
    if t.usize()? != 1 {
        return Err(t.err("unsupported manifest version"));
    }
    let mut t = next(&mut i)?;
    t.expect("sigma")?;
    let log_sigma = t.f64()?;
    let sigma_trainable = match t.word()? {
        "trainable" => true,
        "fixed" => false,
        w => return Err(t.err(format!("unknown sigma mode `{w}`"))),
    };
    let mut t = next(&mut i)?;
    t.expect("layers")?;
    let count = t.usize()?;

    let mut layers: Vec<Layer> = Vec::with_capacity(count);
    loop {
        let mut t = next(&mut i)?;
        match t.word()? {
            "end" => break,
            "layer" => {
                let idx = t.usize()?;
                if idx != layers.len() {
                    return Err(t.err(format!("expected layer {}, found {idx}", layers.len())));
                }
                t.expect("channels")?;
                let c = t.usize()?;
                t.expect("activation")?;
                let activation = match t.word()? {
                    "none" => None,
                    "prelu" => Some(PRelu { log_alpha: t.f64()? }),
                    w => return Err(t.err(format!("unknown activation `{w}`"))),
                };
                t.expect("bias")?;
                let bias_trainable = match t.word()? {
                    "trainable" => true,
                    "frozen" => false,
                    w => return Err(t.err(format!("unknown bias mode `{w}`"))),
                };
                let bias = t.f64s(c)?;
                t.expect("order")?;
                let channel_order = (0..c).map(|_| t.usize()).collect::<Result<Vec<_>>>()?;
                t.finish()?;
                layers.push(Layer {
                    diag: Vec::with_capacity(c),
                    off_diag: Vec::new(),
                    bias,
                    bias_trainable,
                    activation,
                    channel_order,
                });
            }
            "diag" => {
                let layer = layers.last_mut().ok_or_else(|| t.err("diag before layer"))?;
                let c = t.usize()?;
                if c != layer.diag.len() {
                    return Err(t.err(format!("expected diag {}, found {c}", layer.diag.len())));
                }
                let filter = match t.word()? {
                    "plus-reparam" => {
                        let v = t.f64s(6)?;
                        DiagFilter::Plus(PlusFilter::Reparam(v.try_into().expect("six values")))
                    }
                    "plus-fixed" => {
                        let v = t.f64s(5)?;
                        DiagFilter::Plus(PlusFilter::Fixed(v.try_into().expect("five values")))
                    }
                    "seq" => {
                        let radius = t.usize()?;
                        let o = t.usize()?;
                        let orientation = Orientation::new(o as u8).map_err(|e| t.err(e.to_string()))?;
                        let log_center = t.f64()?;
                        let taps = t.rest_f64()?;
                        DiagFilter::Seq(
                            SeqFilter::new(radius, log_center, taps, orientation).map_err(|e| t.err(e.to_string()))?,
                        )
                    }
                    w => return Err(t.err(format!("unknown filter `{w}`"))),
                };
                t.finish()?;
                layer.diag.push(filter);
            }
            "offdiag" => {
                let layer = layers.last_mut().ok_or_else(|| t.err("offdiag before layer"))?;
                let out_channel = t.usize()?;
                let in_channel = t.usize()?;
                let taps = t.rest_f64()?;
                layer.off_diag.push(OffDiagBlock {
                    out_channel,
                    in_channel,
                    taps,
                });
            }
            w => return Err(t.err(format!("unknown manifest entry `{w}`"))),
        }
    }
    if layers.len() != count {
        return Err(DgmrfError::Parse {
            line: i,
            message: format!("manifest declares {count} layers, found {}", layers.len()),
        });
    }
    let model = DgmrfModel {
        layers,
        log_sigma,
        sigma_trainable,
    };
    for l in &model.layers {
        l.validate().map_err(|e| DgmrfError::Parse {
            line: i,
            message: e.to_string(),
        })?;
    }
    Ok((model, i))
}
