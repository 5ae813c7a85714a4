//! Command-line front end: `gen-toy`, `convert`, `train`, `infer` and `eval`.
//!
//! Every subcommand reads a flat `key=value` configuration. Values come from
//! built-in defaults, then an optional `--config` file, then `key=value`
//! arguments on the command line, and the resolved set is written to
//! `config.resolved` in the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data_io::{
    fmt_f64, gen_toy, load_dataset, load_grid, save_grid, Checkpoint, Edge, MissingSpec, Normalization, Rect, ToyConfig,
};
use crate::error::{DgmrfError, Result};
use crate::grid::{crop_frame, pad_frame, Dataset, GridTensor, Mask};
use crate::metrics::{report_csv, score, ScoreReport};
use crate::model::{Architecture, DgmrfModel, FilterType};
use crate::posterior::{summarize, InferConfig, VarianceMethod};
use crate::vi::{train_with, TrainConfig, VariationalParams};

#[derive(Debug, Parser)]
#[command(name = "dgmrf", version, about = "Deep GMRF training and inference on gridded data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Matern toy data with optional edges and missing pixels.
    GenToy(RunArgs),
    /// Convert a lon,lat,value CSV into grid and covariate files.
    Convert(RunArgs),
    /// Fit a model with variational inference and write a checkpoint.
    Train(RunArgs),
    /// Compute posterior mean and standard deviation grids.
    Infer(RunArgs),
    /// Score predictions on held-out pixels.
    Eval(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Settings as key=value, overriding the configuration file.
    #[arg(value_name = "KEY=VALUE")]
    pub settings: Vec<String>,
}

const GEN_TOY_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("height", "160"),
    ("width", "120"),
    ("kappa2", "0.0032"),
    ("tau", "1"),
    ("gamma", "1"),
    ("seed", "0"),
    ("missing_fraction", "0"),
    ("missing_rects", ""),
    ("edges", ""),
];

const CONVERT_KEYS: &[(&str, &str)] = &[("out", ""), ("input", ""), ("height", ""), ("width", "")];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("data", ""),
    ("covariates", ""),
    ("trend", "false"),
    ("layers", "1"),
    ("filter", "plus"),
    ("radius", "1"),
    ("nonlinear", "false"),
    ("train_bias", "true"),
    ("sigma", "0.1"),
    ("sigma_trainable", "true"),
    ("iterations", "10000"),
    ("samples", "10"),
    ("learning_rate", "0.01"),
    ("seed", "0"),
    ("frame", "10"),
    ("normalize", "false"),
    ("checkpoint_every", "0"),
];

const INFER_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("checkpoint", ""),
    ("data", ""),
    ("covariates", ""),
    ("cg_tolerance", "1e-7"),
    ("variance", "auto"),
    ("variance_samples", "100"),
    ("seed", "0"),
];

const EVAL_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("truth", ""),
    ("observed", ""),
    ("runs", ""),
    ("labels", ""),
    ("baseline", "false"),
];

/// Resolved `key=value` settings of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, String>,
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DgmrfError::Parse {
            line: i + 1,
            message: format!("expected key=value, found `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    fn defaults(command: &str) -> Result<&'static [(&'static str, &'static str)]> {
        Ok(match command {
            "gen-toy" => GEN_TOY_KEYS,
            "convert" => CONVERT_KEYS,
            "train" => TRAIN_KEYS,
            "infer" => INFER_KEYS,
            "eval" => EVAL_KEYS,
            other => return Err(DgmrfError::Config(format!("unknown command `{other}`"))),
        })
    }

    /// Defaults, then `file` contents, then `overrides` (`key=value` strings).
    pub fn resolve(command: &str, file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let defaults = Self::defaults(command)?;
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut set = |k: String, v: String| -> Result<()> {
            match values.get_mut(&k) {
                Some(slot) => {
                    *slot = v;
                    Ok(())
                }
                None => Err(DgmrfError::Config(format!("unknown key `{k}` for `{command}`"))),
            }
        };
        if let Some(text) = file {
            for (_, k, v) in parse_pairs(text)? {
                set(k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| DgmrfError::Config(format!("expected key=value, found `{o}`")))?;
            set(k.trim().to_string(), v.trim().to_string())?;
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DgmrfError::Config(format!("unknown key `{key}`")))
    }

    pub fn required(&self, key: &str) -> Result<&str> {
        match self.get(key)? {
            "" => Err(DgmrfError::Config(format!(
                "`{key}` must be set for `{}`",
                self.command
            ))),
            v => Ok(v),
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.required(key)?))
    }

    pub fn optional_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(match self.get(key)? {
            "" => None,
            v => Some(PathBuf::from(v)),
        })
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.required(key)?;
        v.parse()
            .map_err(|_| DgmrfError::Config(format!("invalid value `{v}` for `{key}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.required(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(DgmrfError::Config(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    /// Sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("# dgmrf {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.path("out")?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.resolved"), cfg.to_text())?;
    Ok(dir)
}

fn config_err(msg: impl Into<String>) -> DgmrfError {
    DgmrfError::Config(msg.into())
}

fn numbers<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| config_err(format!("invalid number `{t}` in {what}")))
        })
        .collect()
}

/// `r,c,h,w;r,c,h,w`
fn parse_rects(s: &str) -> Result<Vec<Rect>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| match numbers::<usize>(p, "missing_rects")?.as_slice() {
            &[row, col, height, width] => Ok(Rect {
                row,
                col,
                height,
                width,
            }),
            _ => Err(config_err(format!(
                "missing rectangle `{p}` needs row,col,height,width"
            ))),
        })
        .collect()
}

/// `v,col,amp[,start,end];h,row,amp[,start,end]`
fn parse_edges(s: &str) -> Result<Vec<Edge>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (kind, rest) = p
                .trim()
                .split_once(',')
                .ok_or_else(|| config_err(format!("invalid edge `{p}`")))?;
            let v: Vec<f64> = numbers(rest, "edges")?;
            let (at, amplitude, span) = match v.as_slice() {
                [at, amp] => (*at, *amp, None),
                [at, amp, a, b] => (*at, *amp, Some((*a as usize, *b as usize))),
                _ => return Err(config_err(format!("edge `{p}` needs 2 or 4 numbers after its kind"))),
            };
            let at = at as usize;
            match kind {
                "v" => Ok(Edge::Vertical {
                    column: at,
                    amplitude,
                    span,
                }),
                "h" => Ok(Edge::Horizontal {
                    row: at,
                    amplitude,
                    span,
                }),
                _ => Err(config_err(format!("edge kind must be `v` or `h`, found `{kind}`"))),
            }
        })
        .collect()
}

/// Writes `truth.grid` and `obs.grid` (missing pixels as `NaN`).
pub fn cmd_gen_toy(cfg: &RunConfig) -> Result<()> {
    let toy = ToyConfig {
        height: cfg.parse("height")?,
        width: cfg.parse("width")?,
        kappa2: cfg.parse("kappa2")?,
        tau: cfg.parse("tau")?,
        gamma: cfg.parse("gamma")?,
        seed: cfg.parse("seed")?,
        edges: parse_edges(cfg.get("edges")?)?,
        missing: MissingSpec {
            fraction: cfg.parse("missing_fraction")?,
            rects: parse_rects(cfg.get("missing_rects")?)?,
        },
    };
    let dir = out_dir(cfg)?;
    let data = gen_toy(&toy)?;
    save_grid(dir.join("truth.grid"), &data.truth, None)?;
    save_grid(dir.join("obs.grid"), &data.truth, Some(&data.mask))?;
    Ok(())
}

/// Writes `obs.grid` and `covariates.grid` from a `lon,lat,value` CSV.
pub fn cmd_convert(cfg: &RunConfig) -> Result<()> {
    let text = fs::read_to_string(cfg.path("input")?)?;
    let (y, mask, cov) = crate::data_io::convert_csv(&text, cfg.parse("height")?, cfg.parse("width")?)?;
    let dir = out_dir(cfg)?;
    save_grid(dir.join("obs.grid"), &y, Some(&mask))?;
    save_grid(dir.join("covariates.grid"), &cov, None)?;
    Ok(())
}

fn load_run_data(cfg: &RunConfig, use_covariates: bool) -> Result<Dataset> {
    let cov = if use_covariates {
        cfg.optional_path("covariates")?
    } else {
        None
    };
    load_dataset(cfg.path("data")?, cov.as_deref())
}

/// Pads, normalizes and trains; writes `checkpoint.txt` and `loss.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let trend = cfg.flag("trend")?;
    if trend && cfg.get("covariates")?.is_empty() {
        return Err(config_err("`trend=true` needs `covariates`"));
    }
    let raw = load_run_data(cfg, trend)?;
    let normalization = if cfg.flag("normalize")? {
        Normalization::from_data(&raw)
    } else {
        Normalization::IDENTITY
    };
    let frame: usize = cfg.parse("frame")?;
    let data = pad_frame(&normalization.apply(&raw)?, frame);

    let filter = match cfg.required("filter")? {
        "plus" => FilterType::Plus,
        "seq" => FilterType::Seq {
            radius: cfg.parse("radius")?,
        },
        f => return Err(config_err(format!("filter must be `plus` or `seq`, found `{f}`"))),
    };
    let arch = Architecture {
        layers: cfg.parse("layers")?,
        filter,
        channels: data.channels(),
        nonlinear: cfg.flag("nonlinear")?,
        train_bias: cfg.flag("train_bias")?,
        orientations: None,
    };
    let seed: u64 = cfg.parse("seed")?;
    let model = DgmrfModel::random(&arch, cfg.parse("sigma")?, cfg.flag("sigma_trainable")?, seed)?;
    let q = VariationalParams::from_data(&data);
    let tc = TrainConfig {
        iterations: cfg.parse("iterations")?,
        samples: cfg.parse("samples")?,
        learning_rate: cfg.parse("learning_rate")?,
        seed,
        checkpoint_every: cfg.parse("checkpoint_every")?,
    };
    let dir = out_dir(cfg)?;
    let ck_path = dir.join("checkpoint.txt");
    let result = train_with(&model, &q, &data, &tc, |_, m, v| {
        Checkpoint {
            model: m.clone(),
            variational: v.clone(),
            normalization,
            frame,
        }
        .save(&ck_path)
    })?;
    Checkpoint {
        model: result.model,
        variational: result.variational,
        normalization,
        frame,
    }
    .save(&ck_path)?;
    let mut trace = String::from("iteration,loss\n");
    for (it, loss) in &result.trace {
        trace.push_str(&format!("{it},{}\n", fmt_f64(*loss)));
    }
    fs::write(dir.join("loss.csv"), trace)?;
    Ok(())
}

/// Writes `mean.grid`, `marginal_sd.grid`, `predictive_sd.grid` and
/// `summary.meta` on the original grid and data scale.
pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let ck = Checkpoint::load(cfg.path("checkpoint")?)?;
    let raw = load_run_data(cfg, ck.variational.trend.is_some())?;
    let data = pad_frame(&ck.normalization.apply(&raw)?, ck.frame);
    if ck.variational.len_latent() != data.y().len() {
        return Err(DgmrfError::Dimension(format!(
            "checkpoint was trained on {} latent values, data padded to {}",
            ck.variational.len_latent(),
            data.y().len()
        )));
    }
    let ic = InferConfig {
        tolerance: cfg.parse("cg_tolerance")?,
        method: match cfg.required("variance")? {
            "auto" => VarianceMethod::Auto,
            "rbmc" => VarianceMethod::Rbmc,
            "mc" => VarianceMethod::MonteCarlo,
            v => return Err(config_err(format!("variance must be auto, rbmc or mc, found `{v}`"))),
        },
        samples: cfg.parse("variance_samples")?,
        seed: cfg.parse("seed")?,
    };
    let s = summarize(&ck.model, &ck.variational, &data, &ic)?;
    let dir = out_dir(cfg)?;
    let out = |t: &GridTensor| -> Result<GridTensor> { Ok(ck.normalization.invert(&crop_frame(t, ck.frame)?)) };
    save_grid(dir.join("mean.grid"), &out(&s.mean)?, None)?;
    save_grid(dir.join("marginal_sd.grid"), &out(&s.marginal_sd)?, None)?;
    save_grid(dir.join("predictive_sd.grid"), &out(&s.predictive_sd)?, None)?;

    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| fmt_f64(x * ck.normalization.scale))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut meta = String::new();
    meta.push_str(&format!("mean_method={}\n", s.method.mean));
    meta.push_str(&format!("variance_method={}\n", s.method.variance));
    meta.push_str(&format!("cg_tolerance={}\n", opt(s.method.cg_tolerance.map(fmt_f64))));
    meta.push_str(&format!(
        "cg_iterations={}\n",
        opt(s.method.cg_iterations.map(|i| i.to_string()))
    ));
    meta.push_str(&format!("variance_samples={}\n", s.method.samples));
    meta.push_str(&format!(
        "sigma={}\n",
        fmt_f64(ck.model.sigma() * ck.normalization.scale)
    ));
    meta.push_str(&format!("normalization_scale={}\n", fmt_f64(ck.normalization.scale)));
    meta.push_str(&format!("frame={}\n", ck.frame));
    if let Some(t) = &s.trend {
        meta.push_str(&format!("trend_mean={}\n", join(&t.mean)));
        meta.push_str(&format!("trend_sd={}\n", join(&t.sd)));
    }
    fs::write(dir.join("summary.meta"), meta)?;
    Ok(())
}

/// Test pixels: observed in `truth`, missing in `observed`.
pub fn test_mask(truth: &Mask, observed: &Mask) -> Result<Mask> {
    if truth.height() != observed.height() || truth.width() != observed.width() {
        return Err(DgmrfError::Dimension(
            "truth and observation masks differ in shape".into(),
        ));
    }
    let obs = observed.as_slice();
    Mask::from_vec(
        truth.height(),
        truth.width(),
        truth.as_slice().iter().zip(obs).map(|(&t, &o)| t && !o).collect(),
    )
}

/// Predicts every pixel with the mean and standard deviation of the observed values.
pub fn mean_fill(observed: &Dataset) -> Result<(GridTensor, GridTensor)> {
    let mu = observed.observed_mean();
    let w = observed.mask().weights(observed.channels());
    let m: f64 = w.iter().sum();
    let var = observed
        .y()
        .values()
        .iter()
        .zip(&w)
        .map(|(v, k)| k * (v - mu).powi(2))
        .sum::<f64>()
        / (m - 1.0).max(1.0);
    let (h, wd, c) = observed.y().shape();
    Ok((
        GridTensor::from_vec(h, wd, c, vec![mu; h * wd * c])?,
        GridTensor::from_vec(h, wd, c, vec![var.sqrt().max(f64::MIN_POSITIVE); h * wd * c])?,
    ))
}

/// Scores each run directory (`mean.grid`, `predictive_sd.grid`) and writes `report.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (truth, truth_mask) = load_grid(cfg.path("truth")?)?;
    let (obs, obs_mask) = load_grid(cfg.path("observed")?)?;
    let test = test_mask(&truth_mask, &obs_mask)?;
    let runs: Vec<&str> = cfg
        .get("runs")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let labels: Vec<String> = match cfg.get("labels")? {
        "" => runs
            .iter()
            .map(|r| {
                Path::new(r)
                    .file_name()
                    .map_or_else(|| r.to_string(), |f| f.to_string_lossy().into_owned())
            })
            .collect(),
        l => l.split(',').map(|s| s.trim().to_string()).collect(),
    };
    if labels.len() != runs.len() {
        return Err(config_err("`labels` must name every entry of `runs`"));
    }
    let mut reports: Vec<(String, ScoreReport)> = Vec::with_capacity(runs.len());
    for (run, label) in runs.iter().zip(labels) {
        let dir = Path::new(run);
        let (mean, _) = load_grid(dir.join("mean.grid"))?;
        let (sd, _) = load_grid(dir.join("predictive_sd.grid"))?;
        reports.push((label, score(&truth, &mean, &sd, &test)?));
    }
    let baseline = if cfg.flag("baseline")? {
        let (mean, sd) = mean_fill(&Dataset::new(obs, obs_mask)?)?;
        Some(score(&truth, &mean, &sd, &test)?)
    } else {
        None
    };
    if reports.is_empty() && baseline.is_none() {
        return Err(config_err("nothing to evaluate: set `runs` or `baseline=true`"));
    }
    // summary rows cover the runs only
    let mut text = report_csv(&reports);
    if let Some(b) = baseline {
        text.push_str(&b.csv_row("mean-fill"));
        text.push('\n');
    }
    let dir = out_dir(cfg)?;
    fs::write(dir.join("report.csv"), text)?;
    Ok(())
}

type CommandFn = fn(&RunConfig) -> Result<()>;

/// Resolves configuration for a parsed command and runs it.
pub fn execute(cli: &Cli) -> Result<()> {
    let (name, args, f): (&str, &RunArgs, CommandFn) = match &cli.command {
        Command::GenToy(a) => ("gen-toy", a, cmd_gen_toy),
        Command::Convert(a) => ("convert", a, cmd_convert),
        Command::Train(a) => ("train", a, cmd_train),
        Command::Infer(a) => ("infer", a, cmd_infer),
        Command::Eval(a) => ("eval", a, cmd_eval),
    };
    let file = args.config.as_ref().map(fs::read_to_string).transpose()?;
    let cfg = RunConfig::resolve(name, file.as_deref(), &args.settings)?;
    f(&cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| DgmrfError::Config(e.to_string()))?;
    execute(&cli)
}
