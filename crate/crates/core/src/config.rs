//! Flat `key = value` configuration and locale-independent number output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Formats `v` with at most 9 significant digits, '.' as decimal separator.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let rounded: f64 = sci.parse().expect("round-trips");
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{rounded:.decimals$}");
        trim_fraction(&s).to_string()
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parses `key = value` lines; `#` starts a comment. Keys keep file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Output format for derivative heatmaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Pgm,
}

impl FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "pgm" => Ok(HeatmapFormat::Pgm),
            _ => Err(Error::Config(format!("unknown heatmap format `{s}` (csv|pgm)"))),
        }
    }
}

impl HeatmapFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

/// Everything a CLI run needs: model and training settings, data location,
/// split, and evaluation options.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Chronological train/val/test ratios.
    pub split: [f64; 3],
    pub stride: usize,
    pub eval_stride: usize,
    pub fill_forward: bool,
    pub mase_insample: bool,
    /// Seasonal period for MASE and the naive baseline.
    pub season: usize,
    pub heatmap_format: HeatmapFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            out: PathBuf::from("runs/default"),
            split: [0.7, 0.1, 0.2],
            stride: 1,
            eval_stride: 1,
            fill_forward: false,
            mase_insample: false,
            season: 1,
            heatmap_format: HeatmapFormat::Csv,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_kv_text(&text)?;
        // Relative data paths are relative to the config file.
        if let (Some(d), Some(dir)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(dir.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse_value(key, p.trim()))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts.as_slice() else {
                    return Err(Error::Config(format!("`split` needs three ratios, got `{value}`")));
                };
                self.split = [*a, *b, *c];
            }
            "stride" => self.stride = parse_value(key, value)?,
            "eval_stride" => self.eval_stride = parse_value(key, value)?,
            "fill_forward" => self.fill_forward = parse_bool(key, value)?,
            "mase_insample" => self.mase_insample = parse_bool(key, value)?,
            "season" => self.season = parse_value(key, value)?,
            "heatmap_format" => self.heatmap_format = value.parse()?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.split.iter().any(|&r| !(r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.stride == 0 || self.eval_stride == 0 {
            return Err(Error::Config("strides must be >= 1".into()));
        }
        if self.season == 0 {
            return Err(Error::Config("season must be >= 1".into()));
        }
        Ok(())
    }

    /// Serializes every key; the result parses back to an equal config.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# model\n");
        for (k, v) in self.model.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("# training\n");
        for (k, v) in self.train.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("# data and evaluation\n");
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(
            s,
            "split = {},{},{}",
            fmt_num(self.split[0]),
            fmt_num(self.split[1]),
            fmt_num(self.split[2])
        );
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "eval_stride = {}", self.eval_stride);
        let _ = writeln!(s, "fill_forward = {}", self.fill_forward);
        let _ = writeln!(s, "mase_insample = {}", self.mase_insample);
        let _ = writeln!(s, "season = {}", self.season);
        let _ = writeln!(s, "heatmap_format = {}", self.heatmap_format.as_str());
        s
    }
}
