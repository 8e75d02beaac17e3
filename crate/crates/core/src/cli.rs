//! Command-line front end: `train`, `evaluate`, `forecast`,
//! `inspect-periods` and `heatmap`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{fmt_num, HeatmapFormat, RunConfig};
use crate::data::{load_csv, split_normalize, CsvOptions, NormStats, RawSeries, Windowed};
use crate::error::{Error, Result};
use crate::fsdh::{export_heatmap, Heatmap2D};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::spectral::{rfft_magnitude, top_k_periods, PeriodSet};
use crate::tensor::Tensor;
use crate::train::{train, TrainData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_INCOMPATIBLE: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "times2d", version, about = "Multi-period 2D time series forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes best.ckpt, history.csv and config.txt to --out.
    Train(CommonArgs),
    /// Score a checkpoint on the test split; writes metrics.txt and metrics.csv.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to load [default: <out>/best.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast the steps after the last window of the series as CSV on stdout.
    Forecast {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of steps to emit, at most pred_len [default: pred_len].
        #[arg(long)]
        horizon: Option<usize>,
        /// Also write the forecast to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the dominant periods of the first input window.
    InspectPeriods(CommonArgs),
    /// Export the derivative heatmap of the first input window.
    Heatmap {
        #[command(flatten)]
        common: CommonArgs,
        /// Output format (csv|pgm).
        #[arg(long)]
        format: Option<HeatmapFormat>,
        /// Output file [default: <out>/heatmap.<format>].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub pred_len: Option<usize>,
    /// Number of dominant periods.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Carry the previous value into missing cells.
    #[arg(long)]
    pub fill_forward: bool,
    /// Scale MASE by the input window instead of the horizon.
    #[arg(long)]
    pub mase_insample: bool,
    /// Training loss (mse|mae|smape).
    #[arg(long)]
    pub loss: Option<String>,
}

impl CommonArgs {
    /// Config file (if any) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let mut set = |k: &str, v: Option<String>| match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        };
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("seq_len", self.seq_len.map(|v| v.to_string()))?;
        set("pred_len", self.pred_len.map(|v| v.to_string()))?;
        set("k", self.k.map(|v| v.to_string()))?;
        set("d_model", self.d_model.map(|v| v.to_string()))?;
        set("d_ff", self.d_ff.map(|v| v.to_string()))?;
        set("heads", self.heads.map(|v| v.to_string()))?;
        set("batch_size", self.batch.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("loss", self.loss.clone())?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.fill_forward |= self.fill_forward;
        cfg.mase_insample |= self.mase_insample;
        Ok(cfg)
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) => EXIT_CONFIG,
        Error::Parse { .. } | Error::Io { .. } | Error::InputTooShort(_) => EXIT_DATA,
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Incompatible(_) | Error::CorruptCheckpoint { .. } => EXIT_INCOMPATIBLE,
        _ => EXIT_OTHER,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(common) => {
            let summary = cmd_train(&common.resolve()?)?;
            println!("{summary}");
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join("best.ckpt"));
            let report = cmd_evaluate(&cfg, &ckpt)?;
            print!("{}", report.to_kv_text());
        }
        Command::Forecast {
            common,
            checkpoint,
            horizon,
            output,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join("best.ckpt"));
            let csv = cmd_forecast(&cfg, &ckpt, horizon)?;
            if let Some(p) = output {
                std::fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?;
            }
            print!("{csv}");
        }
        Command::InspectPeriods(common) => {
            for e in cmd_inspect_periods(&common.resolve()?)?.entries() {
                println!("{e}");
            }
        }
        Command::Heatmap { common, format, output } => {
            let mut cfg = common.resolve()?;
            if let Some(f) = format {
                cfg.heatmap_format = f;
            }
            for p in cmd_heatmap(&cfg, output.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Loads the configured data file and fixes `n_vars` from its width.
pub fn load_data(cfg: &mut RunConfig) -> Result<RawSeries> {
    let path = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no data file given (use --data or `data = ...`)".into()))?;
    let series = load_csv(&path, CsvOptions { fill_forward: cfg.fill_forward })?;
    cfg.model.n_vars = series.n_vars();
    cfg.validate()?;
    Ok(series)
}

/// Normalized full series plus split row offsets.
struct Prepared {
    series: RawSeries,
    normalized: Tensor,
    stats: NormStats,
    offsets: [usize; 3],
}

fn prepare(cfg: &mut RunConfig, stats: Option<&NormStats>) -> Result<Prepared> {
    let series = load_data(cfg)?;
    let window = cfg.model.seq_len + cfg.model.pred_len;
    let (splits, stats) = split_normalize(&series.values, cfg.split, stats, window)?;
    let normalized = stats.normalize(&series.values);
    Ok(Prepared {
        series,
        normalized,
        stats,
        offsets: splits.offsets,
    })
}

fn rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let n = t.shape()[1];
    Tensor::new(vec![end - start, n], t.data()[start * n..end * n].to_vec()).expect("row range")
}

/// Windows whose targets lie in `[start, end)`, with inputs reaching back
/// `seq_len` rows before `start`.
fn split_windows(p: &Prepared, cfg: &RunConfig, start: usize, end: usize, stride: usize) -> Result<Windowed> {
    let s = cfg.model.seq_len;
    let from = start.saturating_sub(s);
    Windowed::new(rows(&p.normalized, from, end), s, cfg.model.pred_len, stride)
}

/// Runs training and writes artifacts. Returns a short summary.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    let p = prepare(&mut cfg, None)?;
    let train_w = Windowed::new(rows(&p.normalized, 0, p.offsets[1]), cfg.model.seq_len, cfg.model.pred_len, cfg.stride)?;
    let val_w = split_windows(&p, &cfg, p.offsets[1], p.offsets[2], cfg.eval_stride)?;
    log::info!(
        "{} variables, {} training windows, {} validation windows",
        p.series.n_vars(),
        train_w.len(),
        val_w.len()
    );
    let outcome = train(
        &cfg.model,
        &cfg.train,
        &TrainData {
            train: &train_w,
            val: Some(&val_w),
            norm: Some(p.stats.clone()),
        },
    )?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    save_checkpoint(&outcome.checkpoint, &cfg.out.join("best.ckpt"))?;
    let hist_path = cfg.out.join("history.csv");
    std::fs::write(&hist_path, outcome.history.to_csv()).map_err(|e| Error::io(&hist_path, e))?;
    let cfg_path = cfg.out.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_kv_text()).map_err(|e| Error::io(&cfg_path, e))?;

    let mut s = String::new();
    if let Some(last) = outcome.history.last() {
        let _ = write!(
            s,
            "final val loss {} (best epoch {}, train loss {})",
            fmt_num(last.val_loss.unwrap_or(f64::NAN)),
            outcome.best_epoch,
            fmt_num(last.train_loss)
        );
    } else {
        s.push_str("no epochs run");
    }
    Ok(s)
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).map_err(|e| match e {
        Error::Io { .. } => Error::Incompatible(e.to_string()),
        other => other,
    })
}

/// One test window in data units: `pred` and `actual` are `[P,N]`,
/// `history` is the `[S,N]` input.
#[derive(Clone, Debug)]
pub struct WindowForecast {
    pub pred: Tensor,
    pub actual: Tensor,
    pub history: Tensor,
}

/// Predictions for every test window, in order, denormalized.
pub fn test_predictions(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<WindowForecast>> {
    let mut cfg = cfg.clone();
    let mut ckpt = open_checkpoint(checkpoint)?;
    let p = prepare(&mut cfg, None)?;
    ckpt.check_compatible(&cfg.model)?;
    let stats = ckpt.norm.clone().unwrap_or_else(|| p.stats.clone());
    let normalized = stats.normalize(&p.series.values);
    let p = Prepared { normalized, stats, ..p };
    let test = split_windows(&p, &cfg, p.offsets[2], p.series.len(), cfg.eval_stride)?;
    let (s, h, n) = (cfg.model.seq_len, cfg.model.pred_len, cfg.model.n_vars);
    let mut out = Vec::with_capacity(test.len());
    for (x, y) in test.batches(cfg.train.batch_size, false, 0) {
        let pred = p.stats.denormalize(&ckpt.model.predict(&x)?);
        let actual = p.stats.denormalize(&y);
        let hist = p.stats.denormalize(&x);
        for b in 0..x.shape()[0] {
            let pick = |t: &Tensor, len: usize| Tensor::from_fn(&[len, n], |i| t.get(&[b, i[0], i[1]]));
            out.push(WindowForecast {
                pred: pick(&pred, h),
                actual: pick(&actual, h),
                history: pick(&hist, s),
            });
        }
    }
    Ok(out)
}

/// Scores the checkpoint on the test split in data units and writes
/// `metrics.txt` and `metrics.csv`.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(cfg.season, cfg.mase_insample);
    for w in test_predictions(cfg, checkpoint)? {
        let n = w.pred.shape()[1];
        for v in 0..n {
            let col = |t: &Tensor| (0..t.shape()[0]).map(|i| t.get(&[i, v])).collect::<Vec<_>>();
            acc.add(&col(&w.pred), &col(&w.actual), &col(&w.history))?;
        }
    }
    let report = acc.finish()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let txt = cfg.out.join("metrics.txt");
    std::fs::write(&txt, report.to_kv_text()).map_err(|e| Error::io(&txt, e))?;
    let csv = cfg.out.join("metrics.csv");
    let body = format!("{}\n{}\n", MetricReport::csv_header(), report.to_csv_row());
    std::fs::write(&csv, body).map_err(|e| Error::io(&csv, e))?;
    Ok(report)
}

/// Forecast CSV (header of variable names, one row per step) from the last
/// `seq_len` rows of the data.
pub fn cmd_forecast(cfg: &RunConfig, checkpoint: &Path, horizon: Option<usize>) -> Result<String> {
    let mut cfg = cfg.clone();
    let mut ckpt = open_checkpoint(checkpoint)?;
    let series = load_data(&mut cfg)?;
    let model_cfg = ckpt.config().clone();
    if series.n_vars() != model_cfg.n_vars {
        return Err(Error::Incompatible(format!(
            "checkpoint has N={}, data has {} variables",
            model_cfg.n_vars,
            series.n_vars()
        )));
    }
    let (s, p) = (model_cfg.seq_len, model_cfg.pred_len);
    let h = horizon.unwrap_or(p);
    if h == 0 || h > p {
        return Err(Error::Config(format!("horizon must be in 1..={p}, got {h}")));
    }
    if series.len() < s {
        return Err(Error::InputTooShort(format!(
            "forecast needs {s} rows, data has {}",
            series.len()
        )));
    }
    let stats = match &ckpt.norm {
        Some(n) => n.clone(),
        None => NormStats::fit(&series.values),
    };
    let last = rows(&series.values, series.len() - s, series.len());
    let x = stats.normalize(&last).reshaped(&[1, s, model_cfg.n_vars])?;
    let y = stats.denormalize(&ckpt.model.predict(&x)?);
    let mut out = series.names.join(",");
    out.push('\n');
    for t in 0..h {
        let row: Vec<String> = (0..model_cfg.n_vars).map(|v| fmt_num(y.get(&[0, t, v]))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn first_window(cfg: &mut RunConfig) -> Result<Tensor> {
    let series = load_data(cfg)?;
    let s = cfg.model.seq_len;
    if series.len() < s {
        return Err(Error::InputTooShort(format!(
            "need {s} rows for one window, data has {}",
            series.len()
        )));
    }
    rows(&series.values, 0, s).reshaped(&[1, s, series.n_vars()])
}

/// Dominant periods of the first `seq_len` rows, in data units.
pub fn cmd_inspect_periods(cfg: &RunConfig) -> Result<PeriodSet> {
    let mut cfg = cfg.clone();
    let x = first_window(&mut cfg)?;
    top_k_periods(&rfft_magnitude(&x)?, cfg.model.k)
}

/// Heatmap of the first `seq_len` rows. Returns the files written.
pub fn cmd_heatmap(cfg: &RunConfig, output: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    let x = first_window(&mut cfg)?;
    let heatmap = Heatmap2D::from_series(&x)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            cfg.out.join(format!("heatmap.{}", cfg.heatmap_format.as_str()))
        }
    };
    export_heatmap(&heatmap, &path, cfg.heatmap_format)
}
