//! Point and scaled forecast errors, the seasonal-naive baseline, and the
//! aggregate report written by evaluation.

use std::fmt::Write as _;

use crate::config::fmt_num;
use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, actual has {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty horizon".into()));
    }
    Ok(())
}

/// `(mse, mae)` over the horizon.
pub fn point_metrics(pred: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    check_lengths(pred, actual)?;
    let h = pred.len() as f64;
    let (sq, ab) = pred.iter().zip(actual).fold((0.0, 0.0), |(sq, ab), (p, a)| {
        let e = p - a;
        (sq + e * e, ab + e.abs())
    });
    Ok((sq / h, ab / h))
}

/// `200/H · Σ |p−a| / (|p|+|a|)`, where 0/0 terms count as 0.
pub fn smape(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    let total: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| {
            let den = p.abs() + a.abs();
            if den == 0.0 {
                0.0
            } else {
                (p - a).abs() / den
            }
        })
        .sum();
    Ok(200.0 * total / pred.len() as f64)
}

fn seasonal_scale(series: &[f64], s: usize) -> Result<f64> {
    if s == 0 || series.len() <= s {
        return Err(Error::MetricUndefined(format!(
            "MASE needs more than s={s} values, got {}",
            series.len()
        )));
    }
    let n = series.len() - s;
    let den = (s..series.len()).map(|j| (series[j] - series[j - s]).abs()).sum::<f64>() / n as f64;
    if den == 0.0 {
        return Err(Error::MetricUndefined("MASE scale is zero (series repeats with period s)".into()));
    }
    Ok(den)
}

/// MAE divided by the mean absolute lag-`s` difference of the horizon actuals.
pub fn mase(pred: &[f64], actual: &[f64], s: usize) -> Result<f64> {
    check_lengths(pred, actual)?;
    let scale = seasonal_scale(actual, s)?;
    Ok(point_metrics(pred, actual)?.1 / scale)
}

/// MAE divided by the mean absolute lag-`s` difference of the in-sample history.
pub fn mase_insample(pred: &[f64], actual: &[f64], history: &[f64], s: usize) -> Result<f64> {
    check_lengths(pred, actual)?;
    let scale = seasonal_scale(history, s)?;
    Ok(point_metrics(pred, actual)?.1 / scale)
}

/// SMAPE and MASE of one forecaster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledErrors {
    pub smape: f64,
    pub mase: f64,
}

/// `½·(smape/smape_naive + mase/mase_naive)`.
pub fn owa(model: ScaledErrors, naive: ScaledErrors) -> Result<f64> {
    if !(naive.smape > 0.0) || !(naive.mase > 0.0) {
        return Err(Error::MetricUndefined(format!(
            "OWA needs positive naive metrics, got smape={} mase={}",
            naive.smape, naive.mase
        )));
    }
    Ok(0.5 * (model.smape / naive.smape + model.mase / naive.mase))
}

/// Repeats the last `s` observations to fill `horizon` steps.
pub fn seasonal_naive_forecast(history: &[f64], s: usize, horizon: usize) -> Result<Vec<f64>> {
    if s == 0 || history.len() < s {
        return Err(Error::MetricUndefined(format!(
            "seasonal naive needs at least s={s} history values, got {}",
            history.len()
        )));
    }
    let base = history.len() - s;
    Ok((0..horizon).map(|i| history[base + i % s]).collect())
}

/// Aggregate metrics over many (series, window) forecasts.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// `None` when every series had an undefined MASE.
    pub mase: Option<f64>,
    pub owa: Option<f64>,
    pub naive_smape: f64,
    pub naive_mase: Option<f64>,
    pub naive_mse: f64,
    pub horizon: usize,
    pub season: usize,
    pub series: usize,
    /// Series skipped in the MASE averages because their scale was zero.
    pub mase_undefined: usize,
    pub insample: bool,
}

const REPORT_KEYS: [&str; 13] = [
    "mse",
    "mae",
    "smape",
    "mase",
    "owa",
    "naive_smape",
    "naive_mase",
    "naive_mse",
    "horizon",
    "season",
    "series",
    "mase_undefined",
    "mase_mode",
];

impl MetricReport {
    fn values(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_else(|| "undefined".into());
        vec![
            fmt_num(self.mse),
            fmt_num(self.mae),
            fmt_num(self.smape),
            opt(self.mase),
            opt(self.owa),
            fmt_num(self.naive_smape),
            opt(self.naive_mase),
            fmt_num(self.naive_mse),
            self.horizon.to_string(),
            self.season.to_string(),
            self.series.to_string(),
            self.mase_undefined.to_string(),
            if self.insample { "insample" } else { "horizon" }.to_string(),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in REPORT_KEYS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn csv_header() -> String {
        REPORT_KEYS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Accumulates per-series forecasts for a [`MetricReport`].
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    season: usize,
    insample: bool,
    horizon: Option<usize>,
    sq: f64,
    abs: f64,
    naive_sq: f64,
    points: usize,
    smape: Vec<f64>,
    naive_smape: Vec<f64>,
    mase: Vec<f64>,
    naive_mase: Vec<f64>,
    undefined: usize,
}

impl MetricAccumulator {
    pub fn new(season: usize, insample: bool) -> Self {
        MetricAccumulator {
            season,
            insample,
            horizon: None,
            sq: 0.0,
            abs: 0.0,
            naive_sq: 0.0,
            points: 0,
            smape: Vec::new(),
            naive_smape: Vec::new(),
            mase: Vec::new(),
            naive_mase: Vec::new(),
            undefined: 0,
        }
    }

    /// Adds one forecast with the history it was produced from.
    pub fn add(&mut self, pred: &[f64], actual: &[f64], history: &[f64]) -> Result<()> {
        check_lengths(pred, actual)?;
        match self.horizon {
            Some(h) if h != pred.len() => {
                return Err(Error::Shape(format!("horizon changed from {h} to {}", pred.len())))
            }
            _ => self.horizon = Some(pred.len()),
        }
        let s = self.season;
        let naive = seasonal_naive_forecast(history, s, pred.len())?;
        let (mse, mae) = point_metrics(pred, actual)?;
        let (naive_mse, _) = point_metrics(&naive, actual)?;
        let h = pred.len() as f64;
        self.sq += mse * h;
        self.abs += mae * h;
        self.naive_sq += naive_mse * h;
        self.points += pred.len();
        self.smape.push(smape(pred, actual)?);
        self.naive_smape.push(smape(&naive, actual)?);
        let scaled = |p: &[f64]| {
            if self.insample {
                mase_insample(p, actual, history, s)
            } else {
                mase(p, actual, s)
            }
        };
        match (scaled(pred), scaled(&naive)) {
            (Ok(m), Ok(n)) => {
                self.mase.push(m);
                self.naive_mase.push(n);
            }
            (Err(Error::MetricUndefined(_)), _) | (_, Err(Error::MetricUndefined(_))) => self.undefined += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        let Some(horizon) = self.horizon else {
            return Err(Error::MetricUndefined("no forecasts to evaluate".into()));
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let n = self.points as f64;
        let smape_m = mean(&self.smape);
        let naive_smape = mean(&self.naive_smape);
        let (mase_m, naive_mase) = if self.mase.is_empty() {
            (None, None)
        } else {
            (Some(mean(&self.mase)), Some(mean(&self.naive_mase)))
        };
        let owa_v = match (mase_m, naive_mase) {
            (Some(m), Some(nm)) => owa(
                ScaledErrors { smape: smape_m, mase: m },
                ScaledErrors { smape: naive_smape, mase: nm },
            )
            .ok(),
            _ => None,
        };
        if self.undefined > 0 {
            log::warn!("MASE undefined for {} of {} series", self.undefined, self.smape.len());
        }
        Ok(MetricReport {
            mse: self.sq / n,
            mae: self.abs / n,
            smape: smape_m,
            mase: mase_m,
            owa: owa_v,
            naive_smape,
            naive_mase,
            naive_mse: self.naive_sq / n,
            horizon,
            season: self.season,
            series: self.smape.len(),
            mase_undefined: self.undefined,
            insample: self.insample,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_fixtures() {
        assert_eq!(point_metrics(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), (5.0, 2.0));
        assert_eq!(point_metrics(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), (0.0, 0.0));
        assert_eq!(smape(&[1.0], &[3.0]).unwrap(), 100.0);
        assert_eq!(smape(&[0.0, 2.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mase(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0], 1).unwrap(), 1.5);
        assert_eq!(seasonal_naive_forecast(&[1.0, 2.0, 7.0], 1, 3).unwrap(), vec![7.0; 3]);
    }

    #[test]
    fn mase_undefined_cases() {
        assert!(matches!(mase(&[1.0, 2.0], &[1.0, 2.0], 2), Err(Error::MetricUndefined(_))));
        assert!(matches!(mase(&[1.0, 2.0, 3.0], &[5.0; 3], 1), Err(Error::MetricUndefined(_))));
        assert!(point_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn owa_ratios() {
        let n = ScaledErrors { smape: 12.0, mase: 3.0 };
        assert_eq!(owa(n, n).unwrap(), 1.0);
        assert_eq!(owa(ScaledErrors { smape: 6.0, mase: 1.5 }, n).unwrap(), 0.5);
        assert!(owa(n, ScaledErrors { smape: 0.0, mase: 1.0 }).is_err());
    }

    #[test]
    fn periodic_history_gives_exact_naive() {
        let hist: Vec<f64> = (0..12).map(|i| [3.0, 1.0, 4.0][i % 3]).collect();
        let f = seasonal_naive_forecast(&hist, 3, 7).unwrap();
        let truth: Vec<f64> = (12..19).map(|i| [3.0, 1.0, 4.0][i % 3]).collect();
        assert_eq!(f, truth);
        assert!(seasonal_naive_forecast(&hist[..2], 3, 1).is_err());
    }

    #[test]
    fn report_owa_matches_fields() {
        let mut acc = MetricAccumulator::new(1, false);
        acc.add(&[1.0, 2.5, 2.0], &[1.0, 2.0, 4.0], &[0.0, 0.5, 1.5]).unwrap();
        acc.add(&[0.0, 1.0, 1.0], &[2.0, 1.0, 3.0], &[4.0, 2.0]).unwrap();
        let r = acc.finish().unwrap();
        let recombined = 0.5 * (r.smape / r.naive_smape + r.mase.unwrap() / r.naive_mase.unwrap());
        assert!((r.owa.unwrap() - recombined).abs() < 1e-12);
        assert_eq!(r.series, 2);
        let text = r.to_kv_text();
        assert!(text.starts_with("mse = "));
        assert_eq!(MetricReport::csv_header().split(',').count(), r.to_csv_row().split(',').count());
    }

    #[test]
    fn naive_against_itself_is_one() {
        let mut acc = MetricAccumulator::new(2, true);
        let hist = [1.0, 4.0, 2.0, 5.0, 3.0];
        let naive = seasonal_naive_forecast(&hist, 2, 4).unwrap();
        acc.add(&naive, &[2.0, 6.0, 1.0, 3.0], &hist).unwrap();
        assert_eq!(acc.finish().unwrap().owa, Some(1.0));
    }
}
