//! Data preprocessing: per-series transformations, detrending of the signal
//! and purging of the instrument.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::model::{InstrumentSeries, SignalSeries, TimeSeriesPanel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum TransformRule {
    #[default]
    None,
    /// `100 log x`
    Log100,
    /// `100 (log x_t - log x_{t-12})`
    Log100Yoy,
    /// `x / c`
    Scale(f64),
}

impl TransformRule {
    /// Whether the transformed series is in log levels (receives the
    /// own-lag anchor in the prior mean).
    pub fn is_log_level(&self) -> bool {
        matches!(self, TransformRule::Log100)
    }

    /// Observations lost at the start of the sample.
    pub fn rows_lost(&self) -> usize {
        match self {
            TransformRule::Log100Yoy => 12,
            _ => 0,
        }
    }

    /// Maps transformed values back for the invertible rules.
    pub fn invert(&self, value: f64) -> Option<f64> {
        match *self {
            TransformRule::None => Some(value),
            TransformRule::Log100 => Some((value / 100.0).exp()),
            TransformRule::Scale(c) => Some(value * c),
            TransformRule::Log100Yoy => None,
        }
    }
}

impl fmt::Display for TransformRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformRule::None => f.write_str("none"),
            TransformRule::Log100 => f.write_str("log100"),
            TransformRule::Log100Yoy => f.write_str("log100_yoy"),
            TransformRule::Scale(c) => write!(f, "scale:{c}"),
        }
    }
}

impl FromStr for TransformRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "" | "none" => Ok(TransformRule::None),
            "log100" => Ok(TransformRule::Log100),
            "log100_yoy" => Ok(TransformRule::Log100Yoy),
            _ => {
                let c = s
                    .strip_prefix("scale:")
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown transformation `{s}` (none|log100|log100_yoy|scale:<c>)"
                        ))
                    })?;
                if !(c.is_finite() && c != 0.0) {
                    return Err(Error::Config(format!("scale constant must be non-zero, got {c}")));
                }
                Ok(TransformRule::Scale(c))
            }
        }
    }
}

/// A transformed series together with the rule that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSeries {
    pub values: Vec<f64>,
    pub dates: Vec<YearMonth>,
    pub rule: TransformRule,
}

pub fn apply_transform(
    raw: &[f64],
    dates: &[YearMonth],
    rule: TransformRule,
) -> Result<TransformedSeries> {
    if raw.len() != dates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values but {} dates",
            raw.len(),
            dates.len()
        )));
    }
    let log100 = |i: usize| -> Result<f64> {
        let x = raw[i];
        if !(x > 0.0) {
            return Err(Error::Data(format!(
                "log transformation needs positive values, got {x} at {}",
                dates[i]
            )));
        }
        Ok(100.0 * x.ln())
    };
    let (values, dates) = match rule {
        TransformRule::None => (raw.to_vec(), dates.to_vec()),
        TransformRule::Scale(c) => (raw.iter().map(|x| x / c).collect(), dates.to_vec()),
        TransformRule::Log100 => (
            (0..raw.len()).map(log100).collect::<Result<Vec<_>>>()?,
            dates.to_vec(),
        ),
        TransformRule::Log100Yoy => {
            if raw.len() <= 12 {
                return Err(Error::Data(format!(
                    "year-on-year transformation needs more than 12 observations, got {}",
                    raw.len()
                )));
            }
            let logs = (0..raw.len()).map(log100).collect::<Result<Vec<_>>>()?;
            (
                (12..raw.len()).map(|t| logs[t] - logs[t - 12]).collect(),
                dates[12..].to_vec(),
            )
        }
    };
    Ok(TransformedSeries {
        values,
        dates,
        rule,
    })
}

/// Least-squares residuals of `y` on the columns of `x`.
///
/// Fails when `x` is numerically rank deficient. The solve goes through a
/// Householder QR: nalgebra's SVD occasionally returns mismatched singular
/// vectors for tall designs (singular values stay correct), which leaves
/// residuals visibly correlated with the regressors.
fn ols_residuals(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let sv = x.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 * (x.nrows().max(x.ncols()) as f64) {
        return Err(Error::Data(format!(
            "regressor matrix is rank deficient (singular values {smin:e} .. {smax:e}); check for collinear columns"
        )));
    }
    let k = x.ncols();
    let qr = x.clone().qr();
    let qty = qr.q().tr_mul(y);
    let beta = qr
        .r()
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::Numerical("singular triangular factor in least squares".into()))?;
    Ok(y - x * beta)
}

/// Removes a linear trend and scales to zero mean and unit (population)
/// variance.
pub fn detrend_standardize(values: &[f64], dates: &[YearMonth]) -> Result<SignalSeries> {
    let n = values.len();
    if n < 24 {
        return Err(Error::Data(format!(
            "signal needs at least 24 observations, got {n}"
        )));
    }
    if dates.len() != n {
        return Err(Error::InvalidArgument(format!("{n} values but {} dates", dates.len())));
    }
    // centered trend keeps the design well conditioned for long samples
    let mid = (n as f64 - 1.0) / 2.0;
    let x = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { r as f64 - mid });
    let y = DVector::from_column_slice(values);
    let resid = ols_residuals(&x, &y)?;
    let mean = resid.sum() / n as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var < 1e-12 || var <= scale * 1e-24 {
        return Err(Error::DegenerateSignal(var));
    }
    let sd = var.sqrt();
    Ok(SignalSeries {
        values: resid.map(|r| (r - mean) / sd),
        dates: dates.to_vec(),
    })
}

/// Regresses the instrument on an intercept, its own `lags` lags, the
/// contemporaneous panel and `lags` lags of it, and keeps the residuals.
///
/// The first `lags` rows and inactive rows are excluded from the regression
/// and come back as exactly zero, marked inactive.
pub fn purge_instrument(
    instrument: &InstrumentSeries,
    panel: &TimeSeriesPanel,
    lags: usize,
) -> Result<InstrumentSeries> {
    let n = panel.n_rows();
    if instrument.len() != n || instrument.dates != panel.dates {
        return Err(Error::Data(
            "instrument and panel dates are not aligned".into(),
        ));
    }
    let (rows, x) = purging_design(instrument, panel, lags);
    if rows.len() <= x.ncols() {
        return Err(Error::Data(format!(
            "purging regression has {} usable rows for {} regressors",
            rows.len(),
            x.ncols()
        )));
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| instrument.values[t]));
    let resid = ols_residuals(&x, &y)?;
    let ymean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ymean).powi(2)).sum();
    let rss: f64 = resid.iter().map(|v| v * v).sum();

    let mut values = DVector::zeros(n);
    let mut active = vec![false; n];
    for (r, &t) in rows.iter().enumerate() {
        values[t] = resid[r];
        active[t] = true;
    }
    Ok(InstrumentSeries {
        values,
        dates: instrument.dates.clone(),
        shock: instrument.shock,
        purged: true,
        active,
        purge_r_squared: Some(if tss > 0.0 { 1.0 - rss / tss } else { 0.0 }),
    })
}

/// The design matrix used by [`purge_instrument`], exposed for diagnostics
/// and orthogonality checks.
pub fn purging_design(
    instrument: &InstrumentSeries,
    panel: &TimeSeriesPanel,
    lags: usize,
) -> (Vec<usize>, DMatrix<f64>) {
    let n = panel.n_rows();
    let m = panel.n_vars();
    let rows: Vec<usize> = (lags..n).filter(|&t| instrument.active[t]).collect();
    let ncols = 1 + lags + m * (lags + 1);
    let x = DMatrix::from_fn(rows.len(), ncols, |r, c| {
        let t = rows[r];
        if c == 0 {
            1.0
        } else if c <= lags {
            instrument.values[t - c]
        } else {
            let j = c - 1 - lags;
            panel.values[(t - j / m, j % m)]
        }
    });
    (rows, x)
}
