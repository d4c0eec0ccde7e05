//! Price panels, daily losses and rolling moment estimates.
//!
//! Input is a CSV with header `date,<TICKER1>,<TICKER2>,...`, ISO dates in
//! strictly increasing order and positive decimal prices. Prices are used as
//! given; whether they are raw or adjusted closes is up to the file.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::{MarketModel, ModelError, DEGENERACY_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketDataError {
    #[error("cannot read price file: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("line {line}: missing price for {ticker}")]
    MissingValue { line: u64, ticker: String },
    #[error("line {line}: non-positive price for {ticker}")]
    NonPositivePrice { line: u64, ticker: String },
    #[error("line {line}: date is not after the previous row")]
    UnsortedDates { line: u64 },
    #[error("price file has no data rows")]
    EmptyPanel,
    #[error("need at least 2 price rows, got {0}")]
    TooFewRows(usize),
    #[error("window {window} does not fit: {available} loss rows up to the end index")]
    WindowTooLarge { window: usize, available: usize },
    #[error("invalid ridge {0}")]
    InvalidRidge(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `dates.len() x tickers.len()`.
    pub close: DMatrix<f64>,
}

pub fn load_price_panel(path: impl AsRef<Path>) -> Result<PricePanel, MarketDataError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| MarketDataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_price_panel(file)
}

pub fn read_price_panel<R: Read>(reader: R) -> Result<PricePanel, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| MarketDataError::ParseError { line: 1, message: e.to_string() })?.clone();
    if header.get(0).map(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case("date")) != Some(true) {
        return Err(MarketDataError::ParseError { line: 1, message: "first column must be 'date'".into() });
    }
    let mut keep = Vec::new();
    let mut tickers: Vec<String> = Vec::new();
    for (j, name) in header.iter().enumerate().skip(1) {
        if name.is_empty() {
            return Err(MarketDataError::ParseError { line: 1, message: format!("empty ticker in column {}", j + 1) });
        }
        if !tickers.iter().any(|t| t == name) {
            tickers.push(name.to_string());
            keep.push(j);
        }
    }
    if tickers.is_empty() {
        return Err(MarketDataError::ParseError { line: 1, message: "no ticker columns".into() });
    }

    let mut dates = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MarketDataError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(|e| {
            MarketDataError::ParseError { line, message: format!("bad date '{}': {e}", rec.get(0).unwrap_or("")) }
        })?;
        if dates.last().is_some_and(|d| *d >= date) {
            return Err(MarketDataError::UnsortedDates { line });
        }
        for (&j, ticker) in keep.iter().zip(&tickers) {
            let cell = rec.get(j).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(MarketDataError::MissingValue { line, ticker: ticker.clone() });
            }
            let v: f64 = cell.parse().map_err(|_| MarketDataError::ParseError {
                line,
                message: format!("bad price '{cell}' for {ticker}"),
            })?;
            if !v.is_finite() {
                return Err(MarketDataError::ParseError { line, message: format!("bad price '{cell}' for {ticker}") });
            }
            if v <= 0.0 {
                return Err(MarketDataError::NonPositivePrice { line, ticker: ticker.clone() });
            }
            values.push(v);
        }
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }
    let close = DMatrix::from_row_slice(dates.len(), tickers.len(), &values);
    Ok(PricePanel { dates, tickers, close })
}

/// Daily losses `-(V_{k+1} - V_k) / V_k`; row `k` is dated at `k + 1`, the day
/// the loss is realized.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub losses: DMatrix<f64>,
}

impl LossPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.losses.row(k).iter().copied().collect()
    }

    /// The first `rows` loss rows.
    pub fn truncated(&self, rows: usize) -> LossPanel {
        LossPanel {
            dates: self.dates[..rows].to_vec(),
            tickers: self.tickers.clone(),
            losses: self.losses.rows(0, rows).into_owned(),
        }
    }
}

pub fn compute_losses(p: &PricePanel) -> Result<LossPanel, MarketDataError> {
    let n = p.dates.len();
    if n < 2 {
        return Err(MarketDataError::TooFewRows(n));
    }
    let d = p.tickers.len();
    let losses = DMatrix::from_fn(n - 1, d, |k, i| {
        let (v0, v1) = (p.close[(k, i)], p.close[(k + 1, i)]);
        -(v1 - v0) / v0
    });
    Ok(LossPanel { dates: p.dates[1..].to_vec(), tickers: p.tickers.clone(), losses })
}

/// Diagonal loading added to a sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// `c * I`.
    Absolute(f64),
    /// `c * trace(S) / d * I`, or `c * I` when every variance is zero.
    TraceScaled(f64),
}

impl From<f64> for Ridge {
    fn from(c: f64) -> Self {
        Ridge::Absolute(c)
    }
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TraceScaled(1e-8)
    }
}

/// Sample moments over rows `end_index + 1 - window ..= end_index`, divisor
/// `window - 1`, plus the ridge. Means parallel to `e` are accepted; see
/// [`estimate_moments`] for the checked version.
pub fn window_moments(
    l: &LossPanel,
    window: usize,
    end_index: usize,
    ridge: impl Into<Ridge>,
) -> Result<MarketModel, MarketDataError> {
    let ridge = ridge.into();
    let c = match ridge {
        Ridge::Absolute(c) | Ridge::TraceScaled(c) => c,
    };
    if !(c >= 0.0 && c.is_finite()) {
        return Err(MarketDataError::InvalidRidge(c));
    }
    let available = if end_index < l.len() { end_index + 1 } else { 0 };
    if window < 2 || window > available {
        return Err(MarketDataError::WindowTooLarge { window, available });
    }
    let d = l.tickers.len();
    let block = l.losses.rows(end_index + 1 - window, window);
    let mean = DVector::from_fn(d, |i, _| block.column(i).sum() / window as f64);
    let centered = DMatrix::from_fn(window, d, |k, i| block[(k, i)] - mean[i]);
    let mut cov = centered.transpose() * &centered / (window - 1) as f64;
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let load = match ridge {
        Ridge::Absolute(c) => c,
        Ridge::TraceScaled(c) => {
            let avg = cov.trace() / d as f64;
            if avg > 0.0 {
                c * avg
            } else {
                c
            }
        }
    };
    for i in 0..d {
        cov[(i, i)] += load;
    }
    Ok(MarketModel::new(l.tickers.clone(), mean, cov)?)
}

/// [`window_moments`] that also rejects means parallel to the all-ones vector.
pub fn estimate_moments(
    l: &LossPanel,
    window: usize,
    end_index: usize,
    ridge: impl Into<Ridge>,
) -> Result<MarketModel, MarketDataError> {
    let m = window_moments(l, window, end_index, ridge)?;
    if m.degeneracy() <= DEGENERACY_TOL {
        return Err(ModelError::DegenerateMeans.into());
    }
    Ok(m)
}
