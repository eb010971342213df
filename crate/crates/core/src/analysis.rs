//! Price-series statistics: log differences, monthly-dummy seasonality,
//! volatility, Gaussian kernel densities and confidence intervals.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::EpisodeTrace;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

pub const MONTH_NAMES: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Monthly prices indexed by month count. Index 0 is a January, so the
/// calendar month of index `i` is `i mod 12 + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub label: String,
    months: Vec<i64>,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(label: impl Into<String>, months: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        if months.len() != prices.len() {
            return Err(Error::Data("months and prices differ in length".into()));
        }
        if let Some(w) = months.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("months not strictly increasing at {}", w[1])));
        }
        if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!("price {p} is not positive")));
        }
        Ok(Self {
            label: label.into(),
            months,
            prices,
        })
    }

    pub fn from_trace(label: impl Into<String>, trace: &EpisodeTrace) -> Result<Self> {
        Self::new(label, trace.t.iter().map(|&t| t as i64).collect(), trace.price.clone())
    }

    pub fn months(&self) -> &[i64] {
        &self.months
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Read a `date,price` CSV of month-end prices. Dates are `YYYY-MM` or
    /// `YYYY-MM-DD`; a header row is optional.
    pub fn read_external_csv<R: Read>(label: &str, reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut months = Vec::new();
        let mut prices = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::Data(format!("line {}: expected date,price", line + 1)));
            }
            let date = rec[0].trim();
            let month = match parse_year_month(date) {
                Some(m) => m,
                None if line == 0 => continue,
                None => return Err(Error::Data(format!("line {}: bad date `{date}`", line + 1))),
            };
            let price: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {}: bad price `{}`", line + 1, &rec[1])))?;
            months.push(month);
            prices.push(price);
        }
        Self::new(label, months, prices)
    }

    pub fn load_external_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_external_csv(&label, file)
    }
}

/// `YYYY-MM[-DD]` to a month count with January of year 0 at index 0.
pub fn parse_year_month(date: &str) -> Option<i64> {
    let mut parts = date.split('-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: i64 = parts.next()?.parse().ok()?;
    if let Some(day) = parts.next() {
        let d: u32 = day.parse().ok()?;
        if !(1..=31).contains(&d) {
            return None;
        }
    }
    if parts.next().is_some() || !(1..=12).contains(&month) {
        return None;
    }
    Some(year * 12 + month - 1)
}

pub fn calendar_month_of(index: i64) -> u32 {
    index.rem_euclid(12) as u32 + 1
}

/// First differences of log prices.
pub fn log_diffs(series: &PriceSeries) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Data("need at least two prices".into()));
    }
    Ok(series.prices.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
}

/// Log differences labelled with the calendar month of the later price.
pub fn labelled_log_diffs(series: &PriceSeries) -> Result<Vec<(u32, f64)>> {
    let diffs = log_diffs(series)?;
    Ok(series.months[1..]
        .iter()
        .zip(diffs)
        .map(|(&m, d)| (calendar_month_of(m), d))
        .collect())
}

/// Monthly seasonal effects from a no-intercept regression on twelve month
/// dummies. Each coefficient is the mean of that month's observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityEstimate {
    pub method: String,
    pub coefficients: Vec<f64>,
    /// Homoskedastic OLS standard errors; absent when no residual degrees of
    /// freedom remain.
    pub std_errors: Option<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl SeasonalityEstimate {
    /// Calendar month (1 = January) with the largest coefficient.
    pub fn peak_month(&self) -> u32 {
        argmax(&self.coefficients) as u32 + 1
    }

    pub fn trough_month(&self) -> u32 {
        let neg: Vec<f64> = self.coefficients.iter().map(|v| -v).collect();
        argmax(&neg) as u32 + 1
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

pub fn seasonal_regression(diffs: &[(u32, f64)]) -> Result<SeasonalityEstimate> {
    let mut sums = [0.0; 12];
    let mut counts = [0usize; 12];
    for &(m, d) in diffs {
        if !(1..=12).contains(&m) {
            return Err(Error::Data(format!("month label {m} outside 1..=12")));
        }
        sums[m as usize - 1] += d;
        counts[m as usize - 1] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Fit(format!("no observations for {}", MONTH_NAMES[i])));
    }
    let coefficients: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let dof = diffs.len() - 12;
    let std_errors = (dof > 0).then(|| {
        let rss: f64 = diffs
            .iter()
            .map(|&(m, d)| (d - coefficients[m as usize - 1]).powi(2))
            .sum();
        let sigma2 = rss / dof as f64;
        counts.iter().map(|&c| (sigma2 / c as f64).sqrt()).collect()
    });
    Ok(SeasonalityEstimate {
        method: "monthly dummies, no intercept".into(),
        coefficients,
        std_errors,
        counts: counts.to_vec(),
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    if x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Sample standard deviation (`n - 1` denominator).
pub fn volatility_std(diffs: &[f64]) -> Result<f64> {
    if diffs.len() < 2 {
        return Err(Error::Data("need at least two differences".into()));
    }
    Ok(sample_std(diffs))
}

/// Silverman's rule of thumb, `1.06 σ̂ n^(-1/5)`.
pub fn silverman_bandwidth(data: &[f64]) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::Data("need at least two points for a density".into()));
    }
    let sd = sample_std(data);
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::Degenerate("zero variance sample".into()));
    }
    Ok(1.06 * sd * (data.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde(data: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(data)?;
    let norm = 1.0 / (data.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            norm * data
                .iter()
                .map(|&d| {
                    let z = (x - d) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

/// Evenly spaced grid covering the data plus `pad` bandwidths on each side.
pub fn kde_grid(data: &[f64], points: usize, pad: f64) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(data)?;
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min) - pad * h;
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad * h;
    let n = points.max(2);
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Standard error of the mean, `s / sqrt(n)`; zero for fewer than two samples.
pub fn std_error(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    sample_std(samples) / (samples.len() as f64).sqrt()
}

/// Mean and 95% half-width `1.96 · s / sqrt(n)`.
pub fn mean_ci(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Data("need at least two samples".into()));
    }
    Ok((mean(samples), Z95 * std_error(samples)))
}

/// Pointwise mean of aligned series.
pub fn average_series(set: &[PriceSeries]) -> Result<PriceSeries> {
    let first = set
        .first()
        .ok_or_else(|| Error::Alignment("no series to average".into()))?;
    for s in &set[1..] {
        if s.months != first.months {
            return Err(Error::Alignment(format!(
                "series `{}` is not aligned with `{}`",
                s.label, first.label
            )));
        }
    }
    let n = set.len() as f64;
    let prices = (0..first.len())
        .map(|i| set.iter().map(|s| s.prices[i]).sum::<f64>() / n)
        .collect();
    PriceSeries::new(format!("average of {}", set.len()), first.months.clone(), prices)
}

/// Seasonality and volatility summary for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub label: String,
    pub observations: usize,
    pub volatility_std: f64,
    pub seasonality: SeasonalityEstimate,
    pub peak_month: u32,
    pub trough_month: u32,
    pub density_grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Summaries of the pooled simulated diffs, the averaged simulated series and
/// the optional external series, all on one density grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub simulated_runs: usize,
    pub per_run_volatility: Option<(f64, f64)>,
    pub simulated: SeriesSummary,
    pub averaged: Option<SeriesSummary>,
    pub external: Option<SeriesSummary>,
}

fn summarize(label: &str, diffs: &[(u32, f64)], grid: &[f64]) -> Result<SeriesSummary> {
    let values: Vec<f64> = diffs.iter().map(|d| d.1).collect();
    let seasonality = seasonal_regression(diffs)?;
    let density = match kde(&values, grid) {
        Ok(d) => d,
        Err(Error::Degenerate(_)) => vec![0.0; grid.len()],
        Err(e) => return Err(e),
    };
    Ok(SeriesSummary {
        label: label.to_string(),
        observations: values.len(),
        volatility_std: volatility_std(&values)?,
        peak_month: seasonality.peak_month(),
        trough_month: seasonality.trough_month(),
        seasonality,
        density_grid: grid.to_vec(),
        density,
    })
}

pub fn analyze(simulated: &[PriceSeries], external: Option<&PriceSeries>) -> Result<AnalysisReport> {
    if simulated.is_empty() {
        return Err(Error::Data("no simulated series given".into()));
    }
    let mut pooled = Vec::new();
    let mut vols = Vec::new();
    for s in simulated {
        let d = labelled_log_diffs(s)?;
        vols.push(volatility_std(&d.iter().map(|x| x.1).collect::<Vec<_>>())?);
        pooled.extend(d);
    }
    let averaged = if simulated.len() > 1 {
        average_series(simulated).ok()
    } else {
        None
    };
    let averaged_diffs = averaged.as_ref().map(labelled_log_diffs).transpose()?;
    let external_diffs = external.map(labelled_log_diffs).transpose()?;

    let mut all: Vec<f64> = pooled.iter().map(|d| d.1).collect();
    if let Some(e) = &external_diffs {
        all.extend(e.iter().map(|d| d.1));
    }
    let grid = match kde_grid(&all, 201, 4.0) {
        Ok(g) => g,
        Err(Error::Degenerate(_)) => (0..201).map(|i| -1.0 + i as f64 / 100.0).collect(),
        Err(e) => return Err(e),
    };

    Ok(AnalysisReport {
        simulated_runs: simulated.len(),
        per_run_volatility: mean_ci(&vols).ok(),
        simulated: summarize("simulated", &pooled, &grid)?,
        averaged: averaged_diffs.map(|d| summarize("averaged", &d, &grid)).transpose()?,
        external: external_diffs
            .map(|d| summarize(&external.map(|e| e.label.clone()).unwrap_or_default(), &d, &grid))
            .transpose()?,
    })
}
