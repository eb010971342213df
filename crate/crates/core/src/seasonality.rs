//! Truncated Fourier model of seasonal log-demand.
//!
//! The seasonal component at month index `t` is
//! `S_t = Σ_k a_k cos(k φ_t) + b_k sin(k φ_t)` with `φ_t = 2π t / 12`.
//! Every harmonic must divide 12 so the sum is exactly periodic. Because
//! `k φ_t` is then always a multiple of 30°, the trigonometric factors are
//! read from an exact table indexed by `(k · t) mod 12`. This makes
//! `S_{t+12} == S_t` bit for bit and gives exact zeros (e.g. `sin(6 φ_t)`).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Harmonics shipped with the default configuration.
pub const DEFAULT_HARMONICS: [u32; 5] = [1, 2, 3, 4, 6];

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// `cos(2π j / 12)` for `j = 0..12`.
const COS_TABLE: [f64; 12] = [
    1.0, SQRT3_2, 0.5, 0.0, -0.5, -SQRT3_2, -1.0, -SQRT3_2, -0.5, 0.0, 0.5, SQRT3_2,
];
/// `sin(2π j / 12)` for `j = 0..12`.
const SIN_TABLE: [f64; 12] = [
    0.0, 0.5, SQRT3_2, 1.0, SQRT3_2, 0.5, 0.0, -0.5, -SQRT3_2, -1.0, -SQRT3_2, -0.5,
];

const REFERENCE_COEFFICIENTS: &str = include_str!("../data/seasonal_default.toml");

/// Phase angle `φ_t = 2π t / 12`, reduced to one year.
pub fn phase(t: usize) -> f64 {
    2.0 * PI * (t % 12) as f64 / 12.0
}

/// `(cos(k φ_t), sin(k φ_t))` from the exact table.
pub fn harmonic_basis(k: u32, t: usize) -> (f64, f64) {
    let j = (k as usize % 12) * (t % 12) % 12;
    (COS_TABLE[j], SIN_TABLE[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub k: u32,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonalCoefficients {
    #[serde(rename = "harmonic")]
    harmonics: Vec<Harmonic>,
}

impl SeasonalCoefficients {
    pub fn new(harmonics: Vec<Harmonic>) -> Result<Self> {
        let coeffs = Self { harmonics };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn zeros(ks: &[u32]) -> Result<Self> {
        Self::new(ks.iter().map(|&k| Harmonic { k, a: 0.0, b: 0.0 }).collect())
    }

    /// Coefficients fitted to the bundled winter-peaking reference profile.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_COEFFICIENTS).expect("bundled coefficients are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::with_capacity(self.harmonics.len());
        for h in &self.harmonics {
            if h.k == 0 || 12 % h.k != 0 {
                return Err(Error::config(
                    "seasonal.harmonic.k",
                    format!("harmonic {} is not a positive divisor of 12", h.k),
                ));
            }
            if seen.contains(&h.k) {
                return Err(Error::config(
                    "seasonal.harmonic.k",
                    format!("harmonic {} listed twice", h.k),
                ));
            }
            if !(h.a.is_finite() && h.b.is_finite()) {
                return Err(Error::config(
                    "seasonal.harmonic",
                    format!("non-finite coefficient for harmonic {}", h.k),
                ));
            }
            seen.push(h.k);
        }
        Ok(())
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn ks(&self) -> Vec<u32> {
        self.harmonics.iter().map(|h| h.k).collect()
    }

    /// Seasonal log-demand shifter at month index `t`.
    pub fn value(&self, t: usize) -> f64 {
        self.harmonics.iter().fold(0.0, |acc, h| {
            let (c, s) = harmonic_basis(h.k, t);
            acc + h.a * c + h.b * s
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let coeffs: Self = toml::from_str(text).map_err(|e| Error::config("seasonal", e.message().to_string()))?;
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("coefficients serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

/// Free function form of [`SeasonalCoefficients::value`].
pub fn seasonal_value(coeffs: &SeasonalCoefficients, t: usize) -> f64 {
    coeffs.value(t)
}

/// Read a `month,value` CSV with a header row, where month 0 is January.
pub fn read_monthly_series(path: &Path) -> Result<Vec<(usize, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_monthly_series(file).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_monthly_series<R: std::io::Read>(reader: R) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let bad = || Error::Data(format!("row {} is not `month,value`", i + 2));
        if rec.len() != 2 {
            return Err(bad());
        }
        let t: usize = rec[0].parse().map_err(|_| bad())?;
        let v: f64 = rec[1].parse().map_err(|_| bad())?;
        points.push((t, v));
    }
    Ok(points)
}

/// Ordinary least squares fit of the harmonic coefficients to `(t, value)`
/// pairs. There is no intercept.
///
/// Regressors that vanish on every sample point (e.g. `sin(6 φ_t)` at
/// integer months) carry no information; their coefficient is set to zero.
pub fn fit_coefficients(series: &[(usize, f64)], harmonics: &[u32]) -> Result<SeasonalCoefficients> {
    SeasonalCoefficients::zeros(harmonics)?;
    if series.len() < 2 * harmonics.len() {
        return Err(Error::Fit(format!(
            "{} observations cannot identify {} coefficients",
            series.len(),
            2 * harmonics.len()
        )));
    }
    let t_min = series.iter().map(|p| p.0).min().unwrap_or(0);
    let t_max = series.iter().map(|p| p.0).max().unwrap_or(0);
    if t_max - t_min + 1 < 12 {
        return Err(Error::Fit(format!(
            "series spans {} months, at least 12 are required",
            t_max - t_min + 1
        )));
    }
    if let Some((t, _)) = series.iter().find(|p| !p.1.is_finite()) {
        return Err(Error::Fit(format!("non-finite value at month {t}")));
    }

    // Column j: harmonic j / 2, cosine when even, sine when odd.
    let basis = |col: usize, t: usize| {
        let (c, s) = harmonic_basis(harmonics[col / 2], t);
        if col.is_multiple_of(2) {
            c
        } else {
            s
        }
    };
    let active: Vec<usize> = (0..2 * harmonics.len())
        .filter(|&col| series.iter().any(|&(t, _)| basis(col, t) != 0.0))
        .collect();

    let design = DMatrix::from_fn(series.len(), active.len(), |r, c| basis(active[c], series[r].0));
    let y = DVector::from_iterator(series.len(), series.iter().map(|p| p.1));
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * s_max {
        return Err(Error::Fit("rank-deficient harmonic design".to_string()));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| Error::Fit(e.to_string()))?;

    let mut out: Vec<Harmonic> = harmonics.iter().map(|&k| Harmonic { k, a: 0.0, b: 0.0 }).collect();
    for (&col, &value) in active.iter().zip(beta.iter()) {
        let h = &mut out[col / 2];
        if col.is_multiple_of(2) {
            h.a = value;
        } else {
            h.b = value;
        }
    }
    SeasonalCoefficients::new(out)
}
