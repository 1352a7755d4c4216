//! Estimators: row normalization, Pearson correlation and the full
//! cross-correlation map, Fano factor, Gemellity factor, and the
//! noise-reduction figure in dB.
//!
//! Conventions: sample variance (n-1 denominator) everywhere; correlations
//! are never clamped; channels whose variance is zero (or indistinguishable
//! from zero at double precision, std < 1e-12 |mean|) are masked rather than
//! coerced to 0.

use rayon::prelude::*;

use crate::ensemble::{EnsembleSpectra, ValueKind};
use crate::error::{Error, Result};

/// Relative scale below which a sample std is treated as zero variance.
/// Rows that differ only by a common positive factor normalize to values
/// equal up to rounding; their residual std is O(1e-16) of the mean and must
/// mask, not correlate.
const DEGENERACY_CV: f64 = 1e-12;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the n-1 denominator.
fn sample_variance(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn is_degenerate(variance: f64, m: f64) -> bool {
    variance == 0.0 || variance.sqrt() < DEGENERACY_CV * m.abs()
}

/// Divides every row by its own integral (sum * bin_width) so each spectrum
/// integrates to one. Errors on a zero-total row.
pub fn normalize_rows(ensemble: &EnsembleSpectra) -> Result<EnsembleSpectra> {
    let n_bins = ensemble.n_bins();
    let width = ensemble.bin_width();
    let mut data = Vec::with_capacity(ensemble.n_shots() * n_bins);
    for shot in 0..ensemble.n_shots() {
        let row = ensemble.row(shot);
        let total: f64 = row.iter().sum::<f64>() * width;
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "cannot normalize shot {shot}: total spectral energy is zero"
            )));
        }
        data.extend(row.iter().map(|v| v / total));
    }
    EnsembleSpectra::new(
        ensemble.bin_centers().to_vec(),
        width,
        ensemble.n_shots(),
        data,
        ValueKind::Normalized,
        ensemble.seed(),
        ensemble.arm(),
        *ensemble.config_digest(),
    )
}

/// Pearson correlation coefficient cov(x,y) / (sx sy). Zero variance in
/// either series is an undefined-correlation error, not a NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(
            "pearson needs at least 2 samples".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let denom = (x.len() - 1) as f64;
    if is_degenerate(sxx / denom, mx) || is_degenerate(syy / denom, my) {
        return Err(Error::Degenerate(
            "pearson undefined: zero variance in a series".into(),
        ));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.abs() > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "pearson left [-1, 1] beyond rounding: r = {r}"
        )));
    }
    Ok(r)
}

/// Pearson map over all wavelength-channel pairs of a normalized ensemble.
#[derive(Clone, Debug)]
pub struct CorrelationMap {
    bin_centers: Vec<f64>,
    lambda0: f64,
    /// Row-major n_bins x n_bins; NaN where masked.
    values: Vec<f64>,
    /// Per-channel degeneracy; an entry is masked when either channel is.
    mask: Vec<bool>,
}

impl CorrelationMap {
    pub fn bin_centers(&self) -> &[f64] {
        &self.bin_centers
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn n_bins(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn channel_masked(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask[i] || self.mask[j]
    }

    /// r(i, j), or None when masked.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if self.is_masked(i, j) {
            None
        } else {
            Some(self.values[i * self.n_bins() + j])
        }
    }
}

/// Computes the full correlation map of a normalized ensemble. Each unordered
/// pair is computed once; the diagonal of defined channels is exactly 1.
pub fn correlation_map(ensemble: &EnsembleSpectra, lambda0: f64) -> Result<CorrelationMap> {
    if ensemble.value_kind() != ValueKind::Normalized {
        return Err(Error::InvalidInput(format!(
            "correlation_map needs a normalized ensemble, got {:?}",
            ensemble.value_kind()
        )));
    }
    if ensemble.n_shots() < 2 {
        return Err(Error::Degenerate(format!(
            "correlation map needs at least 2 shots, got {}",
            ensemble.n_shots()
        )));
    }

    let n_bins = ensemble.n_bins();
    let n_shots = ensemble.n_shots();

    // centered columns and their variances, column-major for the pair dots
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n_bins);
    let mut sxx = vec![0.0; n_bins];
    let mut mask = vec![false; n_bins];
    for j in 0..n_bins {
        let col = ensemble.column(j);
        let m = mean(&col);
        let centered: Vec<f64> = col.iter().map(|v| v - m).collect();
        let ss: f64 = centered.iter().map(|v| v * v).sum();
        mask[j] = is_degenerate(ss / (n_shots - 1) as f64, m);
        sxx[j] = ss;
        cols.push(centered);
    }

    let rows: Vec<Vec<f64>> = (0..n_bins)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![f64::NAN; n_bins - i];
            if !mask[i] {
                row[0] = 1.0;
                let ci = &cols[i];
                for j in (i + 1)..n_bins {
                    if !mask[j] {
                        let sxy: f64 = ci.iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                        row[j - i] = sxy / (sxx[i].sqrt() * sxx[j].sqrt());
                    }
                }
            }
            row
        })
        .collect();

    let mut values = vec![f64::NAN; n_bins * n_bins];
    for (i, row) in rows.iter().enumerate() {
        for (off, &r) in row.iter().enumerate() {
            let j = i + off;
            values[i * n_bins + j] = r;
            values[j * n_bins + i] = r;
        }
    }

    Ok(CorrelationMap {
        bin_centers: ensemble.bin_centers().to_vec(),
        lambda0,
        values,
        mask,
    })
}

/// Fano factor: sample variance over mean. Poisson-distributed counts give
/// F near 1; a constant series gives 0.
pub fn fano(counts: &[f64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::Degenerate("fano needs at least 2 samples".into()));
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::InvalidInput(
            "counts must be finite and >= 0".into(),
        ));
    }
    let m = mean(counts);
    if !(m > 0.0) {
        return Err(Error::Degenerate("fano undefined: zero mean".into()));
    }
    Ok(sample_variance(counts, m) / m)
}

/// Gemellity factor G = (F1+F2)/2 - sqrt(C12^2 F1 F2 + (F1-F2)^2/4).
/// G < 1 would signal nonclassical correlation; classical jitter gives
/// G much greater than 1.
pub fn gemellity(f1: f64, f2: f64, c12: f64) -> Result<f64> {
    if !(f1 >= 0.0) || !(f2 >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "fano factors must be >= 0, got F1 = {f1}, F2 = {f2}"
        )));
    }
    if !(-1.0..=1.0).contains(&c12) {
        return Err(Error::InvalidInput(format!(
            "correlation must be in [-1, 1], got {c12}"
        )));
    }
    let radicand = c12 * c12 * f1 * f2 + 0.25 * (f1 - f2) * (f1 - f2);
    Ok(0.5 * (f1 + f2) - radicand.sqrt())
}

fn rin(series: &[f64], name: &str) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{name} series needs at least 2 samples"
        )));
    }
    let m = mean(series);
    if !(m > 0.0) {
        return Err(Error::Degenerate(format!("{name} series has zero mean")));
    }
    let v = sample_variance(series, m);
    if !(v > 0.0) {
        return Err(Error::Degenerate(format!(
            "{name} series has zero variance"
        )));
    }
    Ok(v / (m * m))
}

/// Noise reduction in dB comparing relative intensity noise (variance over
/// squared mean): 10 log10(RIN_ref / RIN_fil). Positive means the filtered
/// filament series is quieter than the reference.
pub fn noise_reduction_db(filament: &[f64], reference: &[f64]) -> Result<f64> {
    let rf = rin(filament, "filament")?;
    let rr = rin(reference, "reference")?;
    // difference of logs, so swapping the inputs negates the result exactly
    Ok(10.0 * (rr.log10() - rf.log10()))
}

/// Raw-variance variant of [`noise_reduction_db`]: compares Var(S) directly
/// without normalizing by the squared mean.
pub fn noise_reduction_db_raw_variance(filament: &[f64], reference: &[f64]) -> Result<f64> {
    let var_of = |s: &[f64], name: &str| -> Result<f64> {
        if s.len() < 2 {
            return Err(Error::Degenerate(format!(
                "{name} series needs at least 2 samples"
            )));
        }
        let v = sample_variance(s, mean(s));
        if !(v > 0.0) {
            return Err(Error::Degenerate(format!("{name} series has zero variance")));
        }
        Ok(v)
    };
    let vf = var_of(filament, "filament")?;
    let vr = var_of(reference, "reference")?;
    Ok(10.0 * (vr.log10() - vf.log10()))
}
