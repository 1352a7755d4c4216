//! Seeded shot-to-shot jitter, the ensemble runner for the nonlinear and
//! reference arms, and the shots x wavelength-bins matrix all statistics
//! consume.
//!
//! Reproducibility contract: shot i draws only from the ChaCha stream
//! (seed, i), so the ensemble is bitwise identical for a fixed config no
//! matter how many workers execute it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gaussian_pulse, spectrum_of, Grid};
use crate::propagation::{propagate, Medium, StepControl};

/// Gaussian shot-to-shot jitter, independently drawn per shot and parameter.
/// Sigmas are relative rms for energy and duration, absolute for chirp.
#[derive(Clone, Debug, PartialEq)]
pub struct JitterModel {
    pub sigma_energy: f64,
    pub sigma_duration: f64,
    pub sigma_chirp: f64,
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel {
            sigma_energy: 0.01,
            sigma_duration: 0.005,
            sigma_chirp: 0.0,
        }
    }
}

impl JitterModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_energy >= 0.0
            && self.sigma_energy < 0.5
            && self.sigma_duration >= 0.0
            && self.sigma_duration < 0.5
            && self.sigma_chirp >= 0.0
            && self.sigma_chirp.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "jitter sigmas must satisfy 0 <= sigma_energy, sigma_duration < 0.5 and \
                 sigma_chirp >= 0; got {self:?}"
            )))
        }
    }
}

/// Nominal pulse parameters the jitter perturbs.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSpec {
    pub peak_power_w: f64,
    pub duration_fwhm_fs: f64,
    pub center_offset_fs: f64,
    pub chirp: f64,
}

/// One shot's materialized pulse parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotParams {
    pub peak_power_w: f64,
    pub duration_fwhm_fs: f64,
    pub center_offset_fs: f64,
    pub chirp: f64,
    /// This shot's pulse energy relative to nominal.
    pub energy_factor: f64,
}

/// Deterministically materialized ensemble of perturbed pulses.
#[derive(Clone, Debug)]
pub struct ShotSet {
    pub seed: u64,
    pub nominal: PulseSpec,
    pub jitter: JitterModel,
    shots: Vec<ShotParams>,
}

impl ShotSet {
    pub fn shots(&self) -> &[ShotParams] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }
}

/// Draws `n_shots` perturbed pulses. Energy and duration factors are
/// 1 + sigma*g with g standard normal, redrawn while non-positive; the
/// peak power carries energy_factor/duration_factor so `sigma_energy` is
/// exactly the relative rms of the pulse energy.
pub fn generate_shots(
    seed: u64,
    n_shots: usize,
    nominal: &PulseSpec,
    jitter: &JitterModel,
) -> Result<ShotSet> {
    if n_shots < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 shots, got {n_shots}"
        )));
    }
    jitter.validate()?;

    let shots = (0..n_shots)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let energy_factor = positive_factor(&mut rng, jitter.sigma_energy);
            let duration_factor = positive_factor(&mut rng, jitter.sigma_duration);
            let dchirp: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            ShotParams {
                peak_power_w: nominal.peak_power_w * energy_factor / duration_factor,
                duration_fwhm_fs: nominal.duration_fwhm_fs * duration_factor,
                center_offset_fs: nominal.center_offset_fs,
                chirp: nominal.chirp + jitter.sigma_chirp * dchirp,
                energy_factor,
            }
        })
        .collect();

    Ok(ShotSet {
        seed,
        nominal: nominal.clone(),
        jitter: jitter.clone(),
        shots,
    })
}

fn positive_factor(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    loop {
        let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        let f = 1.0 + sigma * g;
        if f > 0.0 {
            return f;
        }
    }
}

/// Uniform wavelength binning of the virtual spectrometer.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrometerBinning {
    pub min_nm: f64,
    pub max_nm: f64,
    pub bin_nm: f64,
}

impl SpectrometerBinning {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_nm > 0.0 && self.max_nm > self.min_nm && self.bin_nm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "spectrometer binning needs 0 < min < max and bin > 0, got {self:?}"
            )));
        }
        if self.n_bins() == 0 {
            return Err(Error::InvalidInput(
                "spectrometer range is narrower than one bin".into(),
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.max_nm - self.min_nm) / self.bin_nm + 1e-9).floor() as usize
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|j| self.min_nm + (j as f64 + 0.5) * self.bin_nm)
            .collect()
    }
}

/// What the matrix values mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    EnergyDensity,
    PhotonCounts,
    Normalized,
}

impl ValueKind {
    pub fn as_u8(self) -> u8 {
        match self {
            ValueKind::EnergyDensity => 0,
            ValueKind::PhotonCounts => 1,
            ValueKind::Normalized => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ValueKind::EnergyDensity),
            1 => Ok(ValueKind::PhotonCounts),
            2 => Ok(ValueKind::Normalized),
            _ => Err(Error::Format(format!("unknown value_kind {v}"))),
        }
    }
}

/// Which arm of the experiment produced an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Filament,
    Reference,
}

impl Arm {
    pub fn as_u8(self) -> u8 {
        match self {
            Arm::Filament => 0,
            Arm::Reference => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Arm::Filament),
            1 => Ok(Arm::Reference),
            _ => Err(Error::Format(format!("unknown arm {v}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Filament => "filament",
            Arm::Reference => "reference",
        }
    }
}

/// Shots x wavelength-bins matrix with provenance. Bin energies are in
/// joules for `EnergyDensity`, photons for `PhotonCounts`, 1/nm for
/// `Normalized`.
#[derive(Clone, Debug)]
pub struct EnsembleSpectra {
    bin_centers: Vec<f64>,
    bin_width: f64,
    n_shots: usize,
    data: Vec<f64>,
    value_kind: ValueKind,
    seed: u64,
    arm: Arm,
    config_digest: [u8; 32],
}

impl EnsembleSpectra {
    pub fn new(
        bin_centers: Vec<f64>,
        bin_width: f64,
        n_shots: usize,
        data: Vec<f64>,
        value_kind: ValueKind,
        seed: u64,
        arm: Arm,
        config_digest: [u8; 32],
    ) -> Result<Self> {
        if bin_centers.is_empty() || n_shots == 0 {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        if data.len() != n_shots * bin_centers.len() {
            return Err(Error::InvalidInput(format!(
                "matrix has {} values, expected {} shots x {} bins",
                data.len(),
                n_shots,
                bin_centers.len()
            )));
        }
        if !(bin_width > 0.0) {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "ensemble values must be finite and >= 0, found {v}"
            )));
        }
        let ens = EnsembleSpectra {
            bin_centers,
            bin_width,
            n_shots,
            data,
            value_kind,
            seed,
            arm,
            config_digest,
        };
        if value_kind == ValueKind::Normalized {
            for i in 0..n_shots {
                let integral: f64 = ens.row(i).iter().sum::<f64>() * bin_width;
                if (integral - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "normalized row {i} integrates to {integral}, expected 1"
                    )));
                }
            }
        }
        Ok(ens)
    }

    pub fn bin_centers(&self) -> &[f64] {
        &self.bin_centers
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn n_bins(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn value_kind(&self) -> ValueKind {
        self.value_kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn config_digest(&self) -> &[u8; 32] {
        &self.config_digest
    }

    pub fn row(&self, shot: usize) -> &[f64] {
        let n = self.n_bins();
        &self.data[shot * n..(shot + 1) * n]
    }

    pub fn column(&self, bin: usize) -> Vec<f64> {
        (0..self.n_shots)
            .map(|i| self.data[i * self.n_bins() + bin])
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Low edge of the first bin.
    pub fn range_lo(&self) -> f64 {
        self.bin_centers[0] - 0.5 * self.bin_width
    }

    /// High edge of the last bin.
    pub fn range_hi(&self) -> f64 {
        self.bin_centers[self.bin_centers.len() - 1] + 0.5 * self.bin_width
    }
}

/// Runs every shot of `shots` through `medium` over `distance` and bins the
/// resulting spectra. Rows are ordered by shot index regardless of the
/// execution schedule; the first failing shot aborts the run with its index.
#[allow(clippy::too_many_arguments)]
pub fn run_arm(
    shots: &ShotSet,
    medium: &Medium,
    distance: f64,
    grid: &Grid,
    binning: &SpectrometerBinning,
    control: &StepControl,
    arm: Arm,
    config_digest: [u8; 32],
) -> Result<EnsembleSpectra> {
    binning.validate()?;
    let n_bins = binning.n_bins();
    let results: Vec<Result<Vec<f64>>> = shots
        .shots()
        .par_iter()
        .map(|p| {
            let field = gaussian_pulse(
                grid,
                p.peak_power_w,
                p.duration_fwhm_fs,
                p.center_offset_fs,
                p.chirp,
            )?;
            let out = propagate(&field, medium, distance, control)?;
            let spec = spectrum_of(&out);
            Ok(bin_energies(
                spec.wavelengths(),
                spec.psd(),
                binning.min_nm,
                binning.bin_nm,
                n_bins,
            ))
        })
        .collect();

    let mut data = Vec::with_capacity(shots.len() * n_bins);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => data.extend_from_slice(&row),
            Err(e) => {
                return Err(Error::ShotFailed {
                    shot: i,
                    source: Box::new(e),
                })
            }
        }
    }

    EnsembleSpectra::new(
        binning.centers(),
        binning.bin_nm,
        shots.len(),
        data,
        ValueKind::EnergyDensity,
        shots.seed,
        arm,
        config_digest,
    )
}

/// Integrates a piecewise-linear psd over uniform bins, clipping segments at
/// bin edges so contiguous bins partition the energy exactly.
pub(crate) fn bin_energies(
    lambda: &[f64],
    psd: &[f64],
    min_nm: f64,
    bin_nm: f64,
    n_bins: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n_bins];
    let max_nm = min_nm + bin_nm * n_bins as f64;
    for k in 0..lambda.len().saturating_sub(1) {
        let (x0, x1) = (lambda[k], lambda[k + 1]);
        if x1 <= min_nm || x0 >= max_nm {
            continue;
        }
        let (y0, y1) = (psd[k], psd[k + 1]);
        let slope = (y1 - y0) / (x1 - x0);
        // first bin this segment can touch (edge rounding may put it one low)
        let mut j = (((x0.max(min_nm)) - min_nm) / bin_nm).floor() as usize;
        while j < n_bins {
            let bin_lo = min_nm + j as f64 * bin_nm;
            if bin_lo >= x1 {
                break;
            }
            let lo = bin_lo.max(x0);
            let hi = (min_nm + (j + 1) as f64 * bin_nm).min(x1);
            if hi > lo {
                let ya = y0 + slope * (lo - x0);
                let yb = y0 + slope * (hi - x0);
                out[j] += 0.5 * (ya + yb) * (hi - lo);
            }
            if hi >= x1 {
                break;
            }
            j += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn nominal() -> PulseSpec {
        PulseSpec {
            peak_power_w: 1e9,
            duration_fwhm_fs: 200.0,
            center_offset_fs: 0.0,
            chirp: 0.0,
        }
    }

    fn test_grid() -> Grid {
        // dt = 8 fs resolves the pulse; the 8192 fs window gives 0.26 nm
        // native resolution, finer than the 0.3 nm spectrometer bins
        make_grid(1024, 8192.0, 805.0).unwrap()
    }

    fn test_binning() -> SpectrometerBinning {
        SpectrometerBinning {
            min_nm: 785.0,
            max_nm: 845.0,
            bin_nm: 0.3,
        }
    }

    #[test]
    fn zero_jitter_gives_identical_shots() {
        let j = JitterModel {
            sigma_energy: 0.0,
            sigma_duration: 0.0,
            sigma_chirp: 0.0,
        };
        let s = generate_shots(5, 16, &nominal(), &j).unwrap();
        for p in s.shots() {
            assert_eq!(p.peak_power_w, 1e9);
            assert_eq!(p.duration_fwhm_fs, 200.0);
            assert_eq!(p.chirp, 0.0);
            assert_eq!(p.energy_factor, 1.0);
        }
    }

    #[test]
    fn same_seed_same_shots() {
        let j = JitterModel::default();
        let a = generate_shots(99, 64, &nominal(), &j).unwrap();
        let b = generate_shots(99, 64, &nominal(), &j).unwrap();
        assert_eq!(a.shots(), b.shots());
        let c = generate_shots(100, 64, &nominal(), &j).unwrap();
        assert_ne!(a.shots(), c.shots());
    }

    #[test]
    fn shot_streams_are_index_keyed() {
        // a prefix of a longer set equals the shorter set: shot i depends
        // only on (seed, i)
        let j = JitterModel::default();
        let a = generate_shots(7, 10, &nominal(), &j).unwrap();
        let b = generate_shots(7, 1000, &nominal(), &j).unwrap();
        assert_eq!(a.shots(), &b.shots()[..10]);
    }

    #[test]
    fn energy_jitter_rms_calibrated() {
        let j = JitterModel {
            sigma_energy: 0.01,
            sigma_duration: 0.0,
            sigma_chirp: 0.0,
        };
        let s = generate_shots(1, 10_000, &nominal(), &j).unwrap();
        let rms = (s
            .shots()
            .iter()
            .map(|p| (p.energy_factor - 1.0).powi(2))
            .sum::<f64>()
            / s.len() as f64)
            .sqrt();
        assert!((0.0097..=0.0103).contains(&rms), "rms = {rms}");
        let mean = s.shots().iter().map(|p| p.energy_factor).sum::<f64>() / s.len() as f64;
        assert!((mean - 1.0).abs() < 5.0 * 0.01 / (s.len() as f64).sqrt());
    }

    #[test]
    fn rejects_single_shot_and_bad_sigma() {
        assert!(generate_shots(1, 1, &nominal(), &JitterModel::default()).is_err());
        let j = JitterModel {
            sigma_energy: 0.6,
            ..JitterModel::default()
        };
        assert!(generate_shots(1, 10, &nominal(), &j).is_err());
    }

    #[test]
    fn binning_partitions_energy() {
        // contiguous bins split the trapezoid integral exactly
        let lambda: Vec<f64> = (0..200).map(|i| 780.0 + 0.37 * i as f64).collect();
        let psd: Vec<f64> = lambda.iter().map(|l| (l - 780.0).sin().abs() + 0.1).collect();
        let n_bins = 120;
        let bins = bin_energies(&lambda, &psd, 790.0, 0.4, n_bins);
        let total: f64 = bins.iter().sum();

        // direct trapezoid over [790, 838] with edge clipping
        let (lo, hi) = (790.0, 790.0 + 0.4 * n_bins as f64);
        let mut expected = 0.0;
        for k in 0..lambda.len() - 1 {
            let (x0, x1) = (lambda[k], lambda[k + 1]);
            let a = x0.max(lo);
            let b = x1.min(hi);
            if b <= a {
                continue;
            }
            let slope = (psd[k + 1] - psd[k]) / (x1 - x0);
            let ya = psd[k] + slope * (a - x0);
            let yb = psd[k] + slope * (b - x0);
            expected += 0.5 * (ya + yb) * (b - a);
        }
        assert!((total - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn reference_arm_zero_jitter_rows_identical() {
        let j = JitterModel {
            sigma_energy: 0.0,
            sigma_duration: 0.0,
            sigma_chirp: 0.0,
        };
        let shots = generate_shots(3, 4, &nominal(), &j).unwrap();
        let grid = test_grid();
        let medium = Medium::default().linearized();
        let ens = run_arm(
            &shots,
            &medium,
            10.0,
            &grid,
            &test_binning(),
            &StepControl::default(),
            Arm::Reference,
            [0; 32],
        )
        .unwrap();
        for i in 1..ens.n_shots() {
            assert_eq!(ens.row(i), ens.row(0));
        }
    }

    #[test]
    fn reference_arm_energy_bookkeeping() {
        // lossless gamma=0 arm: each row total equals the shot energy inside
        // the bin range (the range holds essentially all of it here)
        let shots = generate_shots(11, 6, &nominal(), &JitterModel::default()).unwrap();
        let grid = test_grid();
        let medium = Medium::default().linearized();
        let ens = run_arm(
            &shots,
            &medium,
            10.0,
            &grid,
            &test_binning(),
            &StepControl::default(),
            Arm::Reference,
            [0; 32],
        )
        .unwrap();
        for (i, p) in shots.shots().iter().enumerate() {
            let field = gaussian_pulse(
                &grid,
                p.peak_power_w,
                p.duration_fwhm_fs,
                p.center_offset_fs,
                p.chirp,
            )
            .unwrap();
            let row_total: f64 = ens.row(i).iter().sum();
            let rel = (row_total - field.energy()).abs() / field.energy();
            assert!(rel < 1e-6, "shot {i}: rel = {rel:.3e}");
        }
    }

    #[test]
    fn serial_and_parallel_runs_are_bitwise_identical() {
        let shots = generate_shots(21, 12, &nominal(), &JitterModel::default()).unwrap();
        let grid = test_grid();
        let medium = Medium {
            gamma: 2.0 / (1e9 * 10.0),
            ..Medium::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                run_arm(
                    &shots,
                    &medium,
                    10.0,
                    &grid,
                    &test_binning(),
                    &StepControl::default(),
                    Arm::Filament,
                    [7; 32],
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn variance_grows_with_energy_jitter() {
        let grid = test_grid();
        let medium = Medium::default().linearized();
        let mut variances = Vec::new();
        for sigma in [0.0, 0.01, 0.03] {
            let j = JitterModel {
                sigma_energy: sigma,
                sigma_duration: 0.0,
                sigma_chirp: 0.0,
            };
            let shots = generate_shots(5, 60, &nominal(), &j).unwrap();
            let ens = run_arm(
                &shots,
                &medium,
                10.0,
                &grid,
                &test_binning(),
                &StepControl::default(),
                Arm::Reference,
                [0; 32],
            )
            .unwrap();
            let totals: Vec<f64> = (0..ens.n_shots()).map(|i| ens.row(i).iter().sum()).collect();
            let mean = totals.iter().sum::<f64>() / totals.len() as f64;
            let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
                / (totals.len() - 1) as f64;
            variances.push(var);
        }
        assert!(variances[0] <= variances[1]);
        assert!(variances[1] <= variances[2]);
    }

    #[test]
    fn failing_shot_is_attributed() {
        // distance large enough that dispersion spills energy into the guard
        // band for every shot; shot 0 must be the one reported
        let shots = generate_shots(2, 4, &nominal(), &JitterModel::default()).unwrap();
        let grid = test_grid();
        let medium = Medium {
            beta2: 50.0,
            ..Medium::default()
        };
        let err = run_arm(
            &shots,
            &medium,
            2e5,
            &grid,
            &test_binning(),
            &StepControl {
                max_step: 1e5,
                ..StepControl::default()
            },
            Arm::Reference,
            [0; 32],
        )
        .unwrap_err();
        match err {
            Error::ShotFailed { shot, source } => {
                assert_eq!(shot, 0);
                assert!(matches!(*source, Error::GuardBandViolation { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn normalized_constructor_checks_row_integral() {
        let centers = vec![800.0, 801.0];
        let bad = EnsembleSpectra::new(
            centers,
            1.0,
            1,
            vec![0.3, 0.3],
            ValueKind::Normalized,
            0,
            Arm::Filament,
            [0; 32],
        );
        assert!(bad.is_err());
    }
}
