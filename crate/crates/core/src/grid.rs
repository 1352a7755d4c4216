//! Time/frequency discretization, the complex field envelope, and spectra.
//!
//! Conventions used throughout the crate: time in fs, distance in m, envelope
//! amplitude in sqrt(W), wavelengths in nm. The FFT is unitary (1/sqrt(N) in
//! both directions) so Parseval is a literal equality, and the inverse
//! transform carries exp(+i*omega*t), i.e. a spectral component at envelope
//! offset omega has absolute angular frequency omega0 + omega.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Speed of light in nm/fs.
pub const SPEED_OF_LIGHT_NM_PER_FS: f64 = 299.792458;

/// Planck constant times speed of light, J*m.
pub const HC_J_M: f64 = 1.98645e-25;

/// Seconds per femtosecond; converts W*fs energies to joules.
pub const SECONDS_PER_FS: f64 = 1e-15;

/// Uniform time grid with the derived frequency and wavelength axes and the
/// FFT plans for this size. Cheap to clone and share between threads.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    n_points: usize,
    time_window: f64,
    carrier_wavelength: f64,
    dt: f64,
    carrier_omega: f64,
    /// Time axis in fs, centered on zero.
    time: Vec<f64>,
    /// Envelope angular frequency offsets in rad/fs, FFT bin order.
    omega_rel: Vec<f64>,
    /// Wavelengths in nm, strictly ascending.
    lambda: Vec<f64>,
    /// FFT bin index backing each entry of `lambda`.
    lambda_order: Vec<usize>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_points", &self.inner.n_points)
            .field("time_window", &self.inner.time_window)
            .field("carrier_wavelength", &self.inner.carrier_wavelength)
            .finish()
    }
}

/// Builds a grid with `n_points` samples over `time_window_fs`, centered on
/// `carrier_wavelength_nm`. Rejects non-power-of-two sizes and grids whose
/// absolute frequency axis would touch or cross zero (those have no
/// wavelength representation).
pub fn make_grid(n_points: usize, time_window_fs: f64, carrier_wavelength_nm: f64) -> Result<Grid> {
    if n_points < 64 || !n_points.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "n_points must be a power of two >= 64, got {n_points}"
        )));
    }
    if !(time_window_fs > 0.0) || !time_window_fs.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "time_window must be positive and finite, got {time_window_fs} fs"
        )));
    }
    if !(carrier_wavelength_nm > 0.0) || !carrier_wavelength_nm.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "carrier_wavelength must be positive and finite, got {carrier_wavelength_nm} nm"
        )));
    }

    let dt = time_window_fs / n_points as f64;
    let carrier_omega = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_NM_PER_FS / carrier_wavelength_nm;
    let omega_half_span = std::f64::consts::PI / dt;
    if carrier_omega <= omega_half_span {
        return Err(Error::InvalidGrid(format!(
            "frequency axis crosses zero absolute frequency: carrier omega \
             {carrier_omega:.4} rad/fs <= half span {omega_half_span:.4} rad/fs; \
             use a coarser dt (longer window or fewer points) or a shorter carrier"
        )));
    }

    let n = n_points;
    let time: Vec<f64> = (0..n).map(|k| (k as f64 - (n / 2) as f64) * dt).collect();
    let domega = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let omega_rel: Vec<f64> = (0..n)
        .map(|m| {
            if m < n / 2 {
                m as f64 * domega
            } else {
                (m as f64 - n as f64) * domega
            }
        })
        .collect();

    // lambda ascending == absolute omega descending: positive offsets from
    // largest down, then negative offsets from least-negative down.
    let mut lambda_order: Vec<usize> = Vec::with_capacity(n);
    lambda_order.extend((0..n / 2).rev());
    lambda_order.extend((n / 2..n).rev());
    let lambda: Vec<f64> = lambda_order
        .iter()
        .map(|&m| {
            2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_NM_PER_FS / (carrier_omega + omega_rel[m])
        })
        .collect();
    debug_assert!(lambda.windows(2).all(|w| w[0] < w[1]));

    let mut planner = FftPlanner::new();
    let fft_forward = planner.plan_fft_forward(n);
    let fft_inverse = planner.plan_fft_inverse(n);

    Ok(Grid {
        inner: Arc::new(GridInner {
            n_points,
            time_window: time_window_fs,
            carrier_wavelength: carrier_wavelength_nm,
            dt,
            carrier_omega,
            time,
            omega_rel,
            lambda,
            lambda_order,
            fft_forward,
            fft_inverse,
        }),
    })
}

impl Grid {
    pub fn n_points(&self) -> usize {
        self.inner.n_points
    }

    pub fn dt(&self) -> f64 {
        self.inner.dt
    }

    pub fn time_window(&self) -> f64 {
        self.inner.time_window
    }

    pub fn carrier_wavelength(&self) -> f64 {
        self.inner.carrier_wavelength
    }

    /// Carrier angular frequency in rad/fs.
    pub fn carrier_omega(&self) -> f64 {
        self.inner.carrier_omega
    }

    /// Angular frequency resolution in rad/fs.
    pub fn omega_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.inner.n_points as f64 * self.inner.dt)
    }

    /// Time axis in fs, centered on zero.
    pub fn time_axis(&self) -> &[f64] {
        &self.inner.time
    }

    /// Envelope angular frequency offsets in rad/fs, in FFT bin order.
    pub fn omega_axis(&self) -> &[f64] {
        &self.inner.omega_rel
    }

    /// Wavelength axis in nm, strictly ascending.
    pub fn wavelength_axis(&self) -> &[f64] {
        &self.inner.lambda
    }

    /// FFT bin index backing each entry of the ascending wavelength axis.
    pub fn wavelength_order(&self) -> &[usize] {
        &self.inner.lambda_order
    }

    pub fn same_grid(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n_points == other.inner.n_points
                && self.inner.time_window == other.inner.time_window
                && self.inner.carrier_wavelength == other.inner.carrier_wavelength)
    }

    /// Unitary forward FFT in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.inner.n_points);
        self.inner.fft_forward.process(data);
        let scale = 1.0 / (self.inner.n_points as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Unitary inverse FFT in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.inner.n_points);
        self.inner.fft_inverse.process(data);
        let scale = 1.0 / (self.inner.n_points as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Complex field envelope sampled on a [`Grid`], amplitude in sqrt(W).
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    envelope: Vec<Complex64>,
    z_position: f64,
}

impl Field {
    /// Wraps an envelope; the length must match the grid.
    pub fn new(grid: Grid, envelope: Vec<Complex64>, z_position: f64) -> Result<Field> {
        if envelope.len() != grid.n_points() {
            return Err(Error::InvalidPulse(format!(
                "envelope length {} does not match grid n_points {}",
                envelope.len(),
                grid.n_points()
            )));
        }
        Ok(Field {
            grid,
            envelope,
            z_position,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn envelope(&self) -> &[Complex64] {
        &self.envelope
    }

    pub fn z_position(&self) -> f64 {
        self.z_position
    }

    /// Pulse energy in joules: sum |A|^2 dt, converted from W*fs.
    pub fn energy(&self) -> f64 {
        let sum: f64 = self.envelope.iter().map(|a| a.norm_sqr()).sum();
        sum * self.grid.dt() * SECONDS_PER_FS
    }

    /// Peak instantaneous power in W.
    pub fn peak_power(&self) -> f64 {
        self.envelope
            .iter()
            .map(|a| a.norm_sqr())
            .fold(0.0, f64::max)
    }
}

/// Gaussian pulse: envelope = sqrt(P) exp(-2 ln2 ((t-t0)/T)^2 (1 + i*chirp))
/// with T the intensity FWHM in fs.
pub fn gaussian_pulse(
    grid: &Grid,
    peak_power_w: f64,
    duration_fwhm_fs: f64,
    center_offset_fs: f64,
    chirp: f64,
) -> Result<Field> {
    if !(peak_power_w > 0.0) || !peak_power_w.is_finite() {
        return Err(Error::InvalidPulse(format!(
            "peak_power must be positive and finite, got {peak_power_w} W"
        )));
    }
    if !(duration_fwhm_fs > 0.0) || !duration_fwhm_fs.is_finite() {
        return Err(Error::InvalidPulse(format!(
            "duration_fwhm must be positive and finite, got {duration_fwhm_fs} fs"
        )));
    }
    if duration_fwhm_fs < 4.0 * grid.dt() {
        return Err(Error::InvalidPulse(format!(
            "pulse under-resolved: FWHM {duration_fwhm_fs} fs < 4 dt = {} fs",
            4.0 * grid.dt()
        )));
    }
    if duration_fwhm_fs > grid.time_window() / 8.0 {
        return Err(Error::InvalidPulse(format!(
            "pulse too long for window: FWHM {duration_fwhm_fs} fs > time_window/8 = {} fs",
            grid.time_window() / 8.0
        )));
    }
    if !center_offset_fs.is_finite() || !chirp.is_finite() {
        return Err(Error::InvalidPulse(
            "center_offset and chirp must be finite".into(),
        ));
    }

    let amp = peak_power_w.sqrt();
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    let envelope = grid
        .time_axis()
        .iter()
        .map(|&t| {
            let u = (t - center_offset_fs) / duration_fwhm_fs;
            let arg = Complex64::new(-two_ln2 * u * u, -two_ln2 * u * u * chirp);
            amp * arg.exp()
        })
        .collect();
    Field::new(grid.clone(), envelope, 0.0)
}

/// Closed-form energy of [`gaussian_pulse`] in joules.
pub fn gaussian_pulse_energy(peak_power_w: f64, duration_fwhm_fs: f64) -> f64 {
    peak_power_w
        * duration_fwhm_fs
        * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt()
        * SECONDS_PER_FS
}

/// Spectral energy density on the grid's ascending wavelength axis.
///
/// `bin_weights` are the exact images of the uniform angular-frequency bins
/// under the omega -> lambda change of variable, so `energy()` reproduces the
/// time-domain pulse energy to rounding error.
#[derive(Clone, Debug)]
pub struct Spectrum {
    wavelength_nm: Vec<f64>,
    psd_j_per_nm: Vec<f64>,
    bin_weights_nm: Vec<f64>,
}

impl Spectrum {
    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelength_nm
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd_j_per_nm
    }

    pub fn bin_weights(&self) -> &[f64] {
        &self.bin_weights_nm
    }

    /// Integral of the psd over wavelength, in joules.
    pub fn energy(&self) -> f64 {
        self.psd_j_per_nm
            .iter()
            .zip(&self.bin_weights_nm)
            .map(|(p, w)| p * w)
            .sum()
    }
}

/// Power spectral density of a field as energy per wavelength, J/nm.
pub fn spectrum_of(field: &Field) -> Spectrum {
    let grid = field.grid();
    let n = grid.n_points();
    let dt = grid.dt();
    let domega = grid.omega_step();
    let c = SPEED_OF_LIGHT_NM_PER_FS;

    let mut spec = field.envelope().to_vec();
    grid.forward(&mut spec);

    // |A_hat(omega)|^2 = dt^2 N |fft_unitary|^2, units W*fs^2.
    let transform_scale = dt * dt * n as f64;
    let order = grid.wavelength_order();
    let lambda = grid.wavelength_axis();
    let mut psd = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (k, &m) in order.iter().enumerate() {
        let l = lambda[k];
        let a2 = spec[m].norm_sqr() * transform_scale;
        // S(lambda) = |A_hat|^2/(2 pi) * 2 pi c / lambda^2, in J/nm.
        psd.push(a2 * c / (l * l) * SECONDS_PER_FS);
        // exact image of the omega bin: d omega * lambda^2 / (2 pi c).
        weights.push(domega * l * l / (2.0 * std::f64::consts::PI * c));
    }

    Spectrum {
        wavelength_nm: lambda.to_vec(),
        psd_j_per_nm: psd,
        bin_weights_nm: weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_dt_is_exact_division() {
        // 4096 points over 4000 fs: dt = 4000/4096; carrier short enough that
        // the absolute frequency axis stays positive.
        let g = make_grid(4096, 4000.0, 400.0).unwrap();
        assert_eq!(g.dt(), 4000.0 / 4096.0);
        assert!((g.dt() - 0.9766).abs() < 5e-5);

        let g = make_grid(64, 64.0, 500.0).unwrap();
        assert_eq!(g.dt(), 1.0);
    }

    #[test]
    fn grid_rejects_non_power_of_two() {
        assert!(matches!(
            make_grid(1000, 4000.0, 805.0),
            Err(Error::InvalidGrid(_))
        ));
        assert!(make_grid(32, 64.0, 500.0).is_err());
    }

    #[test]
    fn grid_rejects_zero_crossing_frequency_axis() {
        // At 805 nm the carrier is 2.34 rad/fs; dt < ~1.34 fs pushes the
        // half span pi/dt past it, so the absolute axis would cross zero.
        let err = make_grid(4096, 4000.0, 805.0).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
        assert!(err.to_string().contains("crosses zero"));
        assert!(make_grid(64, 64.0, 805.0).is_err());
        // Same point count and carrier with a coarser dt is fine.
        assert!(make_grid(4096, 8192.0, 805.0).is_ok());
    }

    #[test]
    fn wavelength_axis_ascending_and_positive() {
        let g = make_grid(256, 2048.0, 805.0).unwrap();
        let lam = g.wavelength_axis();
        assert_eq!(lam.len(), 256);
        assert!(lam.iter().all(|&l| l > 0.0));
        assert!(lam.windows(2).all(|w| w[0] < w[1]));
        // The carrier sits on the axis (bin 0 of the FFT order).
        let k0 = g.wavelength_order().iter().position(|&m| m == 0).unwrap();
        assert!((g.wavelength_axis()[k0] - 805.0).abs() < 1e-9);
    }

    #[test]
    fn fft_round_trip() {
        let g = make_grid(512, 4096.0, 805.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let orig: Vec<Complex64> = (0..512)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut buf = orig.clone();
        g.forward(&mut buf);
        g.inverse(&mut buf);
        let num: f64 = buf
            .iter()
            .zip(&orig)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
        let den: f64 = orig.iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-12);
    }

    #[test]
    fn gaussian_pulse_energy_matches_closed_form() {
        let g = make_grid(4096, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 5e9, 200.0, 0.0, 0.0).unwrap();
        let expected = gaussian_pulse_energy(5e9, 200.0);
        assert!((f.energy() - expected).abs() / expected < 1e-6);

        // chirp does not change the energy
        let f = gaussian_pulse(&g, 5e9, 200.0, 0.0, 1.5).unwrap();
        assert!((f.energy() - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn gaussian_pulse_rejects_bad_durations() {
        let g = make_grid(4096, 8192.0, 805.0).unwrap();
        // under-resolved: dt = 2 fs, need >= 8 fs
        assert!(gaussian_pulse(&g, 1.0, 7.0, 0.0, 0.0).is_err());
        // window-clipping: > 8192/8
        assert!(gaussian_pulse(&g, 1.0, 1025.0, 0.0, 0.0).is_err());
        assert!(gaussian_pulse(&g, -1.0, 200.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn spectrum_preserves_energy_parseval() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 5e9, 200.0, 35.0, 0.7).unwrap();
        let s = spectrum_of(&f);
        let rel = (s.energy() - f.energy()).abs() / f.energy();
        assert!(rel < 1e-9, "rel = {rel:.3e}");
    }

    #[test]
    fn spectrum_energy_random_fields() {
        // property: Parseval holds for arbitrary envelopes, not just pulses
        let g = make_grid(256, 4096.0, 805.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..120 {
            let env: Vec<Complex64> = (0..256)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let f = Field::new(g.clone(), env, 0.0).unwrap();
            let s = spectrum_of(&f);
            let rel = (s.energy() - f.energy()).abs() / f.energy();
            assert!(rel < 1e-9, "rel = {rel:.3e}");
        }
    }

    #[test]
    fn transform_limited_spectral_fwhm() {
        // 200 fs Gaussian at 805 nm: FWHM_lambda = 0.441 lambda^2 / (c T)
        let g = make_grid(4096, 16384.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 5e9, 200.0, 0.0, 0.0).unwrap();
        let s = spectrum_of(&f);
        let fwhm = crate::measure::fwhm(s.wavelengths(), s.psd()).unwrap();
        let tbp = 2.0 * std::f64::consts::LN_2 / std::f64::consts::PI;
        let expected = tbp * 805.0 * 805.0 / (SPEED_OF_LIGHT_NM_PER_FS * 200.0);
        assert!((expected - 4.766).abs() < 1e-2);
        assert!(
            (fwhm - expected).abs() / expected < 1e-3,
            "fwhm = {fwhm}, expected = {expected}"
        );
    }

    #[test]
    fn chirp_doubles_bandwidth() {
        // spectral FWHM scales as sqrt(1 + C^2); C = sqrt(3) doubles it
        let g = make_grid(4096, 16384.0, 805.0).unwrap();
        let tl = spectrum_of(&gaussian_pulse(&g, 5e9, 200.0, 0.0, 0.0).unwrap());
        let ch = spectrum_of(&gaussian_pulse(&g, 5e9, 200.0, 0.0, 3f64.sqrt()).unwrap());
        let w_tl = crate::measure::fwhm(tl.wavelengths(), tl.psd()).unwrap();
        let w_ch = crate::measure::fwhm(ch.wavelengths(), ch.psd()).unwrap();
        assert!(
            (w_ch / w_tl - 2.0).abs() < 5e-3,
            "ratio = {}",
            w_ch / w_tl
        );
    }

    #[test]
    fn chirp_zero_spectrum_symmetric_about_carrier() {
        let g = make_grid(2048, 16384.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 300.0, 0.0, 0.0).unwrap();
        let mut spec = f.envelope().to_vec();
        g.forward(&mut spec);
        // |A_hat(+omega)| == |A_hat(-omega)| for a real symmetric envelope
        let n = g.n_points();
        for m in 1..80 {
            let a = spec[m].norm();
            let b = spec[n - m].norm();
            assert!((a - b).abs() <= 1e-9 * a.max(b).max(1e-300));
        }
    }

    #[test]
    fn long_pulse_concentrates_at_carrier() {
        // quasi-monochromatic limit: the modal bin is the carrier bin and the
        // energy collapses onto it
        let g = make_grid(4096, 65536.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e6, 8192.0, 0.0, 0.0).unwrap();
        let s = spectrum_of(&f);
        let peak = s
            .psd()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let lam = s.wavelengths();
        let bin = lam[peak + 1] - lam[peak];
        assert!((lam[peak] - 805.0).abs() <= bin);
        let near: f64 = s
            .psd()
            .iter()
            .zip(s.bin_weights())
            .zip(lam)
            .filter(|((_, _), &l)| (l - 805.0).abs() < 1.0)
            .map(|((p, w), _)| p * w)
            .sum();
        assert!(near / f.energy() > 0.9999);
    }
}
