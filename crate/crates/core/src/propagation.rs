//! Symmetric split-step Fourier propagator for the 1D nonlinear envelope
//! equation: group-velocity and third-order dispersion, Kerr self-phase
//! modulation, optional self-steepening and power-law loss.
//!
//! The linear half-steps are exact frequency-domain multiplications; the
//! nonlinear step is the exact SPM/loss exponential. The self-steepening
//! shock term, when enabled, is integrated by an explicit midpoint step
//! inside the nonlinear substep.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Propagation medium coefficients. Units: beta2 fs^2/m, beta3 fs^3/m,
/// gamma 1/(W m); `loss_coefficient` multiplies |A|^(2K) with K =
/// `loss_order` (K = 0 is plain linear loss, 0 coefficient disables).
#[derive(Clone, Debug, PartialEq)]
pub struct Medium {
    pub beta2: f64,
    pub beta3: f64,
    pub gamma: f64,
    pub self_steepening: bool,
    pub loss_order: u32,
    pub loss_coefficient: f64,
}

impl Medium {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.beta2.is_finite()
            && self.beta3.is_finite()
            && self.gamma.is_finite()
            && self.loss_coefficient.is_finite();
        if !all_finite {
            return Err(Error::InvalidMedium("coefficients must be finite".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidMedium(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.loss_coefficient < 0.0 {
            return Err(Error::InvalidMedium(format!(
                "loss_coefficient must be >= 0, got {}",
                self.loss_coefficient
            )));
        }
        Ok(())
    }

    /// Same medium with the Kerr term switched off (the reference arm).
    pub fn linearized(&self) -> Medium {
        Medium {
            gamma: 0.0,
            self_steepening: false,
            ..self.clone()
        }
    }
}

impl Default for Medium {
    fn default() -> Self {
        Medium {
            beta2: 20.0,
            beta3: 0.0,
            gamma: 0.0,
            self_steepening: false,
            loss_order: 0,
            loss_coefficient: 0.0,
        }
    }
}

/// Step-size control for [`propagate`]. With `adaptive` set, the step is
/// capped so the peak nonlinear phase per step stays below
/// `max_nonlinear_phase`; `max_step` always applies.
#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    pub max_step: f64,
    pub max_nonlinear_phase: f64,
    pub adaptive: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            max_step: 1.0,
            max_nonlinear_phase: 0.05,
            adaptive: true,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidStepControl(format!(
                "max_step must be > 0, got {}",
                self.max_step
            )));
        }
        if !(self.max_nonlinear_phase > 0.0 && self.max_nonlinear_phase < std::f64::consts::PI) {
            return Err(Error::InvalidStepControl(format!(
                "max_nonlinear_phase must be in (0, pi), got {}",
                self.max_nonlinear_phase
            )));
        }
        Ok(())
    }
}

const MIN_STEP_M: f64 = 1e-9;
const GUARD_FRACTION: f64 = 0.05;
const GUARD_ENERGY_LIMIT: f64 = 1e-6;

/// Advances `field` by `distance` meters through `medium` with symmetric
/// (Strang) splitting. Lossless propagation conserves energy to rounding;
/// a time-window wraparound (energy in the outer 5% of the window) or a
/// required step below 1e-9 m is reported as an error.
pub fn propagate(
    field: &Field,
    medium: &Medium,
    distance: f64,
    control: &StepControl,
) -> Result<Field> {
    medium.validate()?;
    control.validate()?;
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(Error::InvalidInput(format!(
            "distance must be finite and >= 0, got {distance}"
        )));
    }
    if distance == 0.0 {
        return Ok(field.clone());
    }

    let grid = field.grid().clone();
    let n = grid.n_points();
    let mut a = field.envelope().to_vec();

    let linear = medium.beta2 != 0.0 || medium.beta3 != 0.0;
    // phase per meter at each FFT bin
    let phase_per_m: Vec<f64> = grid
        .omega_axis()
        .iter()
        .map(|&w| 0.5 * medium.beta2 * w * w + medium.beta3 * w * w * w / 6.0)
        .collect();

    let mut shock = if medium.self_steepening {
        Some(ShockBuffers::new(n))
    } else {
        None
    };

    let mut remaining = distance;
    while remaining > 0.0 {
        let peak = a.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        let mut dz = control.max_step;
        if control.adaptive && medium.gamma > 0.0 && peak > 0.0 {
            dz = dz.min(control.max_nonlinear_phase / (medium.gamma * peak));
        }
        if dz < MIN_STEP_M && remaining > MIN_STEP_M {
            return Err(Error::NonConvergence { required_step: dz });
        }
        let dz = dz.min(remaining);

        if linear {
            apply_linear(&grid, &mut a, &phase_per_m, 0.5 * dz);
        }
        apply_nonlinear(&grid, &mut a, medium, dz, shock.as_mut());
        if linear {
            apply_linear(&grid, &mut a, &phase_per_m, 0.5 * dz);
        }
        remaining -= dz;
    }

    check_guard_band(&grid, &a)?;
    Field::new(grid, a, field.z_position() + distance)
}

fn apply_linear(grid: &Grid, a: &mut [Complex64], phase_per_m: &[f64], dz: f64) {
    grid.forward(a);
    for (v, &p) in a.iter_mut().zip(phase_per_m) {
        *v *= Complex64::from_polar(1.0, p * dz);
    }
    grid.inverse(a);
}

fn apply_nonlinear(
    grid: &Grid,
    a: &mut [Complex64],
    medium: &Medium,
    dz: f64,
    shock: Option<&mut ShockBuffers>,
) {
    let gamma = medium.gamma;
    let lc = medium.loss_coefficient;
    let k = medium.loss_order as i32;
    if gamma != 0.0 || lc != 0.0 {
        for v in a.iter_mut() {
            let p = v.norm_sqr();
            let damp = if lc > 0.0 {
                (-0.5 * lc * p.powi(k) * dz).exp()
            } else {
                1.0
            };
            *v *= Complex64::from_polar(damp, gamma * p * dz);
        }
    }
    if let Some(bufs) = shock {
        apply_shock(grid, a, -gamma / grid.carrier_omega(), dz, bufs);
    }
}

struct ShockBuffers {
    rhs: Vec<Complex64>,
    mid: Vec<Complex64>,
}

impl ShockBuffers {
    fn new(n: usize) -> Self {
        ShockBuffers {
            rhs: vec![Complex64::default(); n],
            mid: vec![Complex64::default(); n],
        }
    }
}

/// Midpoint step for dA/dz = coeff * d/dt(|A|^2 A), the self-steepening
/// shock term, with the time derivative evaluated spectrally.
fn apply_shock(grid: &Grid, a: &mut [Complex64], coeff: f64, dz: f64, bufs: &mut ShockBuffers) {
    shock_rhs(grid, a, coeff, &mut bufs.rhs);
    for i in 0..a.len() {
        bufs.mid[i] = a[i] + 0.5 * dz * bufs.rhs[i];
    }
    shock_rhs(grid, &bufs.mid, coeff, &mut bufs.rhs);
    for (v, r) in a.iter_mut().zip(&bufs.rhs) {
        *v += dz * r;
    }
}

fn shock_rhs(grid: &Grid, a: &[Complex64], coeff: f64, out: &mut [Complex64]) {
    for (o, v) in out.iter_mut().zip(a) {
        *o = v.norm_sqr() * v;
    }
    grid.forward(out);
    for (o, &w) in out.iter_mut().zip(grid.omega_axis()) {
        *o *= Complex64::new(0.0, w * coeff);
    }
    grid.inverse(out);
}

fn check_guard_band(grid: &Grid, a: &[Complex64]) -> Result<()> {
    let n = grid.n_points();
    let guard = ((n as f64) * GUARD_FRACTION / 2.0).round() as usize;
    let total: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    if total <= 0.0 {
        return Ok(());
    }
    let edges: f64 = a[..guard]
        .iter()
        .chain(&a[n - guard..])
        .map(|v| v.norm_sqr())
        .sum();
    let fraction = edges / total;
    if fraction >= GUARD_ENERGY_LIMIT {
        return Err(Error::GuardBandViolation { fraction });
    }
    Ok(())
}

/// Exact dispersionless SPM solution A(z,t) = A(0,t) exp(i gamma |A(0,t)|^2 z);
/// the test oracle for the nonlinear step.
pub fn spm_analytic(field: &Field, gamma: f64, distance: f64) -> Field {
    let envelope = field
        .envelope()
        .iter()
        .map(|&v| v * Complex64::from_polar(1.0, gamma * v.norm_sqr() * distance))
        .collect();
    Field::new(
        field.grid().clone(),
        envelope,
        field.z_position() + distance,
    )
    .expect("same grid")
}

/// Order-N temporal soliton fixture: A(0,t) = N sqrt(|beta2|/(gamma T0^2))
/// sech(t/T0), T0 = time_window/40. Requires beta2 < 0 and gamma > 0.
pub fn soliton_field(grid: &Grid, medium: &Medium, order: u32) -> Result<Field> {
    if medium.beta2 >= 0.0 {
        return Err(Error::InvalidMedium(format!(
            "soliton requires anomalous dispersion (beta2 < 0), got {}",
            medium.beta2
        )));
    }
    if medium.gamma <= 0.0 {
        return Err(Error::InvalidMedium(format!(
            "soliton requires gamma > 0, got {}",
            medium.gamma
        )));
    }
    if order < 1 {
        return Err(Error::InvalidInput("soliton order must be >= 1".into()));
    }
    let t0 = grid.time_window() / 40.0;
    let amp = order as f64 * (medium.beta2.abs() / (medium.gamma * t0 * t0)).sqrt();
    let envelope = grid
        .time_axis()
        .iter()
        .map(|&t| Complex64::new(amp / (t / t0).cosh(), 0.0))
        .collect();
    Field::new(grid.clone(), envelope, 0.0)
}

/// z after which a fundamental soliton on this grid reproduces its shape:
/// (pi/2) T0^2 / |beta2| with T0 = time_window/40.
pub fn soliton_period(grid: &Grid, medium: &Medium) -> f64 {
    let t0 = grid.time_window() / 40.0;
    std::f64::consts::FRAC_PI_2 * t0 * t0 / medium.beta2.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_pulse, make_grid, spectrum_of};
    use crate::measure::fwhm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_distance_is_identity() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 200.0, 0.0, 0.3).unwrap();
        let m = Medium {
            gamma: 1e-9,
            ..Medium::default()
        };
        let out = propagate(&f, &m, 0.0, &StepControl::default()).unwrap();
        assert_eq!(out.envelope(), f.envelope());
        assert_eq!(out.z_position(), f.z_position());
    }

    #[test]
    fn gaussian_dispersion_duration() {
        // analytic: T(z) = T0 sqrt(1 + (4 ln2 beta2 z / T0^2)^2)
        let g = make_grid(4096, 16384.0, 805.0).unwrap();
        let t0 = 200.0;
        let f = gaussian_pulse(&g, 1e9, t0, 0.0, 0.0).unwrap();
        let m = Medium {
            beta2: 20.0,
            ..Medium::default()
        };
        let ld = t0 * t0 / (4.0 * std::f64::consts::LN_2 * m.beta2);
        let z = 3.0 * ld;
        let out = propagate(
            &f,
            &m,
            z,
            &StepControl {
                max_step: z / 16.0,
                ..StepControl::default()
            },
        )
        .unwrap();
        let intensity: Vec<f64> = out.envelope().iter().map(|v| v.norm_sqr()).collect();
        let measured = fwhm(g.time_axis(), &intensity).unwrap();
        let expected = t0 * (1.0 + (4.0 * std::f64::consts::LN_2 * m.beta2 * z / (t0 * t0)).powi(2))
            .sqrt();
        assert!(
            (measured - expected).abs() / expected < 1e-3,
            "measured {measured}, expected {expected}"
        );
    }

    #[test]
    fn linear_propagation_matches_single_multiplication() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 150.0, 20.0, 0.4).unwrap();
        let m = Medium {
            beta2: 17.0,
            beta3: 5.0,
            ..Medium::default()
        };
        let z = 800.0;
        let stepped = propagate(
            &f,
            &m,
            z,
            &StepControl {
                max_step: 37.0,
                ..StepControl::default()
            },
        )
        .unwrap();

        // exact linear propagator: one multiplication in the frequency domain
        let mut spec = f.envelope().to_vec();
        g.forward(&mut spec);
        for (v, &w) in spec.iter_mut().zip(g.omega_axis()) {
            let phase = (0.5 * m.beta2 * w * w + m.beta3 * w * w * w / 6.0) * z;
            *v *= Complex64::from_polar(1.0, phase);
        }
        g.inverse(&mut spec);
        assert!(rel_l2(stepped.envelope(), &spec) < 1e-12);
    }

    #[test]
    fn spm_only_matches_analytic() {
        let g = make_grid(2048, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 200.0, 0.0, 0.0).unwrap();
        let gamma = 8.0 / (1e9 * 10.0); // 8 rad peak phase over 10 m
        let m = Medium {
            beta2: 0.0,
            gamma,
            ..Medium::default()
        };
        let out = propagate(&f, &m, 10.0, &StepControl::default()).unwrap();
        let oracle = spm_analytic(&f, gamma, 10.0);
        assert!(rel_l2(out.envelope(), oracle.envelope()) < 1e-6);
        // phase-only: |A| unchanged pointwise
        for (a, b) in out.envelope().iter().zip(f.envelope()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-9 * b.norm().max(1e-12));
        }
    }

    #[test]
    fn spm_broadening_factor_tracks_peak_phase() {
        // 10 rad of peak nonlinear phase broadens a 200 fs Gaussian by ~10x
        let g = make_grid(4096, 16384.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 200.0, 0.0, 0.0).unwrap();
        let tl = spectrum_of(&f);
        let broad = spectrum_of(&spm_analytic(&f, 10.0 / 1e9, 1.0));
        let w0 = fwhm(tl.wavelengths(), tl.psd()).unwrap();
        let w1 = fwhm(broad.wavelengths(), broad.psd()).unwrap();
        let ratio = w1 / w0;
        assert!((9.0..11.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn lossless_energy_conserved() {
        // property: random lossless media, random Gaussian inputs
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..25 {
            let power = 10f64.powf(rng.random_range(6.0..9.0));
            let f = gaussian_pulse(
                &g,
                power,
                rng.random_range(100.0..400.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            let m = Medium {
                beta2: rng.random_range(-40.0..40.0),
                beta3: rng.random_range(-10.0..10.0),
                gamma: rng.random_range(0.0..4.0) / power,
                self_steepening: false,
                loss_order: 0,
                loss_coefficient: 0.0,
            };
            let out = propagate(&f, &m, rng.random_range(0.5..5.0), &StepControl::default())
                .unwrap();
            let drift = (out.energy() - f.energy()).abs() / f.energy();
            assert!(drift < 1e-9, "drift = {drift:.3e}");
        }
    }

    #[test]
    fn self_steepening_energy_drift_small() {
        let g = make_grid(2048, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 150.0, 0.0, 0.0).unwrap();
        let m = Medium {
            beta2: 10.0,
            gamma: 6.0 / (1e9 * 5.0),
            self_steepening: true,
            ..Medium::default()
        };
        let out = propagate(&f, &m, 5.0, &StepControl::default()).unwrap();
        let drift = (out.energy() - f.energy()).abs() / f.energy();
        assert!(drift < 1e-7, "drift = {drift:.3e}");
    }

    #[test]
    fn linear_loss_decays_exponentially() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e9, 200.0, 0.0, 0.0).unwrap();
        let m = Medium {
            beta2: 0.0,
            loss_order: 0,
            loss_coefficient: 0.31,
            ..Medium::default()
        };
        let z = 4.0;
        let out = propagate(&f, &m, z, &StepControl::default()).unwrap();
        let expected = f.energy() * (-m.loss_coefficient * z).exp();
        assert!((out.energy() - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn guard_band_violation_detected() {
        let g = make_grid(1024, 1024.0, 500.0).unwrap();
        // pulse parked close to the window edge
        let f = gaussian_pulse(&g, 1e6, 128.0, 420.0, 0.0).unwrap();
        let m = Medium::default();
        let err = propagate(&f, &m, 1e-6, &StepControl::default()).unwrap_err();
        assert!(matches!(err, Error::GuardBandViolation { .. }));
    }

    #[test]
    fn step_collapse_reports_non_convergence() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let f = gaussian_pulse(&g, 1e10, 200.0, 0.0, 0.0).unwrap();
        let m = Medium {
            beta2: 0.0,
            gamma: 1.0, // 1e10 rad/m of peak phase: needs dz < 1e-9 m
            ..Medium::default()
        };
        let err = propagate(&f, &m, 1.0, &StepControl::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn fundamental_soliton_keeps_shape() {
        let g = make_grid(2048, 8192.0, 805.0).unwrap();
        let m = Medium {
            beta2: -20.0,
            gamma: 1e-3,
            ..Medium::default()
        };
        let f = soliton_field(&g, &m, 1).unwrap();
        let z = 10.0 * soliton_period(&g, &m);
        let out = propagate(
            &f,
            &m,
            z,
            &StepControl {
                max_step: f64::INFINITY,
                max_nonlinear_phase: 0.02,
                adaptive: true,
            },
        )
        .unwrap();
        let shape_in: Vec<Complex64> = f
            .envelope()
            .iter()
            .map(|v| Complex64::new(v.norm(), 0.0))
            .collect();
        let shape_out: Vec<Complex64> = out
            .envelope()
            .iter()
            .map(|v| Complex64::new(v.norm(), 0.0))
            .collect();
        let dev = rel_l2(&shape_out, &shape_in);
        assert!(dev < 1e-3, "dev = {dev:.3e}");
    }

    #[test]
    fn higher_order_soliton_breathes() {
        let g = make_grid(2048, 8192.0, 805.0).unwrap();
        let m = Medium {
            beta2: -20.0,
            gamma: 1e-3,
            ..Medium::default()
        };
        let f = soliton_field(&g, &m, 3).unwrap();
        let period = soliton_period(&g, &m);
        let ctl = StepControl {
            max_step: f64::INFINITY,
            ..StepControl::default()
        };
        let mut bandwidths = Vec::new();
        let mut cur = f;
        let n_samples = 12;
        bandwidths.push(rms_bandwidth(&cur));
        for _ in 0..n_samples {
            cur = propagate(&cur, &m, period / n_samples as f64, &ctl).unwrap();
            bandwidths.push(rms_bandwidth(&cur));
        }
        let max = bandwidths.iter().cloned().fold(0.0, f64::max);
        assert!(max > 1.2 * bandwidths[0], "no expansion: {bandwidths:?}");
        assert!(
            *bandwidths.last().unwrap() < 0.9 * max,
            "no recovery: {bandwidths:?}"
        );
    }

    fn rms_bandwidth(f: &Field) -> f64 {
        let g = f.grid();
        let mut spec = f.envelope().to_vec();
        g.forward(&mut spec);
        let mut num = 0.0;
        let mut den = 0.0;
        for (v, &w) in spec.iter().zip(g.omega_axis()) {
            let p = v.norm_sqr();
            num += p * w * w;
            den += p;
        }
        (num / den).sqrt()
    }

    #[test]
    fn soliton_rejects_wrong_dispersion_sign() {
        let g = make_grid(1024, 8192.0, 805.0).unwrap();
        let m = Medium {
            beta2: 20.0,
            gamma: 1e-3,
            ..Medium::default()
        };
        assert!(soliton_field(&g, &m, 1).is_err());
    }
}
