//! In-silico supercontinuum noise experiment: split-step propagation of
//! noisy ultrashort pulses, seeded shot ensembles over a nonlinear
//! (filament) and a linear (reference) arm, a virtual detection chain, and
//! the correlation/noise estimators that classify what the spectra do
//! shot to shot.

pub mod config;
pub mod detection;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod io;
pub mod measure;
pub mod propagation;
pub mod statistics;

pub use config::{config_from_str, load_config, RunConfig};
pub use detection::{
    channel_counts, conjugate_wavelength, conjugation_locus, window_series, Channel, DetectorModel,
};
pub use ensemble::{
    generate_shots, run_arm, Arm, EnsembleSpectra, JitterModel, PulseSpec, ShotParams, ShotSet,
    SpectrometerBinning, ValueKind,
};
pub use error::{Error, ErrorClass, Result};
pub use grid::{
    gaussian_pulse, gaussian_pulse_energy, make_grid, spectrum_of, Field, Grid, Spectrum,
    HC_J_M, SECONDS_PER_FS, SPEED_OF_LIGHT_NM_PER_FS,
};
pub use propagation::{
    propagate, soliton_field, soliton_period, spm_analytic, Medium, StepControl,
};
pub use statistics::{
    correlation_map, fano, gemellity, noise_reduction_db, noise_reduction_db_raw_variance,
    normalize_rows, pearson, CorrelationMap,
};
