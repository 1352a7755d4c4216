//! Run configuration: a `key = value` text format with `#` comments and
//! dotted section prefixes. Loading validates every field against the owning
//! module's preconditions and reports all failures at once, not just the
//! first. A SHA-256 digest of the canonical serialization stamps every
//! output produced from a config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::detection::{Channel, DetectorModel};
use crate::ensemble::{JitterModel, PulseSpec, SpectrometerBinning};
use crate::error::{Error, Result};
use crate::grid::{gaussian_pulse, make_grid, Grid};
use crate::propagation::{Medium, StepControl};

/// Fully validated simulation/analysis configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub grid_n_points: usize,
    pub grid_time_window_fs: f64,
    pub carrier_nm: f64,
    pub pulse: PulseSpec,
    pub medium: Medium,
    /// Peak nonlinear phase the nominal shot accumulates, when gamma was
    /// given through `medium.phi_max`.
    pub phi_max: Option<f64>,
    pub distance_m: f64,
    pub seed: u64,
    pub n_shots: usize,
    pub jitter: JitterModel,
    pub binning: SpectrometerBinning,
    pub channels: Vec<Channel>,
    pub windows: Vec<(String, f64, f64)>,
    pub detector: DetectorModel,
    pub step: StepControl,
    pub output_dir: PathBuf,
    digest: [u8; 32],
}

impl RunConfig {
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_grid(&self) -> Result<Grid> {
        make_grid(self.grid_n_points, self.grid_time_window_fs, self.carrier_nm)
    }
}

/// Loads and validates a config file. Parse errors carry the line number;
/// validation reports every failing field path.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    config_from_str(&text)
}

/// Parses a config from text; see [`load_config`].
pub fn config_from_str(text: &str) -> Result<RunConfig> {
    let entries = parse_kv(text)?;
    validate(entries)
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line: line_no,
                message: "empty key".into(),
            });
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
    errors: Vec<String>,
    used: Vec<String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.map.remove(key)
    }

    fn required_f64(&mut self, key: &str) -> Option<f64> {
        match self.take(key) {
            None => {
                self.errors.push(format!("missing required field: {key}"));
                None
            }
            Some(v) => self.parse_f64(key, &v),
        }
    }

    fn optional_f64(&mut self, key: &str, default: f64) -> Option<f64> {
        match self.take(key) {
            None => Some(default),
            Some(v) => self.parse_f64(key, &v),
        }
    }

    fn parse_f64(&mut self, key: &str, v: &str) -> Option<f64> {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                self.errors.push(format!("{key}: expected a finite number, got `{v}`"));
                None
            }
        }
    }

    fn required_u64(&mut self, key: &str) -> Option<u64> {
        match self.take(key) {
            None => {
                self.errors.push(format!("missing required field: {key}"));
                None
            }
            Some(v) => match v.parse::<u64>() {
                Ok(x) => Some(x),
                Err(_) => {
                    self.errors
                        .push(format!("{key}: expected a non-negative integer, got `{v}`"));
                    None
                }
            },
        }
    }

    fn optional_u64(&mut self, key: &str, default: u64) -> Option<u64> {
        match self.take(key) {
            None => Some(default),
            Some(v) => match v.parse::<u64>() {
                Ok(x) => Some(x),
                Err(_) => {
                    self.errors
                        .push(format!("{key}: expected a non-negative integer, got `{v}`"));
                    None
                }
            },
        }
    }

    fn optional_bool(&mut self, key: &str, default: bool) -> Option<bool> {
        match self.take(key) {
            None => Some(default),
            Some(v) => match v.as_str() {
                "true" => Some(true),
                "false" => Some(false),
                _ => {
                    self.errors
                        .push(format!("{key}: expected true or false, got `{v}`"));
                    None
                }
            },
        }
    }

    fn required_string(&mut self, key: &str) -> Option<String> {
        match self.take(key) {
            None => {
                self.errors.push(format!("missing required field: {key}"));
                None
            }
            Some(v) if v.is_empty() => {
                self.errors.push(format!("{key}: must not be empty"));
                None
            }
            Some(v) => Some(v),
        }
    }

    /// `center:bandwidth` or `lo:hi` pairs.
    fn parse_pair(&mut self, key: &str, v: &str) -> Option<(f64, f64)> {
        let parts: Vec<&str> = v.split(':').collect();
        if parts.len() != 2 {
            self.errors
                .push(format!("{key}: expected `a:b`, got `{v}`"));
            return None;
        }
        let a = self.parse_f64(key, parts[0].trim())?;
        let b = self.parse_f64(key, parts[1].trim())?;
        Some((a, b))
    }
}

fn validate(map: BTreeMap<String, String>) -> Result<RunConfig> {
    let mut f = Fields {
        map,
        errors: Vec::new(),
        used: Vec::new(),
    };

    let n_points = f.required_u64("grid.n_points");
    let time_window = f.required_f64("grid.time_window_fs");
    let carrier = f.required_f64("grid.carrier_nm");

    let fwhm = f.required_f64("pulse.fwhm_fs");
    let peak_power = f.required_f64("pulse.peak_power_w");
    let offset = f.optional_f64("pulse.center_offset_fs", 0.0);
    let chirp = f.optional_f64("pulse.chirp", 0.0);

    let beta2 = f.required_f64("medium.beta2_fs2_m");
    let beta3 = f.optional_f64("medium.beta3_fs3_m", 0.0);
    let gamma_raw = f.take("medium.gamma_w_m");
    let phi_raw = f.take("medium.phi_max");
    let self_steepening = f.optional_bool("medium.self_steepening", false);
    let loss_order = f.optional_u64("medium.loss_order", 0);
    let loss_coefficient = f.optional_f64("medium.loss_coefficient", 0.0);

    let distance = f.required_f64("run.distance_m");
    let seed = f.required_u64("run.seed");

    let n_shots_raw = f.take("shots.n");

    let sigma_energy = f.optional_f64("jitter.sigma_energy", 0.01);
    let sigma_duration = f.optional_f64("jitter.sigma_duration", 0.005);
    let sigma_chirp = f.optional_f64("jitter.sigma_chirp", 0.0);

    let spec_min = f.required_f64("spectrometer.min_nm");
    let spec_max = f.required_f64("spectrometer.max_nm");
    let spec_bin = f.required_f64("spectrometer.bin_nm");

    let grating = f.optional_f64("detector.grating_efficiency", 0.9);
    let quantum = f.optional_f64("detector.quantum_efficiency", 0.93);
    let poisson = f.optional_bool("detector.poisson", false);

    let max_step = f.optional_f64("step.max_step_m", 1.0);
    let max_phase = f.optional_f64("step.max_phase_rad", 0.05);
    let adaptive = f.optional_bool("step.adaptive", true);

    let output_dir = f.required_string("output.dir");

    // shots.n gets a dedicated message so a negative count names the field
    let n_shots = match n_shots_raw {
        None => {
            f.errors.push("missing required field: shots.n".into());
            None
        }
        Some(v) => match v.parse::<i64>() {
            Ok(n) if n >= 2 => Some(n as usize),
            Ok(n) => {
                f.errors
                    .push(format!("shots.n: must be an integer >= 2, got {n}"));
                None
            }
            Err(_) => {
                f.errors
                    .push(format!("shots.n: expected an integer, got `{v}`"));
                None
            }
        },
    };

    // channels.* and windows.* carry user-chosen labels
    let mut channels_raw: Vec<(String, f64, f64)> = Vec::new();
    let mut windows: Vec<(String, f64, f64)> = Vec::new();
    let keys: Vec<String> = f.map.keys().cloned().collect();
    for key in keys {
        if let Some(label) = key.strip_prefix("channels.") {
            let label = label.to_string();
            let v = f.take(&key).unwrap();
            if let Some((center, bw)) = f.parse_pair(&key, &v) {
                channels_raw.push((label, center, bw));
            }
        } else if let Some(label) = key.strip_prefix("windows.") {
            let label = label.to_string();
            let v = f.take(&key).unwrap();
            if let Some((lo, hi)) = f.parse_pair(&key, &v) {
                if lo < hi {
                    windows.push((label, lo, hi));
                } else {
                    f.errors.push(format!("{key}: window needs lo < hi, got {lo}:{hi}"));
                }
            }
        }
    }
    for key in f.map.keys() {
        f.errors.push(format!("unknown field: {key}"));
    }

    // cross-field validation through the owning modules
    let grid = match (n_points, time_window, carrier) {
        (Some(n), Some(w), Some(c)) => match make_grid(n as usize, w, c) {
            Ok(g) => Some(g),
            Err(e) => {
                f.errors.push(format!("grid: {e}"));
                None
            }
        },
        _ => None,
    };

    let pulse = match (peak_power, fwhm, offset, chirp) {
        (Some(p), Some(d), Some(o), Some(c)) => {
            let pulse = PulseSpec {
                peak_power_w: p,
                duration_fwhm_fs: d,
                center_offset_fs: o,
                chirp: c,
            };
            if let Some(g) = &grid {
                if let Err(e) = gaussian_pulse(g, p, d, o, c) {
                    f.errors.push(format!("pulse: {e}"));
                }
            }
            Some(pulse)
        }
        _ => None,
    };

    let mut phi_max = None;
    let gamma = match (gamma_raw, phi_raw) {
        (Some(_), Some(_)) => {
            f.errors
                .push("give exactly one of medium.gamma_w_m and medium.phi_max, not both".into());
            None
        }
        (None, None) => {
            f.errors
                .push("missing required field: medium.gamma_w_m or medium.phi_max".into());
            None
        }
        (Some(v), None) => f.parse_f64("medium.gamma_w_m", &v),
        (None, Some(v)) => match (f.parse_f64("medium.phi_max", &v), peak_power, distance) {
            (Some(phi), Some(p), Some(z)) if phi >= 0.0 && p > 0.0 && z > 0.0 => {
                phi_max = Some(phi);
                Some(phi / (p * z))
            }
            (Some(phi), _, _) if phi < 0.0 => {
                f.errors.push("medium.phi_max: must be >= 0".into());
                None
            }
            (Some(_), _, _) => {
                f.errors.push(
                    "medium.phi_max needs pulse.peak_power_w > 0 and run.distance_m > 0 \
                     to derive gamma"
                        .into(),
                );
                None
            }
            _ => None,
        },
    };

    let medium = match (beta2, beta3, gamma, self_steepening, loss_order, loss_coefficient) {
        (Some(b2), Some(b3), Some(g), Some(ss), Some(lo), Some(lc)) => {
            let m = Medium {
                beta2: b2,
                beta3: b3,
                gamma: g,
                self_steepening: ss,
                loss_order: lo as u32,
                loss_coefficient: lc,
            };
            if let Err(e) = m.validate() {
                f.errors.push(format!("medium: {e}"));
            }
            Some(m)
        }
        _ => None,
    };

    if let Some(z) = distance {
        if !(z >= 0.0) {
            f.errors.push(format!("run.distance_m: must be >= 0, got {z}"));
        }
    }

    let jitter = match (sigma_energy, sigma_duration, sigma_chirp) {
        (Some(e), Some(d), Some(c)) => {
            let j = JitterModel {
                sigma_energy: e,
                sigma_duration: d,
                sigma_chirp: c,
            };
            if let Err(err) = j.validate() {
                f.errors.push(format!("jitter: {err}"));
            }
            Some(j)
        }
        _ => None,
    };

    let binning = match (spec_min, spec_max, spec_bin) {
        (Some(lo), Some(hi), Some(bin)) => {
            let b = SpectrometerBinning {
                min_nm: lo,
                max_nm: hi,
                bin_nm: bin,
            };
            if let Err(e) = b.validate() {
                f.errors.push(format!("spectrometer: {e}"));
            }
            Some(b)
        }
        _ => None,
    };

    channels_raw.sort_by(|a, b| a.0.cmp(&b.0));
    let mut channels = Vec::new();
    for (label, center, bw) in &channels_raw {
        if !(*bw > 0.0) {
            f.errors
                .push(format!("channels.{label}: bandwidth must be > 0, got {bw}"));
            continue;
        }
        if let Some(b) = &binning {
            let lo = center - 0.5 * bw;
            let hi = center + 0.5 * bw;
            if lo < b.min_nm - 1e-9 || hi > b.max_nm + 1e-9 {
                f.errors.push(format!(
                    "channels.{label}: [{lo:.2}, {hi:.2}] nm not inside spectrometer range \
                     [{:.2}, {:.2}] nm",
                    b.min_nm, b.max_nm
                ));
                continue;
            }
        }
        channels.push(Channel::new(*center, *bw, label.clone()));
    }
    windows.sort_by(|a, b| a.0.cmp(&b.0));

    let detector = match (grating, quantum, poisson) {
        (Some(g), Some(q), Some(p)) => {
            let d = DetectorModel {
                grating_efficiency: g,
                quantum_efficiency: q,
                poisson: p,
            };
            if let Err(e) = d.validate() {
                f.errors.push(format!("detector: {e}"));
            }
            Some(d)
        }
        _ => None,
    };

    let step = match (max_step, max_phase, adaptive) {
        (Some(s), Some(p), Some(a)) => {
            let c = StepControl {
                max_step: s,
                max_nonlinear_phase: p,
                adaptive: a,
            };
            if let Err(e) = c.validate() {
                f.errors.push(format!("step: {e}"));
            }
            Some(c)
        }
        _ => None,
    };

    if !f.errors.is_empty() {
        return Err(Error::ConfigValidation { errors: f.errors });
    }

    let mut cfg = RunConfig {
        grid_n_points: n_points.unwrap() as usize,
        grid_time_window_fs: time_window.unwrap(),
        carrier_nm: carrier.unwrap(),
        pulse: pulse.unwrap(),
        medium: medium.unwrap(),
        phi_max,
        distance_m: distance.unwrap(),
        seed: seed.unwrap(),
        n_shots: n_shots.unwrap(),
        jitter: jitter.unwrap(),
        binning: binning.unwrap(),
        channels,
        windows,
        detector: detector.unwrap(),
        step: step.unwrap(),
        output_dir: PathBuf::from(output_dir.unwrap()),
        digest: [0; 32],
    };
    cfg.digest = digest_of(&cfg);
    Ok(cfg)
}

/// Canonical serialization: fixed key order, numbers at full precision, so
/// the digest depends on the values and nothing else (not comments, spacing,
/// or source ordering).
fn canonical_string(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let num = |x: f64| format!("{x:.17e}");
    s.push_str(&format!("grid.n_points={}\n", cfg.grid_n_points));
    s.push_str(&format!("grid.time_window_fs={}\n", num(cfg.grid_time_window_fs)));
    s.push_str(&format!("grid.carrier_nm={}\n", num(cfg.carrier_nm)));
    s.push_str(&format!("pulse.fwhm_fs={}\n", num(cfg.pulse.duration_fwhm_fs)));
    s.push_str(&format!("pulse.peak_power_w={}\n", num(cfg.pulse.peak_power_w)));
    s.push_str(&format!("pulse.center_offset_fs={}\n", num(cfg.pulse.center_offset_fs)));
    s.push_str(&format!("pulse.chirp={}\n", num(cfg.pulse.chirp)));
    s.push_str(&format!("medium.beta2_fs2_m={}\n", num(cfg.medium.beta2)));
    s.push_str(&format!("medium.beta3_fs3_m={}\n", num(cfg.medium.beta3)));
    s.push_str(&format!("medium.gamma_w_m={}\n", num(cfg.medium.gamma)));
    s.push_str(&format!("medium.self_steepening={}\n", cfg.medium.self_steepening));
    s.push_str(&format!("medium.loss_order={}\n", cfg.medium.loss_order));
    s.push_str(&format!("medium.loss_coefficient={}\n", num(cfg.medium.loss_coefficient)));
    s.push_str(&format!("run.distance_m={}\n", num(cfg.distance_m)));
    s.push_str(&format!("run.seed={}\n", cfg.seed));
    s.push_str(&format!("shots.n={}\n", cfg.n_shots));
    s.push_str(&format!("jitter.sigma_energy={}\n", num(cfg.jitter.sigma_energy)));
    s.push_str(&format!("jitter.sigma_duration={}\n", num(cfg.jitter.sigma_duration)));
    s.push_str(&format!("jitter.sigma_chirp={}\n", num(cfg.jitter.sigma_chirp)));
    s.push_str(&format!("spectrometer.min_nm={}\n", num(cfg.binning.min_nm)));
    s.push_str(&format!("spectrometer.max_nm={}\n", num(cfg.binning.max_nm)));
    s.push_str(&format!("spectrometer.bin_nm={}\n", num(cfg.binning.bin_nm)));
    for ch in &cfg.channels {
        s.push_str(&format!(
            "channels.{}={}:{}\n",
            ch.label,
            num(ch.center_nm),
            num(ch.bandwidth_nm)
        ));
    }
    for (label, lo, hi) in &cfg.windows {
        s.push_str(&format!("windows.{label}={}:{}\n", num(*lo), num(*hi)));
    }
    s.push_str(&format!("detector.grating_efficiency={}\n", num(cfg.detector.grating_efficiency)));
    s.push_str(&format!("detector.quantum_efficiency={}\n", num(cfg.detector.quantum_efficiency)));
    s.push_str(&format!("detector.poisson={}\n", cfg.detector.poisson));
    s.push_str(&format!("step.max_step_m={}\n", num(cfg.step.max_step)));
    s.push_str(&format!("step.max_phase_rad={}\n", num(cfg.step.max_nonlinear_phase)));
    s.push_str(&format!("step.adaptive={}\n", cfg.step.adaptive));
    s.push_str(&format!("output.dir={}\n", cfg.output_dir.display()));
    s
}

fn digest_of(cfg: &RunConfig) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(canonical_string(cfg).as_bytes());
    hasher.finalize().into()
}
